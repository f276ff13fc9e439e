#pragma once

#include <vector>

#include "vista/tensor.hpp"

namespace vista {

struct FidResult {
    double value = 0.0;
    bool regularized = false; // covariance needed the 1e-6*I bump
};

// Symmetric eigendecomposition (cyclic Jacobi). a is [n x n] and symmetric;
// returns eigenvalues ascending, eigenvectors as columns of v.
void jacobi_eigh(const Tensor<double>& a, std::vector<double>& eigvals, Tensor<double>& eigvecs);

// Sample mean and covariance (1/(N-1)) of row features [N x d].
void mean_and_cov(const Tensor<double>& feats, std::vector<double>& mean, Tensor<double>& cov);

// ||muA - muB||^2 + Tr(SA + SB - 2 (SA SB)^{1/2}); the matrix square root
// goes through the symmetrized product SA^{1/2} SB SA^{1/2}. Negative
// eigenvalues below 1e-8 are clamped to zero.
FidResult fid(const Tensor<double>& feats_a, const Tensor<double>& feats_b);

} // namespace vista
