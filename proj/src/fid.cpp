#include "vista/fid.hpp"

#include <cmath>

#include "vista/errors.hpp"
#include "vista/gemm.hpp"

namespace vista {

void jacobi_eigh(const Tensor<double>& a, std::vector<double>& eigvals, Tensor<double>& eigvecs) {
    if (a.ndim() != 2 || a.rows() != a.cols()) throw DimensionError("jacobi_eigh: square matrix expected");
    const int n = a.rows();
    Tensor<double> m = a;
    eigvecs = Tensor<double>::zeros({n, n});
    for (int i = 0; i < n; ++i) eigvecs.at(i, i) = 1.0;

    double scale = 0.0;
    for (double v : m.data) scale = std::max(scale, std::abs(v));
    if (scale == 0.0) scale = 1.0;

    const int max_sweeps = 64;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off += m.at(p, q) * m.at(p, q);
        if (std::sqrt(off) < 1e-13 * scale * n) break;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) {
                const double apq = m.at(p, q);
                if (std::abs(apq) < 1e-300) continue;
                const double app = m.at(p, p);
                const double aqq = m.at(q, q);
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int k = 0; k < n; ++k) {
                    const double mkp = m.at(k, p);
                    const double mkq = m.at(k, q);
                    m.at(k, p) = c * mkp - s * mkq;
                    m.at(k, q) = s * mkp + c * mkq;
                }
                for (int k = 0; k < n; ++k) {
                    const double mpk = m.at(p, k);
                    const double mqk = m.at(q, k);
                    m.at(p, k) = c * mpk - s * mqk;
                    m.at(q, k) = s * mpk + c * mqk;
                }
                for (int k = 0; k < n; ++k) {
                    const double vkp = eigvecs.at(k, p);
                    const double vkq = eigvecs.at(k, q);
                    eigvecs.at(k, p) = c * vkp - s * vkq;
                    eigvecs.at(k, q) = s * vkp + c * vkq;
                }
            }
    }
    eigvals.resize((size_t)n);
    for (int i = 0; i < n; ++i) eigvals[(size_t)i] = m.at(i, i);
}

void mean_and_cov(const Tensor<double>& feats, std::vector<double>& mean, Tensor<double>& cov) {
    if (feats.ndim() != 2 || feats.rows() < 2) throw DimensionError("mean_and_cov: [N x d], N >= 2");
    const int n = feats.rows(), d = feats.cols();
    mean.assign((size_t)d, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) mean[(size_t)j] += feats.at(i, j);
    for (int j = 0; j < d; ++j) mean[(size_t)j] /= n;
    cov = Tensor<double>::zeros({d, d});
    for (int i = 0; i < n; ++i)
        for (int a = 0; a < d; ++a) {
            const double ea = feats.at(i, a) - mean[(size_t)a];
            for (int b = 0; b < d; ++b) cov.at(a, b) += ea * (feats.at(i, b) - mean[(size_t)b]);
        }
    for (auto& v : cov.data) v /= (n - 1);
}

namespace {

// B = V f(L) V^T for symmetric A = V L V^T
Tensor<double> sym_apply(const Tensor<double>& a, double (*f)(double)) {
    std::vector<double> ev;
    Tensor<double> vecs;
    jacobi_eigh(a, ev, vecs);
    const int n = a.rows();
    Tensor<double> out = Tensor<double>::zeros({n, n});
    for (int k = 0; k < n; ++k) {
        const double fk = f(ev[(size_t)k]);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) out.at(i, j) += fk * vecs.at(i, k) * vecs.at(j, k);
    }
    return out;
}

// negative round-off eigenvalues clamp to zero; genuine mass is kept
double sqrt_clamped(double x) { return x > 0.0 ? std::sqrt(x) : 0.0; }

double min_eig(const Tensor<double>& a) {
    std::vector<double> ev;
    Tensor<double> vecs;
    jacobi_eigh(a, ev, vecs);
    double m = ev.empty() ? 0.0 : ev[0];
    for (double v : ev) m = std::min(m, v);
    return m;
}

} // namespace

FidResult fid(const Tensor<double>& feats_a, const Tensor<double>& feats_b) {
    if (feats_a.ndim() != 2 || feats_b.ndim() != 2 || feats_a.cols() != feats_b.cols())
        throw DimensionError("fid: feature dims differ");
    const int d = feats_a.cols();

    std::vector<double> mu_a, mu_b;
    Tensor<double> sa, sb;
    mean_and_cov(feats_a, mu_a, sa);
    mean_and_cov(feats_b, mu_b, sb);

    FidResult res;
    // ill-conditioned covariances get a small ridge, and we flag it
    if (min_eig(sa) < 1e-10 || min_eig(sb) < 1e-10) {
        res.regularized = true;
        for (int i = 0; i < d; ++i) {
            sa.at(i, i) += 1e-6;
            sb.at(i, i) += 1e-6;
        }
    }

    double mean_term = 0.0;
    for (int j = 0; j < d; ++j) {
        const double e = mu_a[(size_t)j] - mu_b[(size_t)j];
        mean_term += e * e;
    }

    double tr_a = 0.0, tr_b = 0.0;
    for (int i = 0; i < d; ++i) {
        tr_a += sa.at(i, i);
        tr_b += sb.at(i, i);
    }

    // Tr (SA SB)^{1/2} = Tr (SA^{1/2} SB SA^{1/2})^{1/2}
    Tensor<double> sa_half = sym_apply(sa, sqrt_clamped);
    Tensor<double> tmp = Tensor<double>::zeros({d, d});
    gemm_nn(sa_half.data.data(), sb.data.data(), tmp.data.data(), d, d, d);
    Tensor<double> prod = Tensor<double>::zeros({d, d});
    gemm_nn(tmp.data.data(), sa_half.data.data(), prod.data.data(), d, d, d);
    // symmetrize against round-off before the eigensolve
    for (int i = 0; i < d; ++i)
        for (int j = i + 1; j < d; ++j) {
            const double m = 0.5 * (prod.at(i, j) + prod.at(j, i));
            prod.at(i, j) = m;
            prod.at(j, i) = m;
        }
    std::vector<double> ev;
    Tensor<double> vecs;
    jacobi_eigh(prod, ev, vecs);
    double tr_sqrt = 0.0;
    for (double v : ev) tr_sqrt += sqrt_clamped(v);

    res.value = mean_term + tr_a + tr_b - 2.0 * tr_sqrt;
    return res;
}

} // namespace vista
