#pragma once

#include <cstddef>

namespace vista {

// Row-major accumulating matmul kernels. The i-t-j loop order keeps the
// inner loop contiguous so the compiler vectorizes it.

// C[m x n] += A[m x k] * B[k x n]
template <typename T>
void gemm_nn(const T* __restrict a, const T* __restrict b, T* __restrict c,
             int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const T* ai = a + (size_t)i * k;
        T* ci = c + (size_t)i * n;
        for (int t = 0; t < k; ++t) {
            const T at = ai[t];
            const T* bt = b + (size_t)t * n;
            for (int j = 0; j < n; ++j) ci[j] += at * bt[j];
        }
    }
}

// C[m x n] += A[m x k] * B[n x k]^T   (B stored row-major as [n x k])
// The inner loop is a reduction; allow reassociation here so it vectorizes.
template <typename T>
#if defined(__GNUC__) && !defined(__clang__)
__attribute__((optimize("-fassociative-math", "-fno-signed-zeros", "-fno-trapping-math")))
#endif
void gemm_nt(const T* __restrict a, const T* __restrict b, T* __restrict c,
             int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const T* ai = a + (size_t)i * k;
        T* ci = c + (size_t)i * n;
        for (int j = 0; j < n; ++j) {
            const T* bj = b + (size_t)j * k;
            T acc = T(0);
            for (int t = 0; t < k; ++t) acc += ai[t] * bj[t];
            ci[j] += acc;
        }
    }
}

// C[m x n] += A[k x m]^T * B[k x n]   (A stored row-major as [k x m])
template <typename T>
void gemm_tn(const T* __restrict a, const T* __restrict b, T* __restrict c,
             int m, int k, int n) {
    for (int t = 0; t < k; ++t) {
        const T* at = a + (size_t)t * m;
        const T* bt = b + (size_t)t * n;
        for (int i = 0; i < m; ++i) {
            const T ai = at[i];
            T* ci = c + (size_t)i * n;
            for (int j = 0; j < n; ++j) ci[j] += ai * bt[j];
        }
    }
}

} // namespace vista
