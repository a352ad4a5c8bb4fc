#include <immintrin.h>

#include "cavsim/kernels.hpp"

// 4-wide double kernels. Tails handled scalar. Results may differ from the
// scalar reference in the last ulps because of FMA contraction; the
// equivalence tests compare with a relative tolerance.

namespace cavsim::kern {

namespace {

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d sh = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

inline double dot_row(int n, const double* a, const double* b) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    int j = 0;
    for (; j + 8 <= n; j += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + j), _mm256_loadu_pd(b + j), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + j + 4), _mm256_loadu_pd(b + j + 4), acc1);
    }
    for (; j + 4 <= n; j += 4) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + j), _mm256_loadu_pd(b + j), acc0);
    }
    double acc = hsum(_mm256_add_pd(acc0, acc1));
    for (; j < n; ++j) acc += a[j] * b[j];
    return acc;
}

void matvec_avx2(int rows, int cols, const double* W, const double* x,
                 const double* b, double* y) {
    for (int i = 0; i < rows; ++i) {
        const double* row = W + static_cast<long>(i) * cols;
        y[i] = dot_row(cols, row, x) + (b ? b[i] : 0.0);
    }
}

void matvec_t_avx2(int rows, int cols, const double* W, const double* dy,
                   double* dx) {
    int j = 0;
    for (; j + 4 <= cols; j += 4) _mm256_storeu_pd(dx + j, _mm256_setzero_pd());
    for (; j < cols; ++j) dx[j] = 0.0;
    for (int i = 0; i < rows; ++i) {
        const double* row = W + static_cast<long>(i) * cols;
        const __m256d d = _mm256_set1_pd(dy[i]);
        int k = 0;
        for (; k + 4 <= cols; k += 4) {
            __m256d acc = _mm256_loadu_pd(dx + k);
            acc = _mm256_fmadd_pd(_mm256_loadu_pd(row + k), d, acc);
            _mm256_storeu_pd(dx + k, acc);
        }
        for (; k < cols; ++k) dx[k] += row[k] * dy[i];
    }
}

void outer_acc_avx2(int rows, int cols, const double* dy, const double* x,
                    double* dW) {
    for (int i = 0; i < rows; ++i) {
        double* row = dW + static_cast<long>(i) * cols;
        const __m256d d = _mm256_set1_pd(dy[i]);
        int j = 0;
        for (; j + 4 <= cols; j += 4) {
            __m256d acc = _mm256_loadu_pd(row + j);
            acc = _mm256_fmadd_pd(d, _mm256_loadu_pd(x + j), acc);
            _mm256_storeu_pd(row + j, acc);
        }
        for (; j < cols; ++j) row[j] += dy[i] * x[j];
    }
}

double dot_avx2(int n, const double* a, const double* b) {
    return dot_row(n, a, b);
}

void axpy_avx2(int n, double alpha, const double* x, double* y) {
    const __m256d va = _mm256_set1_pd(alpha);
    int i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d acc = _mm256_loadu_pd(y + i);
        acc = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), acc);
        _mm256_storeu_pd(y + i, acc);
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void relu_avx2(int n, const double* x, double* y) {
    const __m256d zero = _mm256_setzero_pd();
    int i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_max_pd(zero, _mm256_loadu_pd(x + i)));
    }
    for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_bwd_avx2(int n, const double* act, const double* dy, double* dx) {
    const __m256d zero = _mm256_setzero_pd();
    int i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(act + i), zero, _CMP_GT_OQ);
        _mm256_storeu_pd(dx + i, _mm256_and_pd(mask, _mm256_loadu_pd(dy + i)));
    }
    for (; i < n; ++i) dx[i] = act[i] > 0.0 ? dy[i] : 0.0;
}

const Kernels kAvx2 = {
    "avx2",    matvec_avx2, matvec_t_avx2, outer_acc_avx2,
    dot_avx2,  axpy_avx2,   relu_avx2,     relu_bwd_avx2,
};

}  // namespace

const Kernels& avx2() { return kAvx2; }

}  // namespace cavsim::kern
