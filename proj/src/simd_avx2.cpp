// Compiled with -mavx2 (x86-64 only). Multiplies and adds are issued as
// separate instructions so results match the scalar reference bit for bit.

#include "nafrssr/simd.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#include <immintrin.h>

namespace nafrssr::simd {

namespace {

void axpy_avx2(std::size_t n, double a, const double* x, double* y) {
    const __m256d va = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256d y0 = _mm256_loadu_pd(y + i);
        __m256d y1 = _mm256_loadu_pd(y + i + 4);
        y0 = _mm256_add_pd(y0, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
        y1 = _mm256_add_pd(y1, _mm256_mul_pd(va, _mm256_loadu_pd(x + i + 4)));
        _mm256_storeu_pd(y + i, y0);
        _mm256_storeu_pd(y + i + 4, y1);
    }
    for (; i + 4 <= n; i += 4) {
        __m256d y0 = _mm256_loadu_pd(y + i);
        y0 = _mm256_add_pd(y0, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
        _mm256_storeu_pd(y + i, y0);
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

void mul_avx2(std::size_t n, const double* x, const double* y, double* z) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(z + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) z[i] = x[i] * y[i];
}

void add_avx2(std::size_t n, const double* x, const double* y, double* z) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(z + i, _mm256_add_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) z[i] = x[i] + y[i];
}

// MR rows x 8 columns register block.
template <int MR>
inline void block_8(std::size_t k, const double* a, std::size_t lda, const double* b,
                    std::size_t ldb, double* c, std::size_t ldc) {
    __m256d acc0[MR], acc1[MR];
    for (int r = 0; r < MR; ++r) {
        acc0[r] = _mm256_loadu_pd(c + r * ldc);
        acc1[r] = _mm256_loadu_pd(c + r * ldc + 4);
    }
    for (std::size_t p = 0; p < k; ++p) {
        const __m256d b0 = _mm256_loadu_pd(b + p * ldb);
        const __m256d b1 = _mm256_loadu_pd(b + p * ldb + 4);
        for (int r = 0; r < MR; ++r) {
            const __m256d av = _mm256_broadcast_sd(a + r * lda + p);
            acc0[r] = _mm256_add_pd(acc0[r], _mm256_mul_pd(av, b0));
            acc1[r] = _mm256_add_pd(acc1[r], _mm256_mul_pd(av, b1));
        }
    }
    for (int r = 0; r < MR; ++r) {
        _mm256_storeu_pd(c + r * ldc, acc0[r]);
        _mm256_storeu_pd(c + r * ldc + 4, acc1[r]);
    }
}

template <int MR>
inline void block_4(std::size_t k, const double* a, std::size_t lda, const double* b,
                    std::size_t ldb, double* c, std::size_t ldc) {
    __m256d acc[MR];
    for (int r = 0; r < MR; ++r) acc[r] = _mm256_loadu_pd(c + r * ldc);
    for (std::size_t p = 0; p < k; ++p) {
        const __m256d bv = _mm256_loadu_pd(b + p * ldb);
        for (int r = 0; r < MR; ++r)
            acc[r] = _mm256_add_pd(acc[r], _mm256_mul_pd(_mm256_broadcast_sd(a + r * lda + p), bv));
    }
    for (int r = 0; r < MR; ++r) _mm256_storeu_pd(c + r * ldc, acc[r]);
}

template <int MR>
inline void row_panel(std::size_t n, std::size_t k, const double* a, std::size_t lda,
                      const double* b, std::size_t ldb, double* c, std::size_t ldc) {
    std::size_t j = 0;
    for (; j + 8 <= n; j += 8) block_8<MR>(k, a, lda, b + j, ldb, c + j, ldc);
    for (; j + 4 <= n; j += 4) block_4<MR>(k, a, lda, b + j, ldb, c + j, ldc);
    for (; j < n; ++j) {
        for (int r = 0; r < MR; ++r) {
            double acc = c[r * ldc + j];
            for (std::size_t p = 0; p < k; ++p) acc += a[r * lda + p] * b[p * ldb + j];
            c[r * ldc + j] = acc;
        }
    }
}

void gemm_acc_avx2(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                   const double* b, std::size_t ldb, double* c, std::size_t ldc) {
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) row_panel<4>(n, k, a + i * lda, lda, b, ldb, c + i * ldc, ldc);
    for (; i < m; ++i) row_panel<1>(n, k, a + i * lda, lda, b, ldb, c + i * ldc, ldc);
}

const Kernels kAvx2{Backend::Avx2, "avx2", axpy_avx2, mul_avx2, add_avx2, gemm_acc_avx2};

}  // namespace

const Kernels* avx2_kernels() {
    static const bool supported = __builtin_cpu_supports("avx2");
    return supported ? &kAvx2 : nullptr;
}

}  // namespace nafrssr::simd

#else

namespace nafrssr::simd {
const Kernels* avx2_kernels() { return nullptr; }
}  // namespace nafrssr::simd

#endif
