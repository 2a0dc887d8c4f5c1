// AArch64 variant. Advanced SIMD is mandatory on AArch64, so no runtime probe.

#include "nafrssr/simd.hpp"

#if defined(__aarch64__)
#include <arm_neon.h>

namespace nafrssr::simd {

namespace {

void axpy_neon(std::size_t n, double a, const double* x, double* y) {
    const float64x2_t va = vdupq_n_f64(a);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2)
        vst1q_f64(y + i, vaddq_f64(vld1q_f64(y + i), vmulq_f64(va, vld1q_f64(x + i))));
    for (; i < n; ++i) y[i] += a * x[i];
}

void mul_neon(std::size_t n, const double* x, const double* y, double* z) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(z + i, vmulq_f64(vld1q_f64(x + i), vld1q_f64(y + i)));
    for (; i < n; ++i) z[i] = x[i] * y[i];
}

void add_neon(std::size_t n, const double* x, const double* y, double* z) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(z + i, vaddq_f64(vld1q_f64(x + i), vld1q_f64(y + i)));
    for (; i < n; ++i) z[i] = x[i] + y[i];
}

// One row x 4 columns per register block.
void gemm_acc_neon(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                   const double* b, std::size_t ldb, double* c, std::size_t ldc) {
    std::size_t i = 0;
    for (; i < m; ++i) {
        const double* arow = a + i * lda;
        double* crow = c + i * ldc;
        std::size_t j = 0;
        for (; j + 4 <= n; j += 4) {
            float64x2_t acc0 = vld1q_f64(crow + j);
            float64x2_t acc1 = vld1q_f64(crow + j + 2);
            for (std::size_t p = 0; p < k; ++p) {
                const float64x2_t av = vdupq_n_f64(arow[p]);
                acc0 = vaddq_f64(acc0, vmulq_f64(av, vld1q_f64(b + p * ldb + j)));
                acc1 = vaddq_f64(acc1, vmulq_f64(av, vld1q_f64(b + p * ldb + j + 2)));
            }
            vst1q_f64(crow + j, acc0);
            vst1q_f64(crow + j + 2, acc1);
        }
        for (; j < n; ++j) {
            double acc = crow[j];
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * b[p * ldb + j];
            crow[j] = acc;
        }
    }
}

const Kernels kNeon{Backend::Neon, "neon", axpy_neon, mul_neon, add_neon, gemm_acc_neon};

}  // namespace

const Kernels* neon_kernels() { return &kNeon; }

}  // namespace nafrssr::simd

#else

namespace nafrssr::simd {
const Kernels* neon_kernels() { return nullptr; }
}  // namespace nafrssr::simd

#endif
