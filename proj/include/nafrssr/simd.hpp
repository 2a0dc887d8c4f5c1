#pragma once

// Runtime-selected arithmetic kernels.
//
// Every kernel has a portable scalar reference and optional vector variants
// (AVX2 on x86-64, NEON on AArch64). Variants vectorize across independent
// output elements only; each output element sees the same sequence of
// multiplies and adds as in the scalar reference, so all backends produce
// bitwise-identical results. The build disables floating-point contraction to
// keep that guarantee (no fused multiply-add anywhere).

#include <cstddef>
#include <string_view>

namespace nafrssr::simd {

enum class Backend { Scalar, Avx2, Neon };

struct Kernels {
    Backend backend;
    const char* name;

    // y[i] += a * x[i]
    void (*axpy)(std::size_t n, double a, const double* x, double* y);

    // z[i] = x[i] * y[i]
    void (*mul)(std::size_t n, const double* x, const double* y, double* z);

    // z[i] = x[i] + y[i]
    void (*add)(std::size_t n, const double* x, const double* y, double* z);

    // C[m x n] += A[m x k] * B[k x n]; row-major with leading dimensions.
    // Each C element accumulates its k products in ascending order, starting
    // from the value already stored in C.
    void (*gemm_acc)(std::size_t m, std::size_t n, std::size_t k,
                     const double* a, std::size_t lda,
                     const double* b, std::size_t ldb,
                     double* c, std::size_t ldc);
};

const Kernels& scalar_kernels();

// nullptr when the variant was not compiled in or the CPU lacks the feature.
const Kernels* avx2_kernels();
const Kernels* neon_kernels();

// The table used by all tensor operations. Picked once on first use: the
// NAFRSSR_SIMD environment variable ("scalar", "avx2", "neon") overrides the
// best available backend.
const Kernels& active();

// Force a backend; returns false (and changes nothing) if it is unavailable.
bool select(Backend backend);

std::string_view backend_name(Backend backend);

// Restores the previously active backend on scope exit.
class ScopedBackend {
  public:
    explicit ScopedBackend(Backend backend);
    ~ScopedBackend();
    ScopedBackend(const ScopedBackend&) = delete;
    ScopedBackend& operator=(const ScopedBackend&) = delete;
    bool ok() const { return ok_; }

  private:
    Backend previous_;
    bool ok_;
};

}  // namespace nafrssr::simd
