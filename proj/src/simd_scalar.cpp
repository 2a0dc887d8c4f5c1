#include "nafrssr/simd.hpp"

#include <cstdlib>
#include <cstring>
#include <string>

namespace nafrssr::simd {

namespace {

void axpy_scalar(std::size_t n, double a, const double* x, double* y) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void mul_scalar(std::size_t n, const double* x, const double* y, double* z) {
    for (std::size_t i = 0; i < n; ++i) z[i] = x[i] * y[i];
}

void add_scalar(std::size_t n, const double* x, const double* y, double* z) {
    for (std::size_t i = 0; i < n; ++i) z[i] = x[i] + y[i];
}

void gemm_acc_scalar(std::size_t m, std::size_t n, std::size_t k,
                     const double* a, std::size_t lda,
                     const double* b, std::size_t ldb,
                     double* c, std::size_t ldc) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * lda;
        double* crow = c + i * ldc;
        for (std::size_t j = 0; j < n; ++j) {
            double acc = crow[j];
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * b[p * ldb + j];
            crow[j] = acc;
        }
    }
}

const Kernels kScalar{Backend::Scalar, "scalar", axpy_scalar, mul_scalar, add_scalar,
                      gemm_acc_scalar};

const Kernels* g_active = nullptr;

const Kernels* lookup(Backend backend) {
    switch (backend) {
        case Backend::Scalar:
            return &kScalar;
        case Backend::Avx2:
            return avx2_kernels();
        case Backend::Neon:
            return neon_kernels();
    }
    return nullptr;
}

const Kernels* pick_default() {
    if (const char* env = std::getenv("NAFRSSR_SIMD")) {
        std::string want(env);
        if (want == "scalar") return &kScalar;
        if (want == "avx2" && avx2_kernels()) return avx2_kernels();
        if (want == "neon" && neon_kernels()) return neon_kernels();
    }
    if (const Kernels* k = avx2_kernels()) return k;
    if (const Kernels* k = neon_kernels()) return k;
    return &kScalar;
}

}  // namespace

const Kernels& scalar_kernels() { return kScalar; }

const Kernels& active() {
    if (!g_active) g_active = pick_default();
    return *g_active;
}

bool select(Backend backend) {
    const Kernels* k = lookup(backend);
    if (!k) return false;
    g_active = k;
    return true;
}

std::string_view backend_name(Backend backend) {
    switch (backend) {
        case Backend::Scalar:
            return "scalar";
        case Backend::Avx2:
            return "avx2";
        case Backend::Neon:
            return "neon";
    }
    return "unknown";
}

ScopedBackend::ScopedBackend(Backend backend) : previous_(active().backend), ok_(select(backend)) {}

ScopedBackend::~ScopedBackend() { select(previous_); }

}  // namespace nafrssr::simd
