#pragma once

#include <cstddef>
#include <string>

namespace dropreg::kernels {

// Dense double-precision inner loops behind the tensor ops. Every entry has a
// scalar reference implementation and (on x86-64 with AVX2) a vectorized
// variant that performs the same floating-point operations in the same
// per-element order, so the two are bitwise interchangeable. The active
// implementation is picked once at startup from CPU capabilities and may be
// overridden with DROPREG_KERNELS=scalar|avx2.
//
// Matmul entries accumulate into c (callers preload bias or zero).
// matmul_nt reduces with four interleaved partial sums combined as
// (s0+s2)+(s1+s3), tail elements appended afterwards; that order is part of
// the kernel contract and both implementations follow it.
struct Impl {
    const char* name;

    // c(m x n) += a(m x k) * b(k x n)
    void (*matmul_nn)(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n);
    // c(m x n) += a(k x m)^T * b(k x n)
    void (*matmul_tn)(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n);
    // c(m x n) += a(m x k) * b(n x k)^T
    void (*matmul_nt)(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n);

    void (*add)(const double* x, const double* y, double* out, std::size_t n);
    void (*mul)(const double* x, const double* y, double* out, std::size_t n);
    // y += alpha * x
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
    void (*scale)(double alpha, double* x, std::size_t n);
    void (*relu_fwd)(const double* x, double* out, std::size_t n);
    // gx += (x > 0) * g
    void (*relu_bwd)(const double* x, const double* g, double* gx, std::size_t n);
    // v = momentum*v + g + wd*p ; p -= lr*v
    void (*sgd_update)(double* p, const double* g, double* v, std::size_t n,
                       double momentum, double weight_decay, double lr);
};

const Impl& scalar_impl();
const Impl* avx2_impl();  // nullptr when unsupported at build or run time

// Currently selected implementation (thread-safe after first call).
const Impl& active();

// Force a specific implementation: "scalar", "avx2" or "auto".
// Throws ConfigError for unknown names or unavailable targets.
void select(const std::string& name);

}  // namespace dropreg::kernels
