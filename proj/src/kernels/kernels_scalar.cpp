#include "dropreg/kernels.hpp"

// Reference kernels. These define the exact floating-point evaluation order;
// the AVX2 variants must reproduce it bitwise. Built with -ffp-contract=off
// so neither path silently fuses mul+add.

namespace dropreg::kernels {
namespace {

void matmul_nn_scalar(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            const double* brow = b + kk * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void matmul_tn_scalar(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t kk = 0; kk < k; ++kk) {
        const double* arow = a + kk * m;
        const double* brow = b + kk * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = arow[i];
            double* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void matmul_nt_scalar(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n) {
    const std::size_t k4 = k - k % 4;
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            // Four interleaved partial sums, combined (s0+s2)+(s1+s3).
            double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
            for (std::size_t kk = 0; kk < k4; kk += 4) {
                s0 += arow[kk + 0] * brow[kk + 0];
                s1 += arow[kk + 1] * brow[kk + 1];
                s2 += arow[kk + 2] * brow[kk + 2];
                s3 += arow[kk + 3] * brow[kk + 3];
            }
            double sum = (s0 + s2) + (s1 + s3);
            for (std::size_t kk = k4; kk < k; ++kk) sum += arow[kk] * brow[kk];
            c[i * n + j] += sum;
        }
    }
}

void add_scalar(const double* x, const double* y, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i] + y[i];
}

void mul_scalar(const double* x, const double* y, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * y[i];
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void scale_scalar(double alpha, double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) x[i] *= alpha;
}

void relu_fwd_scalar(const double* x, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_bwd_scalar(const double* x, const double* g, double* gx, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) gx[i] += x[i] > 0.0 ? g[i] : 0.0;
}

void sgd_update_scalar(double* p, const double* g, double* v, std::size_t n,
                       double momentum, double weight_decay, double lr) {
    for (std::size_t i = 0; i < n; ++i) {
        v[i] = momentum * v[i] + g[i] + weight_decay * p[i];
        p[i] -= lr * v[i];
    }
}

const Impl kScalar = {
    "scalar",        matmul_nn_scalar, matmul_tn_scalar, matmul_nt_scalar,
    add_scalar,      mul_scalar,       axpy_scalar,      scale_scalar,
    relu_fwd_scalar, relu_bwd_scalar,  sgd_update_scalar,
};

}  // namespace

const Impl& scalar_impl() { return kScalar; }

}  // namespace dropreg::kernels
