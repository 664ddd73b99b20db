#include "dropreg/kernels.hpp"

// AVX2 kernels. Lanes are spread across independent output elements (or, for
// matmul_nt, across the four interleaved partial sums the reference kernel
// defines), so every element sees the same mul/add sequence as the scalar
// path and results match bitwise. Plain mul+add, no FMA.

#if defined(__x86_64__) || defined(_M_X64)
#define DROPREG_HAVE_AVX2_BUILD 1
#include <immintrin.h>
#else
#define DROPREG_HAVE_AVX2_BUILD 0
#endif

namespace dropreg::kernels {

#if DROPREG_HAVE_AVX2_BUILD

namespace {

void matmul_nn_avx2(const double* a, const double* b, double* c,
                    std::size_t m, std::size_t k, std::size_t n) {
    const std::size_t n4 = n - n % 4;
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            const double* brow = b + kk * n;
            const __m256d avv = _mm256_set1_pd(av);
            std::size_t j = 0;
            for (; j < n4; j += 4) {
                const __m256d bv = _mm256_loadu_pd(brow + j);
                const __m256d cv = _mm256_loadu_pd(crow + j);
                _mm256_storeu_pd(crow + j, _mm256_add_pd(cv, _mm256_mul_pd(avv, bv)));
            }
            for (; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void matmul_tn_avx2(const double* a, const double* b, double* c,
                    std::size_t m, std::size_t k, std::size_t n) {
    const std::size_t n4 = n - n % 4;
    for (std::size_t kk = 0; kk < k; ++kk) {
        const double* arow = a + kk * m;
        const double* brow = b + kk * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = arow[i];
            double* crow = c + i * n;
            const __m256d avv = _mm256_set1_pd(av);
            std::size_t j = 0;
            for (; j < n4; j += 4) {
                const __m256d bv = _mm256_loadu_pd(brow + j);
                const __m256d cv = _mm256_loadu_pd(crow + j);
                _mm256_storeu_pd(crow + j, _mm256_add_pd(cv, _mm256_mul_pd(avv, bv)));
            }
            for (; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void matmul_nt_avx2(const double* a, const double* b, double* c,
                    std::size_t m, std::size_t k, std::size_t n) {
    const std::size_t k4 = k - k % 4;
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            __m256d acc = _mm256_setzero_pd();
            for (std::size_t kk = 0; kk < k4; kk += 4) {
                const __m256d av = _mm256_loadu_pd(arow + kk);
                const __m256d bv = _mm256_loadu_pd(brow + kk);
                acc = _mm256_add_pd(acc, _mm256_mul_pd(av, bv));
            }
            // Lane l holds s_l; combine as (s0+s2)+(s1+s3) per the contract.
            const __m128d lo = _mm256_castpd256_pd128(acc);
            const __m128d hi = _mm256_extractf128_pd(acc, 1);
            const __m128d pair = _mm_add_pd(lo, hi);  // [s0+s2, s1+s3]
            double sum = _mm_cvtsd_f64(pair) + _mm_cvtsd_f64(_mm_unpackhi_pd(pair, pair));
            for (std::size_t kk = k4; kk < k; ++kk) sum += arow[kk] * brow[kk];
            c[i * n + j] += sum;
        }
    }
}

void add_avx2(const double* x, const double* y, double* out, std::size_t n) {
    const std::size_t n4 = n - n % 4;
    std::size_t i = 0;
    for (; i < n4; i += 4)
        _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) out[i] = x[i] + y[i];
}

void mul_avx2(const double* x, const double* y, double* out, std::size_t n) {
    const std::size_t n4 = n - n % 4;
    std::size_t i = 0;
    for (; i < n4; i += 4)
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) out[i] = x[i] * y[i];
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d av = _mm256_set1_pd(alpha);
    const std::size_t n4 = n - n % 4;
    std::size_t i = 0;
    for (; i < n4; i += 4) {
        const __m256d yv = _mm256_loadu_pd(y + i);
        _mm256_storeu_pd(y + i, _mm256_add_pd(yv, _mm256_mul_pd(av, _mm256_loadu_pd(x + i))));
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void scale_avx2(double alpha, double* x, std::size_t n) {
    const __m256d av = _mm256_set1_pd(alpha);
    const std::size_t n4 = n - n % 4;
    std::size_t i = 0;
    for (; i < n4; i += 4)
        _mm256_storeu_pd(x + i, _mm256_mul_pd(av, _mm256_loadu_pd(x + i)));
    for (; i < n; ++i) x[i] *= alpha;
}

void relu_fwd_avx2(const double* x, double* out, std::size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    const std::size_t n4 = n - n % 4;
    std::size_t i = 0;
    for (; i < n4; i += 4)
        _mm256_storeu_pd(out + i, _mm256_max_pd(_mm256_loadu_pd(x + i), zero));
    for (; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_bwd_avx2(const double* x, const double* g, double* gx, std::size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    const std::size_t n4 = n - n % 4;
    std::size_t i = 0;
    for (; i < n4; i += 4) {
        const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x + i), zero, _CMP_GT_OQ);
        const __m256d gmasked = _mm256_and_pd(mask, _mm256_loadu_pd(g + i));
        _mm256_storeu_pd(gx + i, _mm256_add_pd(_mm256_loadu_pd(gx + i), gmasked));
    }
    for (; i < n; ++i) gx[i] += x[i] > 0.0 ? g[i] : 0.0;
}

void sgd_update_avx2(double* p, const double* g, double* v, std::size_t n,
                     double momentum, double weight_decay, double lr) {
    const __m256d mv = _mm256_set1_pd(momentum);
    const __m256d wdv = _mm256_set1_pd(weight_decay);
    const __m256d lrv = _mm256_set1_pd(lr);
    const std::size_t n4 = n - n % 4;
    std::size_t i = 0;
    for (; i < n4; i += 4) {
        const __m256d pv = _mm256_loadu_pd(p + i);
        // ((momentum*v) + g) + (wd*p), matching the scalar parse.
        __m256d vel = _mm256_add_pd(_mm256_mul_pd(mv, _mm256_loadu_pd(v + i)),
                                    _mm256_loadu_pd(g + i));
        vel = _mm256_add_pd(vel, _mm256_mul_pd(wdv, pv));
        _mm256_storeu_pd(v + i, vel);
        _mm256_storeu_pd(p + i, _mm256_sub_pd(pv, _mm256_mul_pd(lrv, vel)));
    }
    for (; i < n; ++i) {
        v[i] = momentum * v[i] + g[i] + weight_decay * p[i];
        p[i] -= lr * v[i];
    }
}

const Impl kAvx2 = {
    "avx2",        matmul_nn_avx2, matmul_tn_avx2, matmul_nt_avx2,
    add_avx2,      mul_avx2,       axpy_avx2,      scale_avx2,
    relu_fwd_avx2, relu_bwd_avx2,  sgd_update_avx2,
};

}  // namespace

const Impl* avx2_impl() {
    return __builtin_cpu_supports("avx2") ? &kAvx2 : nullptr;
}

#else

const Impl* avx2_impl() { return nullptr; }

#endif  // DROPREG_HAVE_AVX2_BUILD

}  // namespace dropreg::kernels
