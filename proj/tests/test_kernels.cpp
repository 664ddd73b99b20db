#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <vector>

#include "dropreg/kernels.hpp"
#include "dropreg/rng.hpp"

using namespace dropreg;

namespace {

std::vector<double> random_vec(std::size_t n, KeyedRng& rng) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.normal();
    return v;
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("matmul_nn matches a hand example") {
    const auto& k = kernels::scalar_impl();
    // [1 2; 3 4] * [5 6; 7 8] = [19 22; 43 50]
    const std::vector<double> a = {1, 2, 3, 4};
    const std::vector<double> b = {5, 6, 7, 8};
    std::vector<double> c(4, 0.0);
    k.matmul_nn(a.data(), b.data(), c.data(), 2, 2, 2);
    CHECK(c == std::vector<double>{19, 22, 43, 50});
}

TEST_CASE("matmul variants agree with nn on materialized transposes") {
    const auto& k = kernels::scalar_impl();
    KeyedRng rng(11);
    const std::size_t m = 5, kk = 7, n = 6;
    const auto a = random_vec(m * kk, rng);
    const auto b = random_vec(kk * n, rng);

    std::vector<double> c_nn(m * n, 0.0);
    k.matmul_nn(a.data(), b.data(), c_nn.data(), m, kk, n);

    // tn: pass a^T stored as (k x m).
    std::vector<double> at(kk * m);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < kk; ++j) at[j * m + i] = a[i * kk + j];
    std::vector<double> c_tn(m * n, 0.0);
    k.matmul_tn(at.data(), b.data(), c_tn.data(), m, kk, n);
    for (std::size_t i = 0; i < m * n; ++i) CHECK(c_tn[i] == doctest::Approx(c_nn[i]).epsilon(1e-12));

    // nt: pass b^T stored as (n x k).
    std::vector<double> bt(n * kk);
    for (std::size_t i = 0; i < kk; ++i)
        for (std::size_t j = 0; j < n; ++j) bt[j * kk + i] = b[i * n + j];
    std::vector<double> c_nt(m * n, 0.0);
    k.matmul_nt(a.data(), bt.data(), c_nt.data(), m, kk, n);
    for (std::size_t i = 0; i < m * n; ++i) CHECK(c_nt[i] == doctest::Approx(c_nn[i]).epsilon(1e-12));
}

TEST_CASE("avx2 kernels are bitwise identical to the scalar reference") {
    const kernels::Impl* avx2 = kernels::avx2_impl();
    if (!avx2) return;  // nothing to compare on this machine
    const auto& ref = kernels::scalar_impl();
    KeyedRng rng(42);

    // Shapes chosen to exercise vector bodies and scalar tails.
    const std::size_t dims[][3] = {
        {1, 1, 1}, {2, 3, 4}, {4, 4, 4}, {3, 9, 5}, {8, 16, 12}, {5, 13, 7}, {16, 27, 33},
    };
    for (const auto& d : dims) {
        const std::size_t m = d[0], kk = d[1], n = d[2];
        const auto a = random_vec(m * kk, rng);
        const auto b = random_vec(kk * n, rng);
        const auto c0 = random_vec(m * n, rng);

        for (int which = 0; which < 3; ++which) {
            auto cs = c0;
            auto cv = c0;
            if (which == 0) {
                ref.matmul_nn(a.data(), b.data(), cs.data(), m, kk, n);
                avx2->matmul_nn(a.data(), b.data(), cv.data(), m, kk, n);
            } else if (which == 1) {
                const auto a_kx = random_vec(kk * m, rng);
                ref.matmul_tn(a_kx.data(), b.data(), cs.data(), m, kk, n);
                avx2->matmul_tn(a_kx.data(), b.data(), cv.data(), m, kk, n);
            } else {
                const auto b_nk = random_vec(n * kk, rng);
                ref.matmul_nt(a.data(), b_nk.data(), cs.data(), m, kk, n);
                avx2->matmul_nt(a.data(), b_nk.data(), cv.data(), m, kk, n);
            }
            CHECK(bitwise_equal(cs, cv));
        }
    }

    for (std::size_t n : {1u, 3u, 4u, 7u, 64u, 1001u}) {
        const auto x = random_vec(n, rng);
        const auto y = random_vec(n, rng);
        std::vector<double> s(n), v(n);

        ref.add(x.data(), y.data(), s.data(), n);
        avx2->add(x.data(), y.data(), v.data(), n);
        CHECK(bitwise_equal(s, v));

        ref.mul(x.data(), y.data(), s.data(), n);
        avx2->mul(x.data(), y.data(), v.data(), n);
        CHECK(bitwise_equal(s, v));

        s = y;
        v = y;
        ref.axpy(0.37, x.data(), s.data(), n);
        avx2->axpy(0.37, x.data(), v.data(), n);
        CHECK(bitwise_equal(s, v));

        s = x;
        v = x;
        ref.scale(-1.7, s.data(), n);
        avx2->scale(-1.7, v.data(), n);
        CHECK(bitwise_equal(s, v));

        ref.relu_fwd(x.data(), s.data(), n);
        avx2->relu_fwd(x.data(), v.data(), n);
        CHECK(bitwise_equal(s, v));

        auto gs = random_vec(n, rng);
        auto gv = gs;
        ref.relu_bwd(x.data(), y.data(), gs.data(), n);
        avx2->relu_bwd(x.data(), y.data(), gv.data(), n);
        CHECK(bitwise_equal(gs, gv));

        auto ps = x, pv = x;
        auto vs = y, vv = y;
        const auto g = random_vec(n, rng);
        ref.sgd_update(ps.data(), g.data(), vs.data(), n, 0.9, 5e-4, 0.01);
        avx2->sgd_update(pv.data(), g.data(), vv.data(), n, 0.9, 5e-4, 0.01);
        CHECK(bitwise_equal(ps, pv));
        CHECK(bitwise_equal(vs, vv));
    }
}

TEST_CASE("dispatch honors explicit selection") {
    kernels::select("scalar");
    CHECK(std::string(kernels::active().name) == "scalar");
    if (kernels::avx2_impl()) {
        kernels::select("avx2");
        CHECK(std::string(kernels::active().name) == "avx2");
    }
    kernels::select("auto");
    CHECK_THROWS(kernels::select("sse9"));
}
