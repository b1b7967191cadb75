#include <doctest.h>

#include <array>
#include <cmath>
#include <random>
#include <vector>

#include "dgpose/simd/kernels.hpp"

using namespace dgpose::simd;

namespace {

template <class T>
std::vector<T> random_vec(std::size_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    std::vector<T> v(n);
    for (auto& x : v) x = static_cast<T>(d(rng));
    return v;
}

// Naive triple loop, independent of both kernel paths.
template <class T>
void reference_gemm(Trans ta, Trans tb, int m, int n, int k, T alpha, const T* a, int lda, const T* b, int ldb, T beta,
                    T* c, int ldc) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            long double acc = 0;
            for (int p = 0; p < k; ++p) {
                const T av = ta == Trans::No ? a[i * lda + p] : a[p * lda + i];
                const T bv = tb == Trans::No ? b[p * ldb + j] : b[j * ldb + p];
                acc += static_cast<long double>(av) * bv;
            }
            const long double prev = beta == T(0) ? 0.0L : static_cast<long double>(beta) * c[i * ldc + j];
            c[i * ldc + j] = static_cast<T>(alpha * acc + prev);
        }
    }
}

template <class T>
void check_gemm(double tol) {
    std::mt19937_64 rng(11);
    const std::array<int, 3> shapes[] = {{1, 1, 1}, {3, 5, 7}, {16, 16, 16}, {17, 33, 9}, {64, 40, 75}, {5, 300, 48}, {31, 7, 129}};
    for (auto [m, n, k] : shapes) {
        for (Trans ta : {Trans::No, Trans::Yes}) {
            for (Trans tb : {Trans::No, Trans::Yes}) {
                for (T beta : {T(0), T(1), T(0.5)}) {
                    const int lda = (ta == Trans::No ? k : m) + 3;
                    const int ldb = (tb == Trans::No ? n : k) + 1;
                    const int ldc = n + 2;
                    auto a = random_vec<T>(static_cast<std::size_t>(lda) * (ta == Trans::No ? m : k), rng);
                    auto b = random_vec<T>(static_cast<std::size_t>(ldb) * (tb == Trans::No ? k : n), rng);
                    auto c0 = random_vec<T>(static_cast<std::size_t>(ldc) * m, rng);
                    auto ref = c0, cs = c0, cv = c0;
                    reference_gemm<T>(ta, tb, m, n, k, T(0.75), a.data(), lda, b.data(), ldb, beta, ref.data(), ldc);
                    scalar::gemm<T>(ta, tb, m, n, k, T(0.75), a.data(), lda, b.data(), ldb, beta, cs.data(), ldc);
#if defined(DGPOSE_HAVE_AVX2)
                    avx2::gemm<T>(ta, tb, m, n, k, T(0.75), a.data(), lda, b.data(), ldb, beta, cv.data(), ldc);
#else
                    cv = cs;
#endif
                    for (int i = 0; i < m; ++i) {
                        for (int j = 0; j < n; ++j) {
                            const auto idx = static_cast<std::size_t>(i) * ldc + j;
                            const double scale = std::max(1.0, std::sqrt(double(k)));
                            REQUIRE(std::abs(double(cs[idx]) - double(ref[idx])) <= tol * scale);
                            REQUIRE(std::abs(double(cv[idx]) - double(ref[idx])) <= tol * scale);
                        }
                        // padding columns untouched
                        for (int j = n; j < ldc; ++j) {
                            const auto idx = static_cast<std::size_t>(i) * ldc + j;
                            REQUIRE(cs[idx] == c0[idx]);
                            REQUIRE(cv[idx] == c0[idx]);
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

TEST_CASE("gemm: scalar and avx2 agree with a naive product (float)") { check_gemm<float>(2e-5); }

TEST_CASE("gemm: scalar and avx2 agree with a naive product (double)") { check_gemm<double>(1e-12); }

TEST_CASE("gemm with beta 0 ignores NaN in C") {
    std::vector<float> a{1, 2, 3, 4}, b{1, 0, 0, 1}, c(4, std::nanf(""));
    gemm<float>(Trans::No, Trans::No, 2, 2, 2, 1.0f, a.data(), 2, b.data(), 2, 0.0f, c.data(), 2);
    CHECK(c == std::vector<float>{1, 2, 3, 4});
}

TEST_CASE("axpy and dot: paths agree on odd lengths") {
    std::mt19937_64 rng(3);
    for (std::size_t n : {0u, 1u, 7u, 8u, 9u, 31u, 1000u, 1027u}) {
        auto x = random_vec<double>(n, rng), y = random_vec<double>(n, rng);
        auto ys = y, yv = y;
        scalar::axpy<double>(n, 0.3, x.data(), ys.data());
        double ds = scalar::dot<double>(n, x.data(), y.data()), dv = ds;
#if defined(DGPOSE_HAVE_AVX2)
        avx2::axpy<double>(n, 0.3, x.data(), yv.data());
        dv = avx2::dot<double>(n, x.data(), y.data());
#else
        yv = ys;
#endif
        long double ref = 0;
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(ys[i] == doctest::Approx(y[i] + 0.3 * x[i]).epsilon(1e-14));
            CHECK(yv[i] == doctest::Approx(y[i] + 0.3 * x[i]).epsilon(1e-14));
            ref += static_cast<long double>(x[i]) * y[i];
        }
        CHECK(std::abs(ds - double(ref)) < 1e-12);
        CHECK(std::abs(dv - double(ref)) < 1e-12);

        auto xf = random_vec<float>(n, rng), yf = random_vec<float>(n, rng);
        auto yfs = yf, yfv = yf;
        scalar::axpy<float>(n, -1.5f, xf.data(), yfs.data());
#if defined(DGPOSE_HAVE_AVX2)
        avx2::axpy<float>(n, -1.5f, xf.data(), yfv.data());
#else
        yfv = yfs;
#endif
        for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(yfs[i] - yfv[i]) <= 1e-6f);
    }
}

TEST_CASE("adam_update: paths agree with a hand-written update") {
    std::mt19937_64 rng(5);
    const std::size_t n = 77;
    AdamStep s;
    s.lr = 1e-3;
    s.weight_decay = 5e-4;
    for (long step = 1; step <= 3; ++step) {
        s.step = step;
        auto p = random_vec<double>(n, rng), g = random_vec<double>(n, rng);
        auto m = random_vec<double>(n, rng), v = random_vec<double>(n, rng);
        for (auto& e : v) e = std::abs(e);
        auto pr = p, mr = m, vr = v;
        for (std::size_t i = 0; i < n; ++i) {
            const double gi = g[i] + s.weight_decay * pr[i];
            mr[i] = s.beta1 * mr[i] + (1 - s.beta1) * gi;
            vr[i] = s.beta2 * vr[i] + (1 - s.beta2) * gi * gi;
            const double mh = mr[i] / (1 - std::pow(s.beta1, step));
            const double vh = vr[i] / (1 - std::pow(s.beta2, step));
            pr[i] -= s.lr * mh / (std::sqrt(vh) + s.eps);
        }
        auto ps = p, ms = m, vs = v;
        scalar::adam_update<double>(n, s, ps.data(), g.data(), ms.data(), vs.data());
        auto pv = p, mv = m, vv = v;
#if defined(DGPOSE_HAVE_AVX2)
        avx2::adam_update<double>(n, s, pv.data(), g.data(), mv.data(), vv.data());
#else
        pv = ps, mv = ms, vv = vs;
#endif
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(ps[i] == doctest::Approx(pr[i]).epsilon(1e-12));
            CHECK(pv[i] == doctest::Approx(pr[i]).epsilon(1e-12));
            CHECK(ms[i] == doctest::Approx(mr[i]).epsilon(1e-12));
            CHECK(vv[i] == doctest::Approx(vr[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("dispatch can be pinned to the scalar path") {
    const KernelPath before = active_kernel_path();
    force_kernel_path(KernelPath::Scalar);
    CHECK(active_kernel_path() == KernelPath::Scalar);
    CHECK(kernel_path_name(KernelPath::Scalar) == "scalar");
    force_kernel_path(before);
    CHECK(active_kernel_path() == before);
}
