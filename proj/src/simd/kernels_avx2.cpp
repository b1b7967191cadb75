// AVX2/FMA kernels. This translation unit is compiled with -mavx2 -mfma and
// must only be entered after cpu_features() confirmed support.

#include "dgpose/simd/kernels.hpp"

#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

namespace dgpose::simd::avx2 {
namespace {

template <class T>
struct Vec;

template <>
struct Vec<float> {
    using reg = __m256;
    static constexpr int lanes = 8;
    static reg zero() { return _mm256_setzero_ps(); }
    static reg load(const float* p) { return _mm256_loadu_ps(p); }
    static void store(float* p, reg r) { _mm256_storeu_ps(p, r); }
    static reg broadcast(float x) { return _mm256_set1_ps(x); }
    static reg fmadd(reg a, reg b, reg c) { return _mm256_fmadd_ps(a, b, c); }
    static reg mul(reg a, reg b) { return _mm256_mul_ps(a, b); }
    static reg add(reg a, reg b) { return _mm256_add_ps(a, b); }
    static reg sub(reg a, reg b) { return _mm256_sub_ps(a, b); }
    static reg div(reg a, reg b) { return _mm256_div_ps(a, b); }
    static reg sqrt(reg a) { return _mm256_sqrt_ps(a); }
    static float hsum(reg r) {
        __m128 lo = _mm256_castps256_ps128(r);
        __m128 hi = _mm256_extractf128_ps(r, 1);
        lo = _mm_add_ps(lo, hi);
        __m128 sh = _mm_movehdup_ps(lo);
        __m128 s = _mm_add_ps(lo, sh);
        sh = _mm_movehl_ps(sh, s);
        s = _mm_add_ss(s, sh);
        return _mm_cvtss_f32(s);
    }
};

template <>
struct Vec<double> {
    using reg = __m256d;
    static constexpr int lanes = 4;
    static reg zero() { return _mm256_setzero_pd(); }
    static reg load(const double* p) { return _mm256_loadu_pd(p); }
    static void store(double* p, reg r) { _mm256_storeu_pd(p, r); }
    static reg broadcast(double x) { return _mm256_set1_pd(x); }
    static reg fmadd(reg a, reg b, reg c) { return _mm256_fmadd_pd(a, b, c); }
    static reg mul(reg a, reg b) { return _mm256_mul_pd(a, b); }
    static reg add(reg a, reg b) { return _mm256_add_pd(a, b); }
    static reg sub(reg a, reg b) { return _mm256_sub_pd(a, b); }
    static reg div(reg a, reg b) { return _mm256_div_pd(a, b); }
    static reg sqrt(reg a) { return _mm256_sqrt_pd(a); }
    static double hsum(reg r) {
        __m128d lo = _mm256_castpd256_pd128(r);
        __m128d hi = _mm256_extractf128_pd(r, 1);
        lo = _mm_add_pd(lo, hi);
        __m128d h = _mm_unpackhi_pd(lo, lo);
        return _mm_cvtsd_f64(_mm_add_sd(lo, h));
    }
};

constexpr int kMR = 6;
constexpr int kKC = 256;
constexpr int kMC = 72;
constexpr int kNC = 4096;

template <class T>
constexpr int kNR = 2 * Vec<T>::lanes;

// Packs op(A)[ic:ic+mc, pc:pc+kc] into MR-row panels, zero-padding the tail.
template <class T>
void pack_a(Trans ta, const T* a, int lda, int ic, int pc, int mc, int kc, T* out) {
    for (int ir = 0; ir < mc; ir += kMR) {
        const int rows = std::min(kMR, mc - ir);
        T* panel = out + static_cast<std::ptrdiff_t>(ir) * kc;
        if (ta == Trans::No) {
            for (int i = 0; i < kMR; ++i) {
                if (i < rows) {
                    const T* src = a + static_cast<std::ptrdiff_t>(ic + ir + i) * lda + pc;
                    for (int p = 0; p < kc; ++p) panel[p * kMR + i] = src[p];
                } else {
                    for (int p = 0; p < kc; ++p) panel[p * kMR + i] = T(0);
                }
            }
        } else {
            for (int p = 0; p < kc; ++p) {
                const T* src = a + static_cast<std::ptrdiff_t>(pc + p) * lda + ic + ir;
                T* dst = panel + p * kMR;
                int i = 0;
                for (; i < rows; ++i) dst[i] = src[i];
                for (; i < kMR; ++i) dst[i] = T(0);
            }
        }
    }
}

// Packs op(B)[pc:pc+kc, jc:jc+nc] into NR-column panels, zero-padding the tail.
template <class T>
void pack_b(Trans tb, const T* b, int ldb, int pc, int jc, int kc, int nc, T* out) {
    constexpr int NR = kNR<T>;
    for (int jr = 0; jr < nc; jr += NR) {
        const int cols = std::min(NR, nc - jr);
        T* panel = out + static_cast<std::ptrdiff_t>(jr) * kc;
        if (tb == Trans::No) {
            for (int p = 0; p < kc; ++p) {
                const T* src = b + static_cast<std::ptrdiff_t>(pc + p) * ldb + jc + jr;
                T* dst = panel + p * NR;
                int j = 0;
                for (; j < cols; ++j) dst[j] = src[j];
                for (; j < NR; ++j) dst[j] = T(0);
            }
        } else {
            for (int j = 0; j < NR; ++j) {
                if (j < cols) {
                    const T* src = b + static_cast<std::ptrdiff_t>(jc + jr + j) * ldb + pc;
                    for (int p = 0; p < kc; ++p) panel[p * NR + j] = src[p];
                } else {
                    for (int p = 0; p < kc; ++p) panel[p * NR + j] = T(0);
                }
            }
        }
    }
}

// C[0:mr, 0:nr] += alpha * Ap * Bp over kc packed steps.
template <class T>
void micro_kernel(int kc, const T* ap, const T* bp, int bstride, T alpha, T* c, int ldc, int mr,
                  int nr) {
    using V = Vec<T>;
    constexpr int L = V::lanes;
    constexpr int NR = kNR<T>;
    typename V::reg c00 = V::zero(), c01 = V::zero();
    typename V::reg c10 = V::zero(), c11 = V::zero();
    typename V::reg c20 = V::zero(), c21 = V::zero();
    typename V::reg c30 = V::zero(), c31 = V::zero();
    typename V::reg c40 = V::zero(), c41 = V::zero();
    typename V::reg c50 = V::zero(), c51 = V::zero();
    for (int p = 0; p < kc; ++p) {
        const auto b0 = V::load(bp);
        const auto b1 = V::load(bp + L);
        auto a = V::broadcast(ap[0]);
        c00 = V::fmadd(a, b0, c00);
        c01 = V::fmadd(a, b1, c01);
        a = V::broadcast(ap[1]);
        c10 = V::fmadd(a, b0, c10);
        c11 = V::fmadd(a, b1, c11);
        a = V::broadcast(ap[2]);
        c20 = V::fmadd(a, b0, c20);
        c21 = V::fmadd(a, b1, c21);
        a = V::broadcast(ap[3]);
        c30 = V::fmadd(a, b0, c30);
        c31 = V::fmadd(a, b1, c31);
        a = V::broadcast(ap[4]);
        c40 = V::fmadd(a, b0, c40);
        c41 = V::fmadd(a, b1, c41);
        a = V::broadcast(ap[5]);
        c50 = V::fmadd(a, b0, c50);
        c51 = V::fmadd(a, b1, c51);
        ap += kMR;
        bp += bstride;
    }
    const auto va = V::broadcast(alpha);
    alignas(32) T tile[kMR * NR];
    V::store(tile + 0 * NR, V::mul(va, c00));
    V::store(tile + 0 * NR + L, V::mul(va, c01));
    V::store(tile + 1 * NR, V::mul(va, c10));
    V::store(tile + 1 * NR + L, V::mul(va, c11));
    V::store(tile + 2 * NR, V::mul(va, c20));
    V::store(tile + 2 * NR + L, V::mul(va, c21));
    V::store(tile + 3 * NR, V::mul(va, c30));
    V::store(tile + 3 * NR + L, V::mul(va, c31));
    V::store(tile + 4 * NR, V::mul(va, c40));
    V::store(tile + 4 * NR + L, V::mul(va, c41));
    V::store(tile + 5 * NR, V::mul(va, c50));
    V::store(tile + 5 * NR + L, V::mul(va, c51));
    if (mr == kMR && nr == NR) {
        for (int i = 0; i < kMR; ++i) {
            T* crow = c + static_cast<std::ptrdiff_t>(i) * ldc;
            V::store(crow, V::add(V::load(crow), V::load(tile + i * NR)));
            V::store(crow + L, V::add(V::load(crow + L), V::load(tile + i * NR + L)));
        }
    } else {
        for (int i = 0; i < mr; ++i) {
            T* crow = c + static_cast<std::ptrdiff_t>(i) * ldc;
            for (int j = 0; j < nr; ++j) crow[j] += tile[i * NR + j];
        }
    }
}

template <class T>
std::vector<T>& scratch_a() {
    thread_local std::vector<T> buf(static_cast<std::size_t>(kMC) * kKC);
    return buf;
}

template <class T>
std::vector<T>& scratch_b() {
    thread_local std::vector<T> buf(static_cast<std::size_t>(kNC) * kKC);
    return buf;
}

}  // namespace

template <class T>
void gemm(Trans ta, Trans tb, int m, int n, int k, T alpha, const T* a, int lda, const T* b,
          int ldb, T beta, T* c, int ldc) {
    constexpr int NR = kNR<T>;
    for (int i = 0; i < m; ++i) {
        T* crow = c + static_cast<std::ptrdiff_t>(i) * ldc;
        if (beta == T(0)) {
            std::memset(crow, 0, sizeof(T) * static_cast<std::size_t>(n));
        } else if (beta != T(1)) {
            for (int j = 0; j < n; ++j) crow[j] *= beta;
        }
    }
    if (k <= 0 || alpha == T(0)) return;

    // With a single row block (small m) each B strip is used only m/MR
    // times, so it is packed just in time into an L1-resident strip instead
    // of packing the whole kc x nc panel up front.
    T* abuf = scratch_a<T>().data();
    T* bbuf = scratch_b<T>().data();
    const bool strip_b = m <= kMC;
    for (int jc = 0; jc < n; jc += kNC) {
        const int nc = std::min(kNC, n - jc);
        for (int pc = 0; pc < k; pc += kKC) {
            const int kc = std::min(kKC, k - pc);
            if (strip_b) {
                pack_a(ta, a, lda, 0, pc, m, kc, abuf);
                for (int jr = 0; jr < nc; jr += NR) {
                    const int nr = std::min(NR, nc - jr);
                    pack_b(tb, b, ldb, pc, jc + jr, kc, nr, bbuf);
                    for (int ir = 0; ir < m; ir += kMR) {
                        const int mr = std::min(kMR, m - ir);
                        const T* ap = abuf + static_cast<std::ptrdiff_t>(ir) * kc;
                        T* cblk = c + static_cast<std::ptrdiff_t>(ir) * ldc + jc + jr;
                        micro_kernel(kc, ap, bbuf, NR, alpha, cblk, ldc, mr, nr);
                    }
                }
                continue;
            }
            pack_b(tb, b, ldb, pc, jc, kc, nc, bbuf);
            for (int ic = 0; ic < m; ic += kMC) {
                const int mc = std::min(kMC, m - ic);
                pack_a(ta, a, lda, ic, pc, mc, kc, abuf);
                for (int jr = 0; jr < nc; jr += NR) {
                    const int nr = std::min(NR, nc - jr);
                    const T* bp = bbuf + static_cast<std::ptrdiff_t>(jr) * kc;
                    for (int ir = 0; ir < mc; ir += kMR) {
                        const int mr = std::min(kMR, mc - ir);
                        const T* ap = abuf + static_cast<std::ptrdiff_t>(ir) * kc;
                        T* cblk = c + static_cast<std::ptrdiff_t>(ic + ir) * ldc + jc + jr;
                        micro_kernel(kc, ap, bp, NR, alpha, cblk, ldc, mr, nr);
                    }
                }
            }
        }
    }
}

template <class T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
    using V = Vec<T>;
    constexpr std::size_t L = V::lanes;
    const auto va = V::broadcast(alpha);
    std::size_t i = 0;
    for (; i + L <= n; i += L) V::store(y + i, V::fmadd(va, V::load(x + i), V::load(y + i)));
    for (; i < n; ++i) y[i] += alpha * x[i];
}

template <class T>
T dot(std::size_t n, const T* x, const T* y) {
    using V = Vec<T>;
    constexpr std::size_t L = V::lanes;
    auto acc0 = V::zero();
    auto acc1 = V::zero();
    std::size_t i = 0;
    for (; i + 2 * L <= n; i += 2 * L) {
        acc0 = V::fmadd(V::load(x + i), V::load(y + i), acc0);
        acc1 = V::fmadd(V::load(x + i + L), V::load(y + i + L), acc1);
    }
    T s = V::hsum(V::add(acc0, acc1));
    for (; i < n; ++i) s += x[i] * y[i];
    return s;
}

template <class T>
void adam_update(std::size_t n, const AdamStep& s, T* param, const T* grad, T* m, T* v) {
    using V = Vec<T>;
    constexpr std::size_t L = V::lanes;
    const T b1 = static_cast<T>(s.beta1);
    const T b2 = static_cast<T>(s.beta2);
    const T wd = static_cast<T>(s.weight_decay);
    const T c1 = static_cast<T>(1.0 / (1.0 - std::pow(s.beta1, static_cast<double>(s.step))));
    const T c2 = static_cast<T>(1.0 / (1.0 - std::pow(s.beta2, static_cast<double>(s.step))));
    const T lr = static_cast<T>(s.lr);
    const T eps = static_cast<T>(s.eps);
    const auto vb1 = V::broadcast(b1), vb1c = V::broadcast(T(1) - b1);
    const auto vb2 = V::broadcast(b2), vb2c = V::broadcast(T(1) - b2);
    const auto vwd = V::broadcast(wd), vc1 = V::broadcast(c1), vc2 = V::broadcast(c2);
    const auto vlr = V::broadcast(lr), veps = V::broadcast(eps);
    std::size_t i = 0;
    for (; i + L <= n; i += L) {
        const auto p = V::load(param + i);
        const auto g = V::fmadd(vwd, p, V::load(grad + i));
        const auto mi = V::fmadd(vb1, V::load(m + i), V::mul(vb1c, g));
        const auto vi = V::fmadd(vb2, V::load(v + i), V::mul(V::mul(vb2c, g), g));
        V::store(m + i, mi);
        V::store(v + i, vi);
        const auto denom = V::add(V::sqrt(V::mul(vi, vc2)), veps);
        V::store(param + i, V::sub(p, V::div(V::mul(vlr, V::mul(mi, vc1)), denom)));
    }
    for (; i < n; ++i) {
        const T g = grad[i] + wd * param[i];
        m[i] = b1 * m[i] + (T(1) - b1) * g;
        v[i] = b2 * v[i] + (T(1) - b2) * g * g;
        param[i] -= lr * (m[i] * c1) / (std::sqrt(v[i] * c2) + eps);
    }
}

template void gemm<float>(Trans, Trans, int, int, int, float, const float*, int, const float*, int,
                          float, float*, int);
template void gemm<double>(Trans, Trans, int, int, int, double, const double*, int, const double*,
                           int, double, double*, int);
template void axpy<float>(std::size_t, float, const float*, float*);
template void axpy<double>(std::size_t, double, const double*, double*);
template float dot<float>(std::size_t, const float*, const float*);
template double dot<double>(std::size_t, const double*, const double*);
template void adam_update<float>(std::size_t, const AdamStep&, float*, const float*, float*, float*);
template void adam_update<double>(std::size_t, const AdamStep&, double*, const double*, double*,
                                  double*);

}  // namespace dgpose::simd::avx2
