#include "dgpose/simd/kernels.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <string>

namespace dgpose::simd {

const CpuFeatures& cpu_features() {
    static const CpuFeatures features = [] {
        CpuFeatures f;
#if defined(__x86_64__) || defined(__i386__)
        __builtin_cpu_init();
        f.avx2 = __builtin_cpu_supports("avx2");
        f.fma = __builtin_cpu_supports("fma");
#endif
        return f;
    }();
    return features;
}

namespace {

KernelPath detect_path() {
    if (const char* env = std::getenv("DGPOSE_SIMD")) {
        if (std::string(env) == "scalar") return KernelPath::Scalar;
    }
#if defined(DGPOSE_HAVE_AVX2)
    const auto& f = cpu_features();
    if (f.avx2 && f.fma) return KernelPath::Avx2;
#endif
    return KernelPath::Scalar;
}

std::atomic<KernelPath>& path_slot() {
    static std::atomic<KernelPath> slot{detect_path()};
    return slot;
}

}  // namespace

KernelPath active_kernel_path() { return path_slot().load(std::memory_order_relaxed); }

void force_kernel_path(KernelPath path) {
#if !defined(DGPOSE_HAVE_AVX2)
    path = KernelPath::Scalar;
#endif
    if (path == KernelPath::Avx2 && !(cpu_features().avx2 && cpu_features().fma)) {
        path = KernelPath::Scalar;
    }
    path_slot().store(path, std::memory_order_relaxed);
}

std::string_view kernel_path_name(KernelPath path) {
    return path == KernelPath::Avx2 ? "avx2" : "scalar";
}

namespace scalar {

template <class T>
void gemm(Trans ta, Trans tb, int m, int n, int k, T alpha, const T* a, int lda,
          const T* b, int ldb, T beta, T* c, int ldc) {
    for (int i = 0; i < m; ++i) {
        T* crow = c + static_cast<std::ptrdiff_t>(i) * ldc;
        if (beta == T(0)) {
            std::memset(crow, 0, sizeof(T) * static_cast<std::size_t>(n));
        } else if (beta != T(1)) {
            for (int j = 0; j < n; ++j) crow[j] *= beta;
        }
        for (int p = 0; p < k; ++p) {
            const T aip = ta == Trans::No ? a[static_cast<std::ptrdiff_t>(i) * lda + p]
                                          : a[static_cast<std::ptrdiff_t>(p) * lda + i];
            const T s = alpha * aip;
            if (s == T(0)) continue;
            if (tb == Trans::No) {
                const T* brow = b + static_cast<std::ptrdiff_t>(p) * ldb;
                for (int j = 0; j < n; ++j) crow[j] += s * brow[j];
            } else {
                for (int j = 0; j < n; ++j) crow[j] += s * b[static_cast<std::ptrdiff_t>(j) * ldb + p];
            }
        }
    }
}

template <class T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <class T>
T dot(std::size_t n, const T* x, const T* y) {
    T acc = 0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

template <class T>
void adam_update(std::size_t n, const AdamStep& s, T* param, const T* grad, T* m, T* v) {
    const T b1 = static_cast<T>(s.beta1);
    const T b2 = static_cast<T>(s.beta2);
    const T wd = static_cast<T>(s.weight_decay);
    const T c1 = static_cast<T>(1.0 / (1.0 - std::pow(s.beta1, static_cast<double>(s.step))));
    const T c2 = static_cast<T>(1.0 / (1.0 - std::pow(s.beta2, static_cast<double>(s.step))));
    const T lr = static_cast<T>(s.lr);
    const T eps = static_cast<T>(s.eps);
    for (std::size_t i = 0; i < n; ++i) {
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

}  // namespace scalar

#if defined(DGPOSE_HAVE_AVX2)
#define DGPOSE_DISPATCH(fn, ...)                                                  \
    (active_kernel_path() == KernelPath::Avx2 ? avx2::fn(__VA_ARGS__) : scalar::fn(__VA_ARGS__))
#else
#define DGPOSE_DISPATCH(fn, ...) scalar::fn(__VA_ARGS__)
#endif

template <class T>
void gemm(Trans ta, Trans tb, int m, int n, int k, T alpha, const T* a, int lda, const T* b,
          int ldb, T beta, T* c, int ldc) {
    if (m <= 0 || n <= 0) return;
    DGPOSE_DISPATCH(gemm<T>, ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

template <class T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
    DGPOSE_DISPATCH(axpy<T>, n, alpha, x, y);
}

template <class T>
T dot(std::size_t n, const T* x, const T* y) {
    return DGPOSE_DISPATCH(dot<T>, n, x, y);
}

template <class T>
void adam_update(std::size_t n, const AdamStep& s, T* param, const T* grad, T* m, T* v) {
    DGPOSE_DISPATCH(adam_update<T>, n, s, param, grad, m, v);
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

}  // namespace dgpose::simd
