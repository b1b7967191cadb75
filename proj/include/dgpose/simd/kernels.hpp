#pragma once

// Dense arithmetic kernels behind the network layers.
//
// Every kernel has a portable scalar reference in namespace `scalar` and an
// AVX2/FMA variant in namespace `avx2`. The unqualified entry points dispatch
// at runtime on the detected CPU; set DGPOSE_SIMD=scalar in the environment
// (or call force_kernel_path) to pin the reference path.

#include <cstddef>
#include <string_view>

namespace dgpose::simd {

enum class KernelPath { Scalar, Avx2 };

enum class Trans { No, Yes };

struct CpuFeatures {
    bool avx2 = false;
    bool fma = false;
};

const CpuFeatures& cpu_features();

/// Path used by the dispatching entry points.
KernelPath active_kernel_path();
void force_kernel_path(KernelPath path);
std::string_view kernel_path_name(KernelPath path);

// C[m x n] = alpha * op(A) * op(B) + beta * C, row-major, leading dimensions
// in elements. beta == 0 overwrites C without reading it.
template <class T>
void gemm(Trans ta, Trans tb, int m, int n, int k, T alpha, const T* a, int lda,
          const T* b, int ldb, T beta, T* c, int ldc);

// y += alpha * x
template <class T>
void axpy(std::size_t n, T alpha, const T* x, T* y);

template <class T>
T dot(std::size_t n, const T* x, const T* y);

struct AdamStep {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    long step = 1;  // 1-based, for bias correction
};

// In-place Adam update with L2 weight decay folded into the gradient.
template <class T>
void adam_update(std::size_t n, const AdamStep& s, T* param, const T* grad, T* m, T* v);

namespace scalar {
template <class T>
void gemm(Trans ta, Trans tb, int m, int n, int k, T alpha, const T* a, int lda,
          const T* b, int ldb, T beta, T* c, int ldc);
template <class T>
void axpy(std::size_t n, T alpha, const T* x, T* y);
template <class T>
T dot(std::size_t n, const T* x, const T* y);
template <class T>
void adam_update(std::size_t n, const AdamStep& s, T* param, const T* grad, T* m, T* v);
}  // namespace scalar

namespace avx2 {
template <class T>
void gemm(Trans ta, Trans tb, int m, int n, int k, T alpha, const T* a, int lda,
          const T* b, int ldb, T beta, T* c, int ldc);
template <class T>
void axpy(std::size_t n, T alpha, const T* x, T* y);
template <class T>
T dot(std::size_t n, const T* x, const T* y);
template <class T>
void adam_update(std::size_t n, const AdamStep& s, T* param, const T* grad, T* m, T* v);
}  // namespace avx2

}  // namespace dgpose::simd
