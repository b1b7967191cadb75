#include "dgpose/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "dgpose/simd/kernels.hpp"

namespace dgpose::nn {

using simd::Trans;

namespace {

// Upper bound on im2col scratch per chunk, in elements.
constexpr std::size_t kColBudget = std::size_t{1} << 23;

int chunk_images(std::size_t per_image, int batch) {
    const std::size_t fit = per_image == 0 ? batch : kColBudget / per_image;
    return static_cast<int>(std::clamp<std::size_t>(fit, 1, std::max(batch, 1)));
}

// Column block width for per-image convolution so that one im2col block
// stays cache resident; a multiple of the GEMM register tile width.
int column_block(int rows) {
    constexpr std::size_t kBlockBytes = std::size_t{1} << 19;
    const std::size_t cols = kBlockBytes / (sizeof(float) * static_cast<std::size_t>(rows));
    return static_cast<int>(std::clamp<std::size_t>(cols / 16 * 16, 16, 4096));
}

// im2col restricted to output pixels [p0, p1) of one image; `col` has
// C*K*K rows of length p1 - p0.
template <class T>
void im2col_range(const T* image, int channels, int height, int width, int kernel, int stride,
                  int padding, int out_w, int p0, int p1, T* col) {
    const std::size_t ld = static_cast<std::size_t>(p1 - p0);
    for (int c = 0; c < channels; ++c) {
        const T* plane = image + static_cast<std::size_t>(c) * height * width;
        for (int kh = 0; kh < kernel; ++kh) {
            for (int kw = 0; kw < kernel; ++kw) {
                T* row = col + (static_cast<std::size_t>(c * kernel + kh) * kernel + kw) * ld;
                int p = p0;
                while (p < p1) {
                    const int oh = p / out_w;
                    const int ow0 = p % out_w;
                    const int ow1 = std::min(out_w, ow0 + (p1 - p));
                    T* dst = row + (p - p0) - ow0;
                    const int ih = oh * stride - padding + kh;
                    if (ih < 0 || ih >= height) {
                        std::fill(dst + ow0, dst + ow1, T(0));
                    } else {
                        const T* src = plane + static_cast<std::size_t>(ih) * width;
                        if (stride == 1) {
                            const int lo = std::clamp(padding - kw, ow0, ow1);
                            const int hi = std::clamp(width + padding - kw, lo, ow1);
                            std::fill(dst + ow0, dst + lo, T(0));
                            std::copy(src + lo - padding + kw, src + hi - padding + kw, dst + lo);
                            std::fill(dst + hi, dst + ow1, T(0));
                        } else {
                            for (int ow = ow0; ow < ow1; ++ow) {
                                const int iw = ow * stride - padding + kw;
                                dst[ow] = (iw >= 0 && iw < width) ? src[iw] : T(0);
                            }
                        }
                    }
                    p += ow1 - ow0;
                }
            }
        }
    }
}

template <class T>
void col2im_range(const T* col, int channels, int height, int width, int kernel, int stride,
                  int padding, int out_w, int p0, int p1, T* image) {
    const std::size_t ld = static_cast<std::size_t>(p1 - p0);
    for (int c = 0; c < channels; ++c) {
        T* plane = image + static_cast<std::size_t>(c) * height * width;
        for (int kh = 0; kh < kernel; ++kh) {
            for (int kw = 0; kw < kernel; ++kw) {
                const T* row = col + (static_cast<std::size_t>(c * kernel + kh) * kernel + kw) * ld;
                int p = p0;
                while (p < p1) {
                    const int oh = p / out_w;
                    const int ow0 = p % out_w;
                    const int ow1 = std::min(out_w, ow0 + (p1 - p));
                    const T* src = row + (p - p0) - ow0;
                    const int ih = oh * stride - padding + kh;
                    if (ih >= 0 && ih < height) {
                        T* dst = plane + static_cast<std::size_t>(ih) * width;
                        if (stride == 1) {
                            const int lo = std::clamp(padding - kw, ow0, ow1);
                            const int hi = std::clamp(width + padding - kw, lo, ow1);
                            T* d = dst - padding + kw;
                            for (int ow = lo; ow < hi; ++ow) d[ow] += src[ow];
                        } else {
                            for (int ow = ow0; ow < ow1; ++ow) {
                                const int iw = ow * stride - padding + kw;
                                if (iw >= 0 && iw < width) dst[iw] += src[ow];
                            }
                        }
                    }
                    p += ow1 - ow0;
                }
            }
        }
    }
}

// Output maps at least this large are convolved image by image in
// cache-sized column blocks; smaller maps are batched into one GEMM.
constexpr std::size_t kBlockedConvPixels = 256;

template <class T>
void add_bias(Tensor<T>& out, const Tensor<T>& bias) {
    const Shape s = out.shape();
    const std::size_t plane = s.plane();
    for (int n = 0; n < s.n; ++n) {
        T* p = out.sample(n);
        for (int c = 0; c < s.c; ++c) {
            const T b = bias[c];
            T* q = p + c * plane;
            for (std::size_t i = 0; i < plane; ++i) q[i] += b;
        }
    }
}

template <class T>
void accumulate_bias_grad(const Tensor<T>& grad_out, Tensor<T>& bias_grad) {
    const Shape s = grad_out.shape();
    const std::size_t plane = s.plane();
    for (int n = 0; n < s.n; ++n) {
        const T* p = grad_out.sample(n);
        for (int c = 0; c < s.c; ++c) {
            T acc = 0;
            const T* q = p + c * plane;
            for (std::size_t i = 0; i < plane; ++i) acc += q[i];
            bias_grad[c] += acc;
        }
    }
}

// Copies samples [b0, b0+cnt) of an NCHW tensor into a C x (cnt*plane) matrix.
template <class T>
void gather_chunk(const Tensor<T>& t, int b0, int cnt, T* dst) {
    const Shape s = t.shape();
    const std::size_t plane = s.plane();
    const std::size_t ld = plane * cnt;
    for (int i = 0; i < cnt; ++i) {
        const T* src = t.sample(b0 + i);
        for (int c = 0; c < s.c; ++c) {
            std::memcpy(dst + c * ld + i * plane, src + c * plane, sizeof(T) * plane);
        }
    }
}

template <class T>
void scatter_chunk(const T* src, int b0, int cnt, Tensor<T>& t) {
    const Shape s = t.shape();
    const std::size_t plane = s.plane();
    const std::size_t ld = plane * cnt;
    for (int i = 0; i < cnt; ++i) {
        T* dst = t.sample(b0 + i);
        for (int c = 0; c < s.c; ++c) {
            std::memcpy(dst + c * plane, src + c * ld + i * plane, sizeof(T) * plane);
        }
    }
}

// ---------------------------------------------------------------------------

template <std::floating_point T>
class Conv2d final : public Layer<T> {
public:
    Conv2d(const Shape& in, const LayerDef& d)
        : cin_(in.c), h_(in.h), w_(in.w), cout_(d.units), k_(d.kernel), s_(d.stride),
          p_(d.padding), has_bias_(d.bias) {
        ho_ = conv_out(h_, k_, s_, p_);
        wo_ = conv_out(w_, k_, s_, p_);
        weight_ = Tensor<T>(Shape{cout_, cin_, k_, k_});
        weight_grad_ = Tensor<T>(weight_.shape());
        if (has_bias_) {
            bias_ = Tensor<T>(Shape{1, cout_, 1, 1});
            bias_grad_ = Tensor<T>(bias_.shape());
        }
    }

    Tensor<T> infer(const Tensor<T>& in, const TensorMap<T>&) const override { return run(in); }

    Tensor<T> forward(const Tensor<T>& in, const TensorMap<T>&) override {
        input_ = in;
        return run(in);
    }

    Tensor<T> backward(const Tensor<T>& dy, TensorMap<T>&, BackwardFlags flags) override {
        const int batch = input_.shape().n;
        const int rows = cin_ * k_ * k_;
        const std::size_t hwo = static_cast<std::size_t>(ho_) * wo_;
        Tensor<T> dx;
        if (flags.input_grad) dx = Tensor<T>(input_.shape());
        if (hwo >= kBlockedConvPixels) {
            const int nbk = column_block(rows);
            std::vector<T> col(static_cast<std::size_t>(rows) * nbk);
            const int ldy = static_cast<int>(hwo);
            for (int b = 0; b < batch; ++b) {
                for (int p0 = 0; p0 < ldy; p0 += nbk) {
                    const int p1 = std::min(ldy, p0 + nbk);
                    const int cols = p1 - p0;
                    const T* g = dy.sample(b) + p0;
                    if (flags.param_grads) {
                        im2col_range(input_.sample(b), cin_, h_, w_, k_, s_, p_, wo_, p0, p1,
                                     col.data());
                        simd::gemm<T>(Trans::No, Trans::Yes, cout_, rows, cols, T(1), g, ldy,
                                      col.data(), cols, T(1), weight_grad_.data(), rows);
                    }
                    if (flags.input_grad) {
                        simd::gemm<T>(Trans::Yes, Trans::No, rows, cols, cout_, T(1),
                                      weight_.data(), rows, g, ldy, T(0), col.data(), cols);
                        col2im_range(col.data(), cin_, h_, w_, k_, s_, p_, wo_, p0, p1,
                                     dx.sample(b));
                    }
                }
            }
            if (flags.param_grads && has_bias_) accumulate_bias_grad(dy, bias_grad_);
            return dx;
        }
        const int nb = chunk_images(rows * hwo, batch);
        std::vector<T> col(static_cast<std::size_t>(rows) * nb * hwo);
        std::vector<T> dyg(nb > 1 ? static_cast<std::size_t>(cout_) * nb * hwo : 0);
        for (int b0 = 0; b0 < batch; b0 += nb) {
            const int cnt = std::min(nb, batch - b0);
            const std::size_t ld = hwo * cnt;
            const T* g = dy.sample(b0);
            if (cnt > 1) {
                gather_chunk(dy, b0, cnt, dyg.data());
                g = dyg.data();
            }
            if (flags.param_grads) {
                for (int i = 0; i < cnt; ++i) {
                    im2col(input_.sample(b0 + i), cin_, h_, w_, k_, s_, p_, ho_, wo_, col.data(),
                           ld, i * hwo);
                }
                simd::gemm<T>(Trans::No, Trans::Yes, cout_, rows, static_cast<int>(ld), T(1), g,
                              static_cast<int>(ld), col.data(), static_cast<int>(ld), T(1),
                              weight_grad_.data(), rows);
            }
            if (flags.input_grad) {
                simd::gemm<T>(Trans::Yes, Trans::No, rows, static_cast<int>(ld), cout_, T(1),
                              weight_.data(), rows, g, static_cast<int>(ld), T(0), col.data(),
                              static_cast<int>(ld));
                for (int i = 0; i < cnt; ++i) {
                    col2im(col.data(), cin_, h_, w_, k_, s_, p_, ho_, wo_, ld, i * hwo,
                           dx.sample(b0 + i));
                }
            }
        }
        if (flags.param_grads && has_bias_) accumulate_bias_grad(dy, bias_grad_);
        return dx;
    }

    void collect(std::vector<ParamSlot<T>>& out, const std::string& prefix) override {
        out.push_back({prefix + "weight", &weight_, &weight_grad_, true, true, cin_ * k_ * k_, false});
        if (has_bias_) out.push_back({prefix + "bias", &bias_, &bias_grad_, false, true, 0, false});
    }

    void release_cache() override { input_ = Tensor<T>(); }

private:
    Tensor<T> run(const Tensor<T>& in) const {
        const int batch = in.shape().n;
        const int rows = cin_ * k_ * k_;
        const std::size_t hwo = static_cast<std::size_t>(ho_) * wo_;
        Tensor<T> out(Shape{batch, cout_, ho_, wo_});
        if (hwo >= kBlockedConvPixels) {
            const int nbk = column_block(rows);
            std::vector<T> col(static_cast<std::size_t>(rows) * nbk);
            for (int b = 0; b < batch; ++b) {
                for (int p0 = 0; p0 < static_cast<int>(hwo); p0 += nbk) {
                    const int p1 = std::min(static_cast<int>(hwo), p0 + nbk);
                    im2col_range(in.sample(b), cin_, h_, w_, k_, s_, p_, wo_, p0, p1, col.data());
                    simd::gemm<T>(Trans::No, Trans::No, cout_, p1 - p0, rows, T(1), weight_.data(),
                                  rows, col.data(), p1 - p0, T(0), out.sample(b) + p0,
                                  static_cast<int>(hwo));
                }
            }
            if (has_bias_) add_bias(out, bias_);
            return out;
        }
        const int nb = chunk_images(rows * hwo, batch);
        std::vector<T> col(static_cast<std::size_t>(rows) * nb * hwo);
        std::vector<T> tmp(nb > 1 ? static_cast<std::size_t>(cout_) * nb * hwo : 0);
        for (int b0 = 0; b0 < batch; b0 += nb) {
            const int cnt = std::min(nb, batch - b0);
            const std::size_t ld = hwo * cnt;
            for (int i = 0; i < cnt; ++i) {
                im2col(in.sample(b0 + i), cin_, h_, w_, k_, s_, p_, ho_, wo_, col.data(), ld,
                       i * hwo);
            }
            T* dst = cnt > 1 ? tmp.data() : out.sample(b0);
            simd::gemm<T>(Trans::No, Trans::No, cout_, static_cast<int>(ld), rows, T(1),
                          weight_.data(), rows, col.data(), static_cast<int>(ld), T(0), dst,
                          static_cast<int>(ld));
            if (cnt > 1) scatter_chunk(tmp.data(), b0, cnt, out);
        }
        if (has_bias_) add_bias(out, bias_);
        return out;
    }

    int cin_, h_, w_, cout_, k_, s_, p_, ho_, wo_;
    bool has_bias_;
    Tensor<T> weight_, bias_, weight_grad_, bias_grad_;
    Tensor<T> input_;
};

// ---------------------------------------------------------------------------

template <std::floating_point T>
class Deconv2d final : public Layer<T> {
public:
    Deconv2d(const Shape& in, const LayerDef& d)
        : cin_(in.c), h_(in.h), w_(in.w), cout_(d.units), k_(d.kernel), s_(d.stride),
          p_(d.padding), has_bias_(d.bias) {
        ho_ = deconv_out(h_, k_, s_, p_);
        wo_ = deconv_out(w_, k_, s_, p_);
        weight_ = Tensor<T>(Shape{cin_, cout_, k_, k_});
        weight_grad_ = Tensor<T>(weight_.shape());
        if (has_bias_) {
            bias_ = Tensor<T>(Shape{1, cout_, 1, 1});
            bias_grad_ = Tensor<T>(bias_.shape());
        }
    }

    Tensor<T> infer(const Tensor<T>& in, const TensorMap<T>&) const override { return run(in); }

    Tensor<T> forward(const Tensor<T>& in, const TensorMap<T>&) override {
        input_ = in;
        return run(in);
    }

    Tensor<T> backward(const Tensor<T>& dy, TensorMap<T>&, BackwardFlags flags) override {
        const int batch = input_.shape().n;
        const int rows = cout_ * k_ * k_;
        const std::size_t hwi = static_cast<std::size_t>(h_) * w_;
        Tensor<T> dx;
        if (flags.input_grad) dx = Tensor<T>(input_.shape());
        const int nb = chunk_images(rows * hwi, batch);
        std::vector<T> dcol(static_cast<std::size_t>(rows) * nb * hwi);
        std::vector<T> xg(nb > 1 ? static_cast<std::size_t>(cin_) * nb * hwi : 0);
        std::vector<T> dxg(nb > 1 && flags.input_grad ? static_cast<std::size_t>(cin_) * nb * hwi : 0);
        for (int b0 = 0; b0 < batch; b0 += nb) {
            const int cnt = std::min(nb, batch - b0);
            const std::size_t ld = hwi * cnt;
            for (int i = 0; i < cnt; ++i) {
                im2col(dy.sample(b0 + i), cout_, ho_, wo_, k_, s_, p_, h_, w_, dcol.data(), ld,
                       i * hwi);
            }
            if (flags.param_grads) {
                const T* x = input_.sample(b0);
                if (cnt > 1) {
                    gather_chunk(input_, b0, cnt, xg.data());
                    x = xg.data();
                }
                simd::gemm<T>(Trans::No, Trans::Yes, cin_, rows, static_cast<int>(ld), T(1), x,
                              static_cast<int>(ld), dcol.data(), static_cast<int>(ld), T(1),
                              weight_grad_.data(), rows);
            }
            if (flags.input_grad) {
                T* dst = cnt > 1 ? dxg.data() : dx.sample(b0);
                simd::gemm<T>(Trans::No, Trans::No, cin_, static_cast<int>(ld), rows, T(1),
                              weight_.data(), rows, dcol.data(), static_cast<int>(ld), T(0), dst,
                              static_cast<int>(ld));
                if (cnt > 1) scatter_chunk(dxg.data(), b0, cnt, dx);
            }
        }
        if (flags.param_grads && has_bias_) accumulate_bias_grad(dy, bias_grad_);
        return dx;
    }

    void collect(std::vector<ParamSlot<T>>& out, const std::string& prefix) override {
        // Each output pixel receives about Cin * (K/S)^2 contributions.
        const int taps = std::max(1, k_ / s_);
        out.push_back({prefix + "weight", &weight_, &weight_grad_, true, true, cin_ * taps * taps, false});
        if (has_bias_) out.push_back({prefix + "bias", &bias_, &bias_grad_, false, true, 0, false});
    }

    void release_cache() override { input_ = Tensor<T>(); }

private:
    Tensor<T> run(const Tensor<T>& in) const {
        const int batch = in.shape().n;
        const int rows = cout_ * k_ * k_;
        const std::size_t hwi = static_cast<std::size_t>(h_) * w_;
        Tensor<T> out(Shape{batch, cout_, ho_, wo_});
        const int nb = chunk_images(rows * hwi, batch);
        std::vector<T> col(static_cast<std::size_t>(rows) * nb * hwi);
        std::vector<T> xg(nb > 1 ? static_cast<std::size_t>(cin_) * nb * hwi : 0);
        for (int b0 = 0; b0 < batch; b0 += nb) {
            const int cnt = std::min(nb, batch - b0);
            const std::size_t ld = hwi * cnt;
            const T* x = in.sample(b0);
            if (cnt > 1) {
                gather_chunk(in, b0, cnt, xg.data());
                x = xg.data();
            }
            simd::gemm<T>(Trans::Yes, Trans::No, rows, static_cast<int>(ld), cin_, T(1),
                          weight_.data(), rows, x, static_cast<int>(ld), T(0), col.data(),
                          static_cast<int>(ld));
            for (int i = 0; i < cnt; ++i) {
                col2im(col.data(), cout_, ho_, wo_, k_, s_, p_, h_, w_, ld, i * hwi,
                       out.sample(b0 + i));
            }
        }
        if (has_bias_) add_bias(out, bias_);
        return out;
    }

    int cin_, h_, w_, cout_, k_, s_, p_, ho_, wo_;
    bool has_bias_;
    Tensor<T> weight_, bias_, weight_grad_, bias_grad_;
    Tensor<T> input_;
};

// ---------------------------------------------------------------------------

template <std::floating_point T>
class BatchNorm final : public Layer<T> {
public:
    explicit BatchNorm(const Shape& in) : channels_(in.c) {
        const Shape s{1, channels_, 1, 1};
        gamma_ = Tensor<T>(s, T(1));
        beta_ = Tensor<T>(s);
        gamma_grad_ = Tensor<T>(s);
        beta_grad_ = Tensor<T>(s);
        running_mean_ = Tensor<T>(s);
        running_var_ = Tensor<T>(s, T(1));
    }

    Tensor<T> infer(const Tensor<T>& in, const TensorMap<T>&) const override {
        Tensor<T> out(in.shape());
        const Shape s = in.shape();
        const std::size_t plane = s.plane();
        for (int c = 0; c < channels_; ++c) {
            const T inv = T(1) / std::sqrt(running_var_[c] + T(kBatchNormEps));
            const T scale = gamma_[c] * inv;
            const T shift = beta_[c] - running_mean_[c] * scale;
            for (int n = 0; n < s.n; ++n) {
                const T* p = in.sample(n) + c * plane;
                T* q = out.sample(n) + c * plane;
                for (std::size_t i = 0; i < plane; ++i) q[i] = p[i] * scale + shift;
            }
        }
        return out;
    }

    Tensor<T> forward(const Tensor<T>& in, const TensorMap<T>& ext) override {
        if (frozen_) {
            inv_std_.assign(channels_, T(0));
            for (int c = 0; c < channels_; ++c) {
                inv_std_[c] = T(1) / std::sqrt(running_var_[c] + T(kBatchNormEps));
            }
            return infer(in, ext);
        }
        const Shape s = in.shape();
        const std::size_t plane = s.plane();
        const double count = static_cast<double>(s.n) * static_cast<double>(plane);
        xhat_ = Tensor<T>(s);
        inv_std_.assign(channels_, T(0));
        Tensor<T> out(s);
        for (int c = 0; c < channels_; ++c) {
            double sum = 0.0;
            for (int n = 0; n < s.n; ++n) {
                const T* p = in.sample(n) + c * plane;
                for (std::size_t i = 0; i < plane; ++i) sum += p[i];
            }
            const double mean = sum / count;
            double sq = 0.0;
            for (int n = 0; n < s.n; ++n) {
                const T* p = in.sample(n) + c * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    const double d = p[i] - mean;
                    sq += d * d;
                }
            }
            const double var = sq / count;
            const T inv = static_cast<T>(1.0 / std::sqrt(var + kBatchNormEps));
            inv_std_[c] = inv;
            const T m = static_cast<T>(mean);
            for (int n = 0; n < s.n; ++n) {
                const T* p = in.sample(n) + c * plane;
                T* xh = xhat_.sample(n) + c * plane;
                T* q = out.sample(n) + c * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    xh[i] = (p[i] - m) * inv;
                    q[i] = gamma_[c] * xh[i] + beta_[c];
                }
            }
            const double unbiased = count > 1.0 ? var * count / (count - 1.0) : var;
            running_mean_[c] = static_cast<T>(kBatchNormMomentum * running_mean_[c] +
                                              (1.0 - kBatchNormMomentum) * mean);
            running_var_[c] = static_cast<T>(kBatchNormMomentum * running_var_[c] +
                                             (1.0 - kBatchNormMomentum) * unbiased);
        }
        return out;
    }

    Tensor<T> backward(const Tensor<T>& dy, TensorMap<T>&, BackwardFlags flags) override {
        const Shape s = dy.shape();
        const std::size_t plane = s.plane();
        const double count = static_cast<double>(s.n) * static_cast<double>(plane);
        Tensor<T> dx;
        if (flags.input_grad) dx = Tensor<T>(s);
        if (frozen_) {
            if (!flags.input_grad) return dx;
            for (int c = 0; c < channels_; ++c) {
                const T k = gamma_[c] * inv_std_[c];
                for (int n = 0; n < s.n; ++n) {
                    const T* g = dy.sample(n) + c * plane;
                    T* d = dx.sample(n) + c * plane;
                    for (std::size_t i = 0; i < plane; ++i) d[i] = k * g[i];
                }
            }
            return dx;
        }
        for (int c = 0; c < channels_; ++c) {
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (int n = 0; n < s.n; ++n) {
                const T* g = dy.sample(n) + c * plane;
                const T* xh = xhat_.sample(n) + c * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    sum_dy += g[i];
                    sum_dy_xhat += static_cast<double>(g[i]) * xh[i];
                }
            }
            if (flags.param_grads) {
                gamma_grad_[c] += static_cast<T>(sum_dy_xhat);
                beta_grad_[c] += static_cast<T>(sum_dy);
            }
            if (!flags.input_grad) continue;
            const T k = gamma_[c] * inv_std_[c];
            const T mean_dy = static_cast<T>(sum_dy / count);
            const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / count);
            for (int n = 0; n < s.n; ++n) {
                const T* g = dy.sample(n) + c * plane;
                const T* xh = xhat_.sample(n) + c * plane;
                T* d = dx.sample(n) + c * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    d[i] = k * (g[i] - mean_dy - xh[i] * mean_dy_xhat);
                }
            }
        }
        return dx;
    }

    void collect(std::vector<ParamSlot<T>>& out, const std::string& prefix) override {
        out.push_back({prefix + "gamma", &gamma_, &gamma_grad_, false, true, 0, false});
        out.push_back({prefix + "beta", &beta_, &beta_grad_, false, true, 0, false});
        out.push_back({prefix + "running_mean", &running_mean_, nullptr, false, false, 0, false});
        out.push_back({prefix + "running_var", &running_var_, nullptr, false, false, 0, false});
    }

    void release_cache() override {
        xhat_ = Tensor<T>();
        inv_std_.clear();
    }

    void set_frozen(bool frozen) override { frozen_ = frozen; }

private:
    int channels_;
    bool frozen_ = false;
    Tensor<T> gamma_, beta_, gamma_grad_, beta_grad_, running_mean_, running_var_;
    Tensor<T> xhat_;
    std::vector<T> inv_std_;
};

// ---------------------------------------------------------------------------

template <std::floating_point T>
class ActivationLayer final : public Layer<T> {
public:
    ActivationLayer(ActivationKind kind, double slope) : kind_(kind), slope_(static_cast<T>(slope)) {}

    Tensor<T> infer(const Tensor<T>& in, const TensorMap<T>&) const override {
        Tensor<T> out(in.shape());
        apply(in.data(), out.data(), in.size());
        return out;
    }

    Tensor<T> forward(const Tensor<T>& in, const TensorMap<T>&) override {
        output_ = Tensor<T>(in.shape());
        apply(in.data(), output_.data(), in.size());
        return output_;
    }

    Tensor<T> backward(const Tensor<T>& dy, TensorMap<T>&, BackwardFlags) override {
        Tensor<T> dx(dy.shape());
        const T* y = output_.data();
        const T* g = dy.data();
        T* d = dx.data();
        const std::size_t n = dy.size();
        switch (kind_) {
            case ActivationKind::ReLU:
                for (std::size_t i = 0; i < n; ++i) d[i] = y[i] > T(0) ? g[i] : T(0);
                break;
            case ActivationKind::LeakyReLU:
                for (std::size_t i = 0; i < n; ++i) d[i] = y[i] > T(0) ? g[i] : slope_ * g[i];
                break;
            case ActivationKind::Sigmoid:
                for (std::size_t i = 0; i < n; ++i) d[i] = g[i] * y[i] * (T(1) - y[i]);
                break;
            case ActivationKind::Tanh:
                for (std::size_t i = 0; i < n; ++i) d[i] = g[i] * (T(1) - y[i] * y[i]);
                break;
        }
        return dx;
    }

    void release_cache() override { output_ = Tensor<T>(); }

private:
    void apply(const T* x, T* y, std::size_t n) const {
        switch (kind_) {
            case ActivationKind::ReLU:
                for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
                break;
            case ActivationKind::LeakyReLU:
                for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : slope_ * x[i];
                break;
            case ActivationKind::Sigmoid:
                for (std::size_t i = 0; i < n; ++i) y[i] = T(1) / (T(1) + std::exp(-x[i]));
                break;
            case ActivationKind::Tanh:
                for (std::size_t i = 0; i < n; ++i) y[i] = std::tanh(x[i]);
                break;
        }
    }

    ActivationKind kind_;
    T slope_;
    Tensor<T> output_;
};

// ---------------------------------------------------------------------------

template <std::floating_point T>
class ConcatLayer final : public Layer<T> {
public:
    ConcatLayer(std::string source, int trunk_channels)
        : source_(std::move(source)), trunk_channels_(trunk_channels) {}

    Tensor<T> infer(const Tensor<T>& in, const TensorMap<T>& ext) const override {
        return concat_channels(in, lookup(ext));
    }

    Tensor<T> forward(const Tensor<T>& in, const TensorMap<T>& ext) override {
        return concat_channels(in, lookup(ext));
    }

    Tensor<T> backward(const Tensor<T>& dy, TensorMap<T>& ext_grads, BackwardFlags) override {
        const Shape s = dy.shape();
        const Shape trunk{s.n, trunk_channels_, s.h, s.w};
        const Shape extra{s.n, s.c - trunk_channels_, s.h, s.w};
        Tensor<T> dx(trunk);
        auto it = ext_grads.find(source_);
        if (it == ext_grads.end() || it->second.shape() != extra) {
            it = ext_grads.insert_or_assign(source_, Tensor<T>(extra)).first;
        }
        Tensor<T>& de = it->second;
        for (int n = 0; n < s.n; ++n) {
            const T* g = dy.sample(n);
            std::copy_n(g, trunk.per_sample(), dx.sample(n));
            T* e = de.sample(n);
            const T* ge = g + trunk.per_sample();
            for (std::size_t i = 0; i < extra.per_sample(); ++i) e[i] += ge[i];
        }
        return dx;
    }

private:
    const Tensor<T>& lookup(const TensorMap<T>& ext) const {
        auto it = ext.find(source_);
        if (it == ext.end()) throw ShapeError("missing network input '" + source_ + "'");
        return it->second;
    }

    std::string source_;
    int trunk_channels_;
};

template <std::floating_point T>
class ReshapeLayer final : public Layer<T> {
public:
    ReshapeLayer(const Shape& in, const Shape& out) : in_(in), out_(out) {}

    Tensor<T> infer(const Tensor<T>& in, const TensorMap<T>&) const override {
        Tensor<T> out = in;
        out.reshape(Shape{in.shape().n, out_.c, out_.h, out_.w});
        return out;
    }
    Tensor<T> forward(const Tensor<T>& in, const TensorMap<T>& ext) override { return infer(in, ext); }
    Tensor<T> backward(const Tensor<T>& dy, TensorMap<T>&, BackwardFlags) override {
        Tensor<T> dx = dy;
        dx.reshape(Shape{dy.shape().n, in_.c, in_.h, in_.w});
        return dx;
    }

private:
    Shape in_, out_;
};

template <std::floating_point T>
class ResidualBlock final : public Layer<T> {
public:
    ResidualBlock(const Shape& in, const LayerDef& d, const NetworkSpec& spec) {
        Shape s = in;
        for (const auto& inner : d.body) {
            body_.push_back(make_layer<T>(inner, s, spec));
            s = layer_output_shape(inner, s, spec);
        }
    }

    Tensor<T> infer(const Tensor<T>& in, const TensorMap<T>& ext) const override {
        Tensor<T> x = in;
        for (const auto& l : body_) x = l->infer(x, ext);
        simd::axpy<T>(x.size(), T(1), in.data(), x.data());
        return x;
    }

    Tensor<T> forward(const Tensor<T>& in, const TensorMap<T>& ext) override {
        Tensor<T> x = in;
        for (auto& l : body_) x = l->forward(x, ext);
        simd::axpy<T>(x.size(), T(1), in.data(), x.data());
        return x;
    }

    Tensor<T> backward(const Tensor<T>& dy, TensorMap<T>& ext_grads, BackwardFlags flags) override {
        Tensor<T> g = dy;
        for (auto it = body_.rbegin(); it != body_.rend(); ++it) {
            g = (*it)->backward(g, ext_grads, BackwardFlags{flags.param_grads, true});
        }
        simd::axpy<T>(g.size(), T(1), dy.data(), g.data());
        return g;
    }

    void collect(std::vector<ParamSlot<T>>& out, const std::string& prefix) override {
        for (std::size_t i = 0; i < body_.size(); ++i) {
            body_[i]->collect(out, prefix + "body." + std::to_string(i) + ".");
        }
    }

    void release_cache() override {
        for (auto& l : body_) l->release_cache();
    }

    void set_frozen(bool frozen) override {
        for (auto& l : body_) l->set_frozen(frozen);
    }

private:
    std::vector<std::unique_ptr<Layer<T>>> body_;
};

}  // namespace

// ---------------------------------------------------------------------------

template <std::floating_point T>
FullyConnected<T>::FullyConnected(int in_features, int out_features, bool bias)
    : in_features_(in_features), out_features_(out_features), has_bias_(bias) {
    weight_ = Tensor<T>(Shape{out_features_, in_features_, 1, 1});
    weight_grad_ = Tensor<T>(weight_.shape());
    if (has_bias_) {
        bias_ = Tensor<T>(Shape{1, out_features_, 1, 1});
        bias_grad_ = Tensor<T>(bias_.shape());
    }
}

template <std::floating_point T>
Tensor<T> FullyConnected<T>::infer(const Tensor<T>& in, const TensorMap<T>&) const {
    const int batch = in.shape().n;
    if (static_cast<int>(in.shape().per_sample()) != in_features_) {
        throw ShapeError("fully-connected input " + in.shape().str() + " does not flatten to " +
                         std::to_string(in_features_));
    }
    Tensor<T> out(Shape{batch, out_features_, 1, 1});
    simd::gemm<T>(Trans::No, Trans::Yes, batch, out_features_, in_features_, T(1), in.data(),
                  in_features_, weight_.data(), in_features_, T(0), out.data(), out_features_);
    if (has_bias_) add_bias(out, bias_);
    return out;
}

template <std::floating_point T>
Tensor<T> FullyConnected<T>::forward(const Tensor<T>& in, const TensorMap<T>& ext) {
    input_ = in;
    return infer(in, ext);
}

template <std::floating_point T>
Tensor<T> FullyConnected<T>::backward(const Tensor<T>& dy, TensorMap<T>&, BackwardFlags flags) {
    const int batch = input_.shape().n;
    if (flags.param_grads) {
        simd::gemm<T>(Trans::Yes, Trans::No, out_features_, in_features_, batch, T(1), dy.data(),
                      out_features_, input_.data(), in_features_, T(1), weight_grad_.data(),
                      in_features_);
        if (has_bias_) accumulate_bias_grad(dy, bias_grad_);
    }
    Tensor<T> dx;
    if (flags.input_grad) {
        dx = Tensor<T>(input_.shape());
        simd::gemm<T>(Trans::No, Trans::No, batch, in_features_, out_features_, T(1), dy.data(),
                      out_features_, weight_.data(), in_features_, T(0), dx.data(), in_features_);
    }
    return dx;
}

template <std::floating_point T>
void FullyConnected<T>::collect(std::vector<ParamSlot<T>>& out, const std::string& prefix) {
    out.push_back({prefix + "weight", &weight_, &weight_grad_, true, true, in_features_, true});
    if (has_bias_) out.push_back({prefix + "bias", &bias_, &bias_grad_, false, true, 0, false});
}

template <std::floating_point T>
std::unique_ptr<Layer<T>> make_layer(const LayerDef& def, const Shape& in, const NetworkSpec& spec) {
    switch (def.kind) {
        case LayerKind::Conv: return std::make_unique<Conv2d<T>>(in, def);
        case LayerKind::Deconv: return std::make_unique<Deconv2d<T>>(in, def);
        case LayerKind::FullyConnected:
            return std::make_unique<FullyConnected<T>>(static_cast<int>(in.per_sample()), def.units,
                                                       def.bias);
        case LayerKind::BatchNorm: return std::make_unique<BatchNorm<T>>(in);
        case LayerKind::Activation: return std::make_unique<ActivationLayer<T>>(def.activation, def.slope);
        case LayerKind::Concat: return std::make_unique<ConcatLayer<T>>(def.source, in.c);
        case LayerKind::Reshape:
            return std::make_unique<ReshapeLayer<T>>(in, layer_output_shape(def, in, spec));
        case LayerKind::Residual: return std::make_unique<ResidualBlock<T>>(in, def, spec);
    }
    throw BuildError("unknown layer kind");
}

// ---------------------------------------------------------------------------

template <std::floating_point T>
void im2col(const T* image, int channels, int height, int width, int kernel, int stride,
            int padding, int out_h, int out_w, T* col, std::size_t ld, std::size_t offset) {
    for (int c = 0; c < channels; ++c) {
        const T* plane = image + static_cast<std::size_t>(c) * height * width;
        for (int kh = 0; kh < kernel; ++kh) {
            for (int kw = 0; kw < kernel; ++kw) {
                T* row = col + (static_cast<std::size_t>(c * kernel + kh) * kernel + kw) * ld + offset;
                for (int oh = 0; oh < out_h; ++oh) {
                    const int ih = oh * stride - padding + kh;
                    T* dst = row + static_cast<std::size_t>(oh) * out_w;
                    if (ih < 0 || ih >= height) {
                        std::fill_n(dst, out_w, T(0));
                        continue;
                    }
                    const T* src = plane + static_cast<std::size_t>(ih) * width;
                    if (stride == 1) {
                        // Valid ow range: 0 <= ow - padding + kw < width.
                        const int lo = std::clamp(padding - kw, 0, out_w);
                        const int hi = std::clamp(width + padding - kw, lo, out_w);
                        std::fill_n(dst, lo, T(0));
                        std::copy(src + lo - padding + kw, src + hi - padding + kw, dst + lo);
                        std::fill(dst + hi, dst + out_w, T(0));
                    } else {
                        for (int ow = 0; ow < out_w; ++ow) {
                            const int iw = ow * stride - padding + kw;
                            dst[ow] = (iw >= 0 && iw < width) ? src[iw] : T(0);
                        }
                    }
                }
            }
        }
    }
}

template <std::floating_point T>
void col2im(const T* col, int channels, int height, int width, int kernel, int stride,
            int padding, int out_h, int out_w, std::size_t ld, std::size_t offset, T* image) {
    for (int c = 0; c < channels; ++c) {
        T* plane = image + static_cast<std::size_t>(c) * height * width;
        for (int kh = 0; kh < kernel; ++kh) {
            for (int kw = 0; kw < kernel; ++kw) {
                const T* row =
                    col + (static_cast<std::size_t>(c * kernel + kh) * kernel + kw) * ld + offset;
                for (int oh = 0; oh < out_h; ++oh) {
                    const int ih = oh * stride - padding + kh;
                    if (ih < 0 || ih >= height) continue;
                    const T* src = row + static_cast<std::size_t>(oh) * out_w;
                    T* dst = plane + static_cast<std::size_t>(ih) * width;
                    if (stride == 1) {
                        const int lo = std::clamp(padding - kw, 0, out_w);
                        const int hi = std::clamp(width + padding - kw, lo, out_w);
                        T* d = dst - padding + kw;
                        for (int ow = lo; ow < hi; ++ow) d[ow] += src[ow];
                    } else {
                        for (int ow = 0; ow < out_w; ++ow) {
                            const int iw = ow * stride - padding + kw;
                            if (iw >= 0 && iw < width) dst[iw] += src[ow];
                        }
                    }
                }
            }
        }
    }
}

template class FullyConnected<float>;
template class FullyConnected<double>;
template std::unique_ptr<Layer<float>> make_layer<float>(const LayerDef&, const Shape&, const NetworkSpec&);
template std::unique_ptr<Layer<double>> make_layer<double>(const LayerDef&, const Shape&, const NetworkSpec&);
template void im2col<float>(const float*, int, int, int, int, int, int, int, int, float*,
                            std::size_t, std::size_t);
template void im2col<double>(const double*, int, int, int, int, int, int, int, int, double*,
                             std::size_t, std::size_t);
template void col2im<float>(const float*, int, int, int, int, int, int, int, int, std::size_t,
                            std::size_t, float*);
template void col2im<double>(const double*, int, int, int, int, int, int, int, int, std::size_t,
                             std::size_t, double*);

}  // namespace dgpose::nn
