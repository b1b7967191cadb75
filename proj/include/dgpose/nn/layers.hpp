#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "dgpose/nn/spec.hpp"
#include "dgpose/tensor.hpp"

namespace dgpose::nn {

template <std::floating_point T>
using TensorMap = std::map<std::string, Tensor<T>>;

/// A named parameter or buffer. Buffers (BN running statistics) carry no
/// gradient and are never touched by the optimizer.
template <std::floating_point T>
struct ParamSlot {
    std::string name;
    Tensor<T>* value = nullptr;
    Tensor<T>* grad = nullptr;
    bool decay = false;  // weight decay applies (conv / deconv / FC weights)
    bool trainable = true;
    int fan_in = 0;      // > 0 for weights that use variance-scaled initialization
    bool fc_weight = false;
};

struct BackwardFlags {
    bool param_grads = true;
    bool input_grad = true;
};

/// Running-average coefficient of batch-norm statistics.
inline constexpr double kBatchNormMomentum = 0.9;
inline constexpr double kBatchNormEps = 1e-5;

template <std::floating_point T>
class Layer {
public:
    virtual ~Layer() = default;

    /// Inference: no caching, batch norm uses running statistics.
    virtual Tensor<T> infer(const Tensor<T>& in, const TensorMap<T>& ext) const = 0;
    /// Training forward: caches what backward needs, updates running statistics.
    virtual Tensor<T> forward(const Tensor<T>& in, const TensorMap<T>& ext) = 0;
    /// Accumulates parameter gradients; gradients for concatenated network
    /// inputs are accumulated into ext_grads.
    virtual Tensor<T> backward(const Tensor<T>& grad_out, TensorMap<T>& ext_grads,
                               BackwardFlags flags) = 0;
    virtual void collect(std::vector<ParamSlot<T>>& /*out*/, const std::string& /*prefix*/) {}
    virtual void release_cache() {}
    /// Frozen layers still cache for backward but normalise with running
    /// statistics and leave them untouched.
    virtual void set_frozen(bool /*frozen*/) {}
};

template <std::floating_point T>
std::unique_ptr<Layer<T>> make_layer(const LayerDef& def, const Shape& in_shape,
                                     const NetworkSpec& spec);

/// Fully-connected layer on flattened inputs; also used for network heads.
template <std::floating_point T>
class FullyConnected final : public Layer<T> {
public:
    FullyConnected(int in_features, int out_features, bool bias = true);
    Tensor<T> infer(const Tensor<T>& in, const TensorMap<T>& ext) const override;
    Tensor<T> forward(const Tensor<T>& in, const TensorMap<T>& ext) override;
    Tensor<T> backward(const Tensor<T>& grad_out, TensorMap<T>& ext_grads,
                       BackwardFlags flags) override;
    void collect(std::vector<ParamSlot<T>>& out, const std::string& prefix) override;
    void release_cache() override { input_ = Tensor<T>(); }

private:
    int in_features_;
    int out_features_;
    bool has_bias_;
    Tensor<T> weight_, bias_, weight_grad_, bias_grad_;
    Tensor<T> input_;
};

// im2col / col2im over one C x H x W image. `col` has C*K*K rows of length
// `ld`; this image's Ho*Wo columns start at column `offset`.
template <std::floating_point T>
void im2col(const T* image, int channels, int height, int width, int kernel, int stride,
            int padding, int out_h, int out_w, T* col, std::size_t ld, std::size_t offset);
template <std::floating_point T>
void col2im(const T* col, int channels, int height, int width, int kernel, int stride,
            int padding, int out_h, int out_w, std::size_t ld, std::size_t offset, T* image);

}  // namespace dgpose::nn
