#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "dgpose/nn/layers.hpp"
#include "dgpose/nn/spec.hpp"

namespace dgpose::nn {

/// Parameterized instance of a NetworkSpec.
///
/// `infer` is const and safe to call concurrently. `forward` / `backward`
/// belong to a single training owner: forward caches activations, backward
/// consumes them and accumulates parameter gradients.
template <std::floating_point T>
class Network {
public:
    struct Output {
        Tensor<T> trunk;
        TensorMap<T> heads;

        const Tensor<T>& head(const std::string& name) const;
    };

    explicit Network(NetworkSpec spec);
    Network(Network&&) noexcept = default;
    Network& operator=(Network&&) noexcept = default;

    const NetworkSpec& spec() const { return spec_; }
    const std::string& hash() const { return hash_; }
    Shape trunk_shape() const { return trunk_shape_; }

    Output infer(const TensorMap<T>& inputs) const;
    Output forward(const TensorMap<T>& inputs);

    /// Back-propagates head gradients (and an optional trunk gradient).
    /// Returns gradients for every network input when flags.input_grad.
    TensorMap<T> backward(const TensorMap<T>& head_grads, const Tensor<T>* trunk_grad,
                          BackwardFlags flags = {});

    std::vector<ParamSlot<T>> parameters();
    std::size_t parameter_count() const;  // trainable scalars
    void zero_grad();
    void release_cache();
    /// A frozen network back-propagates to its inputs without touching its
    /// batch-norm statistics (used for the fixed Mapper).
    void set_frozen(bool frozen);

    /// Variance-scaled fan-in Gaussian for conv / deconv weights, small
    /// Gaussian for fully-connected weights, zero biases, identity batch norm.
    void initialize(std::uint64_t seed);

    /// Copies parameter and buffer values from a network with the same spec.
    template <std::floating_point U>
    void load_from(Network<U>& other);

private:
    void check_inputs(const TensorMap<T>& inputs) const;

    NetworkSpec spec_;
    std::string hash_;
    Shape trunk_shape_;
    std::vector<std::unique_ptr<Layer<T>>> layers_;
    std::vector<std::pair<std::string, std::unique_ptr<FullyConnected<T>>>> heads_;
    int batch_ = 0;
};

inline constexpr double kFullyConnectedInitStd = 0.01;

}  // namespace dgpose::nn
