#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "dgpose/nn/layers.hpp"

namespace dgpose {

struct AdamConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 5e-4;  // L2, only on slots flagged for decay

    nlohmann::json to_json() const;
    static AdamConfig from_json(const nlohmann::json& j, AdamConfig base);
    static AdamConfig from_json(const nlohmann::json& j) { return from_json(j, AdamConfig()); }
};

/// Adam over a fixed set of trainable slots. Moment buffers are keyed by
/// slot name so they can be stored next to the parameters.
class Adam {
public:
    Adam(std::vector<nn::ParamSlot<float>> slots, AdamConfig config);

    void zero_grad();
    void step();

    std::int64_t steps() const { return step_; }
    const AdamConfig& config() const { return config_; }
    const std::vector<nn::ParamSlot<float>>& slots() const { return slots_; }

    /// (name, tensor) pairs for the first and second moments: "<slot>.m", "<slot>.v".
    std::vector<std::pair<std::string, const Tensor<float>*>> state() const;
    std::vector<std::pair<std::string, Tensor<float>*>> mutable_state();
    void set_steps(std::int64_t s) { step_ = s; }

private:
    std::vector<nn::ParamSlot<float>> slots_;
    std::vector<Tensor<float>> m_, v_;
    AdamConfig config_;
    std::int64_t step_ = 0;
};

}  // namespace dgpose
