#pragma once

// Central-difference gradient checks for Network<double>, shared by the unit
// suites and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "dgpose/nn/network.hpp"

namespace dgpose::testing {

struct GradCheckResult {
    double max_rel = 0.0;
    std::string worst;  // parameter or input name at the worst entry
    int checked = 0;
};

inline double rel_error(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

inline nn::TensorMap<double> random_inputs(const nn::NetworkSpec& spec, int batch, std::mt19937_64& rng) {
    std::normal_distribution<double> d(0.0, 1.0);
    nn::TensorMap<double> in;
    for (const auto& def : spec.inputs) {
        Shape s = def.shape;
        s.n = batch;
        Tensor<double> t(s);
        for (auto& x : t.storage()) x = d(rng);
        in.emplace(def.name, std::move(t));
    }
    return in;
}

/// Loss = sum of fixed random weights times every output (trunk when there
/// are no heads, otherwise every head). Up to `per_tensor` entries of each
/// parameter and input are perturbed.
inline GradCheckResult check_network_gradients(nn::Network<double>& net, int batch, std::uint64_t seed,
                                               int per_tensor = 12, double h = 1e-6) {
    std::mt19937_64 rng(seed);
    net.initialize(seed);
    auto inputs = random_inputs(net.spec(), batch, rng);

    auto probe = net.infer(inputs);
    std::normal_distribution<double> d(0.0, 1.0);
    nn::TensorMap<double> weights;
    Tensor<double> trunk_w;
    const bool use_trunk = net.spec().heads.empty();
    if (use_trunk) {
        trunk_w = Tensor<double>(probe.trunk.shape());
        for (auto& x : trunk_w.storage()) x = d(rng);
    } else {
        for (const auto& [name, t] : probe.heads) {
            Tensor<double> w(t.shape());
            for (auto& x : w.storage()) x = d(rng);
            weights.emplace(name, std::move(w));
        }
    }

    auto loss = [&](const nn::TensorMap<double>& in) {
        auto out = net.forward(in);
        double s = 0;
        if (use_trunk) {
            for (std::size_t i = 0; i < out.trunk.size(); ++i) s += out.trunk[i] * trunk_w[i];
        } else {
            for (const auto& [name, w] : weights) {
                const auto& t = out.head(name);
                for (std::size_t i = 0; i < t.size(); ++i) s += t[i] * w[i];
            }
        }
        net.release_cache();
        return s;
    };

    net.zero_grad();
    net.forward(inputs);
    auto input_grads = net.backward(weights, use_trunk ? &trunk_w : nullptr);
    net.release_cache();

    GradCheckResult r;
    auto check_entry = [&](double& value, double analytic, const std::string& name) {
        const double saved = value;
        value = saved + h;
        const double up = loss(inputs);
        value = saved - h;
        const double down = loss(inputs);
        value = saved;
        const double numeric = (up - down) / (2 * h);
        const double e = rel_error(analytic, numeric);
        ++r.checked;
        if (e > r.max_rel) {
            r.max_rel = e;
            r.worst = name;
        }
    };

    for (auto& slot : net.parameters()) {
        if (!slot.trainable || slot.grad == nullptr) continue;
        const std::size_t n = slot.value->size();
        std::uniform_int_distribution<std::size_t> pick(0, n - 1);
        for (int k = 0; k < per_tensor && k < static_cast<int>(n); ++k) {
            const std::size_t i = static_cast<int>(n) <= per_tensor ? static_cast<std::size_t>(k) : pick(rng);
            check_entry((*slot.value)[i], (*slot.grad)[i], slot.name);
        }
    }
    for (auto& [name, t] : inputs) {
        auto it = input_grads.find(name);
        if (it == input_grads.end()) continue;
        std::uniform_int_distribution<std::size_t> pick(0, t.size() - 1);
        for (int k = 0; k < per_tensor; ++k) {
            const std::size_t i = pick(rng);
            check_entry(t[i], it->second[i], "input:" + name);
        }
    }
    return r;
}

}  // namespace dgpose::testing
