#include "dgpose/optim.hpp"

#include "dgpose/simd/kernels.hpp"

namespace dgpose {

nlohmann::json AdamConfig::to_json() const {
    return {{"learning_rate", learning_rate}, {"beta1", beta1}, {"beta2", beta2},
            {"eps", eps},                     {"weight_decay", weight_decay}};
}

AdamConfig AdamConfig::from_json(const nlohmann::json& j, AdamConfig c) {
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.eps = j.value("eps", c.eps);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    return c;
}

Adam::Adam(std::vector<nn::ParamSlot<float>> slots, AdamConfig config) : config_(config) {
    for (auto& s : slots) {
        if (!s.trainable || !s.grad) continue;
        m_.emplace_back(s.value->shape());
        v_.emplace_back(s.value->shape());
        slots_.push_back(std::move(s));
    }
}

void Adam::zero_grad() {
    for (auto& s : slots_) s.grad->fill(0.0f);
}

void Adam::step() {
    ++step_;
    for (std::size_t i = 0; i < slots_.size(); ++i) {
        auto& s = slots_[i];
        simd::AdamStep st;
        st.lr = config_.learning_rate;
        st.beta1 = config_.beta1;
        st.beta2 = config_.beta2;
        st.eps = config_.eps;
        st.weight_decay = s.decay ? config_.weight_decay : 0.0;
        st.step = step_;
        simd::adam_update<float>(s.value->size(), st, s.value->data(), s.grad->data(), m_[i].data(),
                                 v_[i].data());
    }
}

std::vector<std::pair<std::string, const Tensor<float>*>> Adam::state() const {
    std::vector<std::pair<std::string, const Tensor<float>*>> out;
    for (std::size_t i = 0; i < slots_.size(); ++i) {
        out.emplace_back(slots_[i].name + ".m", &m_[i]);
        out.emplace_back(slots_[i].name + ".v", &v_[i]);
    }
    return out;
}

std::vector<std::pair<std::string, Tensor<float>*>> Adam::mutable_state() {
    std::vector<std::pair<std::string, Tensor<float>*>> out;
    for (std::size_t i = 0; i < slots_.size(); ++i) {
        out.emplace_back(slots_[i].name + ".m", &m_[i]);
        out.emplace_back(slots_[i].name + ".v", &v_[i]);
    }
    return out;
}

}  // namespace dgpose
