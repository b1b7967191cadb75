#include "dgpose/nn/network.hpp"

#include <cmath>
#include <random>

#include "dgpose/simd/kernels.hpp"

namespace dgpose::nn {

template <std::floating_point T>
const Tensor<T>& Network<T>::Output::head(const std::string& name) const {
    auto it = heads.find(name);
    if (it == heads.end()) throw ShapeError("network has no head '" + name + "'");
    return it->second;
}

template <std::floating_point T>
Network<T>::Network(NetworkSpec spec) : spec_(std::move(spec)) {
    const auto shapes = propagate_shapes(spec_);
    hash_ = spec_hash(spec_);
    Shape s = spec_.inputs.front().shape;
    s.n = 1;
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
        layers_.push_back(make_layer<T>(spec_.layers[i], s, spec_));
        s = shapes[i];
    }
    trunk_shape_ = s;
    for (const auto& h : spec_.heads) {
        heads_.emplace_back(h.name, std::make_unique<FullyConnected<T>>(
                                        static_cast<int>(s.per_sample()), h.units, true));
    }
}

template <std::floating_point T>
void Network<T>::check_inputs(const TensorMap<T>& inputs) const {
    int batch = -1;
    for (const auto& def : spec_.inputs) {
        auto it = inputs.find(def.name);
        if (it == inputs.end()) {
            throw ShapeError(spec_.name + ": missing input '" + def.name + "'");
        }
        const Shape& s = it->second.shape();
        if (static_cast<std::size_t>(s.c) * s.h * s.w != def.shape.per_sample()) {
            throw ShapeError(spec_.name + ": input '" + def.name + "' has shape " + s.str() +
                             ", expected per-sample " + def.shape.str());
        }
        if (batch >= 0 && s.n != batch) throw ShapeError(spec_.name + ": inconsistent batch sizes");
        batch = s.n;
    }
}

namespace {

template <class T>
TensorMap<T> conform_inputs(const NetworkSpec& spec, const TensorMap<T>& inputs) {
    // Inputs may arrive flattened (n, c*h*w) or fully shaped; normalise to the declared shape.
    TensorMap<T> out;
    for (const auto& def : spec.inputs) {
        Tensor<T> t = inputs.at(def.name);
        t.reshape(Shape{t.shape().n, def.shape.c, def.shape.h, def.shape.w});
        out.emplace(def.name, std::move(t));
    }
    return out;
}

}  // namespace

template <std::floating_point T>
typename Network<T>::Output Network<T>::infer(const TensorMap<T>& raw) const {
    check_inputs(raw);
    const TensorMap<T> inputs = conform_inputs(spec_, raw);
    Output out;
    Tensor<T> x = inputs.at(spec_.inputs.front().name);
    for (const auto& l : layers_) x = l->infer(x, inputs);
    for (const auto& [name, head] : heads_) out.heads.emplace(name, head->infer(x, inputs));
    out.trunk = std::move(x);
    return out;
}

template <std::floating_point T>
typename Network<T>::Output Network<T>::forward(const TensorMap<T>& raw) {
    check_inputs(raw);
    const TensorMap<T> inputs = conform_inputs(spec_, raw);
    Output out;
    Tensor<T> x = inputs.at(spec_.inputs.front().name);
    batch_ = x.shape().n;
    for (auto& l : layers_) x = l->forward(x, inputs);
    for (auto& [name, head] : heads_) out.heads.emplace(name, head->forward(x, inputs));
    out.trunk = std::move(x);
    return out;
}

template <std::floating_point T>
TensorMap<T> Network<T>::backward(const TensorMap<T>& head_grads, const Tensor<T>* trunk_grad,
                                  BackwardFlags flags) {
    Shape ts = trunk_shape_;
    ts.n = batch_;
    Tensor<T> g(ts);
    if (trunk_grad) {
        if (trunk_grad->size() != g.size()) throw ShapeError(spec_.name + ": trunk gradient size");
        simd::axpy<T>(g.size(), T(1), trunk_grad->data(), g.data());
    }
    TensorMap<T> ext;
    for (auto& [name, head] : heads_) {
        auto it = head_grads.find(name);
        if (it == head_grads.end()) continue;
        Tensor<T> dx = head->backward(it->second, ext, BackwardFlags{flags.param_grads, true});
        simd::axpy<T>(g.size(), T(1), dx.data(), g.data());
    }
    for (std::size_t i = layers_.size(); i-- > 0;) {
        const bool need_input = flags.input_grad || i > 0;
        g = layers_[i]->backward(g, ext, BackwardFlags{flags.param_grads, need_input});
    }
    if (flags.input_grad) {
        const auto& first = spec_.inputs.front();
        g.reshape(Shape{batch_, first.shape.c, first.shape.h, first.shape.w});
        ext.insert_or_assign(first.name, std::move(g));
    }
    return ext;
}

template <std::floating_point T>
std::vector<ParamSlot<T>> Network<T>::parameters() {
    std::vector<ParamSlot<T>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        layers_[i]->collect(out, spec_.name + ".layers." + std::to_string(i) + ".");
    }
    for (auto& [name, head] : heads_) head->collect(out, spec_.name + ".heads." + name + ".");
    return out;
}

template <std::floating_point T>
std::size_t Network<T>::parameter_count() const {
    std::size_t total = 0;
    for (const auto& slot : const_cast<Network*>(this)->parameters()) {
        if (slot.trainable) total += slot.value->size();
    }
    return total;
}

template <std::floating_point T>
void Network<T>::zero_grad() {
    for (auto& slot : parameters()) {
        if (slot.grad) slot.grad->fill(T(0));
    }
}

template <std::floating_point T>
void Network<T>::release_cache() {
    for (auto& l : layers_) l->release_cache();
    for (auto& [name, head] : heads_) head->release_cache();
}

template <std::floating_point T>
void Network<T>::set_frozen(bool frozen) {
    for (auto& l : layers_) l->set_frozen(frozen);
}

template <std::floating_point T>
void Network<T>::initialize(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (auto& slot : parameters()) {
        const std::string& n = slot.name;
        const bool is_weight = n.size() >= 6 && n.compare(n.size() - 6, 6, "weight") == 0;
        if (is_weight) {
            const double std = slot.fc_weight ? kFullyConnectedInitStd
                                              : std::sqrt(2.0 / std::max(1, slot.fan_in));
            std::normal_distribution<double> dist(0.0, std);
            for (auto& v : slot.value->values()) v = static_cast<T>(dist(rng));
        } else if (n.ends_with("gamma") || n.ends_with("running_var")) {
            slot.value->fill(T(1));
        } else {
            slot.value->fill(T(0));
        }
    }
    zero_grad();
}

template <std::floating_point T>
template <std::floating_point U>
void Network<T>::load_from(Network<U>& other) {
    if (other.hash() != hash_) throw BuildError(spec_.name + ": cannot copy parameters across specs");
    auto mine = parameters();
    auto theirs = other.parameters();
    for (std::size_t i = 0; i < mine.size(); ++i) {
        auto src = theirs[i].value->values();
        auto dst = mine[i].value->values();
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = static_cast<T>(src[j]);
    }
}

template class Network<float>;
template class Network<double>;
template void Network<float>::load_from<float>(Network<float>&);
template void Network<float>::load_from<double>(Network<double>&);
template void Network<double>::load_from<float>(Network<float>&);
template void Network<double>::load_from<double>(Network<double>&);

}  // namespace dgpose::nn
