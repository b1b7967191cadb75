#include "dgpose/inference.hpp"

#include <algorithm>
#include <random>

#include "dgpose/data/preprocess.hpp"
#include "dgpose/nn/architectures.hpp"
#include "dgpose/objectives.hpp"

namespace dgpose::infer {

namespace {

using TensorF = Tensor<float>;

void require(bool ok, const char* msg) {
    if (!ok) throw InferenceError(msg);
}

const nn::Network<float>& net(const std::optional<nn::Network<float>>& n, const char* what) {
    if (!n) throw InferenceError(std::string("model has no ") + what);
    return *n;
}

void check_images(const TensorF& x) {
    const Shape s = x.shape();
    if (s.c != nn::kImageChannels || s.h != nn::kImageSize || s.w != nn::kImageSize) {
        throw InferenceError("images must be (B, 3, 64, 64), got " + s.str());
    }
}

void fill_normal(TensorF& t, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    for (auto& v : t.values()) v = static_cast<float>(dist(rng));
}

TensorF draw(const TensorF& mu, const TensorF& log_var, std::mt19937_64& rng) {
    TensorF eps(mu.shape());
    fill_normal(eps, rng);
    return obj::reparameterize(obj::DiagonalGaussian<float>{mu, log_var}, eps);
}

// Repeats every row of t n times, row-major in the source.
TensorF repeat_rows(const TensorF& t, int n) {
    Shape s = t.shape();
    const int rows = s.n;
    s.n = rows * n;
    TensorF out(s);
    for (int r = 0; r < rows; ++r) {
        for (int k = 0; k < n; ++k) std::copy_n(t.sample(r), s.per_sample(), out.sample(r * n + k));
    }
    return out;
}

}  // namespace

TensorF render_poses(const std::vector<pose::PoseVector>& poses, const pose::AnthropometricTable& table) {
    const int b = static_cast<int>(poses.size());
    TensorF out(Shape{b, nn::kHeatmapChannels, nn::kImageSize, nn::kImageSize});
    for (int r = 0; r < b; ++r) {
        const TensorF h = pose::pose_heatmaps(poses[r], nn::kImageSize, nn::kImageSize, table);
        std::copy_n(h.data(), h.size(), out.sample(r));
    }
    return out;
}

TensorF pose_vectors(const Model& model, const std::vector<pose::PoseVector>& poses) {
    const int b = static_cast<int>(poses.size());
    TensorF out(Shape{b, nn::kPoseDim, 1, 1});
    for (int r = 0; r < b; ++r) {
        const auto v = data::standardize_pose(poses[r], model.stats);
        std::copy(v.begin(), v.end(), out.sample(r));
    }
    return out;
}

Encoding encode(const Model& model, const TensorF& x, const TensorF* y_h) {
    check_images(x);
    const auto& enc = net(model.encoder, "encoder");
    Encoding e;
    if (model.kind == ModelKind::Conditional) {
        require(y_h != nullptr, "the conditional model needs pose heatmaps to encode");
        const auto o = enc.infer({{"x", x}, {"y_h", *y_h}});
        e.mu_z = o.head("mu_z");
        e.log_var_z = o.head("log_var_z");
    } else {
        const auto o = enc.infer({{"x", x}});
        e.mu_z = o.head("mu_z");
        e.log_var_z = o.head("log_var_z");
        e.mu_y = o.head("mu_y");
        e.log_var_y = o.head("log_var_y");
    }
    return e;
}

TensorF map_pose(const Model& model, const TensorF& y_v) {
    return net(model.mapper, "mapper").infer({{"y_v", y_v}}).trunk;
}

TensorF decode(const Model& model, const TensorF& z, const TensorF* y_v, const TensorF* y_h) {
    const auto& dec = net(model.decoder, "decoder");
    if (model.kind == ModelKind::Conditional) {
        require(y_h != nullptr, "the conditional model needs pose heatmaps to decode");
        return dec.infer({{"z", z}, {"y_h", *y_h}}).trunk;
    }
    require(y_v != nullptr, "the semi model needs a pose vector to decode");
    const TensorF mapped = y_h ? TensorF() : map_pose(model, *y_v);
    return dec.infer({{"z", z}, {"y_v", *y_v}, {"y_h", y_h ? *y_h : mapped}}).trunk;
}

TensorF reconstruct(const Model& model, const TensorF& x, const TensorF* y_h, Mode mode) {
    if (model.kind == ModelKind::Conditional && !y_h) {
        throw InferenceError("reconstruction with the conditional model needs pose heatmaps");
    }
    require(model.kind != ModelKind::Mapper, "a mapper checkpoint cannot reconstruct images");
    const auto e = encode(model, x, y_h);
    std::mt19937_64 rng(mode.seed);
    const TensorF z = mode.sample ? draw(e.mu_z, e.log_var_z, rng) : e.mu_z;
    if (model.kind == ModelKind::Conditional) return decode(model, z, nullptr, y_h);
    const TensorF y = mode.sample ? draw(e.mu_y, e.log_var_y, rng) : e.mu_y;
    return decode(model, z, &y, nullptr);
}

TensorF sample_from_heatmaps(const Model& model, const TensorF& y_h, int n, std::uint64_t seed) {
    require(model.kind == ModelKind::Conditional, "heatmap-conditioned sampling needs the conditional model");
    require(n >= 1, "sample count must be at least 1");
    const auto p = net(model.prior, "prior").infer({{"y_h", y_h}});
    const TensorF mu = repeat_rows(p.head("mu_prior"), n);
    const TensorF lv = repeat_rows(p.head("log_var_prior"), n);
    std::mt19937_64 rng(seed);
    const TensorF z = draw(mu, lv, rng);
    const TensorF y = repeat_rows(y_h, n);
    return decode(model, z, nullptr, &y);
}

TensorF sample(const Model& model, const std::vector<pose::PoseVector>& poses, int n, std::uint64_t seed) {
    require(n >= 1, "sample count must be at least 1");
    require(model.kind != ModelKind::Mapper, "a mapper checkpoint cannot sample images");
    if (model.kind == ModelKind::Conditional) {
        require(!poses.empty(), "conditional sampling needs a pose");
        return sample_from_heatmaps(model, render_poses(poses, model.table), n, seed);
    }
    std::mt19937_64 rng(seed);
    const int rows = poses.empty() ? n : static_cast<int>(poses.size()) * n;
    TensorF y;
    if (poses.empty()) {
        y = TensorF(Shape{rows, nn::kPoseDim, 1, 1});
        fill_normal(y, rng);
    } else {
        y = repeat_rows(pose_vectors(model, poses), n);
    }
    TensorF z(Shape{rows, nn::kLatentDim, 1, 1});
    fill_normal(z, rng);
    return decode(model, z, &y, nullptr);
}

TensorF direct_pose_transfer(const Model& model, const TensorF& x_src, const TensorF& y_src, const TensorF& y_target,
                             TransferConditioner conditioner, Mode mode) {
    require(model.kind == ModelKind::Conditional, "direct pose transfer needs the conditional model");
    const TensorF& cond = conditioner == TransferConditioner::Source ? y_src : y_target;
    const auto e = encode(model, x_src, &cond);
    std::mt19937_64 rng(mode.seed);
    const TensorF z = mode.sample ? draw(e.mu_z, e.log_var_z, rng) : e.mu_z;
    return decode(model, z, nullptr, &y_target);
}

TensorF indirect_pose_transfer(const Model& model, const TensorF& x_pose_source, const TensorF& x_appearance_source) {
    require(model.kind == ModelKind::Semi, "indirect pose transfer needs the semi model");
    require(x_pose_source.shape() == x_appearance_source.shape(), "source batches must have equal shape");
    const TensorF y = encode(model, x_pose_source).mu_y;
    const TensorF z = encode(model, x_appearance_source).mu_z;
    return decode(model, z, &y, nullptr);
}

std::vector<pose::PoseVector> estimate_pose(const Model& model, const TensorF& x) {
    require(model.kind == ModelKind::Semi, "pose estimation needs the semi model");
    const TensorF mu = encode(model, x).mu_y;
    std::vector<pose::PoseVector> out;
    for (int r = 0; r < mu.shape().n; ++r) out.push_back(data::destandardize_pose(mu.sample(r), model.stats).joints());
    return out;
}

TensorF interpolate(const TensorF& z0, const TensorF& z1, int steps) {
    require(steps >= 2, "interpolation needs at least 2 steps");
    require(z0.shape() == z1.shape() && z0.shape().n == 1, "interpolate expects two single codes of equal shape");
    Shape s = z0.shape();
    s.n = steps;
    TensorF out(s);
    for (int k = 0; k < steps; ++k) {
        const double t = static_cast<double>(k) / (steps - 1);
        float* dst = out.sample(k);
        for (std::size_t i = 0; i < z0.size(); ++i) dst[i] = static_cast<float>((1 - t) * z0[i] + t * z1[i]);
    }
    return out;
}

pose::Vec2 body_center(const pose::PoseVector& p) {
    double x0 = p.joints[0].x, x1 = x0, y0 = p.joints[0].y, y1 = y0;
    for (const auto& j : p.joints) {
        x0 = std::min(x0, j.x);
        x1 = std::max(x1, j.x);
        y0 = std::min(y0, j.y);
        y1 = std::max(y1, j.y);
    }
    return {0.5 * (x0 + x1), 0.5 * (y0 + y1)};
}

pose::PoseVector scale_pose(const pose::PoseVector& p, double s, pose::Vec2 c) {
    if (!(s > 0)) throw InferenceError("scale must be positive");
    pose::PoseVector out = p;
    for (auto& j : out.joints) j = {c.x + s * (j.x - c.x), c.y + s * (j.y - c.y)};
    return out;
}

pose::PoseVector scale_pose(const pose::PoseVector& p, double s) { return scale_pose(p, s, body_center(p)); }

pose::PoseVector translate_joint(const pose::PoseVector& p, int joint, pose::Vec2 d) {
    if (joint < 0 || joint >= pose::kJoints) throw InferenceError("joint index out of range");
    pose::PoseVector out = p;
    out.joints[joint].x += d.x;
    out.joints[joint].y += d.y;
    return out;
}

pose::PoseVector translate_pose(const pose::PoseVector& p, pose::Vec2 d) {
    pose::PoseVector out = p;
    for (auto& j : out.joints) {
        j.x += d.x;
        j.y += d.y;
    }
    return out;
}

TensorF suppress_parts(const TensorF& y_h, const std::vector<int>& parts) {
    TensorF out = y_h;
    const Shape s = out.shape();
    for (int p : parts) {
        if (p < 0 || p >= s.c) throw InferenceError("part index out of range");
        for (int r = 0; r < s.n; ++r) std::fill_n(out.sample(r) + p * s.plane(), s.plane(), 0.0f);
    }
    return out;
}

TensorF union_stacks(const TensorF& a, const TensorF& b) {
    require(a.shape() == b.shape(), "heatmap stacks must have equal shape");
    TensorF out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(out[i], b[i]);
    return out;
}

}  // namespace dgpose::infer
