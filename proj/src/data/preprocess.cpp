#include "dgpose/data/preprocess.hpp"

#include <cmath>
#include <fstream>

namespace dgpose::data {

using pose::kJoints;
using pose::kParts;

namespace {

constexpr double kStdFloor = 1e-6;

}  // namespace

nlohmann::json NormalizationStats::to_json() const {
    return {{"format", "dgpose-normalization"},
            {"version", 1},
            {"image_mean", mean},
            {"image_std", std},
            {"pose_mean", pose_mean},
            {"pose_std", pose_std}};
}

NormalizationStats NormalizationStats::from_json(const nlohmann::json& j) {
    NormalizationStats s;
    s.mean = j.at("image_mean").get<std::array<double, 3>>();
    s.std = j.at("image_std").get<std::array<double, 3>>();
    s.pose_mean = j.at("pose_mean").get<std::vector<double>>();
    s.pose_std = j.at("pose_std").get<std::vector<double>>();
    if (s.pose_mean.size() != 2 * kParts || s.pose_std.size() != 2 * kParts) {
        throw std::invalid_argument("normalization stats: pose vectors must have 48 entries");
    }
    return s;
}

void NormalizationStats::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << to_json().dump(2) << "\n";
}

NormalizationStats NormalizationStats::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    return from_json(nlohmann::json::parse(in));
}

Crop crop_person(const Tensor<float>& raw, const std::array<pose::Vec2, kJoints>& joints) {
    const Shape s = raw.shape();
    if (s.n != 1 || s.c != 3) throw std::invalid_argument("crop_person: expected (1,3,H,W) image");
    double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
    for (const auto& j : joints) {
        if (!std::isfinite(j.x) || !std::isfinite(j.y) || j.x < 0 || j.y < 0 || j.x > s.w - 1 ||
            j.y > s.h - 1) {
            throw pose::InvalidPoseError("crop_person: joint outside the raw image");
        }
        x0 = std::min(x0, j.x);
        x1 = std::max(x1, j.x);
        y0 = std::min(y0, j.y);
        y1 = std::max(y1, j.y);
    }
    Crop c;
    c.offset_x = static_cast<int>(std::floor(0.5 * (x0 + x1) + 0.5)) - kCropSize / 2;
    c.offset_y = static_cast<int>(std::floor(0.5 * (y0 + y1) + 0.5)) - kCropSize / 2;
    c.image = Tensor<float>(Shape{1, 3, kCropSize, kCropSize});
    const std::size_t plane = s.plane();
    for (int ch = 0; ch < 3; ++ch) {
        for (int v = 0; v < kCropSize; ++v) {
            const int sy = std::clamp(c.offset_y + v, 0, s.h - 1);
            for (int u = 0; u < kCropSize; ++u) {
                const int sx = std::clamp(c.offset_x + u, 0, s.w - 1);
                c.image.at(0, ch, v, u) = raw[ch * plane + static_cast<std::size_t>(sy) * s.w + sx];
            }
        }
    }
    for (int i = 0; i < kJoints; ++i) {
        c.pose.joints[i] = pose::from_pixels({joints[i].x - c.offset_x, joints[i].y - c.offset_y},
                                             kCropSize, kCropSize);
    }
    return c;
}

Sample crop_and_normalize(const Tensor<float>& raw, const std::array<pose::Vec2, kJoints>& joints,
                          const NormalizationStats& stats, std::string id) {
    Crop c = crop_person(raw, joints);
    normalize_images(c.image, stats);
    return Sample{std::move(c.image), c.pose, std::move(id)};
}

NormalizationStats compute_stats(const std::vector<Tensor<float>>& images,
                                 const std::vector<pose::PoseVector>& poses) {
    NormalizationStats st;
    std::array<double, 3> sum{}, sq{};
    double count = 0;
    for (const auto& img : images) {
        const Shape s = img.shape();
        const std::size_t plane = s.plane();
        for (int n = 0; n < s.n; ++n) {
            for (int c = 0; c < 3; ++c) {
                const float* p = img.sample(n) + c * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    sum[c] += p[i];
                    sq[c] += static_cast<double>(p[i]) * p[i];
                }
            }
            count += static_cast<double>(plane);
        }
    }
    if (count > 0) {
        for (int c = 0; c < 3; ++c) {
            st.mean[c] = sum[c] / count;
            st.std[c] = std::max(kStdFloor, std::sqrt(std::max(0.0, sq[c] / count - st.mean[c] * st.mean[c])));
        }
    }
    if (!poses.empty()) {
        std::vector<double> ps(2 * kParts, 0.0), pq(2 * kParts, 0.0);
        for (const auto& p : poses) {
            const auto flat = pose::extend_pose(p).flatten();
            for (int k = 0; k < 2 * kParts; ++k) {
                ps[k] += flat[k];
                pq[k] += flat[k] * flat[k];
            }
        }
        const double n = static_cast<double>(poses.size());
        for (int k = 0; k < 2 * kParts; ++k) {
            st.pose_mean[k] = ps[k] / n;
            st.pose_std[k] = std::max(kStdFloor, std::sqrt(std::max(0.0, pq[k] / n - st.pose_mean[k] * st.pose_mean[k])));
        }
    }
    return st;
}

void normalize_images(Tensor<float>& images, const NormalizationStats& st) {
    const Shape s = images.shape();
    const std::size_t plane = s.plane();
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < 3; ++c) {
            float* p = images.sample(n) + c * plane;
            const double m = st.mean[c], inv = 1.0 / st.std[c];
            for (std::size_t i = 0; i < plane; ++i) p[i] = static_cast<float>((p[i] - m) * inv);
        }
    }
}

void denormalize_images(Tensor<float>& images, const NormalizationStats& st) {
    const Shape s = images.shape();
    const std::size_t plane = s.plane();
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < 3; ++c) {
            float* p = images.sample(n) + c * plane;
            for (std::size_t i = 0; i < plane; ++i) p[i] = static_cast<float>(p[i] * st.std[c] + st.mean[c]);
        }
    }
}

Tensor<float> to_unit_range(const Tensor<float>& normalized, const NormalizationStats& st) {
    Tensor<float> out = normalized;
    denormalize_images(out, st);
    for (auto& v : out.values()) v = std::clamp(v, 0.0f, 1.0f);
    return out;
}

std::vector<float> standardize_pose(const pose::PoseVector& p, const NormalizationStats& st) {
    const auto flat = pose::extend_pose(p).flatten();
    std::vector<float> out(flat.size());
    for (std::size_t k = 0; k < flat.size(); ++k) {
        out[k] = static_cast<float>((flat[k] - st.pose_mean[k]) / st.pose_std[k]);
    }
    return out;
}

pose::ExtendedPose destandardize_pose(const float* values, const NormalizationStats& st) {
    std::vector<double> flat(2 * kParts);
    for (int k = 0; k < 2 * kParts; ++k) flat[k] = values[k] * st.pose_std[k] + st.pose_mean[k];
    return pose::ExtendedPose::from_flat(flat);
}

}  // namespace dgpose::data
