#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dgpose/pose/pose.hpp"
#include "dgpose/tensor.hpp"

namespace dgpose::data {

inline constexpr int kCropSize = 64;

/// Train-set statistics: per-channel image mean / std (pixel values in
/// [0, 1]) and per-coordinate mean / std of the 48-dim extended pose.
struct NormalizationStats {
    std::array<double, 3> mean{0.5, 0.5, 0.5};
    std::array<double, 3> std{0.5, 0.5, 0.5};
    std::vector<double> pose_mean = std::vector<double>(2 * pose::kParts, 0.5);
    std::vector<double> pose_std = std::vector<double>(2 * pose::kParts, 0.25);

    nlohmann::json to_json() const;
    static NormalizationStats from_json(const nlohmann::json& j);
    void save(const std::string& path) const;
    static NormalizationStats load(const std::string& path);
};

/// A person-centred crop in raw pixel values.
struct Crop {
    Tensor<float> image;  // (1, 3, 64, 64), [0, 1]
    pose::PoseVector pose;
    int offset_x = 0;
    int offset_y = 0;
};

/// Crops kCropSize x kCropSize around the joint bounding-box centre. Pixels
/// outside the raw image repeat the nearest edge pixel. Joints must lie
/// inside the raw image.
Crop crop_person(const Tensor<float>& raw, const std::array<pose::Vec2, pose::kJoints>& joints_px);

struct Sample {
    Tensor<float> image;  // normalized
    std::optional<pose::PoseVector> pose;
    std::string id;
};

Sample crop_and_normalize(const Tensor<float>& raw, const std::array<pose::Vec2, pose::kJoints>& joints_px,
                          const NormalizationStats& stats, std::string id = {});

/// Statistics from raw crops (images in [0, 1]) and their poses.
NormalizationStats compute_stats(const std::vector<Tensor<float>>& images,
                                 const std::vector<pose::PoseVector>& poses);

/// In-place on any (N, 3, H, W) tensor.
void normalize_images(Tensor<float>& images, const NormalizationStats& stats);
void denormalize_images(Tensor<float>& images, const NormalizationStats& stats);
Tensor<float> to_unit_range(const Tensor<float>& normalized, const NormalizationStats& stats);

/// Extended pose <-> standardized 48-vector fed to / produced by the networks.
std::vector<float> standardize_pose(const pose::PoseVector& pose, const NormalizationStats& stats);
pose::ExtendedPose destandardize_pose(const float* values, const NormalizationStats& stats);

}  // namespace dgpose::data
