#pragma once

// Pose representations: the 14-joint vector, the 24-part extended pose and
// the per-part Gaussian heatmap stack built from it.
//
// Coordinates inside PoseVector / ExtendedPose are normalized to [0, 1]
// relative to the crop; pixel positions use x_px = x * (W - 1). Heatmap
// pixel (u, v) means column u, row v.

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dgpose/tensor.hpp"

namespace dgpose::pose {

inline constexpr int kJoints = 14;
inline constexpr int kRigidParts = 9;
inline constexpr int kParts = kJoints + kRigidParts + 1;  // + body

enum Joint : int {
    HeadTop = 0,
    Neck,
    RShoulder,
    RElbow,
    RWrist,
    RHip,
    RKnee,
    RAnkle,
    LShoulder,
    LElbow,
    LWrist,
    LHip,
    LKnee,
    LAnkle,
};

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
    bool operator==(const Vec2&) const = default;
};

extern const std::array<const char*, kJoints> kJointNames;
extern const std::array<const char*, kRigidParts> kRigidPartNames;
/// Defining joint pair (k, l) of each rigid part; the i-axis runs k -> l.
extern const std::array<std::array<int, 2>, kRigidParts> kRigidPairs;

class InvalidPoseError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class GeometryError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct PoseVector {
    std::array<Vec2, kJoints> joints{};

    /// x0, y0, x1, y1, ... (length 28).
    std::vector<double> flatten() const;
    static PoseVector from_flat(const std::vector<double>& values);
    void validate() const;
};

struct ExtendedPose {
    std::array<Vec2, kParts> parts{};
    std::vector<double> flatten() const;  // length 48
    static ExtendedPose from_flat(const std::vector<double>& values);
    PoseVector joints() const;
};

ExtendedPose extend_pose(const PoseVector& pose);

struct PartGeometry {
    Vec2 center;
    double sigma_i = 1.0;
    double sigma_j = 1.0;
    // Columns are the i- and j-axes.
    std::array<std::array<double, 2>, 2> rotation{{{1.0, 0.0}, {0.0, 1.0}}};

    /// Sigma = R diag(si^2, sj^2) R^T, row-major {s00, s01, s11}.
    std::array<double, 3> covariance() const;
    void validate() const;
};

struct AnthropometricTable {
    std::array<double, kRigidParts> kappa{0.8, 0.35, 0.35, 0.35, 0.35, 0.35, 0.35, 0.35, 0.35};
    double length_scale = 0.5;
    double body_scale = 0.25;
    double joint_sigma = 1.5;  // pixels, isotropic joints and fallbacks

    void validate() const;
    nlohmann::json to_json() const;
    static AnthropometricTable from_json(const nlohmann::json& j);
};

PartGeometry joint_geometry(Vec2 center, const AnthropometricTable& table);
PartGeometry rigid_part_geometry(Vec2 joint_k, Vec2 joint_l, const AnthropometricTable& table,
                                 int part_id);
/// PCA of the joint scatter. `joints_px` in pixels.
PartGeometry body_geometry(const std::array<Vec2, kJoints>& joints_px,
                           const AnthropometricTable& table);

/// All 24 geometries in extended-pose order for a pose given in pixels.
std::vector<PartGeometry> part_geometries(const std::array<Vec2, kJoints>& joints_px,
                                          const AnthropometricTable& table);

/// (1, P, H, W) stack, amplitude 1 at each center, clamped to [0, 1].
Tensor<float> render_heatmaps(const std::vector<PartGeometry>& geometries, int height, int width);
/// Writes P*H*W values starting at `out`.
void render_heatmaps_into(const std::vector<PartGeometry>& geometries, int height, int width,
                          float* out);

/// Convenience: normalized pose -> 24-channel stack.
Tensor<float> pose_heatmaps(const PoseVector& pose, int height, int width,
                            const AnthropometricTable& table = {});

Vec2 to_pixels(Vec2 p, int height, int width);
Vec2 from_pixels(Vec2 px, int height, int width);
std::array<Vec2, kJoints> pose_to_pixels(const PoseVector& pose, int height, int width);
PoseVector pixels_to_pose(const std::array<Vec2, kJoints>& px, int height, int width);

/// Versioned description of joint / part ordering and coordinate conventions.
nlohmann::json pose_schema();

}  // namespace dgpose::pose
