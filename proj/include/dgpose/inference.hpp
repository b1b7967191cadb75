#pragma once

// Test-time tasks over a trained Model. Every function here reads the model
// through Network::infer only, so a const Model can serve concurrent callers.
//
// Images are in model space: (B, 3, 64, 64), normalized with the model's
// stats. Use data::to_unit_range / data::normalize_images at the borders.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "dgpose/model.hpp"
#include "dgpose/pose/pose.hpp"
#include "dgpose/tensor.hpp"

namespace dgpose::infer {

class InferenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Posterior means (mu) unless `sample` is set, in which case latents are
/// drawn with a generator seeded from `seed`.
struct Mode {
    bool sample = false;
    std::uint64_t seed = 0;
};

enum class TransferConditioner { Source, Target };

/// Heatmap stacks (B, 24, 64, 64) rendered from joint poses.
Tensor<float> render_poses(const std::vector<pose::PoseVector>& poses, const pose::AnthropometricTable& table);

/// Standardized pose vectors (B, 48, 1, 1).
Tensor<float> pose_vectors(const Model& model, const std::vector<pose::PoseVector>& poses);

struct Encoding {
    Tensor<float> mu_z, log_var_z;  // (B, 100, 1, 1)
    Tensor<float> mu_y, log_var_y;  // (B, 48, 1, 1), semi only
};

/// Conditional models need y_h; semi models ignore it.
Encoding encode(const Model& model, const Tensor<float>& x, const Tensor<float>* y_h = nullptr);

/// Conditional: decodes (z, y_h). Semi: y_v standardized, y_h from the Mapper
/// when not given.
Tensor<float> decode(const Model& model, const Tensor<float>& z, const Tensor<float>* y_v,
                     const Tensor<float>* y_h);

/// Semi: the Mapper's heatmaps for standardized pose vectors.
Tensor<float> map_pose(const Model& model, const Tensor<float>& y_v);

Tensor<float> reconstruct(const Model& model, const Tensor<float>& x, const Tensor<float>* y_h = nullptr,
                          Mode mode = {});

/// Conditional: z ~ p(z | y_h) from the Prior network for each of the n
/// copies of every pose. Semi: z ~ N(0, I); y_v from the given poses, or
/// drawn from N(0, I) when `poses` is empty. Output rows: pose-major.
Tensor<float> sample(const Model& model, const std::vector<pose::PoseVector>& poses, int n, std::uint64_t seed);

/// Conditional sampling from explicit heatmap stacks (edited or composed).
Tensor<float> sample_from_heatmaps(const Model& model, const Tensor<float>& y_h, int n, std::uint64_t seed);

/// Conditional only. z is inferred with the source or the target heatmaps
/// as conditioner, then decoded with the target heatmaps. Heatmaps are used
/// as given, so edited or multi-figure stacks are accepted.
Tensor<float> direct_pose_transfer(const Model& model, const Tensor<float>& x_src, const Tensor<float>& y_src,
                                   const Tensor<float>& y_target,
                                   TransferConditioner conditioner = TransferConditioner::Source, Mode mode = {});

/// Semi only: pose from one image, appearance from another.
Tensor<float> indirect_pose_transfer(const Model& model, const Tensor<float>& x_pose_source,
                                     const Tensor<float>& x_appearance_source);

/// Semi only: de-standardized mu_y, reduced to the 14 joints in crop coordinates.
std::vector<pose::PoseVector> estimate_pose(const Model& model, const Tensor<float>& x);

/// `steps` codes from z0 to z1 inclusive (steps >= 2), each (1, D, 1, 1) row stacked.
Tensor<float> interpolate(const Tensor<float>& z0, const Tensor<float>& z1, int steps);

// ---- pose manipulation

/// Centre of the joints' bounding box.
pose::Vec2 body_center(const pose::PoseVector& pose);

/// Every joint j -> c + s (j - c) about the body centre. Throws for s <= 0.
pose::PoseVector scale_pose(const pose::PoseVector& pose, double s);
pose::PoseVector scale_pose(const pose::PoseVector& pose, double s, pose::Vec2 center);

pose::PoseVector translate_joint(const pose::PoseVector& pose, int joint, pose::Vec2 delta);
pose::PoseVector translate_pose(const pose::PoseVector& pose, pose::Vec2 delta);

/// Zeroes the listed heatmap channels of every stack in the batch.
Tensor<float> suppress_parts(const Tensor<float>& y_h, const std::vector<int>& parts);

/// Elementwise max of two stacks of equal shape.
Tensor<float> union_stacks(const Tensor<float>& a, const Tensor<float>& b);

}  // namespace dgpose::infer
