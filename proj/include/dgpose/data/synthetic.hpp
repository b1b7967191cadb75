#pragma once

// Synthetic stick figures: 14 joint markers in fixed identity colours, nine
// coloured bars for the rigid parts, a filled torso and a round head on a
// plain background. Appearance is the palette (head, upper body, lower body,
// background); pose and appearance are sampled independently.

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include "dgpose/data/dataset.hpp"
#include "dgpose/pose/pose.hpp"
#include "dgpose/tensor.hpp"

namespace dgpose::data {

using Color = std::array<double, 3>;

/// Joint marker colours, indexed by joint.
extern const std::array<Color, pose::kJoints> kJointColors;

struct Palette {
    Color head;
    Color upper;
    Color lower;
    Color background;

    nlohmann::json to_json() const;
    static Palette from_json(const nlohmann::json& j);
};

struct SyntheticFigureSpec {
    int canvas = 64;
    double margin = 3.0;          // joints stay at least this far from the border
    double min_separation = 6.0;  // pixels between any two joints
    double limb_half_width = 1.6;
    double marker_radius = 1.6;
    std::vector<Color> clothing_colors = {
        {0.7, 0.3, 0.3}, {0.3, 0.7, 0.3}, {0.3, 0.3, 0.7},
        {0.7, 0.7, 0.3}, {0.7, 0.3, 0.7}, {0.3, 0.7, 0.7}};
    std::vector<Color> backgrounds = {{0.1, 0.1, 0.1}, {0.9, 0.9, 0.9}};
    std::uint64_t seed = 7;
};

struct Figure {
    std::array<pose::Vec2, pose::kJoints> joints;  // pixels
    Palette palette;
};

/// Draws a figure with the given joints (pixels) and palette.
Tensor<float> render_figure(const std::array<pose::Vec2, pose::kJoints>& joints, const Palette& palette,
                            const SyntheticFigureSpec& spec = {});

/// One random figure: rejection-sampled joints (inside the margin, pairwise
/// separated) with the bounding box centred on the canvas.
std::array<pose::Vec2, pose::kJoints> sample_pose(std::mt19937_64& rng, const SyntheticFigureSpec& spec);
Palette sample_palette(std::mt19937_64& rng, const SyntheticFigureSpec& spec);

/// Writes `n` figures as PNGs under `dir/images` plus `dir/manifest.jsonl`;
/// the last `n_test` records form the "test" split. Byte-identical for a
/// fixed spec.
Manifest generate_synthetic_dataset(const SyntheticFigureSpec& spec, int n, int n_test,
                                    const std::filesystem::path& dir);

/// Mean colours of the head, upper-body, lower-body and background regions
/// of an image in [0, 1] whose figure has the given joints (pixels).
Palette measure_palette(const Tensor<float>& image, const std::array<pose::Vec2, pose::kJoints>& joints,
                        const SyntheticFigureSpec& spec = {});

/// Mean Euclidean RGB distance over the four palette entries.
double palette_distance(const Palette& a, const Palette& b);

}  // namespace dgpose::data
