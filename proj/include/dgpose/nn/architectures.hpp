#pragma once

// Builders for the encoder / prior / decoder / discriminator / mapper stacks
// of both models at 64 x 64 resolution.
//
// `width` scales every hidden kernel count (rounded, at least 1). Interface
// dimensions never scale: 3 image channels, 24 heatmap channels, the
// 100-dim appearance latent, the 48-dim pose vector and the single
// discriminator logit. width = 1 reproduces the published layer tables.

#include "dgpose/nn/spec.hpp"

namespace dgpose::nn {

inline constexpr int kImageChannels = 3;
inline constexpr int kImageSize = 64;
inline constexpr int kHeatmapChannels = 24;
inline constexpr int kLatentDim = 100;
inline constexpr int kPoseDim = 48;

struct Widths {
    double encoder = 1.0;
    double prior = 1.0;
    double decoder = 1.0;
    double discriminator = 1.0;
    double mapper = 1.0;
};

int scaled_units(int units, double width);

/// The 512-kernel residual block, standalone, on a 512 x h x w input.
/// Valid only where the stride-2 branch preserves the extent (1 x 1 maps);
/// other extents fail with a residual-sum BuildError.
NetworkSpec build_residual_block(int height = 1, int width_px = 1, double width = 1.0);

NetworkSpec build_conditional_encoder(double width = 1.0);
NetworkSpec build_prior(double width = 1.0);
NetworkSpec build_conditional_decoder(double width = 1.0);
NetworkSpec build_discriminator(double width = 1.0);

NetworkSpec build_semi_encoder(double width = 1.0);
NetworkSpec build_mapper(double width = 1.0);
NetworkSpec build_semi_decoder(double width = 1.0);

}  // namespace dgpose::nn
