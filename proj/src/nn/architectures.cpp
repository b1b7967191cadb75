#include "dgpose/nn/architectures.hpp"

#include <algorithm>
#include <cmath>

namespace dgpose::nn {

int scaled_units(int units, double width) {
    return std::max(1, static_cast<int>(std::lround(units * width)));
}

namespace {

using enum ActivationKind;

constexpr Shape image_shape{1, kImageChannels, kImageSize, kImageSize};
constexpr Shape heatmap_shape{1, kHeatmapChannels, kImageSize, kImageSize};

void conv_bn(std::vector<LayerDef>& out, int n, int k, int s, int p, ActivationKind act,
             double slope, const std::string& row) {
    out.push_back(conv(n, k, s, p, row, false));
    out.push_back(batch_norm(row));
    out.push_back(activation(act, row, slope));
}

void deconv_bn(std::vector<LayerDef>& out, int n, int k, int s, int p, const std::string& row) {
    out.push_back(deconv(n, k, s, p, row, false));
    out.push_back(batch_norm(row));
    out.push_back(activation(LeakyReLU, row, 0.2));
}

LayerDef residual_block(int n, const std::string& row) {
    std::vector<LayerDef> body;
    conv_bn(body, n, 3, 1, 1, ReLU, 0.0, "1");
    body.push_back(conv(n, 3, 2, 1, "2", false));
    body.push_back(batch_norm("2"));
    return residual(n, 3, 1, 1, std::move(body), row);
}

// Shared strided trunk of both encoders: one 7x7 conv, five 3x3 stride-2
// convs and four residual blocks closed by a sigmoid. `first_row` numbers
// the 7x7 conv row.
void encoder_trunk(std::vector<LayerDef>& layers, double w, int first_row) {
    auto row = [&](int i) { return std::to_string(first_row + i); };
    layers.push_back(conv(scaled_units(64, w), 7, 2, 1, row(0)));
    layers.push_back(activation(LeakyReLU, row(0), 0.01));
    const int widths[] = {128, 256, 512, 512, 512};
    for (int i = 0; i < 5; ++i) conv_bn(layers, scaled_units(widths[i], w), 3, 2, 1, ReLU, 0.0, row(1 + i));
    for (int i = 0; i < 4; ++i) layers.push_back(residual_block(scaled_units(512, w), row(6 + i)));
    layers.push_back(activation(Sigmoid, row(9)));
}

// Five transposed convolutions from a 1x1 code to a 64x64 map; `first_row`
// numbers the first one.
void decoder_upsampling(std::vector<LayerDef>& layers, double w, int first_row) {
    auto row = [&](int i) { return std::to_string(first_row + i); };
    deconv_bn(layers, scaled_units(512, w), 4, 1, 0, row(0));
    const int widths[] = {256, 128, 64, 128};
    for (int i = 0; i < 4; ++i) deconv_bn(layers, scaled_units(widths[i], w), 4, 2, 1, row(1 + i));
}

void decoder_refinement(std::vector<LayerDef>& layers, double w, int first_row) {
    auto row = [&](int i) { return std::to_string(first_row + i); };
    const int widths[] = {512, 256, 128, 128};
    for (int i = 0; i < 4; ++i) conv_bn(layers, scaled_units(widths[i], w), 5, 1, 2, LeakyReLU, 0.2, row(i));
    layers.push_back(conv(kImageChannels, 5, 1, 2, "out"));
    layers.push_back(activation(Tanh, "out"));
}

}  // namespace

NetworkSpec build_residual_block(int height, int width_px, double width) {
    const int n = scaled_units(512, width);
    NetworkSpec spec;
    spec.name = "residual";
    spec.inputs = {{"previous_layer_output", Shape{1, n, height, width_px}}};
    spec.layers = {residual_block(n, "1")};
    propagate_shapes(spec);
    return spec;
}

NetworkSpec build_conditional_encoder(double w) {
    NetworkSpec spec;
    spec.name = "encoder";
    spec.inputs = {{"x", image_shape}, {"y_h", heatmap_shape}};
    spec.layers.push_back(concat("y_h", "1"));
    encoder_trunk(spec.layers, w, 2);
    spec.heads = {{"mu_z", kLatentDim}, {"log_var_z", kLatentDim}};
    propagate_shapes(spec);
    return spec;
}

NetworkSpec build_prior(double w) {
    NetworkSpec spec;
    spec.name = "prior";
    spec.inputs = {{"y_h", heatmap_shape}};
    spec.layers.push_back(conv(scaled_units(128, w), 4, 2, 1, "1"));
    spec.layers.push_back(activation(LeakyReLU, "1", 0.2));
    const int widths[] = {256, 512, 1024};
    for (int i = 0; i < 3; ++i) {
        conv_bn(spec.layers, scaled_units(widths[i], w), 4, 2, 1, LeakyReLU, 0.2, std::to_string(2 + i));
    }
    spec.layers.push_back(conv(kLatentDim, 4, 1, 0, "5"));
    spec.layers.push_back(activation(Sigmoid, "5"));
    spec.heads = {{"mu_prior", kLatentDim}, {"log_var_prior", kLatentDim}};
    propagate_shapes(spec);
    return spec;
}

NetworkSpec build_conditional_decoder(double w) {
    NetworkSpec spec;
    spec.name = "decoder";
    spec.inputs = {{"z", Shape{1, kLatentDim, 1, 1}}, {"y_h", heatmap_shape}};
    spec.layers.push_back(reshape(kLatentDim, 1, 1, "1"));
    decoder_upsampling(spec.layers, w, 2);
    spec.layers.push_back(concat("y_h", "7"));
    decoder_refinement(spec.layers, w, 8);
    propagate_shapes(spec);
    return spec;
}

NetworkSpec build_discriminator(double w) {
    NetworkSpec spec;
    spec.name = "discriminator";
    spec.inputs = {{"x", image_shape}};
    spec.layers.push_back(conv(scaled_units(64, w), 4, 2, 1, "1"));
    spec.layers.push_back(activation(LeakyReLU, "1", 0.2));
    const int widths[] = {128, 256, 512};
    for (int i = 0; i < 3; ++i) {
        conv_bn(spec.layers, scaled_units(widths[i], w), 4, 2, 1, LeakyReLU, 0.2, std::to_string(2 + i));
    }
    spec.layers.push_back(conv(1, 4, 1, 0, "5"));
    spec.layers.push_back(activation(Sigmoid, "5"));
    propagate_shapes(spec);
    return spec;
}

NetworkSpec build_semi_encoder(double w) {
    NetworkSpec spec;
    spec.name = "encoder";
    spec.inputs = {{"x", image_shape}};
    encoder_trunk(spec.layers, w, 1);
    spec.heads = {{"mu_z", kLatentDim},
                  {"log_var_z", kLatentDim},
                  {"mu_y", kPoseDim},
                  {"log_var_y", kPoseDim}};
    propagate_shapes(spec);
    return spec;
}

NetworkSpec build_mapper(double w) {
    NetworkSpec spec;
    spec.name = "mapper";
    spec.inputs = {{"y_v", Shape{1, kPoseDim, 1, 1}}};
    spec.layers.push_back(reshape(kPoseDim, 1, 1, "1"));
    deconv_bn(spec.layers, scaled_units(512, w), 4, 1, 0, "2");
    const int widths[] = {256, 128, 64};
    for (int i = 0; i < 3; ++i) deconv_bn(spec.layers, scaled_units(widths[i], w), 4, 2, 1, std::to_string(3 + i));
    spec.layers.push_back(deconv(kHeatmapChannels, 4, 2, 1, "y_h"));
    spec.layers.push_back(activation(Sigmoid, "y_h"));
    propagate_shapes(spec);
    return spec;
}

NetworkSpec build_semi_decoder(double w) {
    NetworkSpec spec;
    spec.name = "decoder";
    spec.inputs = {{"z", Shape{1, kLatentDim, 1, 1}},
                   {"y_v", Shape{1, kPoseDim, 1, 1}},
                   {"y_h", heatmap_shape}};
    spec.layers.push_back(concat("y_v", "1"));
    spec.layers.push_back(reshape(kLatentDim + kPoseDim, 1, 1, "2"));
    decoder_upsampling(spec.layers, w, 3);
    spec.layers.push_back(concat("y_h", "8"));
    decoder_refinement(spec.layers, w, 9);
    propagate_shapes(spec);
    return spec;
}

}  // namespace dgpose::nn
