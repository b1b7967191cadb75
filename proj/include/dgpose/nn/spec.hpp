#pragma once

// Declarative network descriptions. A NetworkSpec is an immutable list of
// layer definitions plus named fully-connected heads on the flattened trunk
// output; shapes are checked statically before any parameters exist.

#include <stdexcept>
#include <string>
#include <vector>

#include "dgpose/tensor.hpp"

namespace dgpose::nn {

class BuildError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class LayerKind { Conv, Deconv, FullyConnected, BatchNorm, Activation, Concat, Reshape, Residual };

enum class ActivationKind { ReLU, LeakyReLU, Sigmoid, Tanh };

struct LayerDef {
    LayerKind kind = LayerKind::Conv;
    int units = 0;  // N: kernels or neurons
    int kernel = 0;
    int stride = 1;
    int padding = 0;
    bool bias = true;
    ActivationKind activation = ActivationKind::ReLU;
    double slope = 0.0;
    std::string source;          // Concat: network input appended along channels
    Shape reshape{1, 0, 0, 0};   // Reshape: per-sample (c, h, w); n is ignored
    std::vector<LayerDef> body;  // Residual: branch summed with the block input
    std::string row;             // table row the layer belongs to
};

struct InputDef {
    std::string name;
    Shape shape;  // per-sample (c, h, w); n is ignored
};

struct HeadDef {
    std::string name;
    int units = 0;
};

struct NetworkSpec {
    std::string name;
    std::vector<InputDef> inputs;  // inputs[0] feeds the trunk
    std::vector<LayerDef> layers;
    std::vector<HeadDef> heads;    // empty: the trunk output is the network output
};

// Layer factories used by the architecture builders.
LayerDef conv(int n, int k, int s, int p, std::string row, bool bias = true);
LayerDef deconv(int n, int k, int s, int p, std::string row, bool bias = true);
LayerDef batch_norm(std::string row);
LayerDef activation(ActivationKind kind, std::string row, double slope = 0.0);
LayerDef concat(std::string source, std::string row);
LayerDef reshape(int c, int h, int w, std::string row);
LayerDef residual(int n, int k, int s, int p, std::vector<LayerDef> body, std::string row);

int conv_out(int in, int k, int s, int p);
int deconv_out(int in, int k, int s, int p);

/// Output shape of a single layer for a per-sample input shape.
Shape layer_output_shape(const LayerDef& def, const Shape& in, const NetworkSpec& spec);

/// Per-layer per-sample output shapes; throws BuildError on any mismatch.
std::vector<Shape> propagate_shapes(const NetworkSpec& spec);

/// Per-sample trunk output shape.
Shape trunk_shape(const NetworkSpec& spec);

/// The layer table in the abbreviated CONV-(N.., K.., S.., P..) notation, one
/// string per row label, in order.
struct RenderedRow {
    std::string row;
    std::string text;
};
std::vector<RenderedRow> render_rows(const NetworkSpec& spec);
std::vector<RenderedRow> render_heads(const NetworkSpec& spec);

/// Stable textual form; its SHA-256 identifies the architecture in checkpoints.
std::string canonical_text(const NetworkSpec& spec);
std::string spec_hash(const NetworkSpec& spec);

std::string sha256_hex(const void* data, std::size_t size);

}  // namespace dgpose::nn
