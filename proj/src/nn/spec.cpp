#include "dgpose/nn/spec.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <sstream>

namespace dgpose::nn {

LayerDef conv(int n, int k, int s, int p, std::string row, bool bias) {
    LayerDef d;
    d.kind = LayerKind::Conv;
    d.units = n;
    d.kernel = k;
    d.stride = s;
    d.padding = p;
    d.bias = bias;
    d.row = std::move(row);
    return d;
}

LayerDef deconv(int n, int k, int s, int p, std::string row, bool bias) {
    LayerDef d = conv(n, k, s, p, std::move(row), bias);
    d.kind = LayerKind::Deconv;
    return d;
}

LayerDef batch_norm(std::string row) {
    LayerDef d;
    d.kind = LayerKind::BatchNorm;
    d.bias = false;
    d.row = std::move(row);
    return d;
}

LayerDef activation(ActivationKind kind, std::string row, double slope) {
    LayerDef d;
    d.kind = LayerKind::Activation;
    d.activation = kind;
    d.slope = slope;
    d.bias = false;
    d.row = std::move(row);
    return d;
}

LayerDef concat(std::string source, std::string row) {
    LayerDef d;
    d.kind = LayerKind::Concat;
    d.source = std::move(source);
    d.bias = false;
    d.row = std::move(row);
    return d;
}

LayerDef reshape(int c, int h, int w, std::string row) {
    LayerDef d;
    d.kind = LayerKind::Reshape;
    d.reshape = Shape{1, c, h, w};
    d.bias = false;
    d.row = std::move(row);
    return d;
}

LayerDef residual(int n, int k, int s, int p, std::vector<LayerDef> body, std::string row) {
    LayerDef d = conv(n, k, s, p, std::move(row), false);
    d.kind = LayerKind::Residual;
    d.body = std::move(body);
    return d;
}

int conv_out(int in, int k, int s, int p) {
    const int span = in + 2 * p - k;
    if (span < 0 || s <= 0) return 0;
    return span / s + 1;
}

int deconv_out(int in, int k, int s, int p) { return (in - 1) * s - 2 * p + k; }

namespace {

const InputDef* find_input(const NetworkSpec& spec, const std::string& name) {
    for (const auto& in : spec.inputs) {
        if (in.name == name) return &in;
    }
    return nullptr;
}

void require_positive(const LayerDef& def, const NetworkSpec& spec) {
    if (def.units <= 0 || def.kernel <= 0 || def.stride <= 0 || def.padding < 0) {
        throw BuildError(spec.name + " row " + def.row + ": non-positive layer hyper-parameter");
    }
}

}  // namespace

Shape layer_output_shape(const LayerDef& def, const Shape& in, const NetworkSpec& spec) {
    const std::string where = spec.name + " row " + def.row;
    switch (def.kind) {
        case LayerKind::Conv: {
            require_positive(def, spec);
            const int h = conv_out(in.h, def.kernel, def.stride, def.padding);
            const int w = conv_out(in.w, def.kernel, def.stride, def.padding);
            if (h < 1 || w < 1) throw BuildError(where + ": convolution window larger than input " + in.str());
            return Shape{1, def.units, h, w};
        }
        case LayerKind::Deconv: {
            require_positive(def, spec);
            const int h = deconv_out(in.h, def.kernel, def.stride, def.padding);
            const int w = deconv_out(in.w, def.kernel, def.stride, def.padding);
            if (h < 1 || w < 1) throw BuildError(where + ": empty transposed-convolution output");
            return Shape{1, def.units, h, w};
        }
        case LayerKind::FullyConnected:
            if (def.units <= 0) throw BuildError(where + ": non-positive unit count");
            return Shape{1, def.units, 1, 1};
        case LayerKind::BatchNorm:
        case LayerKind::Activation:
            return Shape{1, in.c, in.h, in.w};
        case LayerKind::Concat: {
            const InputDef* src = find_input(spec, def.source);
            if (!src) throw BuildError(where + ": unknown concat source '" + def.source + "'");
            if (src->shape.h != in.h || src->shape.w != in.w) {
                throw BuildError(where + ": concat spatial mismatch " + in.str() + " vs " +
                                 src->shape.str());
            }
            return Shape{1, in.c + src->shape.c, in.h, in.w};
        }
        case LayerKind::Reshape: {
            const Shape out{1, def.reshape.c, def.reshape.h, def.reshape.w};
            if (out.per_sample() != in.per_sample()) {
                throw BuildError(where + ": reshape size mismatch " + in.str() + " -> " + out.str());
            }
            return out;
        }
        case LayerKind::Residual: {
            Shape s{1, in.c, in.h, in.w};
            for (const auto& inner : def.body) s = layer_output_shape(inner, s, spec);
            if (s.c != in.c || s.h != in.h || s.w != in.w) {
                throw BuildError(where + ": residual sum shape mismatch, branch " + s.str() +
                                 " vs block input " + in.str());
            }
            return s;
        }
    }
    throw BuildError(where + ": unknown layer kind");
}

std::vector<Shape> propagate_shapes(const NetworkSpec& spec) {
    if (spec.inputs.empty()) throw BuildError(spec.name + ": network has no inputs");
    for (const auto& in : spec.inputs) {
        if (in.shape.c < 1 || in.shape.h < 1 || in.shape.w < 1) {
            throw BuildError(spec.name + ": input '" + in.name + "' has an empty shape");
        }
    }
    std::vector<Shape> shapes;
    shapes.reserve(spec.layers.size());
    Shape s = spec.inputs.front().shape;
    s.n = 1;
    for (const auto& def : spec.layers) {
        s = layer_output_shape(def, s, spec);
        shapes.push_back(s);
    }
    for (const auto& head : spec.heads) {
        if (head.units <= 0) throw BuildError(spec.name + ": head '" + head.name + "' has no units");
    }
    return shapes;
}

Shape trunk_shape(const NetworkSpec& spec) {
    const auto shapes = propagate_shapes(spec);
    if (shapes.empty()) {
        Shape s = spec.inputs.front().shape;
        s.n = 1;
        return s;
    }
    return shapes.back();
}

namespace {

std::string fmt_slope(double slope) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", slope);
    return buf;
}

std::string hyper(const LayerDef& d) {
    return "(N" + std::to_string(d.units) + ", K" + std::to_string(d.kernel) + ", S" +
           std::to_string(d.stride) + ", P" + std::to_string(d.padding) + ")";
}

std::string kind_tag(LayerKind k) {
    switch (k) {
        case LayerKind::Conv: return "CONV";
        case LayerKind::Deconv: return "DECONV";
        case LayerKind::FullyConnected: return "FC";
        case LayerKind::BatchNorm: return "BN";
        case LayerKind::Activation: return "ACT";
        case LayerKind::Concat: return "CONCAT";
        case LayerKind::Reshape: return "RESHAPE";
        case LayerKind::Residual: return "RESIDUAL";
    }
    return "?";
}

std::string render_item(const LayerDef& d, const std::string& concat_lhs) {
    switch (d.kind) {
        case LayerKind::Conv: return "CONV-" + hyper(d);
        case LayerKind::Deconv: return "DECONV-" + hyper(d);
        case LayerKind::Residual: return "RESIDUAL-" + hyper(d);
        case LayerKind::FullyConnected: return "FC-(N" + std::to_string(d.units) + ")";
        case LayerKind::BatchNorm: return "BN";
        case LayerKind::Activation:
            switch (d.activation) {
                case ActivationKind::ReLU: return "ReLU";
                case ActivationKind::LeakyReLU: return "LeakyReLU(" + fmt_slope(d.slope) + ")";
                case ActivationKind::Sigmoid: return "SIGMOID";
                case ActivationKind::Tanh: return "TANH";
            }
            return "?";
        case LayerKind::Concat: return "CONCAT(" + concat_lhs + ", " + d.source + ")";
        case LayerKind::Reshape:
            return "RESHAPE(" + std::to_string(d.reshape.c) + "," + std::to_string(d.reshape.h) +
                   "," + std::to_string(d.reshape.w) + ")";
    }
    return "?";
}

std::vector<RenderedRow> render_layers(const std::vector<LayerDef>& layers,
                                       const std::string& input_name) {
    std::vector<RenderedRow> rows;
    std::string prev_ref = input_name;
    std::string row_ref;
    for (const auto& d : layers) {
        if (rows.empty() || rows.back().row != d.row) {
            if (!rows.empty()) prev_ref = row_ref;
            rows.push_back({d.row, ""});
            row_ref = kind_tag(d.kind) + "-" + d.row;
        } else {
            rows.back().text += ", ";
        }
        rows.back().text += render_item(d, prev_ref);
    }
    return rows;
}

}  // namespace

std::vector<RenderedRow> render_rows(const NetworkSpec& spec) {
    const std::string input = spec.inputs.empty() ? std::string("input") : spec.inputs.front().name;
    if (spec.layers.size() == 1 && spec.layers.front().kind == LayerKind::Residual &&
        spec.name == "residual") {
        // A standalone block renders its branch followed by the sum row.
        const auto& block = spec.layers.front();
        auto rows = render_layers(block.body, input);
        std::string last_ref;
        for (const auto& d : block.body) {
            if (d.kind == LayerKind::Conv) last_ref = "CONV-" + d.row;
        }
        rows.push_back({std::to_string(rows.size() + 1), "SUM(" + last_ref + ", " + input + ")"});
        return rows;
    }
    return render_layers(spec.layers, input);
}

std::vector<RenderedRow> render_heads(const NetworkSpec& spec) {
    std::vector<RenderedRow> rows;
    for (const auto& h : spec.heads) rows.push_back({h.name, "FC-(N" + std::to_string(h.units) + ")"});
    return rows;
}

namespace {

void canonical_layer(std::ostringstream& os, const LayerDef& d) {
    os << "{" << kind_tag(d.kind) << " row=" << d.row << " n=" << d.units << " k=" << d.kernel
       << " s=" << d.stride << " p=" << d.padding << " bias=" << d.bias
       << " act=" << static_cast<int>(d.activation) << " slope=" << fmt_slope(d.slope)
       << " src=" << d.source << " reshape=" << d.reshape.str();
    for (const auto& inner : d.body) canonical_layer(os, inner);
    os << "}";
}

}  // namespace

std::string canonical_text(const NetworkSpec& spec) {
    std::ostringstream os;
    os << "network " << spec.name << "\n";
    for (const auto& in : spec.inputs) os << "input " << in.name << " " << in.shape.str() << "\n";
    for (const auto& d : spec.layers) {
        canonical_layer(os, d);
        os << "\n";
    }
    for (const auto& h : spec.heads) os << "head " << h.name << " " << h.units << "\n";
    return os.str();
}

std::string sha256_hex(const void* data, std::size_t size) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_Digest(data, size, digest, &len, EVP_sha256(), nullptr);
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 15]);
    }
    return out;
}

std::string spec_hash(const NetworkSpec& spec) {
    const std::string text = canonical_text(spec);
    return sha256_hex(text.data(), text.size());
}

}  // namespace dgpose::nn
