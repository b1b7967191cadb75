#include "dgpose/interface/service.hpp"

#include <openssl/evp.h>

#include <cstdlib>
#include <httplib.h>

#include "dgpose/data/image_io.hpp"
#include "dgpose/data/preprocess.hpp"
#include "dgpose/inference.hpp"
#include "dgpose/nn/architectures.hpp"

namespace dgpose::service {

namespace {

using TensorF = Tensor<float>;
using json = nlohmann::json;

// Request errors carry the machine-readable code returned to the client.
struct RequestError {
    int status;
    std::string code;
    std::string message;
};

Response error(int status, const std::string& code, const std::string& message) {
    return {status, "application/json", json{{"error", {{"code", code}, {"message", message}}}}.dump()};
}

Response ok(const json& j) { return {200, "application/json", j.dump()}; }

[[noreturn]] void bad(const std::string& code, const std::string& message) { throw RequestError{400, code, message}; }

const json& field(const json& body, const char* name) {
    if (!body.contains(name)) bad("missing-field", std::string("missing field '") + name + "'");
    return body.at(name);
}

pose::PoseVector pose_field(const json& body, const char* name) {
    try {
        return pose_from_json(field(body, name));
    } catch (const std::invalid_argument& e) {
        bad("bad-pose", std::string(name) + ": " + e.what());
    }
}

// Base64 PNG -> one normalized model-space image.
TensorF image_field(const json& body, const char* name, const Model& m) {
    const json& v = field(body, name);
    if (!v.is_string()) bad("bad-image", std::string(name) + " must be a base64 PNG string");
    TensorF img;
    try {
        img = data::decode_png(base64_decode(v.get<std::string>()));
    } catch (const std::exception& e) {
        bad("bad-image", std::string(name) + ": " + e.what());
    }
    const Shape s = img.shape();
    if (s.h != nn::kImageSize || s.w != nn::kImageSize) {
        bad("bad-image-size", std::string(name) + " must be 64x64, got " + std::to_string(s.w) + "x" + std::to_string(s.h));
    }
    img.reshape(Shape{1, 3, s.h, s.w});
    data::normalize_images(img, m.stats);
    return img;
}

std::string png_of(const TensorF& model_space, const Model& m, int row) {
    const TensorF unit = data::to_unit_range(model_space.slice(row, row + 1), m.stats);
    return base64_encode(data::encode_png(data::take_sample(unit, 0)));
}

TensorF latent_field(const json& body) {
    const json& v = field(body, "z");
    if (!v.is_array()) bad("bad-latent", "z must be an array of numbers");
    if (v.size() != static_cast<std::size_t>(nn::kLatentDim)) {
        bad("bad-latent-dim", "z must have " + std::to_string(nn::kLatentDim) + " entries, got " + std::to_string(v.size()));
    }
    TensorF z(Shape{1, nn::kLatentDim, 1, 1});
    for (int i = 0; i < nn::kLatentDim; ++i) {
        if (!v[i].is_number()) bad("bad-latent", "z entries must be numbers");
        z[i] = v[i].get<float>();
    }
    return z;
}

void require_kind(const Model& m, bool ok, const std::string& what) {
    if (!ok) bad("unsupported", what + " is not available for a " + kind_name(m.kind) + " model");
}

json route_model(const Model& m) {
    return {{"kind", kind_name(m.kind)},
            {"z_dim", nn::kLatentDim},
            {"pose_dim", nn::kPoseDim},
            {"heatmap_channels", nn::kHeatmapChannels},
            {"image_size", nn::kImageSize},
            {"joints", pose::kJoints},
            {"joint_names", std::vector<std::string>(pose::kJointNames.begin(), pose::kJointNames.end())},
            {"spec_hashes", m.spec_hashes()},
            {"widths", widths_to_json(m.widths)},
            {"epoch", m.epoch}};
}

json route_encode(const Model& m, const json& body) {
    require_kind(m, m.kind != ModelKind::Mapper, "encode");
    const TensorF x = image_field(body, "image", m);
    if (m.kind == ModelKind::Conditional) {
        const auto p = pose_field(body, "pose");
        const TensorF y_h = infer::render_poses({p}, m.table);
        const auto e = infer::encode(m, x, &y_h);
        return {{"pose", pose_to_json(p)}, {"z", std::vector<float>(e.mu_z.data(), e.mu_z.data() + e.mu_z.size())}};
    }
    const auto e = infer::encode(m, x);
    const auto est = infer::estimate_pose(m, x);
    return {{"pose", pose_to_json(est.front())},
            {"z", std::vector<float>(e.mu_z.data(), e.mu_z.data() + e.mu_z.size())}};
}

json route_decode(const Model& m, const json& body) {
    require_kind(m, m.kind != ModelKind::Mapper, "decode");
    const auto p = pose_field(body, "pose");
    const TensorF z = latent_field(body);
    std::vector<pose::PoseVector> extra;
    if (body.contains("extra_poses")) {
        if (!body["extra_poses"].is_array()) bad("bad-pose", "extra_poses must be an array of poses");
        for (const auto& e : body["extra_poses"]) {
            try {
                extra.push_back(pose_from_json(e));
            } catch (const std::invalid_argument& ex) {
                bad("bad-pose", std::string("extra_poses: ") + ex.what());
            }
        }
    }
    std::vector<int> suppress;
    if (body.contains("suppress_parts")) {
        try {
            suppress = body["suppress_parts"].get<std::vector<int>>();
        } catch (const json::exception&) {
            bad("bad-parts", "suppress_parts must be an array of part indices");
        }
        for (int s : suppress) {
            if (s < 0 || s >= pose::kParts) bad("bad-parts", "part index out of range");
        }
    }
    TensorF x_hat;
    if (m.kind == ModelKind::Conditional) {
        TensorF y_h = infer::render_poses({p}, m.table);
        for (const auto& e : extra) y_h = infer::union_stacks(y_h, infer::render_poses({e}, m.table));
        if (!suppress.empty()) y_h = infer::suppress_parts(y_h, suppress);
        x_hat = infer::decode(m, z, nullptr, &y_h);
    } else {
        const TensorF y_v = infer::pose_vectors(m, {p});
        if (extra.empty() && suppress.empty()) {
            x_hat = infer::decode(m, z, &y_v, nullptr);
        } else {
            TensorF y_h = infer::map_pose(m, y_v);
            for (const auto& e : extra) y_h = infer::union_stacks(y_h, infer::map_pose(m, infer::pose_vectors(m, {e})));
            if (!suppress.empty()) y_h = infer::suppress_parts(y_h, suppress);
            x_hat = infer::decode(m, z, &y_v, &y_h);
        }
    }
    return {{"image", png_of(x_hat, m, 0)}, {"format", "png"}, {"width", nn::kImageSize}, {"height", nn::kImageSize}};
}

json route_sample(const Model& m, const json& body) {
    require_kind(m, m.kind != ModelKind::Mapper, "sample");
    const json& nj = field(body, "n");
    if (!nj.is_number_integer() || nj.get<int>() < 1 || nj.get<int>() > kMaxSamples) {
        bad("bad-count", "n must be an integer in [1, " + std::to_string(kMaxSamples) + "]");
    }
    const int n = nj.get<int>();
    std::uint64_t seed = 0;
    if (body.contains("seed")) {
        if (!body["seed"].is_number_unsigned()) bad("bad-seed", "seed must be a non-negative integer");
        seed = body["seed"].get<std::uint64_t>();
    }
    std::vector<pose::PoseVector> poses;
    if (m.kind == ModelKind::Conditional || body.contains("pose")) poses.push_back(pose_field(body, "pose"));
    const TensorF imgs = infer::sample(m, poses, n, seed);
    json out = json::array();
    for (int r = 0; r < imgs.shape().n; ++r) out.push_back(png_of(imgs, m, r));
    return {{"images", out}, {"seed", seed}};
}

json route_transfer(const Model& m, const json& body) {
    require_kind(m, m.kind != ModelKind::Mapper, "transfer");
    TensorF x_hat;
    if (m.kind == ModelKind::Semi) {
        const TensorF xp = image_field(body, "pose_source", m);
        const TensorF xa = image_field(body, "appearance_source", m);
        x_hat = infer::indirect_pose_transfer(m, xp, xa);
    } else {
        const TensorF xa = image_field(body, "appearance_source", m);
        const auto src = pose_field(body, "source_pose");
        const auto tgt = pose_field(body, "target_pose");
        x_hat = infer::direct_pose_transfer(m, xa, infer::render_poses({src}, m.table), infer::render_poses({tgt}, m.table));
    }
    return {{"image", png_of(x_hat, m, 0)}, {"format", "png"}};
}

}  // namespace

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(), static_cast<int>(bytes.size()));
    out.resize(n);
    return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
    std::string t;
    for (char c : text) {
        if (!std::isspace(static_cast<unsigned char>(c))) t.push_back(c);
    }
    if (t.size() % 4 != 0) throw std::invalid_argument("base64 length is not a multiple of 4");
    std::vector<std::uint8_t> out(3 * (t.size() / 4));
    const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(t.data()), static_cast<int>(t.size()));
    if (n < 0) throw std::invalid_argument("invalid base64");
    std::size_t pad = 0;
    if (!t.empty() && t.back() == '=') ++pad;
    if (t.size() > 1 && t[t.size() - 2] == '=') ++pad;
    out.resize(static_cast<std::size_t>(n) - pad);
    return out;
}

json pose_to_json(const pose::PoseVector& p) {
    json out = json::array();
    for (const auto& j : p.joints) out.push_back({j.x, j.y});
    return out;
}

pose::PoseVector pose_from_json(const json& j) {
    if (!j.is_array() || j.size() != static_cast<std::size_t>(pose::kJoints)) {
        throw std::invalid_argument("pose must be an array of 14 [x, y] pairs");
    }
    pose::PoseVector p;
    for (int i = 0; i < pose::kJoints; ++i) {
        const auto& e = j[i];
        if (!e.is_array() || e.size() != 2 || !e[0].is_number() || !e[1].is_number()) {
            throw std::invalid_argument("joint " + std::to_string(i) + " must be [x, y]");
        }
        p.joints[i] = {e[0].get<double>(), e[1].get<double>()};
        if (!std::isfinite(p.joints[i].x) || !std::isfinite(p.joints[i].y)) {
            throw std::invalid_argument("joint " + std::to_string(i) + " is not finite");
        }
    }
    return p;
}

Service::Service(std::shared_ptr<const Model> model) : model_(std::move(model)) {}

Service Service::from_checkpoint(const std::filesystem::path& path) {
    return Service(std::make_shared<const Model>(load_checkpoint(path)));
}

Service Service::from_environment() {
    const char* p = std::getenv(kCheckpointEnv);
    if (!p || !*p) return Service();
    return from_checkpoint(p);
}

Response Service::handle(const Request& req) const {
    using Route = json (*)(const Model&, const json&);
    struct Entry {
        const char* method;
        const char* path;
        Route fn;
    };
    static const Entry routes[] = {{"POST", "/encode", route_encode},
                                   {"POST", "/decode", route_decode},
                                   {"POST", "/sample", route_sample},
                                   {"POST", "/transfer", route_transfer}};
    const bool is_model = req.path == "/model";
    const Entry* hit = nullptr;
    for (const auto& e : routes) {
        if (req.path == e.path) hit = &e;
    }
    if (!is_model && !hit) return error(404, "not-found", "no route " + req.path);
    if ((is_model && req.method != "GET") || (hit && req.method != hit->method)) {
        return error(405, "method-not-allowed", req.method + " " + req.path);
    }
    if (!model_) return error(503, "no-model", std::string("no checkpoint loaded; set ") + kCheckpointEnv);
    try {
        if (is_model) return ok(route_model(*model_));
        json body;
        try {
            body = json::parse(req.body);
        } catch (const json::exception& e) {
            return error(400, "bad-json", e.what());
        }
        if (!body.is_object()) return error(400, "bad-json", "body must be a JSON object");
        return ok(hit->fn(*model_, body));
    } catch (const RequestError& e) {
        return error(e.status, e.code, e.message);
    } catch (const infer::InferenceError& e) {
        return error(400, "unsupported", e.what());
    } catch (const std::exception& e) {
        return error(500, "internal", e.what());
    }
}

void Service::listen(const std::string& host, int port) const {
    httplib::Server server;
    auto bridge = [this](const httplib::Request& in, httplib::Response& out) {
        const Response r = handle({in.method, in.path, in.body});
        out.status = r.status;
        out.set_content(r.body, r.content_type);
    };
    server.Get(R"(/.*)", bridge);
    server.Post(R"(/.*)", bridge);
    if (!server.listen(host, port)) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
}

}  // namespace dgpose::service
