#pragma once

// HTTP service over one loaded checkpoint.
//
// All bodies are JSON (application/json). Images travel as base64 PNG,
// 64 x 64 RGB crops. Poses are 14 [x, y] pairs in normalized crop
// coordinates (pixel / 63), joint order as in the pose schema file.
//
//   GET  /model     -> {kind, z_dim, pose_dim, heatmap_channels, image_size,
//                       joints, spec_hashes, widths, epoch}
//   POST /encode    {image, pose?} -> {pose, z}
//                   pose is required by conditional models and echoed back;
//                   semi models return their pose estimate
//   POST /decode    {pose, z, extra_poses?, suppress_parts?} -> {image}
//                   extra_poses adds figures by per-channel heatmap max
//   POST /sample    {pose?, n, seed?} -> {images}
//                   pose is optional for semi models (then drawn from the prior)
//   POST /transfer  semi:        {pose_source, appearance_source} (images)
//                   conditional: {appearance_source, source_pose, target_pose}
//                   -> {image}
//
// Errors: {"error": {"code": ..., "message": ...}} with status 400 for a
// malformed request, 404 for an unknown route, 503 when no model is loaded.

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "dgpose/model.hpp"

namespace dgpose::service {

inline constexpr const char* kCheckpointEnv = "DGPOSE_CHECKPOINT";
inline constexpr int kMaxSamples = 64;

struct Request {
    std::string method;
    std::string path;
    std::string body;
};

struct Response {
    int status = 200;
    std::string content_type = "application/json";
    std::string body;

    nlohmann::json json() const { return nlohmann::json::parse(body); }
};

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> base64_decode(const std::string& text);  // throws std::invalid_argument

nlohmann::json pose_to_json(const pose::PoseVector& p);
pose::PoseVector pose_from_json(const nlohmann::json& j);  // throws std::invalid_argument

class Service {
public:
    explicit Service(std::shared_ptr<const Model> model = nullptr);

    /// Loads the checkpoint named by DGPOSE_CHECKPOINT, if set.
    static Service from_environment();
    static Service from_checkpoint(const std::filesystem::path& path);

    bool loaded() const { return model_ != nullptr; }
    const Model* model() const { return model_.get(); }

    /// Pure request handler; safe to call from several threads.
    Response handle(const Request& request) const;

    /// Blocks serving HTTP until the process ends.
    void listen(const std::string& host, int port) const;

private:
    std::shared_ptr<const Model> model_;
};

}  // namespace dgpose::service
