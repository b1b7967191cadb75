#pragma once

// run.json: what a CLI invocation did, enough to repeat it.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace dgpose::interface {

struct RunRecord {
    std::string id;
    std::string command;
    std::vector<std::string> argv;
    std::uint64_t seed = 0;
    nlohmann::json config = nlohmann::json::object();
    std::vector<std::string> checkpoints;
    nlohmann::json metrics = nlohmann::json::object();
    std::string started_at;
    std::string finished_at;

    nlohmann::json to_json() const;
    static RunRecord from_json(const nlohmann::json& j);

    void save(const std::filesystem::path& run_dir) const;
    static RunRecord load(const std::filesystem::path& run_dir);
};

/// "<command>-<UTC yyyymmddThhmmssZ>-<6 hex>", unique per call.
std::string new_run_id(const std::string& command);
std::string utc_now();

}  // namespace dgpose::interface
