#include "dgpose/interface/run_record.hpp"

#include <atomic>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <random>

namespace dgpose::interface {

nlohmann::json RunRecord::to_json() const {
    return {{"format", "dgpose-run"},
            {"version", 1},
            {"id", id},
            {"command", command},
            {"argv", argv},
            {"seed", seed},
            {"config", config},
            {"checkpoints", checkpoints},
            {"metrics", metrics},
            {"started_at", started_at},
            {"finished_at", finished_at}};
}

RunRecord RunRecord::from_json(const nlohmann::json& j) {
    RunRecord r;
    r.id = j.at("id");
    r.command = j.at("command");
    r.argv = j.value("argv", std::vector<std::string>{});
    r.seed = j.value("seed", std::uint64_t{0});
    r.config = j.value("config", nlohmann::json::object());
    r.checkpoints = j.value("checkpoints", std::vector<std::string>{});
    r.metrics = j.value("metrics", nlohmann::json::object());
    r.started_at = j.value("started_at", "");
    r.finished_at = j.value("finished_at", "");
    return r;
}

void RunRecord::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "run.json") << to_json().dump(2) << "\n";
}

RunRecord RunRecord::load(const std::filesystem::path& dir) {
    std::ifstream in(dir / "run.json");
    if (!in) throw std::runtime_error("no run.json in " + dir.string());
    return from_json(nlohmann::json::parse(in));
}

std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string new_run_id(const std::string& command) {
    static std::atomic<unsigned> counter{0};
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &tm);
    std::random_device rd;
    const unsigned tag = (rd() ^ (counter++ * 0x9E3779B9u)) & 0xFFFFFFu;
    char hex[8];
    std::snprintf(hex, sizeof hex, "%06x", tag);
    return command + "-" + stamp + "-" + hex;
}

}  // namespace dgpose::interface
