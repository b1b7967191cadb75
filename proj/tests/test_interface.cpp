#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "dgpose/data/image_io.hpp"
#include "dgpose/data/preprocess.hpp"
#include "dgpose/interface/cli.hpp"
#include "dgpose/interface/run_record.hpp"
#include "dgpose/interface/service.hpp"
#include "toy_fixture.hpp"

using namespace dgpose;
using namespace dgpose::service;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr double kTiny = 1.0 / 32;

std::shared_ptr<const Model> tiny(ModelKind kind, std::uint64_t seed) {
    auto m = std::make_shared<Model>(Model::create(kind, {kTiny, kTiny, kTiny, kTiny, kTiny}, seed));
    m->stats = testing::toy().train.stats;
    return m;
}

const Service& conditional() {
    static const Service s(tiny(ModelKind::Conditional, 1));
    return s;
}

const Service& semi() {
    static const Service s(tiny(ModelKind::Semi, 2));
    return s;
}

Response post(const Service& s, const std::string& path, const json& body) {
    return s.handle({"POST", path, body.dump()});
}

std::string error_code(const Response& r) { return r.json()["error"]["code"]; }

std::string test_png(int i) {
    const auto& d = testing::toy().test;
    const auto unit = data::to_unit_range(d.images.slice(i, i + 1), d.stats);
    return base64_encode(data::encode_png(data::take_sample(unit, 0)));
}

json test_pose(int i) { return pose_to_json(*testing::toy().test.poses[i]); }

Tensor<float> decode_image(const Response& r, const char* key = "image") {
    REQUIRE(r.status == 200);
    return data::decode_png(base64_decode(r.json()[key].get<std::string>()));
}

int cli(std::vector<std::string> args) {
    args.insert(args.begin(), "dgpose");
    return interface::run_cli(args);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("base64 round trip and rejection") {
    for (std::size_t n : {0u, 1u, 2u, 3u, 4u, 5u, 64u}) {
        std::vector<std::uint8_t> bytes(n);
        for (std::size_t i = 0; i < n; ++i) bytes[i] = static_cast<std::uint8_t>(i * 37 + 11);
        CHECK(base64_decode(base64_encode(bytes)) == bytes);
    }
    CHECK(base64_encode({'a', 'b', 'c'}) == "YWJj");
    CHECK_THROWS_AS(base64_decode("abc"), std::invalid_argument);
    CHECK_THROWS_AS(base64_decode("a*c="), std::invalid_argument);
}

TEST_CASE("pose JSON validation") {
    const auto p = *testing::toy().test.poses[0];
    const auto back = pose_from_json(pose_to_json(p));
    for (int j = 0; j < pose::kJoints; ++j) CHECK(back.joints[j] == p.joints[j]);
    CHECK_THROWS_AS(pose_from_json(json::array()), std::invalid_argument);
    json bad = pose_to_json(p);
    bad[3] = {1.0};
    CHECK_THROWS_AS(pose_from_json(bad), std::invalid_argument);
    bad[3] = {"x", 0.5};
    CHECK_THROWS_AS(pose_from_json(bad), std::invalid_argument);
}

TEST_CASE("no model loaded: 503 on every known route") {
    const Service empty;
    CHECK_FALSE(empty.loaded());
    CHECK(empty.handle({"GET", "/model", ""}).status == 503);
    const auto r = post(empty, "/decode", {{"pose", test_pose(0)}, {"z", std::vector<float>(100, 0.0f)}});
    CHECK(r.status == 503);
    CHECK(error_code(r) == "no-model");
    CHECK(empty.handle({"GET", "/nowhere", ""}).status == 404);
}

TEST_CASE("checkpoint from the environment") {
    const auto dir = testing::scratch_dir("service_env");
    save_checkpoint(dir / "m.ckpt", *tiny(ModelKind::Semi, 4));
    ::unsetenv(kCheckpointEnv);
    CHECK_FALSE(Service::from_environment().loaded());
    ::setenv(kCheckpointEnv, (dir / "m.ckpt").c_str(), 1);
    const auto s = Service::from_environment();
    ::unsetenv(kCheckpointEnv);
    REQUIRE(s.loaded());
    CHECK(s.model()->kind == ModelKind::Semi);
}

TEST_CASE("/model reports dimensions and hashes") {
    const auto r = conditional().handle({"GET", "/model", ""});
    REQUIRE(r.status == 200);
    CHECK(r.content_type == "application/json");
    const auto j = r.json();
    CHECK(j["kind"] == "conditional");
    CHECK(j["z_dim"] == 100);
    CHECK(j["pose_dim"] == 48);
    CHECK(j["heatmap_channels"] == 24);
    CHECK(j["image_size"] == 64);
    CHECK(j["joints"] == 14);
    CHECK(j["spec_hashes"].is_object());
    CHECK(conditional().handle({"POST", "/model", ""}).status == 405);
}

TEST_CASE("/decode rejects a latent of the wrong length") {
    for (int n : {99, 101, 0}) {
        const auto r = post(conditional(), "/decode", {{"pose", test_pose(0)}, {"z", std::vector<float>(n, 0.0f)}});
        CHECK(r.status == 400);
        CHECK(error_code(r) == "bad-latent-dim");
    }
}

TEST_CASE("malformed requests") {
    CHECK(error_code(conditional().handle({"POST", "/decode", "{not json"})) == "bad-json");
    CHECK(error_code(conditional().handle({"POST", "/decode", "[1,2]"})) == "bad-json");
    CHECK(error_code(post(conditional(), "/decode", {{"z", std::vector<float>(100)}})) == "missing-field");
    CHECK(error_code(post(conditional(), "/decode", {{"pose", {1, 2}}, {"z", std::vector<float>(100)}})) == "bad-pose");
    CHECK(error_code(post(conditional(), "/encode", {{"image", "???"}, {"pose", test_pose(0)}})) == "bad-image");
    CHECK(error_code(post(conditional(), "/encode", {{"image", test_png(0)}})) == "missing-field");
    CHECK(error_code(post(conditional(), "/sample", {{"pose", test_pose(0)}, {"n", 0}})) == "bad-count");
    CHECK(error_code(post(conditional(), "/sample", {{"pose", test_pose(0)}, {"n", kMaxSamples + 1}})) == "bad-count");
    CHECK(error_code(post(conditional(), "/decode", {{"pose", test_pose(0)}, {"z", std::vector<float>(100)}, {"suppress_parts", {30}}})) == "bad-parts");

    Tensor<float> small(Shape{1, 3, 32, 32}, 0.5f);
    const auto png = base64_encode(data::encode_png(small));
    CHECK(error_code(post(semi(), "/encode", {{"image", png}})) == "bad-image-size");
}

TEST_CASE("encode then decode returns a 64x64 PNG") {
    for (const Service* s : {&conditional(), &semi()}) {
        json req = {{"image", test_png(1)}};
        if (s == &conditional()) req["pose"] = test_pose(1);
        const auto enc = post(*s, "/encode", req);
        REQUIRE(enc.status == 200);
        const auto e = enc.json();
        CHECK(e["z"].size() == 100);
        CHECK(e["pose"].size() == 14);
        const auto dec = post(*s, "/decode", {{"pose", e["pose"]}, {"z", e["z"]}});
        const auto img = decode_image(dec);
        CHECK(img.shape() == Shape{1, 3, 64, 64});
    }
}

TEST_CASE("decode edits: extra figures and suppressed parts change the output") {
    const json z = std::vector<float>(100, 0.1f);
    const auto plain = post(conditional(), "/decode", {{"pose", test_pose(0)}, {"z", z}}).json()["image"];
    const auto dup = post(conditional(), "/decode", {{"pose", test_pose(0)}, {"z", z}, {"extra_poses", {test_pose(3)}}});
    REQUIRE(dup.status == 200);
    CHECK(dup.json()["image"] != plain);
    const auto sup = post(conditional(), "/decode", {{"pose", test_pose(0)}, {"z", z}, {"suppress_parts", {0, 1, 2}}});
    REQUIRE(sup.status == 200);
    CHECK(sup.json()["image"] != plain);
    CHECK(post(semi(), "/decode", {{"pose", test_pose(0)}, {"z", z}, {"extra_poses", {test_pose(3)}}}).status == 200);
}

TEST_CASE("/sample and /transfer") {
    const auto r = post(conditional(), "/sample", {{"pose", test_pose(2)}, {"n", 3}, {"seed", 7}});
    REQUIRE(r.status == 200);
    CHECK(r.json()["images"].size() == 3);
    CHECK(post(conditional(), "/sample", {{"pose", test_pose(2)}, {"n", 3}, {"seed", 7}}).body == r.body);
    CHECK(error_code(post(conditional(), "/sample", {{"n", 2}})) == "missing-field");
    CHECK(post(semi(), "/sample", {{"n", 2}}).json()["images"].size() == 2);

    const auto t1 = post(semi(), "/transfer", {{"pose_source", test_png(0)}, {"appearance_source", test_png(1)}});
    CHECK(decode_image(t1).shape() == Shape{1, 3, 64, 64});
    const auto t2 = post(conditional(), "/transfer",
                         {{"appearance_source", test_png(1)}, {"source_pose", test_pose(1)}, {"target_pose", test_pose(0)}});
    CHECK(decode_image(t2).shape() == Shape{1, 3, 64, 64});
    CHECK(error_code(post(conditional(), "/transfer", {{"appearance_source", test_png(1)}})) == "missing-field");
}

TEST_CASE("concurrent identical decodes are byte-identical and leave the model untouched") {
    const auto dir = testing::scratch_dir("service_concurrency");
    save_checkpoint(dir / "before.ckpt", *semi().model());
    const json req = {{"pose", test_pose(4)}, {"z", std::vector<float>(100, -0.2f)}};
    const std::string reference = post(semi(), "/decode", req).body;
    std::vector<std::string> out(8);
    std::vector<std::thread> threads;
    for (int t = 0; t < 8; ++t) threads.emplace_back([&, t] { out[t] = post(semi(), "/decode", req).body; });
    for (auto& t : threads) t.join();
    for (const auto& b : out) CHECK(b == reference);
    save_checkpoint(dir / "after.ckpt", *semi().model());
    CHECK(slurp(dir / "before.ckpt") == slurp(dir / "after.ckpt"));
}

TEST_CASE("HTTP transport") {
    const int port = 18000 + static_cast<int>(::getpid() % 2000);
    static const Service s(tiny(ModelKind::Semi, 5));
    std::thread([port] { s.listen("127.0.0.1", port); }).detach();
    httplib::Client client("127.0.0.1", port);
    client.set_connection_timeout(5);
    httplib::Result res;
    for (int i = 0; i < 50 && !res; ++i) {
        res = client.Get("/model");
        if (!res) std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
    REQUIRE(res);
    CHECK(res->status == 200);
    CHECK(json::parse(res->body)["kind"] == "semi");
    auto bad = client.Post("/decode", json{{"pose", test_pose(0)}, {"z", {1, 2}}}.dump(), "application/json");
    REQUIRE(bad);
    CHECK(bad->status == 400);
    CHECK(json::parse(bad->body)["error"]["code"] == "bad-latent-dim");
    auto missing = client.Get("/nothing");
    REQUIRE(missing);
    CHECK(missing->status == 404);
}

TEST_CASE("run record round trip and ids") {
    interface::RunRecord r;
    r.id = interface::new_run_id("eval");
    r.command = "eval";
    r.argv = {"dgpose", "eval", "--seed", "3"};
    r.seed = 3;
    r.config = {{"batch_size", 8}};
    r.checkpoints = {"a.ckpt"};
    r.metrics = {{"psnr", 21.5}};
    r.started_at = interface::utc_now();
    r.finished_at = interface::utc_now();
    const auto dir = testing::scratch_dir("run_record");
    r.save(dir);
    const auto back = interface::RunRecord::load(dir);
    CHECK(back.to_json() == r.to_json());
    CHECK(r.id.rfind("eval-", 0) == 0);
    CHECK(interface::new_run_id("eval") != interface::new_run_id("eval"));
}

TEST_CASE("CLI usage errors exit with status 2") {
    CHECK(cli({}) == 2);
    CHECK(cli({"--no-such-flag"}) == 2);
    CHECK(cli({"gen-data"}) == 2);  // --out is required
    CHECK(cli({"gen-data", "--out", "x", "--bogus"}) == 2);
    CHECK(cli({"train-semi", "--data", "m.jsonl", "--mapper", "m.ckpt", "--fraction", "1.5"}) == 2);
    CHECK(cli({"--help"}) == 0);
}

TEST_CASE("CLI gen-data is deterministic and records the run") {
    const auto a = testing::scratch_dir("cli_gen_a"), b = testing::scratch_dir("cli_gen_b");
    REQUIRE(cli({"gen-data", "--n", "6", "--test", "2", "--seed", "11", "--out", a.string()}) == 0);
    REQUIRE(cli({"gen-data", "--n", "6", "--test", "2", "--seed", "11", "--out", b.string()}) == 0);
    CHECK(slurp(a / "manifest.jsonl") == slurp(b / "manifest.jsonl"));
    const auto m = data::Manifest::read(a / "manifest.jsonl");
    REQUIRE(m.entries.size() == 6);
    for (const auto& e : m.entries) CHECK(slurp(a / e.image) == slurp(b / e.image));
    const auto rec = interface::RunRecord::load(a);
    CHECK(rec.command == "gen-data");
    CHECK(rec.seed == 11);
    CHECK(cli({"gen-data", "--n", "2", "--test", "5", "--out", a.string()}) == 2);
}

TEST_CASE("CLI pipeline on a tiny dataset") {
    const auto root = testing::scratch_dir("cli_pipeline");
    const std::string data = (root / "data").string(), manifest = data + "/manifest.jsonl";
    const std::string w = "0.03125";
    REQUIRE(cli({"gen-data", "--n", "12", "--test", "4", "--out", data}) == 0);

    const auto run = [&](const std::string& name) { return (root / name).string(); };
    REQUIRE(cli({"train-mapper", "--data", manifest, "--epochs", "1", "--batch-size", "4", "--width", w, "--run-dir", run("map")}) == 0);
    const std::string mapper = run("map") + "/checkpoints/final.ckpt";
    REQUIRE(fs::exists(mapper));
    REQUIRE(cli({"train-semi", "--data", manifest, "--mapper", mapper, "--fraction", "0.5", "--epochs", "1", "--batch-size", "4",
                 "--width", w, "--run-dir", run("semi")}) == 0);
    REQUIRE(cli({"train-cond", "--data", manifest, "--epochs", "1", "--batch-size", "4", "--width", w, "--run-dir", run("cond")}) == 0);
    const std::string semi_ckpt = run("semi") + "/checkpoints/final.ckpt", cond_ckpt = run("cond") + "/checkpoints/final.ckpt";
    const auto rec = interface::RunRecord::load(run("semi"));
    CHECK(rec.command == "train-semi");
    CHECK(rec.metrics["history"].size() == 1);

    REQUIRE(cli({"eval", "--checkpoint", semi_ckpt, "--data", manifest, "--run-dir", run("eval")}) == 0);
    const auto metrics = json::parse(slurp(run("eval") + "/metrics.json"));
    CHECK(metrics.contains("psnr"));

    REQUIRE(cli({"reconstruct", "--checkpoint", cond_ckpt, "--data", manifest, "--split", "test", "--count", "2",
                 "--run-dir", run("rec")}) == 0);
    const std::string crop = run("rec") + "/reconstructions/original_000.png";
    CHECK(fs::exists(run("rec") + "/reconstructions/reconstruction_001.png"));

    std::ofstream(root / "pose.json") << test_pose(0).dump();
    REQUIRE(cli({"sample", "--checkpoint", cond_ckpt, "--pose", (root / "pose.json").string(), "--n", "2", "--seed", "4",
                 "--run-dir", run("sample")}) == 0);
    CHECK(fs::exists(run("sample") + "/samples/sample_001.png"));
    CHECK(cli({"sample", "--checkpoint", cond_ckpt, "--run-dir", run("sample2")}) == 2);

    REQUIRE(cli({"transfer", "--checkpoint", semi_ckpt, "--appearance-source", crop, "--pose-source", crop, "--run-dir",
                 run("transfer")}) == 0);
    CHECK(fs::exists(run("transfer") + "/transfer_000.png"));
    CHECK(cli({"transfer", "--checkpoint", cond_ckpt, "--appearance-source", crop, "--run-dir", run("transfer2")}) == 2);

    REQUIRE(cli({"estimate", "--checkpoint", semi_ckpt, "--image", crop, "--run-dir", run("est")}) == 0);
    CHECK(json::parse(slurp(run("est") + "/poses.json"))[0]["pose"].size() == 14);
    CHECK(cli({"eval", "--checkpoint", run("missing.ckpt"), "--data", manifest, "--run-dir", run("bad")}) == 1);
}
