#include "dgpose/interface/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>

#include "dgpose/data/image_io.hpp"
#include "dgpose/data/synthetic.hpp"
#include "dgpose/evaluation.hpp"
#include "dgpose/inference.hpp"
#include "dgpose/interface/run_record.hpp"
#include "dgpose/interface/service.hpp"
#include "dgpose/training.hpp"

namespace dgpose::interface {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;
using TensorF = Tensor<float>;

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

json read_json_file(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw UsageError("cannot open " + p.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw UsageError(p.string() + ": " + e.what());
    }
}

// Options shared by every subcommand.
struct Common {
    std::uint64_t seed = 0;
    std::string config_path;
    std::string run_dir;
    bool verbose = false;
    json config = json::object();
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--seed", c.seed, "random seed");
    sub->add_option("--config", c.config_path, "JSON config file");
    sub->add_option("--run-dir", c.run_dir, "run directory (default runs/<run id>)");
    sub->add_flag("-v,--verbose", c.verbose, "progress on stderr");
}

// Non-training commands read their config as {flag name: value}; a value
// applies where the flag itself was not given.
template <class T>
void from_config(CLI::App* sub, const Common& c, const std::string& name, T& value) {
    if (sub->count("--" + name) == 0 && c.config.contains(name)) value = c.config.at(name).get<T>();
}

void check_config_keys(CLI::App* sub, const Common& c) {
    for (const auto& [k, v] : c.config.items()) {
        if (!sub->get_option_no_throw("--" + k)) throw UsageError("config key '" + k + "' is not an option of " + sub->get_name());
    }
}

void load_config(Common& c) {
    if (!c.config_path.empty()) c.config = read_json_file(c.config_path);
    if (!c.config.is_object()) throw UsageError("config must be a JSON object");
}

struct Run {
    RunRecord record;
    fs::path dir;
};

Run start_run(const std::string& command, const Common& c, const std::vector<std::string>& argv,
              const std::string& dir_override = {}) {
    Run r;
    r.record.id = new_run_id(command);
    r.record.command = command;
    r.record.argv = argv;
    r.record.seed = c.seed;
    r.record.config = c.config;
    r.record.started_at = utc_now();
    r.dir = !dir_override.empty() ? fs::path(dir_override) : (c.run_dir.empty() ? fs::path("runs") / r.record.id : fs::path(c.run_dir));
    fs::create_directories(r.dir);
    return r;
}

void finish_run(Run& r) {
    r.record.finished_at = utc_now();
    r.record.save(r.dir);
    std::cout << r.dir.string() << "\n";
}

// Training config: the file holds TrainConfig fields; flags override them.
struct TrainFlags {
    std::string data;
    int epochs = 0;
    int batch_size = 0;
    double lr = 0;
    double width = 0;
    double fraction = -1;
};

void add_train_flags(CLI::App* sub, TrainFlags& t) {
    sub->add_option("--data", t.data, "dataset manifest")->required();
    sub->add_option("--epochs", t.epochs, "epochs");
    sub->add_option("--batch-size", t.batch_size, "batch size");
    sub->add_option("--lr", t.lr, "learning rate");
    sub->add_option("--width", t.width, "width multiplier for every network");
}

train::TrainConfig train_config(CLI::App* sub, const Common& c, const TrainFlags& t) {
    json j = c.config;
    if (sub->count("--seed")) j["seed"] = c.seed;
    if (sub->count("--epochs")) j["epochs"] = t.epochs;
    if (sub->count("--batch-size")) j["batch_size"] = t.batch_size;
    if (sub->count("--lr")) j["learning_rate"] = t.lr;
    if (sub->get_option_no_throw("--fraction") && sub->count("--fraction")) j["supervision_fraction"] = t.fraction;
    if (sub->count("--width")) {
        j["widths"] = {{"encoder", t.width}, {"prior", t.width}, {"decoder", t.width}, {"discriminator", t.width}, {"mapper", t.width}};
    }
    try {
        return train::TrainConfig::from_json(j);
    } catch (const train::ConfigError& e) {
        throw UsageError(e.what());
    }
}

data::Dataset load_split(const std::string& manifest, const std::string& split,
                         const std::optional<data::NormalizationStats>& stats = std::nullopt) {
    const auto m = data::Manifest::read(manifest);
    auto d = data::load_dataset(m, split, stats);
    if (d.size() == 0) throw UsageError("split '" + split + "' of " + manifest + " is empty");
    return d;
}

TensorF load_crop(const std::string& path, const Model& m) {
    TensorF img = data::read_png(path);
    if (img.shape().h != nn::kImageSize || img.shape().w != nn::kImageSize) {
        throw UsageError(path + ": expected a 64x64 crop");
    }
    data::normalize_images(img, m.stats);
    return img;
}

pose::PoseVector load_pose(const std::string& path) {
    json j = read_json_file(path);
    if (j.is_object() && j.contains("pose")) j = j["pose"];
    try {
        return service::pose_from_json(j);
    } catch (const std::invalid_argument& e) {
        throw UsageError(path + ": " + e.what());
    }
}

void write_images(const TensorF& model_space, const Model& m, const fs::path& dir, const std::string& stem) {
    const TensorF unit = data::to_unit_range(model_space, m.stats);
    for (int r = 0; r < unit.shape().n; ++r) {
        char name[64];
        std::snprintf(name, sizeof name, "%s_%03d.png", stem.c_str(), r);
        data::write_png(dir / name, data::take_sample(unit, r));
    }
}

json history_json(const std::vector<train::EpochRecord>& h) {
    json a = json::array();
    for (const auto& r : h) a.push_back(r.losses_json());
    return a;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"dgpose: pose-conditioned generative models of people"};
    app.require_subcommand(1);
    app.name(args.empty() ? "dgpose" : args.front());

    // gen-data
    Common gd_c;
    int gd_n = 1200, gd_test = 200;
    std::string gd_out;
    auto* gen = app.add_subcommand("gen-data", "write a synthetic stick-figure dataset");
    add_common(gen, gd_c);
    gen->add_option("--n", gd_n, "total number of figures");
    gen->add_option("--test", gd_test, "figures placed in the test split (taken from the end)");
    gen->add_option("--out", gd_out, "dataset directory")->required();

    // training
    Common tm_c, tc_c, ts_c;
    TrainFlags tm_f, tc_f, ts_f;
    std::string ts_mapper;
    auto* tmap = app.add_subcommand("train-mapper", "train the pose-vector to heatmap Mapper");
    add_common(tmap, tm_c);
    add_train_flags(tmap, tm_f);
    auto* tcond = app.add_subcommand("train-cond", "train the conditional model");
    add_common(tcond, tc_c);
    add_train_flags(tcond, tc_f);
    auto* tsemi = app.add_subcommand("train-semi", "train the semi-supervised model");
    add_common(tsemi, ts_c);
    add_train_flags(tsemi, ts_f);
    tsemi->add_option("--fraction", ts_f.fraction, "share of training labels used")->check(CLI::Range(0.0, 1.0));
    tsemi->add_option("--mapper", ts_mapper, "mapper checkpoint")->required();

    // eval
    Common ev_c;
    std::string ev_ckpt, ev_data, ev_split = "test";
    bool ev_sample = false;
    int ev_batch = 64;
    auto* ev = app.add_subcommand("eval", "PSNR, SSIM and PCK on a dataset split");
    add_common(ev, ev_c);
    ev->add_option("--checkpoint", ev_ckpt, "model checkpoint")->required();
    ev->add_option("--data", ev_data, "dataset manifest")->required();
    ev->add_option("--split", ev_split, "split name");
    ev->add_option("--batch-size", ev_batch, "evaluation batch size");
    ev->add_flag("--sample", ev_sample, "sample latents instead of using posterior means");

    // sweep
    Common sw_c;
    TrainFlags sw_f;
    std::string sw_mapper;
    std::vector<double> sw_fractions = {1.0, 0.75, 0.5, 0.25};
    auto* sw = app.add_subcommand("sweep", "train and evaluate the semi model at several supervision fractions");
    add_common(sw, sw_c);
    add_train_flags(sw, sw_f);
    sw->add_option("--mapper", sw_mapper, "mapper checkpoint")->required();
    sw->add_option("--fractions", sw_fractions, "supervision fractions")->delimiter(',');

    // inference
    Common rc_c, sa_c, tr_c, es_c, sv_c;
    std::string rc_ckpt, rc_data, rc_split = "test";
    int rc_count = 16;
    bool rc_sample = false;
    auto* rec = app.add_subcommand("reconstruct", "reconstruct images from a dataset split");
    add_common(rec, rc_c);
    rec->add_option("--checkpoint", rc_ckpt, "model checkpoint")->required();
    rec->add_option("--data", rc_data, "dataset manifest")->required();
    rec->add_option("--split", rc_split, "split name");
    rec->add_option("--count", rc_count, "number of images");
    rec->add_flag("--sample", rc_sample, "sample latents instead of using posterior means");

    std::string sa_ckpt, sa_pose;
    int sa_n = 8;
    auto* sam = app.add_subcommand("sample", "generate images for a pose");
    add_common(sam, sa_c);
    sam->add_option("--checkpoint", sa_ckpt, "model checkpoint")->required();
    sam->add_option("--pose", sa_pose, "pose JSON (14 [x, y] pairs); optional for semi models");
    sam->add_option("--n", sa_n, "images per pose")->check(CLI::Range(1, 256));

    std::string tr_ckpt, tr_pose_src, tr_app_src, tr_src_pose, tr_tgt_pose;
    auto* tra = app.add_subcommand("transfer", "pose transfer");
    add_common(tra, tr_c);
    tra->add_option("--checkpoint", tr_ckpt, "model checkpoint")->required();
    tra->add_option("--appearance-source", tr_app_src, "image giving the appearance")->required();
    tra->add_option("--pose-source", tr_pose_src, "image giving the pose (semi)");
    tra->add_option("--source-pose", tr_src_pose, "pose JSON of the appearance image (conditional)");
    tra->add_option("--target-pose", tr_tgt_pose, "target pose JSON (conditional)");

    std::string es_ckpt, es_image, es_data, es_split = "test";
    auto* est = app.add_subcommand("estimate", "estimate poses with the semi model");
    add_common(est, es_c);
    est->add_option("--checkpoint", es_ckpt, "semi checkpoint")->required();
    est->add_option("--image", es_image, "one 64x64 crop");
    est->add_option("--data", es_data, "dataset manifest");
    est->add_option("--split", es_split, "split name");

    std::string sv_ckpt, sv_host = "127.0.0.1";
    int sv_port = 8080;
    auto* srv = app.add_subcommand("serve", "HTTP service over one checkpoint");
    add_common(srv, sv_c);
    srv->add_option("--checkpoint", sv_ckpt, std::string("checkpoint (default: $") + service::kCheckpointEnv + ")");
    srv->add_option("--host", sv_host, "bind address");
    srv->add_option("--port", sv_port, "port");

    std::vector<std::string> rev(args.rbegin(), args.rend());
    if (!rev.empty()) rev.pop_back();  // program name
    try {
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, std::cout, std::cerr) == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) {
            load_config(gd_c);
            check_config_keys(gen, gd_c);
            from_config(gen, gd_c, "n", gd_n);
            from_config(gen, gd_c, "test", gd_test);
            from_config(gen, gd_c, "seed", gd_c.seed);
            if (gd_n < 1 || gd_test < 0 || gd_test > gd_n) throw UsageError("need n >= 1 and 0 <= test <= n");
            data::SyntheticFigureSpec spec;
            if (gen->count("--seed") || gd_c.config.contains("seed")) spec.seed = gd_c.seed;
            gd_c.seed = spec.seed;
            auto run = start_run("gen-data", gd_c, args, gd_out);
            data::generate_synthetic_dataset(spec, gd_n, gd_test, gd_out);
            run.record.config = {{"n", gd_n}, {"test", gd_test}, {"seed", spec.seed}};
            run.record.metrics = {{"manifest", (fs::path(gd_out) / "manifest.jsonl").string()}};
            finish_run(run);
            return 0;
        }

        for (auto [sub, c, f] : {std::tuple{tmap, &tm_c, &tm_f}, std::tuple{tcond, &tc_c, &tc_f}, std::tuple{tsemi, &ts_c, &ts_f}}) {
            if (!sub->parsed()) continue;
            load_config(*c);
            auto cfg = train_config(sub, *c, *f);
            c->seed = cfg.seed;
            auto run = start_run(sub->get_name(), *c, args);
            run.record.config = cfg.to_json();
            auto train_set = load_split(f->data, "train");
            train::RunOptions opt{run.dir, c->verbose, {}};
            train::TrainResult res = [&] {
                if (sub == tmap) return train::train_mapper(train_set, cfg, opt);
                if (sub == tcond) return train::train_conditional(train_set, cfg, opt);
                const Model mapper = load_checkpoint(ts_mapper);
                const auto mask = data::make_supervision_mask(train_set.size(), cfg.supervision_fraction, cfg.mask_seed);
                return train::train_semi(train_set, mask, mapper, cfg, opt);
            }();
            run.record.checkpoints = {(run.dir / "checkpoints" / "final.ckpt").string()};
            run.record.metrics = {{"final_epoch", res.history.empty() ? json() : res.history.back().losses_json()},
                                  {"history", history_json(res.history)}};
            finish_run(run);
            return 0;
        }

        if (ev->parsed()) {
            load_config(ev_c);
            check_config_keys(ev, ev_c);
            from_config(ev, ev_c, "split", ev_split);
            from_config(ev, ev_c, "batch-size", ev_batch);
            from_config(ev, ev_c, "sample", ev_sample);
            from_config(ev, ev_c, "seed", ev_c.seed);
            const Model m = load_checkpoint(ev_ckpt);
            auto run = start_run("eval", ev_c, args);
            const auto test = load_split(ev_data, ev_split, m.stats);
            eval::EvalOptions opt;
            opt.batch_size = ev_batch;
            opt.mode = {ev_sample, ev_c.seed};
            const auto est = eval::ColorMarkerEstimator::for_stats(m.stats);
            const json metrics = eval::evaluate_model(m, test, est, opt);
            std::ofstream(run.dir / "metrics.json") << metrics.dump(2) << "\n";
            run.record.checkpoints = {ev_ckpt};
            run.record.metrics = {{"psnr", metrics["psnr"]}, {"ssim", metrics["ssim"]}, {"pck", metrics["pck"]}};
            std::cerr << metrics.dump(2) << "\n";
            finish_run(run);
            return 0;
        }

        if (sw->parsed()) {
            load_config(sw_c);
            auto cfg = train_config(sw, sw_c, sw_f);
            sw_c.seed = cfg.seed;
            auto run = start_run("sweep", sw_c, args);
            run.record.config = cfg.to_json();
            run.record.config["fractions"] = sw_fractions;
            auto train_set = load_split(sw_f.data, "train");
            auto test = load_split(sw_f.data, "test", train_set.stats);
            const Model mapper = load_checkpoint(sw_mapper);
            eval::SweepOptions opt;
            opt.fractions = sw_fractions;
            opt.run = {run.dir, sw_c.verbose, {}};
            const auto est = eval::ColorMarkerEstimator::for_stats(train_set.stats);
            const auto entries = eval::supervision_sweep(train_set, test, mapper, cfg, est, opt);
            json summary = json::array();
            for (const auto& e : entries) {
                summary.push_back({{"fraction", e.fraction}, {"pck", e.metrics["pck"]}, {"psnr", e.metrics["psnr"]}, {"ssim", e.metrics["ssim"]}});
                run.record.checkpoints.push_back((run.dir / ("fraction_" + std::to_string(std::lround(e.fraction * 100))) / "checkpoints" / "final.ckpt").string());
            }
            run.record.metrics = {{"sweep", summary}, {"report", (run.dir / "report").string()}};
            finish_run(run);
            return 0;
        }

        if (rec->parsed()) {
            load_config(rc_c);
            check_config_keys(rec, rc_c);
            from_config(rec, rc_c, "split", rc_split);
            from_config(rec, rc_c, "count", rc_count);
            from_config(rec, rc_c, "sample", rc_sample);
            from_config(rec, rc_c, "seed", rc_c.seed);
            const Model m = load_checkpoint(rc_ckpt);
            auto run = start_run("reconstruct", rc_c, args);
            auto set = load_split(rc_data, rc_split, m.stats);
            const int n = std::clamp(rc_count, 1, set.size());
            std::vector<int> idx(n);
            for (int i = 0; i < n; ++i) idx[i] = i;
            const auto b = data::make_batch(set, idx, nullptr, m.kind == ModelKind::Conditional, m.table);
            const TensorF x_hat = infer::reconstruct(m, b.images, m.kind == ModelKind::Conditional ? &b.heatmaps : nullptr,
                                                     {rc_sample, rc_c.seed});
            write_images(b.images, m, run.dir / "reconstructions", "original");
            write_images(x_hat, m, run.dir / "reconstructions", "reconstruction");
            run.record.checkpoints = {rc_ckpt};
            finish_run(run);
            return 0;
        }

        if (sam->parsed()) {
            load_config(sa_c);
            check_config_keys(sam, sa_c);
            from_config(sam, sa_c, "pose", sa_pose);
            from_config(sam, sa_c, "n", sa_n);
            from_config(sam, sa_c, "seed", sa_c.seed);
            const Model m = load_checkpoint(sa_ckpt);
            auto run = start_run("sample", sa_c, args);
            std::vector<pose::PoseVector> poses;
            if (!sa_pose.empty()) poses.push_back(load_pose(sa_pose));
            if (m.kind == ModelKind::Conditional && poses.empty()) throw UsageError("the conditional model needs --pose");
            write_images(infer::sample(m, poses, sa_n, sa_c.seed), m, run.dir / "samples", "sample");
            run.record.checkpoints = {sa_ckpt};
            finish_run(run);
            return 0;
        }

        if (tra->parsed()) {
            load_config(tr_c);
            check_config_keys(tra, tr_c);
            const Model m = load_checkpoint(tr_ckpt);
            auto run = start_run("transfer", tr_c, args);
            const TensorF xa = load_crop(tr_app_src, m);
            TensorF out;
            if (m.kind == ModelKind::Semi) {
                if (tr_pose_src.empty()) throw UsageError("the semi model needs --pose-source");
                out = infer::indirect_pose_transfer(m, load_crop(tr_pose_src, m), xa);
            } else {
                if (tr_src_pose.empty() || tr_tgt_pose.empty()) throw UsageError("the conditional model needs --source-pose and --target-pose");
                out = infer::direct_pose_transfer(m, xa, infer::render_poses({load_pose(tr_src_pose)}, m.table),
                                                  infer::render_poses({load_pose(tr_tgt_pose)}, m.table));
            }
            write_images(out, m, run.dir, "transfer");
            run.record.checkpoints = {tr_ckpt};
            finish_run(run);
            return 0;
        }

        if (est->parsed()) {
            load_config(es_c);
            check_config_keys(est, es_c);
            const Model m = load_checkpoint(es_ckpt);
            auto run = start_run("estimate", es_c, args);
            json out = json::array();
            if (!es_image.empty()) {
                out.push_back({{"image", es_image}, {"pose", service::pose_to_json(infer::estimate_pose(m, load_crop(es_image, m)).front())}});
            } else if (!es_data.empty()) {
                const auto set = load_split(es_data, es_split, m.stats);
                const auto poses = eval::estimate_dataset(m, set);
                for (int i = 0; i < set.size(); ++i) out.push_back({{"id", set.ids[i]}, {"pose", service::pose_to_json(poses[i])}});
            } else {
                throw UsageError("give --image or --data");
            }
            std::ofstream(run.dir / "poses.json") << out.dump(1) << "\n";
            run.record.checkpoints = {es_ckpt};
            finish_run(run);
            return 0;
        }

        if (srv->parsed()) {
            load_config(sv_c);
            check_config_keys(srv, sv_c);
            from_config(srv, sv_c, "host", sv_host);
            from_config(srv, sv_c, "port", sv_port);
            const service::Service s = sv_ckpt.empty() ? service::Service::from_environment()
                                                       : service::Service::from_checkpoint(sv_ckpt);
            std::cerr << "serving on " << sv_host << ":" << sv_port << (s.loaded() ? "" : " (no checkpoint loaded)") << "\n";
            s.listen(sv_host, sv_port);
            return 0;
        }
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

}  // namespace dgpose::interface
