// Acceptance run: one PASS/FAIL line per criterion, tolerances fixed below.
//
//   dgpose_acceptance --work-dir DIR [--only name,name,...]
//
// The toy pipeline and the disentanglement check share one trained sweep;
// asking for either runs the pipeline.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "dgpose/data/image_io.hpp"
#include "dgpose/data/preprocess.hpp"
#include "dgpose/data/synthetic.hpp"
#include "dgpose/evaluation.hpp"
#include "dgpose/inference.hpp"
#include "dgpose/training.hpp"
#include "heatmap_oracle.hpp"
#include "layer_tables.hpp"
#include "objective_checks.hpp"

using namespace dgpose;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// Heatmap rendering
constexpr double kHeatmapTol = 1e-6;
constexpr double kHeatmapSeconds = 5.0;
// KL closed form against sampling
constexpr int kKlPairs = 20;
constexpr int kKlSamples = 1000000;
constexpr double kKlRelTol = 0.01;
// Gradients
constexpr double kGradRelTol = 1e-4;
// Mapper overfit
constexpr int kOverfitPoses = 100;
constexpr double kOverfitMse = 1e-3;
constexpr double kOverfitSeconds = 600.0;
// Toy pipeline
constexpr int kToyTrain = 1000;
constexpr int kToyTest = 200;
constexpr int kL1Epoch = 10;
constexpr double kL1Ratio = 0.5;
constexpr double kPckFull = 0.9;
constexpr double kPckQuarter = 0.8;
constexpr double kMonotoneSlack = 0.02;
constexpr double kToySeconds = 3600.0;
// Regression baselines from the first full run; the criteria above still
// apply, these catch a quality drop that stays above them.
constexpr double kBaselinePckFull = 0.9411;
constexpr double kBaselinePckQuarter = 0.9039;
constexpr double kBaselineSlack = 0.02;
// Disentanglement
constexpr double kTransferPck = 0.9;
// Half the mean palette distance between the paired test sources (0.485),
// so an output must sit clearly nearer the appearance source than chance.
constexpr double kPaletteBudget = 0.24;

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void note(const std::string& s) { std::cout << "  " << s << std::endl; }

train::TrainConfig load_config(const std::string& name) {
    const fs::path p = fs::path(DGPOSE_SOURCE_DIR) / "configs" / name;
    std::ifstream in(p);
    if (!in) throw std::runtime_error("cannot open " + p.string());
    return train::TrainConfig::from_json(json::parse(in));
}

std::vector<pose::PoseVector> labels(const data::Dataset& d) {
    std::vector<pose::PoseVector> out;
    for (const auto& p : d.poses) out.push_back(*p);
    return out;
}

Outcome heatmap_oracle() {
    std::mt19937_64 rng(2024);
    std::vector<pose::PartGeometry> geoms;
    for (int i = 0; i < 100; ++i) geoms.push_back(testing::random_geometry(rng, 64));
    const auto t0 = std::chrono::steady_clock::now();
    const Tensor<float> maps = pose::render_heatmaps(geoms, 64, 64);
    const double secs = seconds_since(t0);
    const double worst = testing::oracle_max_diff(geoms, maps);
    return {worst < kHeatmapTol && secs < kHeatmapSeconds,
            fmt("100 geometries, max |diff| %.2e (< %.0e), render %.3f s (< %.0f s)", worst, kHeatmapTol, secs,
                kHeatmapSeconds)};
}

Outcome kl_monte_carlo() {
    std::mt19937_64 rng(31);
    double worst = 0;
    for (int k = 0; k < kKlPairs; ++k) {
        const auto q = testing::random_gaussian(1, 4, rng), p = testing::random_gaussian(1, 4, rng);
        const double closed = obj::kl_diag_gaussians(q, p);
        const double mc = testing::kl_monte_carlo(q, p, kKlSamples, 1000 + k);
        worst = std::max(worst, std::abs(mc - closed) / closed);
    }
    return {worst < kKlRelTol, fmt("%d pairs, %d samples, max rel err %.4f (< %.2f)", kKlPairs, kKlSamples, worst, kKlRelTol)};
}

Outcome gradient_checks() {
    const auto checks = testing::check_all_loss_gradients(5);
    double worst = 0;
    std::string worst_name;
    for (const auto& c : checks) {
        if (c.max_rel > worst) worst = c.max_rel, worst_name = c.name;
        if (c.max_rel >= kGradRelTol) note("gradient " + c.name + fmt(" rel err %.2e", c.max_rel));
    }
    return {worst < kGradRelTol,
            fmt("%zu terms, max rel err %.2e (%s) (< %.0e)", checks.size(), worst, worst_name.c_str(), kGradRelTol)};
}

Outcome architecture() {
    int rows = 0, mismatches = 0;
    for (const auto& [spec, table] : testing::published_tables()) {
        const auto got = testing::rendered(spec);
        if (got.size() != table->size()) {
            note(spec.name + fmt(": %zu rows, expected %zu", got.size(), table->size()));
            ++mismatches;
            continue;
        }
        for (std::size_t i = 0; i < got.size(); ++i) {
            ++rows;
            if (got[i] != (*table)[i]) {
                note(spec.name + " row " + (*table)[i].first + ": '" + got[i].second + "'");
                ++mismatches;
            }
        }
    }
    bool heads = true;
    for (const auto& spec : {nn::build_conditional_encoder(), nn::build_prior(), nn::build_semi_encoder()}) {
        for (const auto& h : spec.heads) {
            const int want = h.name.find("_y") != std::string::npos ? nn::kPoseDim : nn::kLatentDim;
            heads = heads && h.units == want && (want == 100 || want == 48);
        }
    }
    // parameter-count regression at the toy width and the full-size discriminator
    const double w = 1.0 / 16;
    const std::pair<nn::NetworkSpec, std::size_t> counts[] = {
        {nn::build_conditional_encoder(w), 110856}, {nn::build_prior(w), 169012}, {nn::build_conditional_decoder(w), 106531},
        {nn::build_discriminator(w), 11573},        {nn::build_semi_encoder(w), 109320}, {nn::build_mapper(w), 37008},
        {nn::build_semi_decoder(w), 131107},        {nn::build_discriminator(), 2765633}};
    int count_errors = 0;
    for (const auto& [spec, n] : counts) {
        const std::size_t got = nn::Network<float>(spec).parameter_count();
        if (got != n || got != testing::count_parameters(spec)) {
            note(spec.name + fmt(": %zu parameters, expected %zu", got, n));
            ++count_errors;
        }
    }
    return {mismatches == 0 && heads && count_errors == 0,
            fmt("%d table rows, %d mismatches; heads 100/48 %s; parameter counts %d/%zu", rows, mismatches,
                heads ? "ok" : "wrong", static_cast<int>(std::size(counts)) - count_errors, std::size(counts))};
}

Outcome mapper_overfit(const fs::path& work) {
    const auto dir = work / "overfit_data";
    fs::remove_all(dir);
    data::SyntheticFigureSpec spec;
    spec.seed = 101;
    const auto manifest = data::generate_synthetic_dataset(spec, kOverfitPoses, 0, dir);
    const auto set = data::load_dataset(manifest, "train");
    const auto cfg = load_config("mapper_overfit.json");
    const int steps = cfg.epochs * static_cast<int>((set.size() + cfg.batch_size - 1) / cfg.batch_size);
    const auto t0 = std::chrono::steady_clock::now();
    const auto res = train::train_mapper(set, cfg, {work / "overfit_run", false, {}});
    const double secs = seconds_since(t0);
    // judged on the trained mapper in inference mode over all 100 poses
    const Model& m = res.model;
    double se = 0;
    std::size_t count = 0;
    for (int start = 0; start < set.size(); start += 25) {
        std::vector<int> idx;
        for (int i = start; i < std::min(set.size(), start + 25); ++i) idx.push_back(i);
        const auto b = data::make_batch(set, idx, nullptr, true, m.table);
        const auto pred = infer::map_pose(m, b.pose_vectors);
        for (std::size_t i = 0; i < pred.size(); ++i) se += (double(pred[i]) - b.heatmaps[i]) * (double(pred[i]) - b.heatmaps[i]);
        count += pred.size();
    }
    const double mse = se / count;
    return {mse < kOverfitMse && secs < kOverfitSeconds,
            fmt("%d poses, %d steps, per-pixel MSE %.2e (< %.0e), %.0f s (< %.0f s)", kOverfitPoses, steps, mse, kOverfitMse,
                secs, kOverfitSeconds)};
}

struct ToyRun {
    double seconds = 0;
    std::vector<train::EpochRecord> conditional;
    std::vector<eval::SweepEntry> sweep;
    fs::path sweep_dir;
    data::Dataset train, test;
};

ToyRun toy_pipeline(const fs::path& work) {
    ToyRun r;
    const auto t0 = std::chrono::steady_clock::now();
    const auto data_dir = work / "toy_data";
    fs::remove_all(data_dir);
    const auto manifest = data::generate_synthetic_dataset({}, kToyTrain + kToyTest, kToyTest, data_dir);
    r.train = data::load_dataset(manifest, "train");
    r.test = data::load_dataset(manifest, "test", r.train.stats);
    note(fmt("toy data: %d train, %d test (%.0f s)", r.train.size(), r.test.size(), seconds_since(t0)));

    auto stage = [&](const char* name) {
        return train::RunOptions{work / name, false, [name](const train::EpochRecord& e, Model&) {
                                     note(fmt("%s epoch %d: l1 %.4f reg %.4f map %.5f (%.0f s)", name, e.epoch, e.l1,
                                              e.regression, e.mapper_mse, e.seconds));
                                 }};
    };
    const auto mapper = train::train_mapper(r.train, load_config("toy_mapper.json"), stage("mapper"));
    r.conditional = train::train_conditional(r.train, load_config("toy_conditional.json"), stage("conditional")).history;

    eval::SweepOptions opt;
    r.sweep_dir = work / "sweep";
    opt.run = stage("sweep");
    opt.run.run_dir = r.sweep_dir;
    const auto est = eval::ColorMarkerEstimator::for_stats(r.train.stats);
    r.sweep = eval::supervision_sweep(r.train, r.test, mapper.model, load_config("toy_semi.json"), est, opt);
    r.seconds = seconds_since(t0);
    return r;
}

Outcome toy_end_to_end(const ToyRun& r) {
    bool ok = true;
    std::string detail;
    if (static_cast<int>(r.conditional.size()) > kL1Epoch) {
        const double ratio = r.conditional[kL1Epoch].l1 / r.conditional[0].l1;
        ok = ok && ratio <= kL1Ratio;
        detail += fmt("conditional L1 %.4f -> %.4f (ratio %.3f <= %.2f)", r.conditional[0].l1, r.conditional[kL1Epoch].l1,
                      ratio, kL1Ratio);
    } else {
        ok = false;
        detail += fmt("conditional ran %zu epochs, need %d", r.conditional.size(), kL1Epoch + 1);
    }
    std::map<double, double> pck;
    for (const auto& e : r.sweep) pck[e.fraction] = e.metrics["pck"]["pose_estimation"].get<double>();
    const double full = pck.count(1.0) ? pck[1.0] : 0.0, quarter = pck.count(0.25) ? pck[0.25] : 0.0;
    ok = ok && full >= kPckFull && quarter >= kPckQuarter;
    ok = ok && full >= kBaselinePckFull - kBaselineSlack && quarter >= kBaselinePckQuarter - kBaselineSlack;
    detail += fmt("; semi PCK@0.5 %.4f at 1.0 (>= %.2f), %.4f at 0.25 (>= %.2f)", full, kPckFull, quarter, kPckQuarter);
    // non-increasing as the fraction drops, up to the slack
    bool monotone = true;
    double prev = 2.0;
    std::string series;
    for (auto it = pck.rbegin(); it != pck.rend(); ++it) {
        monotone = monotone && it->second <= prev + kMonotoneSlack;
        prev = it->second;
        series += fmt("%s%.2f:%.4f", series.empty() ? "" : " ", it->first, it->second);
    }
    ok = ok && monotone && pck.size() == 4;
    detail += "; sweep [" + series + "] " + (monotone ? "monotone" : "not monotone") + fmt(" within %.2f", kMonotoneSlack);
    ok = ok && r.seconds < kToySeconds;
    detail += fmt("; %.0f s (< %.0f s)", r.seconds, kToySeconds);
    return {ok, detail};
}

Outcome disentanglement(const ToyRun& r) {
    const Model m = load_checkpoint(r.sweep_dir / "fraction_100" / "checkpoints" / "final.ckpt");
    const auto est = eval::ColorMarkerEstimator::for_stats(m.stats);
    const auto& test = r.test;
    const int n = test.size();
    std::vector<pose::PoseVector> pred, gt;
    int missed = 0;
    double dist = 0, leak = 0;
    for (int i = 0; i < n; ++i) {
        const int j = (i + n / 2) % n;  // appearance source
        const auto out = infer::indirect_pose_transfer(m, test.images.slice(i, i + 1), test.images.slice(j, j + 1));
        const auto unit = data::to_unit_range(out, m.stats);
        const auto found = est.estimate(unit);
        const auto& target = *test.poses[i];
        if (found) {
            pred.push_back(*found);
            gt.push_back(target);
        } else {
            ++missed;
        }
        const auto joints_px = pose::pose_to_pixels(target, 64, 64);
        const auto measured = data::measure_palette(data::take_sample(unit, 0), joints_px);
        dist += data::palette_distance(measured, data::Palette::from_json(test.extra[j].at("palette")));
        leak += data::palette_distance(measured, data::Palette::from_json(test.extra[i].at("palette")));
        if (i < 4) {
            data::write_png(r.sweep_dir / fmt("transfer_%02d.png", i), data::take_sample(unit, 0));
        }
    }
    // a missed estimate counts every joint of that image as wrong
    const auto res = eval::pck(pred, gt);
    const double rate = static_cast<double>(res.correct) / (res.counted + missed * pose::kJoints);
    dist /= n;
    leak /= n;
    return {rate >= kTransferPck && dist < kPaletteBudget,
            fmt("%d pairs, oracle PCK@0.5 vs pose source %.4f (>= %.2f, %d unreadable); palette distance to appearance "
                "source %.4f (< %.3f), to pose source %.4f",
                n, rate, kTransferPck, missed, dist, kPaletteBudget, leak)};
}

Outcome metrics_oracles(const fs::path& work) {
    std::vector<std::string> failed;
    auto expect = [&](bool c, const char* what) {
        if (!c) failed.push_back(what);
    };
    const Tensor<float> a(Shape{2, 3, 64, 64}, 0.3f), b(Shape{2, 3, 64, 64}, 0.4f);
    expect(std::abs(eval::psnr(a, b) - 20.0) < 1e-4, "psnr 20 dB");
    expect(eval::psnr(a, a) == eval::kPsnrCap, "psnr cap");
    Tensor<float> noise(Shape{1, 3, 64, 64}), inv(Shape{1, 3, 64, 64});
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (std::size_t i = 0; i < noise.size(); ++i) noise[i] = u(rng), inv[i] = 1.0f - noise[i];
    expect(std::abs(eval::ssim(noise, noise) - 1.0) < 1e-9, "ssim identical");
    expect(eval::ssim(noise, inv) < 0.0, "ssim inverted");
    const double c1 = 1e-4, lum = (2 * 0.3 * 0.4 + c1) / (0.09 + 0.16 + c1);
    expect(std::abs(eval::ssim(a, b) - lum) < 1e-5, "ssim constant images");

    const auto dir = work / "metrics_data";
    fs::remove_all(dir);
    const auto manifest = data::generate_synthetic_dataset({}, 40, 40, dir);
    const auto set = data::load_dataset(manifest, "test");
    const auto gt = labels(set);
    expect(eval::pck(gt, gt).rate == 1.0, "pck identical");
    auto far = gt;
    for (auto& p : far)
        for (auto& j : p.joints) j.x += 10.0;
    expect(eval::pck(far, gt).rate == 0.0, "pck displaced");
    const auto unit = data::to_unit_range(set.images, set.stats);
    const auto proto = eval::pose_protocol(unit, unit, eval::ColorMarkerEstimator{}, set.ids);
    bool ones = proto.excluded == 0;
    for (double v : proto.curve.rates) ones = ones && v == 1.0;
    expect(ones, "perfect reconstructor");
    std::string detail = failed.empty() ? "psnr, ssim, pck examples and perfect-reconstructor curve ok" : "failed:";
    for (const auto& f : failed) detail += " [" + f + "]";
    return {failed.empty(), detail};
}

// Two identical short runs: loss curves, checkpoints and sample PNGs must match.
Outcome determinism(const fs::path& work) {
    const auto dir = work / "det_data";
    fs::remove_all(dir);
    const auto manifest = data::generate_synthetic_dataset({}, 48, 8, dir);
    const auto set = data::load_dataset(manifest, "train");
    train::TrainConfig cfg;
    cfg.batch_size = 8;
    cfg.epochs = 2;
    cfg.learning_rate = 1e-3;
    cfg.seed = 17;
    cfg.widths = {1.0 / 32, 1.0 / 32, 1.0 / 32, 1.0 / 32, 1.0 / 32};
    cfg.weights.recon_weight = 100;

    struct Result {
        json losses = json::array();
        std::vector<std::vector<std::uint8_t>> pngs;
        std::string ckpt;
    };
    auto run = [&](const std::string& tag) {
        Result out;
        const auto mapper = train::train_mapper(set, cfg, {});
        const auto mask = data::make_supervision_mask(set.size(), 0.5, 0);
        const auto semi = train::train_semi(set, mask, mapper.model, cfg, {work / ("det_" + tag), false, {}});
        const auto cond = train::train_conditional(set, cfg, {});
        for (const auto* h : {&mapper.history, &semi.history, &cond.history})
            for (const auto& e : *h) out.losses.push_back(e.losses_json());
        for (const Model* m : {&semi.model, &cond.model}) {
            const auto imgs = data::to_unit_range(infer::sample(*m, {*set.poses[0]}, 3, 5), m->stats);
            for (int r = 0; r < imgs.shape().n; ++r) out.pngs.push_back(data::encode_png(data::take_sample(imgs, r)));
        }
        std::ifstream in(work / ("det_" + tag) / "checkpoints" / "final.ckpt", std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        out.ckpt = ss.str();
        return out;
    };
    const Result x = run("a"), y = run("b");
    const bool losses = x.losses == y.losses, pngs = x.pngs == y.pngs, ckpt = !x.ckpt.empty() && x.ckpt == y.ckpt;
    return {losses && pngs && ckpt, fmt("%zu epoch records %s, %zu PNGs %s, semi checkpoint %s", x.losses.size(),
                                        losses ? "equal" : "differ", x.pngs.size(), pngs ? "bitwise equal" : "differ",
                                        ckpt ? "bitwise equal" : "differs")};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app("dgpose acceptance criteria");
    std::string work_dir = "acceptance";
    std::vector<std::string> only;
    app.add_option("--work-dir", work_dir, "scratch directory for data, runs and reports");
    app.add_option("--only", only, "run just these criteria")->delimiter(',');
    CLI11_PARSE(app, argc, argv);

    const std::vector<std::string> names = {"heatmap-oracle", "kl-monte-carlo",  "gradient-checks", "architecture",
                                            "mapper-overfit", "toy-end-to-end", "disentanglement", "metrics-oracles",
                                            "determinism"};
    const std::set<std::string> chosen = only.empty() ? std::set<std::string>(names.begin(), names.end())
                                                      : std::set<std::string>(only.begin(), only.end());
    for (const auto& n : chosen) {
        if (std::find(names.begin(), names.end(), n) == names.end()) {
            std::cerr << "unknown criterion " << n << "\n";
            return 2;
        }
    }
    const fs::path work(work_dir);
    fs::create_directories(work);

    std::optional<ToyRun> toy;
    std::string toy_error;
    auto get_toy = [&]() -> const ToyRun& {
        if (!toy_error.empty()) throw std::runtime_error(toy_error);
        if (!toy) {
            try {
                toy = toy_pipeline(work);
            } catch (const std::exception& e) {
                toy_error = std::string("toy pipeline: ") + e.what();
                throw std::runtime_error(toy_error);
            }
        }
        return *toy;
    };
    int failed = 0;
    for (const auto& name : names) {
        if (!chosen.count(name)) continue;
        Outcome o;
        try {
            if (name == "heatmap-oracle") o = heatmap_oracle();
            if (name == "kl-monte-carlo") o = kl_monte_carlo();
            if (name == "gradient-checks") o = gradient_checks();
            if (name == "architecture") o = architecture();
            if (name == "mapper-overfit") o = mapper_overfit(work);
            if (name == "toy-end-to-end") o = toy_end_to_end(get_toy());
            if (name == "disentanglement") o = disentanglement(get_toy());
            if (name == "metrics-oracles") o = metrics_oracles(work);
            if (name == "determinism") o = determinism(work);
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        failed += !o.pass;
        std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
    }
    std::cout << (failed ? fmt("%d criteria failed", failed) : std::string("all criteria passed")) << std::endl;
    return failed ? 1 : 0;
}
