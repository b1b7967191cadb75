#include "dgpose/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "dgpose/data/preprocess.hpp"
#include "dgpose/data/synthetic.hpp"
#include "dgpose/nn/architectures.hpp"

namespace dgpose::eval {

namespace {

using TensorF = Tensor<float>;

void same_shape(const TensorF& x, const TensorF& y, const char* what) {
    if (x.shape() != y.shape()) throw ShapeError(std::string(what) + ": shape " + x.shape().str() + " vs " + y.shape().str());
}

double psnr_of_mse(double mse, double peak) {
    if (mse <= 0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

// One image, one channel.
double ssim_plane(const float* a, const float* b, int h, int w) {
    constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    const int k = kSsimWindow;
    const double n = k * k;
    double total = 0;
    int windows = 0;
    for (int y = 0; y + k <= h; ++y) {
        for (int x = 0; x + k <= w; ++x) {
            double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
            for (int dy = 0; dy < k; ++dy) {
                const float* pa = a + (y + dy) * w + x;
                const float* pb = b + (y + dy) * w + x;
                for (int dx = 0; dx < k; ++dx) {
                    const double u = pa[dx], v = pb[dx];
                    sa += u;
                    sb += v;
                    saa += u * u;
                    sbb += v * v;
                    sab += u * v;
                }
            }
            const double ma = sa / n, mb = sb / n;
            const double va = saa / n - ma * ma, vb = sbb / n - mb * mb, cov = sab / n - ma * mb;
            total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            ++windows;
        }
    }
    return windows ? total / windows : 1.0;
}

std::string fraction_label(double f) {
    std::ostringstream s;
    s << std::lround(f * 100) << "%";
    return s.str();
}

}  // namespace

// ---------------------------------------------------------------- image metrics

double psnr(const TensorF& x, const TensorF& y, double peak) {
    same_shape(x, y, "psnr");
    double se = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = static_cast<double>(x[i]) - y[i];
        se += d * d;
    }
    return psnr_of_mse(x.size() ? se / x.size() : 0.0, peak);
}

std::vector<double> psnr_per_image(const TensorF& x, const TensorF& y, double peak) {
    same_shape(x, y, "psnr");
    std::vector<double> out;
    const std::size_t per = x.shape().per_sample();
    for (int r = 0; r < x.shape().n; ++r) {
        double se = 0;
        const float* a = x.sample(r);
        const float* b = y.sample(r);
        for (std::size_t i = 0; i < per; ++i) {
            const double d = static_cast<double>(a[i]) - b[i];
            se += d * d;
        }
        out.push_back(psnr_of_mse(se / per, peak));
    }
    return out;
}

std::vector<double> ssim_per_image(const TensorF& x, const TensorF& y) {
    same_shape(x, y, "ssim");
    const Shape s = x.shape();
    std::vector<double> out;
    for (int r = 0; r < s.n; ++r) {
        double acc = 0;
        for (int c = 0; c < s.c; ++c) {
            acc += ssim_plane(x.sample(r) + c * s.plane(), y.sample(r) + c * s.plane(), s.h, s.w);
        }
        out.push_back(acc / s.c);
    }
    return out;
}

double ssim(const TensorF& x, const TensorF& y) {
    const auto v = ssim_per_image(x, y);
    double acc = 0;
    for (double e : v) acc += e;
    return v.empty() ? 0.0 : acc / v.size();
}

// ---------------------------------------------------------------- PCK

void PCKConfig::validate() const {
    if (!(threshold > 0)) throw std::invalid_argument("PCK threshold must be positive");
    auto ok = [](int j) { return j >= 0 && j < pose::kJoints; };
    if (!ok(torso_a) || !ok(torso_b) || torso_a == torso_b) throw std::invalid_argument("bad torso joint pair");
    for (int j : joints) {
        if (!ok(j)) throw std::invalid_argument("PCK joint index out of range");
    }
}

nlohmann::json PCKConfig::to_json() const {
    return {{"threshold", threshold},
            {"torso", {pose::kJointNames[torso_a], pose::kJointNames[torso_b]}},
            {"joints", joints}};
}

nlohmann::json PCKResult::to_json() const {
    return {{"rate", rate}, {"correct", correct}, {"counted", counted}, {"skipped", skipped}};
}

PCKResult pck(const std::vector<pose::PoseVector>& pred, const std::vector<pose::PoseVector>& gt,
              const PCKConfig& config) {
    config.validate();
    if (pred.size() != gt.size()) throw std::invalid_argument("pck: pred and gt lengths differ");
    std::vector<int> joints = config.joints;
    if (joints.empty()) {
        for (int j = 0; j < pose::kJoints; ++j) joints.push_back(j);
    }
    PCKResult r;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        const auto& g = gt[i].joints;
        const double torso = std::hypot(g[config.torso_a].x - g[config.torso_b].x, g[config.torso_a].y - g[config.torso_b].y);
        if (!(torso > 1e-12)) {
            ++r.skipped;
            continue;
        }
        for (int j : joints) {
            const double d = std::hypot(pred[i].joints[j].x - g[j].x, pred[i].joints[j].y - g[j].y);
            r.correct += d <= config.threshold * torso;
            ++r.counted;
        }
    }
    r.rate = r.counted ? static_cast<double>(r.correct) / r.counted : 0.0;
    return r;
}

std::vector<double> default_thresholds() {
    std::vector<double> t;
    for (int i = 1; i <= 20; ++i) t.push_back(0.05 * i);
    return t;
}

double PCKCurve::at(double threshold) const {
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
        if (std::abs(thresholds[i] - threshold) < 1e-9) return rates[i];
    }
    throw std::out_of_range("threshold not on the curve");
}

nlohmann::json PCKCurve::to_json() const { return {{"thresholds", thresholds}, {"rates", rates}}; }

PCKCurve pck_curve(const std::vector<pose::PoseVector>& pred, const std::vector<pose::PoseVector>& gt,
                   const std::vector<double>& thresholds, PCKConfig config) {
    PCKCurve c;
    for (double t : thresholds) {
        config.threshold = t;
        c.thresholds.push_back(t);
        c.rates.push_back(pck(pred, gt, config).rate);
    }
    return c;
}

// ---------------------------------------------------------------- estimator

ColorMarkerEstimator::ColorMarkerEstimator() : low_{0, 0, 0}, high_{1, 1, 1} {}

ColorMarkerEstimator::ColorMarkerEstimator(std::array<double, 3> low, std::array<double, 3> high)
    : low_(low), high_(high) {}

ColorMarkerEstimator ColorMarkerEstimator::for_stats(const data::NormalizationStats& s) {
    std::array<double, 3> lo{}, hi{};
    for (int c = 0; c < 3; ++c) {
        lo[c] = std::max(0.0, s.mean[c] - s.std[c]);
        hi[c] = std::min(1.0, s.mean[c] + s.std[c]);
    }
    return ColorMarkerEstimator(lo, hi);
}

std::optional<pose::PoseVector> ColorMarkerEstimator::estimate(const TensorF& image) const {
    const Shape s = image.shape();
    if (s.n != 1 || s.c != 3) throw ShapeError("estimator expects one RGB image, got " + s.str());
    const int h = s.h, w = s.w;
    const std::size_t plane = s.plane();
    std::vector<double> clipped(3 * plane);
    for (int c = 0; c < 3; ++c) {
        for (std::size_t p = 0; p < plane; ++p) clipped[c * plane + p] = std::clamp<double>(image[c * plane + p], low_[c], high_[c]);
    }
    const double inv = 1.0 / (2 * sigma * sigma);
    std::vector<double> sim(plane), box(plane);
    std::array<pose::Vec2, pose::kJoints> px{};
    for (int j = 0; j < pose::kJoints; ++j) {
        std::array<double, 3> t{};
        for (int c = 0; c < 3; ++c) t[c] = std::clamp(data::kJointColors[j][c], low_[c], high_[c]);
        for (std::size_t p = 0; p < plane; ++p) {
            double d2 = 0;
            for (int c = 0; c < 3; ++c) {
                const double d = clipped[c * plane + p] - t[c];
                d2 += d * d;
            }
            sim[p] = std::exp(-d2 * inv);
        }
        int best = -1;
        double peak = -1;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                double acc = 0;
                for (int dy = -box_radius; dy <= box_radius; ++dy) {
                    const int yy = y + dy;
                    if (yy < 0 || yy >= h) continue;
                    for (int dx = -box_radius; dx <= box_radius; ++dx) {
                        const int xx = x + dx;
                        if (xx >= 0 && xx < w) acc += sim[yy * w + xx];
                    }
                }
                const double side = 2 * box_radius + 1;
                acc /= side * side;
                if (acc > peak) {
                    peak = acc;
                    best = y * w + x;
                }
            }
        }
        if (peak < min_peak) return std::nullopt;
        const int by = best / w, bx = best % w;
        double top = 0;
        for (int dy = -centroid_radius; dy <= centroid_radius; ++dy) {
            for (int dx = -centroid_radius; dx <= centroid_radius; ++dx) {
                const int yy = by + dy, xx = bx + dx;
                if (yy >= 0 && yy < h && xx >= 0 && xx < w) top = std::max(top, sim[yy * w + xx]);
            }
        }
        double sw = 0, sx = 0, sy = 0;
        for (int dy = -centroid_radius; dy <= centroid_radius; ++dy) {
            for (int dx = -centroid_radius; dx <= centroid_radius; ++dx) {
                const int yy = by + dy, xx = bx + dx;
                if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                const double wt = std::max(0.0, sim[yy * w + xx] - 0.5 * top);
                sw += wt;
                sx += wt * xx;
                sy += wt * yy;
            }
        }
        px[j] = sw > 0 ? pose::Vec2{sx / sw, sy / sw} : pose::Vec2{double(bx), double(by)};
    }
    return pose::pixels_to_pose(px, h, w);
}

// ---------------------------------------------------------------- protocol

nlohmann::json ProtocolResult::to_json() const {
    return {{"curve", curve.to_json()},
            {"pck@0.5", curve.thresholds.empty() ? 0.0 : curve.at(0.5)},
            {"evaluated", evaluated},
            {"excluded", excluded},
            {"excluded_ids", excluded_ids}};
}

ProtocolResult pose_protocol(const TensorF& originals, const TensorF& recon, const ReferenceEstimator& estimator,
                             const std::vector<std::string>& ids, const PCKConfig& config) {
    same_shape(originals, recon, "pose_protocol");
    std::vector<pose::PoseVector> gt, pred;
    ProtocolResult r;
    for (int i = 0; i < originals.shape().n; ++i) {
        const auto a = estimator.estimate(originals.slice(i, i + 1));
        const auto b = estimator.estimate(recon.slice(i, i + 1));
        if (!a || !b) {
            ++r.excluded;
            r.excluded_ids.push_back(i < static_cast<int>(ids.size()) ? ids[i] : std::to_string(i));
            continue;
        }
        gt.push_back(*a);
        pred.push_back(*b);
    }
    r.evaluated = static_cast<int>(gt.size());
    r.curve = pck_curve(pred, gt, default_thresholds(), config);
    return r;
}

// ---------------------------------------------------------------- model evaluation

TensorF reconstruct_dataset(const Model& model, const data::Dataset& set, const EvalOptions& options) {
    TensorF out(set.images.shape());
    const int n = set.size();
    for (int b0 = 0; b0 < n; b0 += options.batch_size) {
        const int b1 = std::min(n, b0 + options.batch_size);
        const TensorF x = set.images.slice(b0, b1);
        TensorF x_hat;
        if (model.kind == ModelKind::Conditional) {
            std::vector<pose::PoseVector> poses;
            for (int i = b0; i < b1; ++i) {
                if (!set.poses[i]) throw infer::InferenceError("conditional reconstruction needs a pose for " + set.ids[i]);
                poses.push_back(*set.poses[i]);
            }
            const TensorF y_h = infer::render_poses(poses, model.table);
            x_hat = infer::reconstruct(model, x, &y_h, options.mode);
        } else {
            x_hat = infer::reconstruct(model, x, nullptr, options.mode);
        }
        std::copy_n(x_hat.data(), x_hat.size(), out.sample(b0));
    }
    return data::to_unit_range(out, model.stats);
}

std::vector<pose::PoseVector> estimate_dataset(const Model& model, const data::Dataset& set, int batch_size) {
    std::vector<pose::PoseVector> out;
    for (int b0 = 0; b0 < set.size(); b0 += batch_size) {
        const int b1 = std::min(set.size(), b0 + batch_size);
        const auto p = infer::estimate_pose(model, set.images.slice(b0, b1));
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

nlohmann::json evaluate_model(const Model& model, const data::Dataset& test, const ReferenceEstimator& estimator,
                              const EvalOptions& options) {
    if (model.kind == ModelKind::Mapper) throw infer::InferenceError("evaluation needs a conditional or semi model");
    if (test.size() == 0) throw infer::InferenceError("evaluation set is empty");
    const TensorF recon = reconstruct_dataset(model, test, options);
    const TensorF orig = data::to_unit_range(test.images, model.stats);
    const auto protocol = pose_protocol(orig, recon, estimator, test.ids, options.pck);

    nlohmann::json j = {{"schema", "dgpose-eval"},
                        {"version", 1},
                        {"model", kind_name(model.kind)},
                        {"n", test.size()},
                        {"mode", options.mode.sample ? "sample" : "mean"},
                        {"psnr", psnr(orig, recon)},
                        {"ssim", ssim(orig, recon)},
                        {"estimator", estimator.name()},
                        {"pck_config", options.pck.to_json()},
                        {"reconstruction_pck", protocol.to_json()}};
    nlohmann::json pck_j = {{"reconstruction", protocol.curve.at(0.5)}, {"pose_estimation", nullptr}};
    if (model.kind == ModelKind::Semi) {
        std::vector<pose::PoseVector> gt, pred;
        const auto est = estimate_dataset(model, test, options.batch_size);
        for (int i = 0; i < test.size(); ++i) {
            if (!test.poses[i]) continue;
            gt.push_back(*test.poses[i]);
            pred.push_back(est[i]);
        }
        const auto res = pck(pred, gt, options.pck);
        j["pose_estimation_pck"] = {{"result", res.to_json()}, {"curve", pck_curve(pred, gt, default_thresholds(), options.pck).to_json()}};
        pck_j["pose_estimation"] = res.rate;
    }
    j["pck"] = pck_j;
    return j;
}

// ---------------------------------------------------------------- sweep

std::vector<SweepEntry> supervision_sweep(const data::Dataset& train_set, const data::Dataset& test, const Model& mapper,
                                          const train::TrainConfig& config, const ReferenceEstimator& estimator,
                                          const SweepOptions& options) {
    std::vector<SweepEntry> out;
    for (double f : options.fractions) {
        train::TrainConfig c = config;
        c.supervision_fraction = f;
        const auto mask = data::make_supervision_mask(train_set.size(), f, c.mask_seed);
        train::RunOptions run = options.run;
        if (!run.run_dir.empty()) run.run_dir /= "fraction_" + std::to_string(std::lround(f * 100));
        auto result = train::train_semi(train_set, mask, mapper, c, run);
        SweepEntry e;
        e.fraction = f;
        e.labelled = static_cast<int>(mask.count());
        e.metrics = evaluate_model(result.model, test, estimator, options.eval);
        e.history = std::move(result.history);
        if (!run.run_dir.empty()) std::ofstream(run.run_dir / "metrics.json") << e.metrics.dump(2) << "\n";
        out.push_back(std::move(e));
    }
    if (!options.run.run_dir.empty()) write_sweep_report(out, options.run.run_dir / "report");
    return out;
}

std::string pck_svg(const std::vector<std::pair<std::string, PCKCurve>>& series, const std::string& title) {
    const double W = 520, H = 340, L = 60, R = 140, T = 40, B = 50;
    const double pw = W - L - R, ph = H - T - B;
    const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
    std::ostringstream s;
    s << std::fixed << std::setprecision(2);
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s << "<text x=\"" << L << "\" y=\"24\" font-size=\"14\">" << title << "</text>\n";
    s << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << pw << "\" height=\"" << ph << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double v = i / 4.0;
        const double y = T + ph * (1 - v), x = L + pw * v;
        s << "<line x1=\"" << L << "\" y1=\"" << y << "\" x2=\"" << L + pw << "\" y2=\"" << y << "\" stroke=\"#ddd\"/>\n";
        s << "<text x=\"" << L - 8 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << v << "</text>\n";
        s << "<text x=\"" << x << "\" y=\"" << T + ph + 18 << "\" text-anchor=\"middle\">" << v << "</text>\n";
    }
    s << "<text x=\"" << L + pw / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">normalized distance (torso)</text>\n";
    s << "<text x=\"16\" y=\"" << T + ph / 2 << "\" transform=\"rotate(-90 16 " << T + ph / 2 << ")\" text-anchor=\"middle\">PCK</text>\n";
    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& [label, c] = series[k];
        const char* col = colors[k % 6];
        s << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < c.thresholds.size(); ++i) {
            s << L + pw * std::clamp(c.thresholds[i], 0.0, 1.0) << "," << T + ph * (1 - c.rates[i]) << " ";
        }
        s << "\"/>\n";
        const double ly = T + 14 + 18 * k;
        s << "<line x1=\"" << L + pw + 12 << "\" y1=\"" << ly << "\" x2=\"" << L + pw + 32 << "\" y2=\"" << ly
          << "\" stroke=\"" << col << "\" stroke-width=\"2\"/>\n";
        s << "<text x=\"" << L + pw + 38 << "\" y=\"" << ly + 4 << "\">" << label << "</text>\n";
    }
    s << "</svg>\n";
    return s.str();
}

namespace {

PCKCurve curve_from(const nlohmann::json& j) {
    PCKCurve c;
    c.thresholds = j.at("thresholds").get<std::vector<double>>();
    c.rates = j.at("rates").get<std::vector<double>>();
    return c;
}

}  // namespace

void write_sweep_report(const std::vector<SweepEntry>& entries, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json j = {{"schema", "dgpose-sweep-report"}, {"version", 1}, {"entries", nlohmann::json::array()}};
    std::vector<std::pair<std::string, PCKCurve>> pose_curves, recon_curves;
    for (const auto& e : entries) {
        nlohmann::json hist = nlohmann::json::array();
        for (const auto& h : e.history) hist.push_back(h.losses_json());
        j["entries"].push_back({{"fraction", e.fraction}, {"labelled", e.labelled}, {"metrics", e.metrics}, {"history", hist}});
        recon_curves.emplace_back(fraction_label(e.fraction), curve_from(e.metrics.at("reconstruction_pck").at("curve")));
        if (e.metrics.contains("pose_estimation_pck")) {
            pose_curves.emplace_back(fraction_label(e.fraction), curve_from(e.metrics["pose_estimation_pck"].at("curve")));
        }
    }
    std::ofstream(dir / "metrics.json") << j.dump(2) << "\n";

    std::ofstream csv(dir / "pck_curves.csv");
    csv << "threshold";
    for (const auto& [l, c] : pose_curves) csv << ",pose_estimation_" << l;
    for (const auto& [l, c] : recon_curves) csv << ",reconstruction_" << l;
    csv << "\n";
    const auto t = default_thresholds();
    for (std::size_t i = 0; i < t.size(); ++i) {
        csv << t[i];
        for (const auto& [l, c] : pose_curves) csv << "," << c.rates[i];
        for (const auto& [l, c] : recon_curves) csv << "," << c.rates[i];
        csv << "\n";
    }
    std::ofstream(dir / "pck_curves.svg") << pck_svg(pose_curves, "Pose estimation PCK by supervision");
    std::ofstream(dir / "reconstruction_pck.svg") << pck_svg(recon_curves, "Reconstruction PCK by supervision");

    std::ofstream md(dir / "summary.md");
    md << "# Supervision sweep\n\n";
    md << "| labels | labelled samples | PSNR (dB) | SSIM | reconstruction PCK@0.5 | pose estimation PCK@0.5 |\n";
    md << "|---|---|---|---|---|---|\n";
    md << std::fixed << std::setprecision(4);
    for (const auto& e : entries) {
        const auto& m = e.metrics;
        md << "| " << fraction_label(e.fraction) << " | " << e.labelled << " | " << m.value("psnr", 0.0) << " | "
           << m.value("ssim", 0.0) << " | " << m.at("pck").value("reconstruction", 0.0) << " | ";
        if (m.at("pck").at("pose_estimation").is_number()) {
            md << m["pck"]["pose_estimation"].get<double>();
        } else {
            md << "n/a";
        }
        md << " |\n";
    }
    md << "\nCurves: `pck_curves.csv`, `pck_curves.svg`, `reconstruction_pck.svg`.\n";
}

}  // namespace dgpose::eval
