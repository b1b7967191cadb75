#pragma once

// Image metrics, PCK, the reconstruction-pose protocol and the supervision
// sweep report.
//
// PSNR and SSIM take images in [0, 1] (peak 1). SSIM uses a 7 x 7 uniform
// window over valid positions, K1 = 0.01, K2 = 0.03, L = 1, averaged over
// windows and channels.

#include <array>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dgpose/data/dataset.hpp"
#include "dgpose/inference.hpp"
#include "dgpose/model.hpp"
#include "dgpose/training.hpp"

namespace dgpose::eval {

inline constexpr double kPsnrCap = 99.0;
inline constexpr int kSsimWindow = 7;

/// Over all elements of the two tensors.
double psnr(const Tensor<float>& x, const Tensor<float>& y, double peak = 1.0);
/// One value per batch row.
std::vector<double> psnr_per_image(const Tensor<float>& x, const Tensor<float>& y, double peak = 1.0);

std::vector<double> ssim_per_image(const Tensor<float>& x, const Tensor<float>& y);
double ssim(const Tensor<float>& x, const Tensor<float>& y);

struct PCKConfig {
    double threshold = 0.5;
    int torso_a = pose::RShoulder;
    int torso_b = pose::LHip;
    std::vector<int> joints;  // empty: all 14

    void validate() const;
    nlohmann::json to_json() const;
};

struct PCKResult {
    double rate = 0.0;  // correct / counted joints; 0 when nothing was counted
    int correct = 0;
    int counted = 0;
    int skipped = 0;  // samples with a degenerate torso

    nlohmann::json to_json() const;
};

PCKResult pck(const std::vector<pose::PoseVector>& pred, const std::vector<pose::PoseVector>& gt,
              const PCKConfig& config = {});

/// Thresholds 0.05, 0.10, ..., 1.00.
std::vector<double> default_thresholds();

struct PCKCurve {
    std::vector<double> thresholds;
    std::vector<double> rates;

    double at(double threshold) const;
    nlohmann::json to_json() const;
};

PCKCurve pck_curve(const std::vector<pose::PoseVector>& pred, const std::vector<pose::PoseVector>& gt,
                   const std::vector<double>& thresholds = default_thresholds(), PCKConfig config = {});

/// Predicts joints from an image in [0, 1]; std::nullopt on failure.
class ReferenceEstimator {
public:
    virtual ~ReferenceEstimator() = default;
    virtual std::string name() const = 0;
    virtual std::optional<pose::PoseVector> estimate(const Tensor<float>& image) const = 0;
};

/// Locates the synthetic figures' joint markers by colour.
///
/// Pixels and marker colours are both clipped to [low, high] per channel
/// before matching, so images from a decoder with a bounded output range
/// are judged against the colours that decoder can actually produce.
class ColorMarkerEstimator : public ReferenceEstimator {
public:
    ColorMarkerEstimator();
    ColorMarkerEstimator(std::array<double, 3> low, std::array<double, 3> high);

    /// Range of a tanh decoder under the given normalization: mean +- std.
    static ColorMarkerEstimator for_stats(const data::NormalizationStats& stats);

    std::string name() const override { return "color-marker"; }
    std::optional<pose::PoseVector> estimate(const Tensor<float>& image) const override;

    double sigma = 0.12;           // colour similarity width
    double min_peak = 0.01;        // below this the joint counts as not found
    int box_radius = 2;            // smoothing before the argmax
    int centroid_radius = 3;       // refinement window

private:
    std::array<double, 3> low_, high_;
};

struct ProtocolResult {
    PCKCurve curve;
    int evaluated = 0;
    int excluded = 0;
    std::vector<std::string> excluded_ids;

    nlohmann::json to_json() const;
};

/// Estimates poses on the originals (pseudo ground truth) and on the
/// reconstructions, then compares them. Images in [0, 1].
ProtocolResult pose_protocol(const Tensor<float>& originals, const Tensor<float>& reconstructions,
                             const ReferenceEstimator& estimator, const std::vector<std::string>& ids = {},
                             const PCKConfig& config = {});

struct EvalOptions {
    int batch_size = 64;
    infer::Mode mode;
    PCKConfig pck;
};

/// Reconstructs the test split and reports PSNR, SSIM, the protocol's PCK
/// curve and, for semi models, pose-estimation PCK against stored labels.
nlohmann::json evaluate_model(const Model& model, const data::Dataset& test, const ReferenceEstimator& estimator,
                              const EvalOptions& options = {});

/// Reconstructions of the whole split in [0, 1].
Tensor<float> reconstruct_dataset(const Model& model, const data::Dataset& set, const EvalOptions& options = {});

/// Semi: estimated poses of the whole split.
std::vector<pose::PoseVector> estimate_dataset(const Model& model, const data::Dataset& set, int batch_size = 64);

struct SweepEntry {
    double fraction = 1.0;
    int labelled = 0;
    nlohmann::json metrics;  // evaluate_model output
    std::vector<train::EpochRecord> history;
};

struct SweepOptions {
    std::vector<double> fractions = {1.0, 0.75, 0.5, 0.25};
    EvalOptions eval;
    train::RunOptions run;  // run_dir gets one sub-directory per fraction
};

/// Trains one semi model per fraction with nested masks and evaluates each.
std::vector<SweepEntry> supervision_sweep(const data::Dataset& train, const data::Dataset& test, const Model& mapper,
                                          const train::TrainConfig& config, const ReferenceEstimator& estimator,
                                          const SweepOptions& options = {});

/// metrics.json, pck_curves.csv, pck_curves.svg and summary.md.
void write_sweep_report(const std::vector<SweepEntry>& entries, const std::filesystem::path& dir);

/// Minimal line chart of PCK curves, one series per label.
std::string pck_svg(const std::vector<std::pair<std::string, PCKCurve>>& series, const std::string& title);

}  // namespace dgpose::eval
