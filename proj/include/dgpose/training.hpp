#pragma once

// Training loops for the Mapper, Conditional-DGPose and Semi-DGPose.
//
// Run directory layout (all files optional when no directory is given):
//   config.json               every TrainConfig field
//   metrics.jsonl             one EpochRecord per line
//   checkpoints/latest.ckpt   rewritten after every epoch
//   checkpoints/final.ckpt    written once training ends

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <vector>

#include <json.hpp>

#include "dgpose/data/dataset.hpp"
#include "dgpose/model.hpp"
#include "dgpose/objectives.hpp"
#include "dgpose/optim.hpp"

namespace dgpose::train {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    double learning_rate = 1e-4;
    double weight_decay = 5e-4;
    int batch_size = 64;
    int epochs = 1;
    std::uint64_t seed = 0;
    obj::LossWeights weights;
    double supervision_fraction = 1.0;
    std::uint64_t mask_seed = 0;  // shared across a sweep so masks nest
    int d_steps_per_g_step = 1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    nn::Widths widths;
    /// Unlabelled rows decode a sampled y_v (true) or its mean (false).
    bool sample_pose_latent = true;
    pose::AnthropometricTable table;

    void validate() const;
    AdamConfig adam() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

/// Row-weighted epoch means of the loss terms plus routine counts.
struct EpochRecord {
    int epoch = 0;
    int steps = 0;
    int rows = 0;
    int supervised_rows = 0;    // rows routed to the supervised routine
    int unsupervised_rows = 0;  // rows routed to the unsupervised routine
    double l1 = 0, l1_sup = 0, l1_unsup = 0;
    double kl_z = 0, kl_y = 0, regression = 0;
    double gan_d = 0, gan_g = 0, total = 0;
    double mapper_mse = 0;
    double seconds = 0;

    nlohmann::json to_json() const;
    /// Loss values only; equal across runs with the same seed and config.
    nlohmann::json losses_json() const;
};

struct StepResult {
    obj::LossBreakdown loss;
    double mapper_mse = 0;
    int rows = 0;
};

/// Deterministic noise stream for one step.
std::mt19937_64 step_rng(std::uint64_t seed, int epoch, int step);

class MapperTrainer {
public:
    MapperTrainer(Model& model, const TrainConfig& config);
    StepResult step(const data::Batch& batch);
    Adam& optimizer() { return opt_; }

private:
    Model& model_;
    TrainConfig config_;
    Adam opt_;
};

class ConditionalTrainer {
public:
    ConditionalTrainer(Model& model, const TrainConfig& config);
    /// Requires batch heatmaps and labels on every row.
    StepResult step(const data::Batch& batch, std::mt19937_64& rng);
    Adam& generator_optimizer() { return g_opt_; }
    Adam& discriminator_optimizer() { return d_opt_; }

private:
    Model& model_;
    TrainConfig config_;
    Adam g_opt_, d_opt_;
};

class SemiTrainer {
public:
    /// The model's mapper is frozen for the trainer's lifetime.
    SemiTrainer(Model& model, const TrainConfig& config);
    StepResult step(const data::Batch& batch, std::mt19937_64& rng);
    Adam& generator_optimizer() { return g_opt_; }
    Adam& discriminator_optimizer() { return d_opt_; }

private:
    Model& model_;
    TrainConfig config_;
    Adam g_opt_, d_opt_;
};

/// Discriminator update on one real batch and one generated batch.
/// Returns the discriminator loss before the update.
double discriminator_step(nn::Network<float>& d, Adam& opt, const Tensor<float>& real,
                          const Tensor<float>& fake);

struct RunOptions {
    std::filesystem::path run_dir;  // empty: nothing written
    bool verbose = false;
    std::function<void(const EpochRecord&, Model&)> on_epoch;
};

struct TrainResult {
    Model model;
    std::vector<EpochRecord> history;
};

TrainResult train_mapper(const data::Dataset& data, const TrainConfig& config, const RunOptions& options = {});

TrainResult train_conditional(const data::Dataset& data, const TrainConfig& config,
                              const RunOptions& options = {});

/// `mapper` supplies the frozen Mapper; its pose standardization must match
/// the dataset's.
TrainResult train_semi(const data::Dataset& data, const data::SupervisionMask& mask, const Model& mapper,
                       const TrainConfig& config, const RunOptions& options = {});

std::vector<EpochRecord> read_metrics(const std::filesystem::path& metrics_jsonl);

}  // namespace dgpose::train
