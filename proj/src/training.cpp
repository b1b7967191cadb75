#include "dgpose/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace dgpose::train {

namespace {

using TensorF = Tensor<float>;

void fill_normal(TensorF& t, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    for (auto& v : t.values()) v = static_cast<float>(dist(rng));
}

void add_into(TensorF& dst, const TensorF& src) {
    if (dst.size() != src.size()) throw ShapeError("gradient size mismatch " + dst.shape().str());
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

std::vector<nn::ParamSlot<float>> slots_of(std::initializer_list<nn::Network<float>*> nets) {
    std::vector<nn::ParamSlot<float>> out;
    for (auto* n : nets) {
        auto s = n->parameters();
        out.insert(out.end(), s.begin(), s.end());
    }
    return out;
}

obj::DiagonalGaussian<float> head_pair(const nn::Network<float>::Output& o, const char* mu, const char* lv) {
    return {o.head(mu), o.head(lv)};
}

obj::DiagonalGaussian<float> zeros_like(const obj::DiagonalGaussian<float>& g) {
    return {TensorF(g.mu.shape()), TensorF(g.log_var.shape())};
}

}  // namespace

// ---------------------------------------------------------------- config

void TrainConfig::validate() const {
    auto fail = [](const std::string& m) { throw ConfigError(m); };
    if (!(learning_rate > 0)) fail("learning_rate must be positive");
    if (!(weight_decay >= 0)) fail("weight_decay must be non-negative");
    if (batch_size < 1) fail("batch_size must be at least 1");
    if (epochs < 0) fail("epochs must be non-negative");
    if (!(supervision_fraction >= 0 && supervision_fraction <= 1)) fail("supervision_fraction must lie in [0, 1]");
    if (d_steps_per_g_step < 0) fail("d_steps_per_g_step must be non-negative");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) fail("Adam betas must lie in [0, 1)");
    if (!(adam_eps > 0)) fail("adam_eps must be positive");
    if (weights.alpha < 0 || weights.gamma < 0 || weights.lambda_gan < 0 || weights.recon_weight < 0 ||
        weights.regression_weight < 0) {
        fail("loss weights must be non-negative");
    }
    for (double w : {widths.encoder, widths.prior, widths.decoder, widths.discriminator, widths.mapper}) {
        if (!(w > 0)) fail("widths must be positive");
    }
    table.validate();
}

AdamConfig TrainConfig::adam() const {
    AdamConfig a;
    a.learning_rate = learning_rate;
    a.beta1 = beta1;
    a.beta2 = beta2;
    a.eps = adam_eps;
    a.weight_decay = weight_decay;
    return a;
}

nlohmann::json TrainConfig::to_json() const {
    return {{"learning_rate", learning_rate},
            {"weight_decay", weight_decay},
            {"batch_size", batch_size},
            {"epochs", epochs},
            {"seed", seed},
            {"alpha", weights.alpha},
            {"gamma", weights.gamma},
            {"lambda_gan", weights.lambda_gan},
            {"recon_weight", weights.recon_weight},
            {"regression_weight", weights.regression_weight},
            {"supervision_fraction", supervision_fraction},
            {"mask_seed", mask_seed},
            {"d_steps_per_g_step", d_steps_per_g_step},
            {"beta1", beta1},
            {"beta2", beta2},
            {"adam_eps", adam_eps},
            {"widths", widths_to_json(widths)},
            {"sample_pose_latent", sample_pose_latent},
            {"table", table.to_json()}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    static const std::vector<std::string> known = {
        "learning_rate", "weight_decay", "batch_size", "epochs",     "seed",  "alpha",
        "gamma",         "lambda_gan",   "recon_weight", "regression_weight", "supervision_fraction", "mask_seed",
        "d_steps_per_g_step", "beta1",   "beta2",       "adam_eps",  "widths", "sample_pose_latent",
        "table", "model"};  // "model" is informational, written by the run directory
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& [k, v] : j.items()) {
        if (std::find(known.begin(), known.end(), k) == known.end()) throw ConfigError("unknown config field '" + k + "'");
    }
    TrainConfig c;
    try {
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.epochs = j.value("epochs", c.epochs);
        c.seed = j.value("seed", c.seed);
        c.weights.alpha = j.value("alpha", c.weights.alpha);
        c.weights.gamma = j.value("gamma", c.weights.gamma);
        c.weights.lambda_gan = j.value("lambda_gan", c.weights.lambda_gan);
        c.weights.recon_weight = j.value("recon_weight", c.weights.recon_weight);
        c.weights.regression_weight = j.value("regression_weight", c.weights.regression_weight);
        c.supervision_fraction = j.value("supervision_fraction", c.supervision_fraction);
        c.mask_seed = j.value("mask_seed", c.mask_seed);
        c.d_steps_per_g_step = j.value("d_steps_per_g_step", c.d_steps_per_g_step);
        c.beta1 = j.value("beta1", c.beta1);
        c.beta2 = j.value("beta2", c.beta2);
        c.adam_eps = j.value("adam_eps", c.adam_eps);
        if (j.contains("widths")) c.widths = widths_from_json(j["widths"]);
        c.sample_pose_latent = j.value("sample_pose_latent", c.sample_pose_latent);
        if (j.contains("table")) c.table = pose::AnthropometricTable::from_json(j["table"]);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------- records

nlohmann::json EpochRecord::losses_json() const {
    return {{"epoch", epoch},
            {"steps", steps},
            {"rows", rows},
            {"supervised_rows", supervised_rows},
            {"unsupervised_rows", unsupervised_rows},
            {"l1", l1},
            {"l1_sup", l1_sup},
            {"l1_unsup", l1_unsup},
            {"kl_z", kl_z},
            {"kl_y", kl_y},
            {"regression", regression},
            {"gan_d", gan_d},
            {"gan_g", gan_g},
            {"total", total},
            {"mapper_mse", mapper_mse}};
}

nlohmann::json EpochRecord::to_json() const {
    auto j = losses_json();
    j["seconds"] = seconds;
    return j;
}

std::vector<EpochRecord> read_metrics(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<EpochRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        EpochRecord r;
        r.epoch = j.at("epoch");
        r.steps = j.at("steps");
        r.rows = j.at("rows");
        r.supervised_rows = j.at("supervised_rows");
        r.unsupervised_rows = j.at("unsupervised_rows");
        r.l1 = j.at("l1");
        r.l1_sup = j.at("l1_sup");
        r.l1_unsup = j.at("l1_unsup");
        r.kl_z = j.at("kl_z");
        r.kl_y = j.at("kl_y");
        r.regression = j.at("regression");
        r.gan_d = j.at("gan_d");
        r.gan_g = j.at("gan_g");
        r.total = j.at("total");
        r.mapper_mse = j.at("mapper_mse");
        r.seconds = j.value("seconds", 0.0);
        out.push_back(r);
    }
    return out;
}

std::mt19937_64 step_rng(std::uint64_t seed, int epoch, int step) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(step), 0x5EEDu};
    return std::mt19937_64(seq);
}

// ---------------------------------------------------------------- discriminator

double discriminator_step(nn::Network<float>& d, Adam& opt, const TensorF& real, const TensorF& fake) {
    opt.zero_grad();
    // Real and generated images go through separate passes so each batch
    // is normalized with its own statistics.
    const TensorF d_real = d.forward({{"x", real}}).trunk;
    TensorF g_real(d_real.shape());
    obj::gan_d_loss(d_real, d_real, &g_real, static_cast<TensorF*>(nullptr));
    d.backward({}, &g_real, {true, false});
    const TensorF d_fake = d.forward({{"x", fake}}).trunk;
    TensorF g_fake(d_fake.shape());
    obj::gan_d_loss(d_fake, d_fake, static_cast<TensorF*>(nullptr), &g_fake);
    d.backward({}, &g_fake, {true, false});
    opt.step();
    return obj::gan_d_loss(d_real, d_fake);
}

// ---------------------------------------------------------------- mapper

MapperTrainer::MapperTrainer(Model& model, const TrainConfig& config)
    : model_(model), config_(config), opt_(slots_of({&*model.mapper}), config.adam()) {
    if (!model.mapper) throw ConfigError("model has no mapper");
    model.mapper->set_frozen(false);
}

StepResult MapperTrainer::step(const data::Batch& batch) {
    for (bool l : batch.labelled) {
        if (!l) throw DataError("the mapper needs a pose label on every sample");
    }
    if (batch.heatmaps.empty()) throw DataError("the mapper needs target heatmaps");
    auto& m = *model_.mapper;
    opt_.zero_grad();
    const TensorF pred = m.forward({{"y_v", batch.pose_vectors}}).trunk;
    TensorF grad(pred.shape());
    StepResult r;
    r.mapper_mse = obj::mapper_loss(pred, batch.heatmaps, &grad);
    m.backward({}, &grad, {true, false});
    opt_.step();
    r.rows = batch.images.shape().n;
    r.loss.total = r.mapper_mse;
    return r;
}

// ---------------------------------------------------------------- conditional

ConditionalTrainer::ConditionalTrainer(Model& model, const TrainConfig& config)
    : model_(model),
      config_(config),
      g_opt_(slots_of({&*model.encoder, &*model.prior, &*model.decoder}), config.adam()),
      d_opt_(slots_of({&*model.discriminator}), config.adam()) {
    if (model.kind != ModelKind::Conditional) throw ConfigError("ConditionalTrainer needs a conditional model");
}

StepResult ConditionalTrainer::step(const data::Batch& batch, std::mt19937_64& rng) {
    for (bool l : batch.labelled) {
        if (!l) throw DataError("conditional training needs a pose label on every sample");
    }
    if (batch.heatmaps.empty()) throw DataError("conditional training needs heatmaps");
    auto& enc = *model_.encoder;
    auto& prior = *model_.prior;
    auto& dec = *model_.decoder;
    auto& disc = *model_.discriminator;
    const TensorF& x = batch.images;
    const TensorF& y_h = batch.heatmaps;

    g_opt_.zero_grad();
    const auto enc_out = enc.forward({{"x", x}, {"y_h", y_h}});
    const auto prior_out = prior.forward({{"y_h", y_h}});
    const auto q = head_pair(enc_out, "mu_z", "log_var_z");
    const auto p = head_pair(prior_out, "mu_prior", "log_var_prior");
    TensorF eps(q.mu.shape());
    fill_normal(eps, rng);
    const TensorF z = obj::reparameterize(q, eps);
    const TensorF x_hat = dec.forward({{"z", z}, {"y_h", y_h}}).trunk;

    double d_loss = 0;
    for (int k = 0; k < config_.d_steps_per_g_step; ++k) d_loss = discriminator_step(disc, d_opt_, x, x_hat);

    const bool adversarial = config_.weights.lambda_gan > 0;
    TensorF d_fake;
    if (adversarial) d_fake = disc.forward({{"x", x_hat}}).trunk;
    obj::ConditionalInputs<float> in{&x, &x_hat, &q, &p, adversarial ? &d_fake : nullptr};
    obj::ConditionalGrads<float> g;
    g.x_hat = TensorF(x_hat.shape());
    g.posterior = zeros_like(q);
    g.prior = zeros_like(p);
    if (adversarial) g.d_fake = TensorF(d_fake.shape());
    StepResult r;
    r.loss = obj::conditional_objective(in, config_.weights, &g);
    r.loss.gan_d = d_loss;
    r.rows = x.shape().n;

    if (adversarial) {
        auto dx = disc.backward({}, &g.d_fake, {false, true});
        add_into(g.x_hat, dx.at("x"));
    }
    auto dec_in = dec.backward({}, &g.x_hat, {true, true});
    obj::reparameterize_backward(dec_in.at("z"), q, eps, g.posterior.mu, g.posterior.log_var);
    enc.backward({{"mu_z", g.posterior.mu}, {"log_var_z", g.posterior.log_var}}, nullptr, {true, false});
    prior.backward({{"mu_prior", g.prior.mu}, {"log_var_prior", g.prior.log_var}}, nullptr, {true, false});
    g_opt_.step();
    return r;
}

// ---------------------------------------------------------------- semi

SemiTrainer::SemiTrainer(Model& model, const TrainConfig& config)
    : model_(model),
      config_(config),
      g_opt_(slots_of({&*model.encoder, &*model.decoder}), config.adam()),
      d_opt_(slots_of({&*model.discriminator}), config.adam()) {
    if (model.kind != ModelKind::Semi) throw ConfigError("SemiTrainer needs a semi model");
    model.mapper->set_frozen(true);
}

StepResult SemiTrainer::step(const data::Batch& batch, std::mt19937_64& rng) {
    auto& enc = *model_.encoder;
    auto& dec = *model_.decoder;
    auto& disc = *model_.discriminator;
    auto& mapper = *model_.mapper;
    const TensorF& x = batch.images;
    const int b = x.shape().n;
    const int pd = nn::kPoseDim;

    g_opt_.zero_grad();
    const auto enc_out = enc.forward({{"x", x}});
    const auto qz = head_pair(enc_out, "mu_z", "log_var_z");
    const auto qy = head_pair(enc_out, "mu_y", "log_var_y");
    TensorF eps_z(qz.mu.shape()), eps_y(qy.mu.shape());
    fill_normal(eps_z, rng);
    fill_normal(eps_y, rng);
    const TensorF z = obj::reparameterize(qz, eps_z);
    const TensorF y_sample = obj::reparameterize(qy, eps_y);

    // Supervised rows decode their label, unsupervised rows the inferred pose.
    TensorF y_v(qy.mu.shape());
    for (int r = 0; r < b; ++r) {
        const float* src = batch.labelled[r] ? batch.pose_vectors.sample(r)
                                             : (config_.sample_pose_latent ? y_sample.sample(r) : qy.mu.sample(r));
        std::copy_n(src, pd, y_v.sample(r));
    }
    const TensorF y_h = mapper.forward({{"y_v", y_v}}).trunk;
    const TensorF x_hat = dec.forward({{"z", z}, {"y_v", y_v}, {"y_h", y_h}}).trunk;

    double d_loss = 0;
    for (int k = 0; k < config_.d_steps_per_g_step; ++k) d_loss = discriminator_step(disc, d_opt_, x, x_hat);

    const bool adversarial = config_.weights.lambda_gan > 0;
    TensorF d_fake;
    if (adversarial) d_fake = disc.forward({{"x", x_hat}}).trunk;
    obj::SemiInputs<float> in{&x, &x_hat, &qz, &qy, &batch.pose_vectors, &batch.labelled,
                              adversarial ? &d_fake : nullptr};
    obj::SemiGrads<float> g;
    g.x_hat = TensorF(x_hat.shape());
    g.z = zeros_like(qz);
    g.y = zeros_like(qy);
    if (adversarial) g.d_fake = TensorF(d_fake.shape());
    StepResult r;
    r.loss = obj::semi_objective(in, config_.weights, &g);
    r.loss.gan_d = d_loss;
    r.rows = b;

    if (adversarial) {
        auto dx = disc.backward({}, &g.d_fake, {false, true});
        add_into(g.x_hat, dx.at("x"));
    }
    auto dec_in = dec.backward({}, &g.x_hat, {true, true});
    TensorF grad_y_v = dec_in.at("y_v");
    auto map_in = mapper.backward({}, &dec_in.at("y_h"), {false, true});
    add_into(grad_y_v, map_in.at("y_v"));

    // No decoder gradient reaches the pose head through a supervised row:
    // the label it decoded is a constant.
    TensorF grad_y_sample(qy.mu.shape());
    for (int row = 0; row < b; ++row) {
        if (batch.labelled[row]) continue;
        float* dst = config_.sample_pose_latent ? grad_y_sample.sample(row) : g.y.mu.sample(row);
        const float* src = grad_y_v.sample(row);
        for (int k = 0; k < pd; ++k) dst[k] += src[k];
    }
    if (config_.sample_pose_latent) obj::reparameterize_backward(grad_y_sample, qy, eps_y, g.y.mu, g.y.log_var);
    obj::reparameterize_backward(dec_in.at("z"), qz, eps_z, g.z.mu, g.z.log_var);
    enc.backward({{"mu_z", g.z.mu}, {"log_var_z", g.z.log_var}, {"mu_y", g.y.mu}, {"log_var_y", g.y.log_var}},
                 nullptr, {true, false});
    g_opt_.step();
    return r;
}

// ---------------------------------------------------------------- loops

namespace {

struct Accumulator {
    EpochRecord rec;

    void add(const StepResult& s, const data::Batch& b) {
        const double w = s.rows;
        auto& r = rec;
        r.steps += 1;
        r.rows += s.rows;
        for (bool l : b.labelled) (l ? r.supervised_rows : r.unsupervised_rows) += 1;
        r.l1 += w * s.loss.l1;
        r.l1_sup += w * s.loss.l1_sup;
        r.l1_unsup += w * s.loss.l1_unsup;
        r.kl_z += w * s.loss.kl_z;
        r.kl_y += w * s.loss.kl_y;
        r.regression += w * s.loss.regression;
        r.gan_d += w * s.loss.gan_d;
        r.gan_g += w * s.loss.gan_g;
        r.total += w * s.loss.total;
        r.mapper_mse += w * s.mapper_mse;
    }

    EpochRecord finish() {
        auto r = rec;
        if (r.rows > 0) {
            const double n = r.rows;
            for (double* v : {&r.l1, &r.l1_sup, &r.l1_unsup, &r.kl_z, &r.kl_y, &r.regression, &r.gan_d, &r.gan_g,
                              &r.total, &r.mapper_mse}) {
                *v /= n;
            }
        }
        return r;
    }
};

class RunWriter {
public:
    RunWriter(const RunOptions& opt, const TrainConfig& config, const char* kind) : opt_(opt) {
        if (opt_.run_dir.empty()) return;
        std::filesystem::create_directories(opt_.run_dir / "checkpoints");
        auto j = config.to_json();
        j["model"] = kind;
        std::ofstream(opt_.run_dir / "config.json") << j.dump(2) << "\n";
        metrics_.open(opt_.run_dir / "metrics.jsonl", std::ios::trunc);
    }

    void epoch(const EpochRecord& r, Model& model, const std::vector<OptimizerRef>& opts, const char* kind) {
        model.epoch = r.epoch + 1;
        model.metrics = r.losses_json();
        if (opt_.verbose) {
            std::fprintf(stderr, "[%s] epoch %d  steps %d  l1 %.5f  kl_z %.4f  kl_y %.4f  reg %.5f  map %.6f  d %.4f  g %.4f  (%.1fs)\n",
                         kind, r.epoch, r.steps, r.l1, r.kl_z, r.kl_y, r.regression, r.mapper_mse, r.gan_d, r.gan_g,
                         r.seconds);
        }
        if (opt_.run_dir.empty()) return;
        metrics_ << r.to_json().dump() << "\n";
        metrics_.flush();
        save_checkpoint(opt_.run_dir / "checkpoints" / "latest.ckpt", model, opts);
    }

    void finish(const Model& model, const std::vector<OptimizerRef>& opts) {
        if (opt_.run_dir.empty()) return;
        save_checkpoint(opt_.run_dir / "checkpoints" / "final.ckpt", model, opts);
    }

private:
    const RunOptions& opt_;
    std::ofstream metrics_;
};

template <class StepFn>
std::vector<EpochRecord> run_epochs(const data::Dataset& data, const TrainConfig& config, const RunOptions& options,
                                    Model& model, const data::SupervisionMask* mask, bool heatmaps,
                                    const std::vector<OptimizerRef>& opts, const char* kind, StepFn&& fn) {
    RunWriter writer(options, config, kind);
    std::vector<EpochRecord> history;
    for (int e = 0; e < config.epochs; ++e) {
        const auto t0 = std::chrono::steady_clock::now();
        Accumulator acc;
        acc.rec.epoch = e;
        const auto batches = data::epoch_batches(data.size(), config.batch_size, config.seed, e);
        for (std::size_t s = 0; s < batches.size(); ++s) {
            const auto batch = data::make_batch(data, batches[s], mask, heatmaps, config.table);
            auto rng = step_rng(config.seed, e, static_cast<int>(s));
            acc.add(fn(batch, rng), batch);
        }
        auto rec = acc.finish();
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        history.push_back(rec);
        writer.epoch(rec, model, opts, kind);
        if (options.on_epoch) options.on_epoch(rec, model);
    }
    for (auto& [n, net] : model.networks()) net->release_cache();
    writer.finish(model, opts);
    return history;
}

void require_labels(const data::Dataset& data, const char* who) {
    if (data.size() == 0) throw DataError(std::string(who) + ": empty dataset");
    for (const auto& p : data.poses) {
        if (!p) throw DataError(std::string(who) + ": every sample needs a pose label");
    }
}

// Sigmoid outputs under an MSE loss barely move once they are near zero, so
// the output bias starts at the logit of the mean target value instead of 0.
void init_mapper_output_bias(nn::Network<float>& mapper, const data::Dataset& data, const pose::AnthropometricTable& table) {
    std::vector<int> idx;
    for (int i = 0; i < std::min(data.size(), 256); ++i) idx.push_back(i);
    const auto b = data::make_batch(data, idx, nullptr, true, table);
    double mean = 0;
    for (float v : b.heatmaps.storage()) mean += v;
    mean = std::clamp(mean / static_cast<double>(b.heatmaps.size()), 1e-4, 0.5);
    auto slots = mapper.parameters();
    for (auto it = slots.rbegin(); it != slots.rend(); ++it) {
        if (it->name.ends_with(".bias")) {
            it->value->fill(static_cast<float>(std::log(mean / (1.0 - mean))));
            break;
        }
    }
}

}  // namespace

TrainResult train_mapper(const data::Dataset& data, const TrainConfig& config, const RunOptions& options) {
    config.validate();
    require_labels(data, "train_mapper");
    TrainResult out{Model::create(ModelKind::Mapper, config.widths, config.seed), {}};
    out.model.stats = data.stats;
    out.model.table = config.table;
    init_mapper_output_bias(*out.model.mapper, data, config.table);
    out.model.config = config.to_json();
    MapperTrainer trainer(out.model, config);
    out.history = run_epochs(data, config, options, out.model, nullptr, true, {{"mapper", &trainer.optimizer()}},
                             "mapper", [&](const data::Batch& b, std::mt19937_64&) { return trainer.step(b); });
    out.model.mapper->set_frozen(true);
    return out;
}

TrainResult train_conditional(const data::Dataset& data, const TrainConfig& config, const RunOptions& options) {
    config.validate();
    require_labels(data, "train_conditional");
    TrainResult out{Model::create(ModelKind::Conditional, config.widths, config.seed), {}};
    out.model.stats = data.stats;
    out.model.table = config.table;
    out.model.config = config.to_json();
    ConditionalTrainer trainer(out.model, config);
    out.history = run_epochs(
        data, config, options, out.model, nullptr, true,
        {{"generator", &trainer.generator_optimizer()}, {"discriminator", &trainer.discriminator_optimizer()}},
        "conditional", [&](const data::Batch& b, std::mt19937_64& rng) { return trainer.step(b, rng); });
    return out;
}

TrainResult train_semi(const data::Dataset& data, const data::SupervisionMask& mask, const Model& mapper,
                       const TrainConfig& config, const RunOptions& options) {
    config.validate();
    if (data.size() == 0) throw DataError("train_semi: empty dataset");
    if (static_cast<int>(mask.labelled.size()) != data.size()) throw DataError("train_semi: mask size mismatch");
    if (!mapper.mapper) throw ConfigError("train_semi: no mapper supplied");
    for (std::size_t i = 0; i < data.stats.pose_mean.size(); ++i) {
        if (std::abs(data.stats.pose_mean[i] - mapper.stats.pose_mean[i]) > 1e-9 ||
            std::abs(data.stats.pose_std[i] - mapper.stats.pose_std[i]) > 1e-9) {
            throw ConfigError("train_semi: mapper was trained with different pose standardization");
        }
    }
    nn::Widths widths = config.widths;
    widths.mapper = mapper.widths.mapper;
    TrainResult out{Model::create(ModelKind::Semi, widths, config.seed), {}};
    copy_mapper(mapper, out.model);
    out.model.stats = data.stats;
    out.model.table = config.table;
    out.model.config = config.to_json();
    SemiTrainer trainer(out.model, config);
    out.history = run_epochs(
        data, config, options, out.model, &mask, false,
        {{"generator", &trainer.generator_optimizer()}, {"discriminator", &trainer.discriminator_optimizer()}},
        "semi", [&](const data::Batch& b, std::mt19937_64& rng) { return trainer.step(b, rng); });
    return out;
}

}  // namespace dgpose::train
