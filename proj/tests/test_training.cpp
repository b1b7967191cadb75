#include <doctest.h>

#include <cstring>
#include <fstream>
#include <numeric>
#include <set>

#include "dgpose/model.hpp"
#include "dgpose/training.hpp"
#include "toy_fixture.hpp"

using namespace dgpose;
using namespace dgpose::train;

namespace {

constexpr double kTiny = 1.0 / 32;

TrainConfig tiny_config() {
    TrainConfig c;
    c.widths = {kTiny, kTiny, kTiny, kTiny, kTiny};
    c.learning_rate = 1e-3;
    c.epochs = 1;
    c.seed = 11;
    return c;
}

data::Dataset first_n(const data::Dataset& d, int n) {
    data::Dataset out;
    out.images = d.images.slice(0, n);
    out.poses.assign(d.poses.begin(), d.poses.begin() + n);
    out.ids.assign(d.ids.begin(), d.ids.begin() + n);
    out.extra.assign(d.extra.begin(), d.extra.begin() + n);
    out.stats = d.stats;
    return out;
}

const data::Dataset& train128() {
    static const data::Dataset d = first_n(testing::toy().train, 128);
    return d;
}

std::vector<float> flat_params(nn::Network<float>& net) {
    std::vector<float> out;
    for (auto& s : net.parameters()) out.insert(out.end(), s.value->storage().begin(), s.value->storage().end());
    return out;
}

const nn::ParamSlot<float>* find_slot(const std::vector<nn::ParamSlot<float>>& slots, const std::string& suffix) {
    for (const auto& s : slots) {
        if (s.name.ends_with(suffix)) return &s;
    }
    return nullptr;
}

const Model& tiny_mapper() {
    static const Model m = [] {
        auto c = tiny_config();
        return train_mapper(train128(), c).model;
    }();
    return m;
}

}  // namespace

TEST_CASE("config defaults and validation") {
    TrainConfig c;
    CHECK(c.weights.alpha == 100.0);
    CHECK(c.weights.gamma == 1.0);
    CHECK(c.batch_size == 64);
    CHECK(c.weights.lambda_gan == 1.0);
    CHECK_NOTHROW(c.validate());

    auto j = tiny_config().to_json();
    const auto back = TrainConfig::from_json(j);
    CHECK(back.to_json() == j);

    j["alhpa"] = 1;
    CHECK_THROWS_AS(TrainConfig::from_json(j), ConfigError);
    auto bad = TrainConfig::from_json(tiny_config().to_json());
    bad.supervision_fraction = 1.5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = tiny_config();
    bad.batch_size = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("one epoch over 128 samples at batch 64 takes two generator steps") {
    auto c = tiny_config();
    const auto r = train_conditional(train128(), c);
    REQUIRE(r.history.size() == 1);
    CHECK(r.history[0].steps == 2);
    CHECK(r.history[0].rows == 128);
}

TEST_CASE("generator and discriminator optimizers own disjoint parameters") {
    auto c = tiny_config();
    Model m = Model::create(ModelKind::Conditional, c.widths, 1);
    ConditionalTrainer t(m, c);
    std::set<const void*> g;
    for (const auto& s : t.generator_optimizer().slots()) g.insert(s.value);
    for (const auto& s : t.discriminator_optimizer().slots()) CHECK(g.count(s.value) == 0);
    std::size_t d_count = 0;
    for (const auto& s : m.discriminator->parameters()) d_count += s.trainable;
    CHECK(t.discriminator_optimizer().slots().size() == d_count);
}

TEST_CASE("conditional training is deterministic for a fixed seed") {
    auto c = tiny_config();
    c.epochs = 2;
    const auto a = train_conditional(train128(), c);
    const auto b = train_conditional(train128(), c);
    REQUIRE(a.history.size() == 2);
    for (int e = 0; e < 2; ++e) CHECK(a.history[e].losses_json() == b.history[e].losses_json());
    auto& ma = const_cast<Model&>(a.model);
    auto& mb = const_cast<Model&>(b.model);
    CHECK(flat_params(*ma.decoder) == flat_params(*mb.decoder));
}

TEST_CASE("one small step on a frozen batch does not increase the objective") {
    auto c = tiny_config();
    c.weights.lambda_gan = 0;
    c.learning_rate = 1e-5;
    Model m = Model::create(ModelKind::Conditional, c.widths, 3);
    ConditionalTrainer t(m, c);
    const auto batch = data::make_batch(train128(), {0, 1, 2, 3, 4, 5, 6, 7}, nullptr, true);
    auto rng1 = step_rng(1, 0, 0);
    const double before = t.step(batch, rng1).loss.total;
    auto rng2 = step_rng(1, 0, 0);
    const double after = t.step(batch, rng2).loss.total;
    CHECK(after <= before);
}

TEST_CASE("mapper: loss does not increase over a 10-step frozen-batch probe") {
    auto c = tiny_config();
    c.learning_rate = 1e-4;
    Model m = Model::create(ModelKind::Mapper, c.widths, 5);
    MapperTrainer t(m, c);
    std::vector<int> idx(16);
    std::iota(idx.begin(), idx.end(), 0);
    const auto batch = data::make_batch(train128(), idx, nullptr, true);
    double prev = 1e300;
    for (int s = 0; s < 10; ++s) {
        const double l = t.step(batch).mapper_mse;
        CHECK(l <= prev);
        prev = l;
    }
}

TEST_CASE("semi: fully labelled rows with alpha 0 leave the pose head without gradient") {
    auto c = tiny_config();
    c.weights.alpha = 0;
    Model m = Model::create(ModelKind::Semi, c.widths, 7);
    copy_mapper(tiny_mapper(), m);
    m.stats = train128().stats;
    const auto mapper_before = flat_params(*m.mapper);
    SemiTrainer t(m, c);
    const auto mask = data::make_supervision_mask(128, 1.0, 0);
    const auto batch = data::make_batch(train128(), {0, 1, 2, 3, 4, 5, 6, 7}, &mask, false);
    auto rng = step_rng(0, 0, 0);
    t.step(batch, rng);
    const auto slots = m.encoder->parameters();
    for (const char* head : {"heads.mu_y.weight", "heads.mu_y.bias", "heads.log_var_y.weight", "heads.log_var_y.bias"}) {
        INFO(head);
        const auto* s = find_slot(slots, head);
        REQUIRE(s != nullptr);
        for (float g : s->grad->storage()) CHECK(g == 0.0f);
    }
    // appearance head still learns
    const auto* z = find_slot(slots, "heads.mu_z.weight");
    double norm = 0;
    for (float g : z->grad->storage()) norm += std::abs(g);
    CHECK(norm > 0);
    // the frozen mapper is untouched
    CHECK(flat_params(*m.mapper) == mapper_before);
}

TEST_CASE("semi: routing counts follow the mask") {
    auto c = tiny_config();
    const auto full = train_semi(train128(), data::make_supervision_mask(128, 1.0, 0), tiny_mapper(), c);
    CHECK(full.history[0].unsupervised_rows == 0);
    CHECK(full.history[0].supervised_rows == 128);
    CHECK(full.history[0].kl_y == 0.0);

    const auto half = train_semi(train128(), data::make_supervision_mask(128, 0.25, 0), tiny_mapper(), c);
    CHECK(half.history[0].supervised_rows == 32);
    CHECK(half.history[0].unsupervised_rows == 96);
    CHECK(half.history[0].kl_y > 0.0);

    const auto none = train_semi(train128(), data::make_supervision_mask(128, 0.0, 0), tiny_mapper(), c);
    CHECK(none.history[0].regression == 0.0);
}

TEST_CASE("semi refuses a mapper with other pose statistics") {
    Model other = Model::create(ModelKind::Mapper, tiny_config().widths, 1);
    other.stats = train128().stats;
    other.stats.pose_mean[0] += 0.1;
    CHECK_THROWS_AS(train_semi(train128(), data::make_supervision_mask(128, 1.0, 0), other, tiny_config()),
                    ConfigError);
}

TEST_CASE("checkpoints: save, load, identical outputs") {
    const auto dir = testing::scratch_dir("ckpt");
    const Model& m = tiny_mapper();
    save_checkpoint(dir / "m.ckpt", m);
    const Model back = load_checkpoint(dir / "m.ckpt");
    CHECK(back.kind == ModelKind::Mapper);
    CHECK(back.stats.pose_mean == m.stats.pose_mean);
    const auto batch = data::make_batch(train128(), {3, 4, 5}, nullptr, false);
    const auto a = m.mapper->infer({{"y_v", batch.pose_vectors}}).trunk;
    const auto b = back.mapper->infer({{"y_v", batch.pose_vectors}}).trunk;
    CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);

    // a flipped byte in the blob is caught
    std::vector<char> bytes;
    {
        std::ifstream in(dir / "m.ckpt", std::ios::binary);
        bytes.assign(std::istreambuf_iterator<char>(in), {});
    }
    bytes[bytes.size() / 2] ^= 0x5a;
    std::ofstream(dir / "bad.ckpt", std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    CHECK_THROWS_AS(load_checkpoint(dir / "bad.ckpt"), CheckpointError);
    std::ofstream(dir / "short.ckpt", std::ios::binary) << "DGPCKPT1";
    CHECK_THROWS_AS(load_checkpoint(dir / "short.ckpt"), CheckpointError);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), CheckpointError);
}

TEST_CASE("checkpoints: optimizer state and a full conditional model round trip bitwise") {
    const auto dir = testing::scratch_dir("ckpt_cond");
    auto c = tiny_config();
    Model m = Model::create(ModelKind::Conditional, c.widths, 9);
    m.stats = train128().stats;
    ConditionalTrainer t(m, c);
    const auto batch = data::make_batch(train128(), {0, 1, 2, 3}, nullptr, true);
    auto rng = step_rng(0, 0, 0);
    t.step(batch, rng);
    save_checkpoint(dir / "c.ckpt", m, {{"generator", &t.generator_optimizer()}});

    Model back = load_checkpoint(dir / "c.ckpt");
    auto nets_a = m.networks();
    auto nets_b = back.networks();
    REQUIRE(nets_a.size() == nets_b.size());
    for (std::size_t i = 0; i < nets_a.size(); ++i) {
        auto pa = nets_a[i].second->parameters();
        auto pb = nets_b[i].second->parameters();
        REQUIRE(pa.size() == pb.size());
        for (std::size_t k = 0; k < pa.size(); ++k) CHECK(pa[k].value->storage() == pb[k].value->storage());
    }
    ConditionalTrainer t2(back, c);
    restore_optimizer(Archive::load(dir / "c.ckpt"), "generator", t2.generator_optimizer());
    CHECK(t2.generator_optimizer().steps() == 1);
    auto sa = t.generator_optimizer().state();
    auto sb = t2.generator_optimizer().state();
    REQUIRE(sa.size() == sb.size());
    for (std::size_t k = 0; k < sa.size(); ++k) CHECK(sa[k].second->storage() == sb[k].second->storage());
}

TEST_CASE("checkpoints refuse a different architecture") {
    const auto dir = testing::scratch_dir("ckpt_arch");
    Model m = Model::create(ModelKind::Mapper, {kTiny, kTiny, kTiny, kTiny, kTiny}, 1);
    save_checkpoint(dir / "m.ckpt", m);
    Archive a = Archive::load(dir / "m.ckpt");
    a.header["spec_hashes"]["mapper"] = std::string(64, '0');
    a.save(dir / "edited.ckpt");
    CHECK_THROWS_AS(load_checkpoint(dir / "edited.ckpt"), CheckpointError);
}

TEST_CASE("run directory: config, metrics and checkpoints") {
    const auto dir = testing::scratch_dir("rundir");
    auto c = tiny_config();
    c.epochs = 2;
    RunOptions o;
    o.run_dir = dir;
    int calls = 0;
    o.on_epoch = [&](const EpochRecord& r, Model&) { CHECK(r.epoch == calls++); };
    const auto r = train_mapper(train128(), c, o);
    CHECK(calls == 2);
    CHECK(std::filesystem::exists(dir / "config.json"));
    CHECK(std::filesystem::exists(dir / "checkpoints" / "latest.ckpt"));
    CHECK(std::filesystem::exists(dir / "checkpoints" / "final.ckpt"));
    const auto metrics = read_metrics(dir / "metrics.jsonl");
    REQUIRE(metrics.size() == 2);
    CHECK(metrics[1].losses_json() == r.history[1].losses_json());
    std::ifstream in(dir / "config.json");
    CHECK(TrainConfig::from_json(nlohmann::json::parse(in)).to_json() == c.to_json());
}

TEST_CASE("training refuses unlabelled data where labels are required") {
    data::Dataset d = first_n(train128(), 8);
    d.poses[3].reset();
    CHECK_THROWS_AS(train_conditional(d, tiny_config()), DataError);
    CHECK_THROWS_AS(train_mapper(d, tiny_config()), DataError);
}
