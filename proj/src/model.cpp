#include "dgpose/model.hpp"

namespace dgpose {

namespace {

constexpr const char* kCheckpointFormat = "dgpose-checkpoint";
constexpr int kCheckpointVersion = 1;

// Parameter slots (trainable or buffer) that must round-trip.
std::vector<nn::ParamSlot<float>> all_slots(nn::Network<float>& net) { return net.parameters(); }

}  // namespace

std::string kind_name(ModelKind k) {
    switch (k) {
        case ModelKind::Mapper: return "mapper";
        case ModelKind::Conditional: return "conditional";
        case ModelKind::Semi: return "semi";
    }
    return "?";
}

ModelKind kind_from_name(const std::string& s) {
    if (s == "mapper") return ModelKind::Mapper;
    if (s == "conditional") return ModelKind::Conditional;
    if (s == "semi") return ModelKind::Semi;
    throw CheckpointError("unknown model kind '" + s + "'");
}

nlohmann::json widths_to_json(const nn::Widths& w) {
    return {{"encoder", w.encoder},
            {"prior", w.prior},
            {"decoder", w.decoder},
            {"discriminator", w.discriminator},
            {"mapper", w.mapper}};
}

nn::Widths widths_from_json(const nlohmann::json& j, nn::Widths w) {
    w.encoder = j.value("encoder", w.encoder);
    w.prior = j.value("prior", w.prior);
    w.decoder = j.value("decoder", w.decoder);
    w.discriminator = j.value("discriminator", w.discriminator);
    w.mapper = j.value("mapper", w.mapper);
    return w;
}

Model Model::create(ModelKind kind, const nn::Widths& widths, std::uint64_t seed) {
    Model m;
    m.kind = kind;
    m.widths = widths;
    switch (kind) {
        case ModelKind::Mapper:
            m.mapper.emplace(nn::build_mapper(widths.mapper));
            break;
        case ModelKind::Conditional:
            m.encoder.emplace(nn::build_conditional_encoder(widths.encoder));
            m.prior.emplace(nn::build_prior(widths.prior));
            m.decoder.emplace(nn::build_conditional_decoder(widths.decoder));
            m.discriminator.emplace(nn::build_discriminator(widths.discriminator));
            break;
        case ModelKind::Semi:
            m.encoder.emplace(nn::build_semi_encoder(widths.encoder));
            m.decoder.emplace(nn::build_semi_decoder(widths.decoder));
            m.discriminator.emplace(nn::build_discriminator(widths.discriminator));
            m.mapper.emplace(nn::build_mapper(widths.mapper));
            break;
    }
    // distinct, fixed streams per network
    std::uint64_t k = 0;
    for (auto& [name, net] : m.networks()) net->initialize(seed * 0x9E3779B97F4A7C15ULL + (++k));
    return m;
}

std::vector<std::pair<std::string, nn::Network<float>*>> Model::networks() {
    std::vector<std::pair<std::string, nn::Network<float>*>> out;
    if (encoder) out.emplace_back("encoder", &*encoder);
    if (prior) out.emplace_back("prior", &*prior);
    if (decoder) out.emplace_back("decoder", &*decoder);
    if (discriminator) out.emplace_back("discriminator", &*discriminator);
    if (mapper) out.emplace_back("mapper", &*mapper);
    return out;
}

std::vector<std::pair<std::string, const nn::Network<float>*>> Model::networks() const {
    std::vector<std::pair<std::string, const nn::Network<float>*>> out;
    for (auto& [n, p] : const_cast<Model*>(this)->networks()) out.emplace_back(n, p);
    return out;
}

nlohmann::json Model::spec_hashes() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [n, net] : networks()) j[n] = net->hash();
    return j;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model, const std::vector<OptimizerRef>& opts) {
    Archive a;
    a.header = {{"format", kCheckpointFormat},
                {"version", kCheckpointVersion},
                {"kind", kind_name(model.kind)},
                {"widths", widths_to_json(model.widths)},
                {"spec_hashes", model.spec_hashes()},
                {"stats", model.stats.to_json()},
                {"table", model.table.to_json()},
                {"config", model.config},
                {"metrics", model.metrics},
                {"epoch", model.epoch}};
    Model& m = const_cast<Model&>(model);
    for (auto& [net_name, net] : m.networks()) {
        for (const auto& slot : all_slots(*net)) a.add("param/" + slot.name, *slot.value);
    }
    nlohmann::json optim = nlohmann::json::object();
    for (const auto& o : opts) {
        optim[o.name] = {{"steps", o.adam->steps()}, {"config", o.adam->config().to_json()}};
        for (const auto& [n, t] : o.adam->state()) a.add("optim/" + o.name + "/" + n, *t);
    }
    a.header["optimizers"] = optim;
    a.save(path);
}

Model model_from_archive(const Archive& a) {
    if (a.header.value("format", "") != kCheckpointFormat) throw CheckpointError("archive is not a checkpoint");
    if (a.header.value("version", 0) != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version");
    Model m = Model::create(kind_from_name(a.header.at("kind")), widths_from_json(a.header.at("widths")), 0);
    const auto& stored = a.header.at("spec_hashes");
    const auto built = m.spec_hashes();
    if (stored != built) {
        throw CheckpointError("spec hash mismatch: checkpoint " + stored.dump() + " vs built " + built.dump());
    }
    for (auto& [net_name, net] : m.networks()) {
        for (auto& slot : all_slots(*net)) {
            const auto& t = a.get("param/" + slot.name);
            if (t.shape() != slot.value->shape()) {
                throw CheckpointError("shape mismatch for " + slot.name + ": " + t.shape().str() + " vs " +
                                      slot.value->shape().str());
            }
            *slot.value = t;
        }
    }
    m.stats = data::NormalizationStats::from_json(a.header.at("stats"));
    m.table = pose::AnthropometricTable::from_json(a.header.at("table"));
    m.config = a.header.value("config", nlohmann::json::object());
    m.metrics = a.header.value("metrics", nlohmann::json::object());
    m.epoch = a.header.value("epoch", 0);
    return m;
}

Model load_checkpoint(const std::filesystem::path& path) {
    try {
        return model_from_archive(Archive::load(path));
    } catch (const ArchiveError& e) {
        throw CheckpointError(path.string() + ": " + e.what());
    }
}

void restore_optimizer(const Archive& a, const std::string& name, Adam& adam) {
    const auto& optim = a.header.at("optimizers");
    if (!optim.contains(name)) throw CheckpointError("checkpoint has no optimizer '" + name + "'");
    for (auto& [n, t] : adam.mutable_state()) *t = a.get("optim/" + name + "/" + n);
    adam.set_steps(optim[name].at("steps").get<std::int64_t>());
}

void copy_mapper(const Model& from, Model& to) {
    if (!from.mapper || !to.mapper) throw CheckpointError("both models need a mapper");
    to.mapper->load_from(const_cast<nn::Network<float>&>(*from.mapper));
}

}  // namespace dgpose
