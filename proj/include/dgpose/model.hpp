#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dgpose/archive.hpp"
#include "dgpose/data/preprocess.hpp"
#include "dgpose/nn/architectures.hpp"
#include "dgpose/nn/network.hpp"
#include "dgpose/optim.hpp"
#include "dgpose/pose/pose.hpp"

namespace dgpose {

enum class ModelKind { Mapper, Conditional, Semi };

std::string kind_name(ModelKind k);
ModelKind kind_from_name(const std::string& s);

nlohmann::json widths_to_json(const nn::Widths& w);
nn::Widths widths_from_json(const nlohmann::json& j, nn::Widths base = {});

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The networks of one model plus everything inference needs to use them.
///   Mapper:      mapper
///   Conditional: encoder, prior, decoder, discriminator
///   Semi:        encoder, decoder, discriminator, mapper (frozen)
struct Model {
    ModelKind kind = ModelKind::Conditional;
    nn::Widths widths;
    data::NormalizationStats stats;
    pose::AnthropometricTable table;
    std::optional<nn::Network<float>> encoder, prior, decoder, discriminator, mapper;

    nlohmann::json config = nlohmann::json::object();
    nlohmann::json metrics = nlohmann::json::object();
    int epoch = 0;

    static Model create(ModelKind kind, const nn::Widths& widths, std::uint64_t seed);

    std::vector<std::pair<std::string, nn::Network<float>*>> networks();
    std::vector<std::pair<std::string, const nn::Network<float>*>> networks() const;
    nlohmann::json spec_hashes() const;
};

/// Named optimizer whose state is stored with the checkpoint.
struct OptimizerRef {
    std::string name;
    Adam* adam;
};

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const std::vector<OptimizerRef>& optimizers = {});

/// Rebuilds the networks from the stored widths and refuses archives whose
/// recorded spec hashes differ from the rebuilt ones.
Model load_checkpoint(const std::filesystem::path& path);
Model model_from_archive(const Archive& archive);

/// Restores optimizer moments saved under `name`; the model's networks must
/// already hold the matching parameters.
void restore_optimizer(const Archive& archive, const std::string& name, Adam& adam);

/// Copies the Mapper parameters of one model into another.
void copy_mapper(const Model& from, Model& to);

}  // namespace dgpose
