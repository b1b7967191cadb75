#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dgpose/data/preprocess.hpp"
#include "dgpose/pose/pose.hpp"
#include "dgpose/tensor.hpp"

namespace dgpose::data {

// Manifest: JSON lines. The first line is the header
//   {"format": "dgpose-manifest", "version": 1}
// and every following line one record
//   {"id": "...", "image": "images/000001.png", "split": "train",
//    "joints": [[x, y], ... 14 pairs in pixels]}
// with "joints" omitted for unlabelled images. Paths are relative to the
// manifest's directory. Unknown record fields are kept in `extra`.
struct ManifestEntry {
    std::string id;
    std::string image;
    std::string split = "train";
    std::optional<std::array<pose::Vec2, pose::kJoints>> joints;
    nlohmann::json extra = nlohmann::json::object();
};

struct Manifest {
    std::filesystem::path root;
    std::vector<ManifestEntry> entries;

    static Manifest read(const std::filesystem::path& path);
    void write(const std::filesystem::path& path) const;
    std::vector<const ManifestEntry*> split(const std::string& name) const;
};

class ManifestError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Labelled subset of a training set. Masks with the same seed are nested:
/// the labelled set of a smaller fraction is contained in that of a larger one.
struct SupervisionMask {
    std::vector<bool> labelled;
    double fraction = 1.0;
    std::uint64_t seed = 0;

    std::size_t count() const;
    bool operator[](std::size_t i) const { return labelled[i]; }
};

SupervisionMask make_supervision_mask(std::size_t n, double fraction, std::uint64_t seed);

/// One split held in memory: normalized crops plus poses in crop coordinates.
struct Dataset {
    Tensor<float> images;  // (N, 3, 64, 64), normalized
    std::vector<std::optional<pose::PoseVector>> poses;
    std::vector<std::string> ids;
    std::vector<nlohmann::json> extra;
    NormalizationStats stats;

    int size() const { return static_cast<int>(ids.size()); }
};

/// Loads every record of `split`. With no stats given they are computed
/// from this split (meant for the training split).
Dataset load_dataset(const Manifest& manifest, const std::string& split,
                     const std::optional<NormalizationStats>& stats = std::nullopt);

/// Visiting order for one epoch: a seeded shuffle cut into batches (the
/// last one may be short). Depends only on (n, batch_size, seed, epoch).
std::vector<std::vector<int>> epoch_batches(int n, int batch_size, std::uint64_t seed, int epoch);

struct Batch {
    std::vector<int> indices;
    Tensor<float> images;              // (B, 3, 64, 64)
    std::vector<bool> labelled;        // label attached for this row
    std::vector<pose::PoseVector> poses;  // valid where labelled
    Tensor<float> pose_vectors;        // (B, 48) standardized; zero where unlabelled
    Tensor<float> heatmaps;            // (B, 24, 64, 64) when requested; zero where unlabelled
};

/// Assembles a batch; labels are attached only where the sample has a pose
/// and `mask` (when given) marks it labelled.
Batch make_batch(const Dataset& data, const std::vector<int>& indices, const SupervisionMask* mask,
                 bool with_heatmaps, const pose::AnthropometricTable& table = {});

}  // namespace dgpose::data
