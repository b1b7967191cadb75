#include "dgpose/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "dgpose/data/image_io.hpp"

namespace dgpose::data {

namespace {

constexpr const char* kManifestFormat = "dgpose-manifest";
constexpr int kManifestVersion = 1;

}  // namespace

Manifest Manifest::read(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ManifestError("cannot open manifest " + path.string());
    Manifest m;
    m.root = path.parent_path();
    std::string line;
    int lineno = 0;
    bool header = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ManifestError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
        if (!header) {
            if (j.value("format", "") != kManifestFormat || j.value("version", 0) != kManifestVersion) {
                throw ManifestError(path.string() + ": missing or unsupported manifest header");
            }
            header = true;
            continue;
        }
        ManifestEntry e;
        e.id = j.at("id").get<std::string>();
        e.image = j.at("image").get<std::string>();
        e.split = j.value("split", "train");
        if (j.contains("joints")) {
            const auto& js = j["joints"];
            if (!js.is_array() || js.size() != pose::kJoints) {
                throw ManifestError(path.string() + ":" + std::to_string(lineno) + ": joints must hold 14 pairs");
            }
            std::array<pose::Vec2, pose::kJoints> joints;
            for (int i = 0; i < pose::kJoints; ++i) joints[i] = {js[i].at(0).get<double>(), js[i].at(1).get<double>()};
            e.joints = joints;
        }
        for (auto it = j.begin(); it != j.end(); ++it) {
            if (it.key() != "id" && it.key() != "image" && it.key() != "split" && it.key() != "joints") {
                e.extra[it.key()] = it.value();
            }
        }
        m.entries.push_back(std::move(e));
    }
    if (!header) throw ManifestError(path.string() + ": empty manifest");
    return m;
}

void Manifest::write(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw ManifestError("cannot write manifest " + path.string());
    out << nlohmann::json{{"format", kManifestFormat}, {"version", kManifestVersion}}.dump() << "\n";
    for (const auto& e : entries) {
        nlohmann::json j = {{"id", e.id}, {"image", e.image}, {"split", e.split}};
        if (e.joints) {
            nlohmann::json js = nlohmann::json::array();
            for (const auto& p : *e.joints) js.push_back({p.x, p.y});
            j["joints"] = js;
        }
        for (auto it = e.extra.begin(); it != e.extra.end(); ++it) j[it.key()] = it.value();
        out << j.dump() << "\n";
    }
}

std::vector<const ManifestEntry*> Manifest::split(const std::string& name) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries) {
        if (e.split == name) out.push_back(&e);
    }
    return out;
}

std::size_t SupervisionMask::count() const {
    return static_cast<std::size_t>(std::count(labelled.begin(), labelled.end(), true));
}

SupervisionMask make_supervision_mask(std::size_t n, double fraction, std::uint64_t seed) {
    if (!(fraction >= 0.0 && fraction <= 1.0)) {
        throw std::invalid_argument("supervision fraction must lie in [0, 1]");
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    SupervisionMask m;
    m.labelled.assign(n, false);
    m.fraction = fraction;
    m.seed = seed;
    for (std::size_t i = 0; i < k; ++i) m.labelled[order[i]] = true;
    return m;
}

Dataset load_dataset(const Manifest& manifest, const std::string& split,
                     const std::optional<NormalizationStats>& stats) {
    const auto entries = manifest.split(split);
    std::vector<Tensor<float>> crops;
    std::vector<std::optional<pose::PoseVector>> poses;
    crops.reserve(entries.size());
    for (const auto* e : entries) {
        Tensor<float> raw = read_png(manifest.root / e->image);
        if (e->joints) {
            Crop c = crop_person(raw, *e->joints);
            crops.push_back(std::move(c.image));
            poses.emplace_back(c.pose);
        } else {
            // without joints the image is taken as an already centred crop
            if (raw.shape().h != kCropSize || raw.shape().w != kCropSize) {
                throw ManifestError(e->id + ": unlabelled images must already be 64x64 crops");
            }
            crops.push_back(std::move(raw));
            poses.emplace_back(std::nullopt);
        }
    }
    Dataset d;
    if (stats) {
        d.stats = *stats;
    } else {
        std::vector<pose::PoseVector> labelled;
        for (const auto& p : poses) {
            if (p) labelled.push_back(*p);
        }
        d.stats = compute_stats(crops, labelled);
    }
    const int n = static_cast<int>(crops.size());
    d.images = Tensor<float>(Shape{n, 3, kCropSize, kCropSize});
    for (int i = 0; i < n; ++i) {
        normalize_images(crops[i], d.stats);
        std::copy_n(crops[i].data(), crops[i].size(), d.images.sample(i));
        d.ids.push_back(entries[i]->id);
        d.extra.push_back(entries[i]->extra);
    }
    d.poses = std::move(poses);
    return d;
}

std::vector<std::vector<int>> epoch_batches(int n, int batch_size, std::uint64_t seed, int epoch) {
    if (batch_size < 1) throw std::invalid_argument("batch size must be positive");
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(epoch), 0x62617463u};
    std::mt19937_64 rng(seq);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<int>> out;
    for (int i = 0; i < n; i += batch_size) {
        out.emplace_back(order.begin() + i, order.begin() + std::min(n, i + batch_size));
    }
    return out;
}

Batch make_batch(const Dataset& data, const std::vector<int>& indices, const SupervisionMask* mask,
                 bool with_heatmaps, const pose::AnthropometricTable& table) {
    const int b = static_cast<int>(indices.size());
    const std::size_t per = data.images.shape().per_sample();
    Batch out;
    out.indices = indices;
    out.images = Tensor<float>(Shape{b, 3, kCropSize, kCropSize});
    out.labelled.assign(b, false);
    out.poses.resize(b);
    out.pose_vectors = Tensor<float>(Shape{b, 2 * pose::kParts, 1, 1});
    if (with_heatmaps) out.heatmaps = Tensor<float>(Shape{b, pose::kParts, kCropSize, kCropSize});
    for (int r = 0; r < b; ++r) {
        const int i = indices[r];
        std::copy_n(data.images.sample(i), per, out.images.sample(r));
        const auto& p = data.poses[i];
        if (!p || (mask && !(*mask)[i])) continue;
        out.labelled[r] = true;
        out.poses[r] = *p;
        const auto v = standardize_pose(*p, data.stats);
        std::copy(v.begin(), v.end(), out.pose_vectors.sample(r));
        if (with_heatmaps) {
            pose::render_heatmaps_into(
                pose::part_geometries(pose::pose_to_pixels(*p, kCropSize, kCropSize), table),
                kCropSize, kCropSize, out.heatmaps.sample(r));
        }
    }
    return out;
}

}  // namespace dgpose::data
