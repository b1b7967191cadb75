#pragma once

// Binary container shared by checkpoints and heatmap debug dumps.
//
//   bytes 0..7    magic "DGPCKPT1"
//   bytes 8..15   header length L, little-endian uint64
//   next L bytes  UTF-8 JSON header; "tensors" lists {name, shape, offset, count}
//                 with offsets in float32 elements from the start of the blob
//   blob          float32 little-endian values
//   last 32 bytes SHA-256 over everything before it

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dgpose/tensor.hpp"

namespace dgpose {

class ArchiveError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Archive {
    nlohmann::json header = nlohmann::json::object();
    std::vector<std::string> names;  // insertion order
    std::map<std::string, Tensor<float>> tensors;

    void add(const std::string& name, const Tensor<float>& t);
    const Tensor<float>& get(const std::string& name) const;
    bool has(const std::string& name) const { return tensors.count(name) > 0; }

    std::vector<std::uint8_t> serialize() const;
    static Archive deserialize(const std::vector<std::uint8_t>& bytes);

    /// Writes to a temporary sibling and renames it into place.
    void save(const std::filesystem::path& path) const;
    static Archive load(const std::filesystem::path& path);
};

}  // namespace dgpose
