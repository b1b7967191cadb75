#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "dgpose/tensor.hpp"

namespace dgpose::data {

class ImageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// RGB images live in (1, 3, H, W) tensors with values in [0, 1]. Values are
/// clamped and rounded to 8 bits on write.
Tensor<float> read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Tensor<float>& image);

std::vector<std::uint8_t> encode_png(const Tensor<float>& image);
Tensor<float> decode_png(const std::vector<std::uint8_t>& bytes);

/// Sample `i` of a batch as its own (1, C, H, W) tensor.
Tensor<float> take_sample(const Tensor<float>& batch, int i);

}  // namespace dgpose::data
