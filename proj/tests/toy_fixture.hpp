#pragma once

// A small synthetic dataset generated once per test binary.

#include <filesystem>
#include <string>

#include "dgpose/data/dataset.hpp"
#include "dgpose/data/synthetic.hpp"

namespace dgpose::testing {

inline std::filesystem::path scratch_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("dgpose_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

struct Toy {
    data::Manifest manifest;
    data::Dataset train;
    data::Dataset test;
};

/// `n` figures, the last `n_test` in the test split.
inline const Toy& toy(int n = 160, int n_test = 32) {
    static const Toy t = [&] {
        const auto dir = scratch_dir("toy_" + std::to_string(n));
        Toy out;
        out.manifest = data::generate_synthetic_dataset(data::SyntheticFigureSpec{}, n, n_test, dir);
        out.train = data::load_dataset(out.manifest, "train");
        out.test = data::load_dataset(out.manifest, "test", out.train.stats);
        return out;
    }();
    return t;
}

}  // namespace dgpose::testing
