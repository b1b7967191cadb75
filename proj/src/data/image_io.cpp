#include "dgpose/data/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace dgpose::data {

namespace {

std::vector<std::uint8_t> to_rgb8(const Tensor<float>& image, int& height, int& width) {
    const Shape s = image.shape();
    if (s.n != 1 || s.c != 3) throw ImageError("expected a (1,3,H,W) image, got " + s.str());
    height = s.h;
    width = s.w;
    const std::size_t plane = s.plane();
    std::vector<std::uint8_t> px(plane * 3);
    for (std::size_t i = 0; i < plane; ++i) {
        for (int c = 0; c < 3; ++c) {
            const float v = std::clamp(image[c * plane + i], 0.0f, 1.0f);
            px[i * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
        }
    }
    return px;
}

Tensor<float> from_rgb8(const std::vector<std::uint8_t>& px, int height, int width) {
    Tensor<float> out(Shape{1, 3, height, width});
    const std::size_t plane = static_cast<std::size_t>(height) * width;
    for (std::size_t i = 0; i < plane; ++i) {
        for (int c = 0; c < 3; ++c) out[c * plane + i] = px[i * 3 + c] / 255.0f;
    }
    return out;
}

Tensor<float> finish_read(png_image& img) {
    img.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, px.data(), 0, nullptr)) {
        std::string msg = img.message;
        png_image_free(&img);
        throw ImageError("png decode failed: " + msg);
    }
    return from_rgb8(px, static_cast<int>(img.height), static_cast<int>(img.width));
}

}  // namespace

std::vector<std::uint8_t> encode_png(const Tensor<float>& image) {
    int h = 0, w = 0;
    const auto px = to_rgb8(image, h, w);
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(w);
    img.height = static_cast<png_uint_32>(h);
    img.format = PNG_FORMAT_RGB;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&img, nullptr, &size, 0, px.data(), 0, nullptr)) {
        throw ImageError(std::string("png encode failed: ") + img.message);
    }
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&img, out.data(), &size, 0, px.data(), 0, nullptr)) {
        throw ImageError(std::string("png encode failed: ") + img.message);
    }
    out.resize(size);
    return out;
}

Tensor<float> decode_png(const std::vector<std::uint8_t>& bytes) {
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
        throw ImageError(std::string("not a png: ") + img.message);
    }
    return finish_read(img);
}

Tensor<float> read_png(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ImageError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode_png(bytes);
    } catch (const ImageError& e) {
        throw ImageError(path.string() + ": " + e.what());
    }
}

void write_png(const std::filesystem::path& path, const Tensor<float>& image) {
    const auto bytes = encode_png(image);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ImageError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Tensor<float> take_sample(const Tensor<float>& batch, int i) { return batch.slice(i, i + 1); }

}  // namespace dgpose::data
