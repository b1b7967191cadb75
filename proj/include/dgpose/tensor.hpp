#pragma once

#include <algorithm>
#include <concepts>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dgpose {

/// NCHW extent. Flat vectors are stored as (n, c, 1, 1).
struct Shape {
    int n = 1;
    int c = 1;
    int h = 1;
    int w = 1;

    std::size_t size() const {
        return static_cast<std::size_t>(n) * c * h * w;
    }
    std::size_t per_sample() const { return static_cast<std::size_t>(c) * h * w; }
    std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
    bool operator==(const Shape&) const = default;

    std::string str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
               std::to_string(w) + ")";
    }
};

class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

template <std::floating_point T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.size(), fill) {}
    Tensor(Shape shape, std::vector<T> values) : shape_(shape), data_(std::move(values)) {
        if (data_.size() != shape_.size()) {
            throw ShapeError("tensor value count does not match shape " + shape_.str());
        }
    }

    const Shape& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }
    std::vector<T>& storage() { return data_; }
    const std::vector<T>& storage() const { return data_; }

    T* sample(int i) { return data_.data() + static_cast<std::size_t>(i) * shape_.per_sample(); }
    const T* sample(int i) const {
        return data_.data() + static_cast<std::size_t>(i) * shape_.per_sample();
    }

    T& at(int n, int c, int h, int w) { return data_[index(n, c, h, w)]; }
    T at(int n, int c, int h, int w) const { return data_[index(n, c, h, w)]; }
    T& operator[](std::size_t i) { return data_[i]; }
    T operator[](std::size_t i) const { return data_[i]; }

    void reshape(Shape shape) {
        if (shape.size() != data_.size()) {
            throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
        }
        shape_ = shape;
    }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

    template <std::floating_point U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.size());
        std::transform(data_.begin(), data_.end(), out.begin(),
                       [](T x) { return static_cast<U>(x); });
        return Tensor<U>(shape_, std::move(out));
    }

    /// Rows [begin, end) along the batch axis.
    Tensor slice(int begin, int end) const {
        Shape s = shape_;
        s.n = end - begin;
        std::vector<T> out(sample(begin), sample(begin) + s.size());
        return Tensor(s, std::move(out));
    }

private:
    std::size_t index(int n, int c, int h, int w) const {
        return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
    }

    Shape shape_{0, 0, 0, 0};
    std::vector<T> data_;
};

/// Concatenates along the channel axis; batch and spatial extents must agree.
template <std::floating_point T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    const Shape sa = a.shape(), sb = b.shape();
    if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) {
        throw ShapeError("concat mismatch " + sa.str() + " vs " + sb.str());
    }
    Tensor<T> out(Shape{sa.n, sa.c + sb.c, sa.h, sa.w});
    for (int i = 0; i < sa.n; ++i) {
        std::copy_n(a.sample(i), sa.per_sample(), out.sample(i));
        std::copy_n(b.sample(i), sb.per_sample(), out.sample(i) + sa.per_sample());
    }
    return out;
}

}  // namespace dgpose
