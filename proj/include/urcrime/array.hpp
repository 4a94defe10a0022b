#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "urcrime/error.hpp"

namespace urcrime {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

// Dense row-major array of 64-bit reals.
class Array {
public:
    Array() = default;

    explicit Array(Shape shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

    Array(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
        if (data_.size() != shape_size(shape_)) {
            throw ShapeError("array of shape " + shape_string(shape_) + " given " +
                             std::to_string(data_.size()) + " values");
        }
    }

    static Array scalar(double v) { return Array(Shape{}, std::vector<double>{v}); }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const { return data_.size(); }

    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }
    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double item() const {
        if (data_.size() != 1) throw ShapeError("item() on array of shape " + shape_string(shape_));
        return data_[0];
    }

    // Same values, new shape with equal element count.
    Array reshaped(Shape shape) const {
        Array out = *this;
        if (shape_size(shape) != data_.size()) {
            throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
        }
        out.shape_ = std::move(shape);
        return out;
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    bool operator==(const Array&) const = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

} // namespace urcrime
