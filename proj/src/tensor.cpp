#include "eenn/tensor.hpp"

#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>

#include "eenn/error.hpp"

namespace eenn {

namespace {

std::size_t extent_product(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

void check_shape(const Shape& shape) {
    if (shape.empty()) {
        throw Error("dimension_error", "tensor shape must have at least one extent");
    }
    for (auto e : shape) {
        if (e == 0) {
            throw Error("dimension_error", "tensor extents must be positive: " + shape_str(shape));
        }
    }
}

}  // namespace

std::string shape_str(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(extent_product(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (extent_product(shape_) != data_.size()) {
        throw Error("dimension_error",
                    "shape " + shape_str(shape_) + " does not match " + std::to_string(data_.size()) + " values");
    }
}

Tensor Tensor::scalar(double value) { return Tensor({1}, std::vector<double>{value}); }

Tensor Tensor::vector(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) {
            throw Error("dimension_error", "ragged matrix literal");
        }
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
}

std::size_t Tensor::rows() const {
    if (rank() == 1) return 1;
    if (rank() == 2) return shape_[0];
    throw Error("dimension_error", "rows() needs rank 1 or 2, got " + shape_str(shape_));
}

std::size_t Tensor::cols() const {
    if (rank() == 1) return shape_[0];
    if (rank() == 2) return shape_[1];
    throw Error("dimension_error", "cols() needs rank 1 or 2, got " + shape_str(shape_));
}

double Tensor::item() const {
    if (data_.size() != 1) {
        throw Error("dimension_error", "item() on tensor of shape " + shape_str(shape_));
    }
    return data_[0];
}

bool Tensor::all_finite() const noexcept {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

Tensor Tensor::select_rows(std::span<const std::size_t> indices) const {
    const std::size_t c = cols();
    Tensor out({indices.size(), c});
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= rows()) {
            throw Error("dimension_error", "row index out of range");
        }
        std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(indices[i] * c), c,
                    out.data_.begin() + static_cast<std::ptrdiff_t>(i * c));
    }
    return out;
}

bool bit_equal(const Tensor& a, const Tensor& b) noexcept {
    if (a.shape() != b.shape()) return false;
    return std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

}  // namespace eenn
