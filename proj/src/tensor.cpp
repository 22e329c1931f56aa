#include "megc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace megc {

std::string shape_string(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

std::int64_t shape_numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (size_t axis = 0; axis < shape.size(); ++axis) {
        int e = shape[axis];
        if (e < 1) {
            throw ShapeError("extent of axis " + std::to_string(axis) + " is " +
                             std::to_string(e) + ", must be >= 1");
        }
        n *= e;
    }
    return n;
}

Tensor::Tensor(std::vector<int> shape)
    : shape_(std::move(shape)), data_(static_cast<size_t>(shape_numel(shape_)), 0.0) {}

Tensor::Tensor(std::vector<int> shape, std::vector<double> values) : shape_(std::move(shape)) {
    const std::int64_t n = shape_numel(shape_);
    if (n != static_cast<std::int64_t>(values.size())) {
        throw ShapeError("data length " + std::to_string(values.size()) +
                         " does not match shape " + shape_string(shape_));
    }
    data_ = std::move(values);
}

Tensor Tensor::full(std::vector<int> shape, double value) {
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

std::int64_t Tensor::offset(std::initializer_list<int> idx) const {
    if (static_cast<int>(idx.size()) != rank()) {
        throw ShapeError("index rank " + std::to_string(idx.size()) + " vs tensor rank " +
                         std::to_string(rank()));
    }
    std::int64_t off = 0;
    int axis = 0;
    for (int i : idx) {
        if (i < 0 || i >= shape_[static_cast<size_t>(axis)]) {
            throw ShapeError("index " + std::to_string(i) + " out of range on axis " +
                             std::to_string(axis) + " of " + shape_string(shape_));
        }
        off = off * shape_[static_cast<size_t>(axis)] + i;
        ++axis;
    }
    return off;
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

double Tensor::max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
}

double Tensor::max_abs_diff(const Tensor& other) const {
    if (!same_shape(other)) {
        throw ShapeError("max_abs_diff shapes differ: " + shape_string(shape_) + " vs " +
                         shape_string(other.shape_));
    }
    double m = 0.0;
    for (size_t i = 0; i < data_.size(); ++i) m = std::max(m, std::abs(data_[i] - other.data_[i]));
    return m;
}

MatrixMap Tensor::matrix(Eigen::Index rows, Eigen::Index cols, std::int64_t elem_offset) {
    if (elem_offset + rows * cols > size()) {
        throw ShapeError("matrix view " + std::to_string(rows) + "x" + std::to_string(cols) +
                         " at offset " + std::to_string(elem_offset) + " exceeds tensor size " +
                         std::to_string(size()));
    }
    return MatrixMap(data_.data() + elem_offset, rows, cols);
}

ConstMatrixMap Tensor::matrix(Eigen::Index rows, Eigen::Index cols, std::int64_t elem_offset) const {
    if (elem_offset + rows * cols > size()) {
        throw ShapeError("matrix view " + std::to_string(rows) + "x" + std::to_string(cols) +
                         " at offset " + std::to_string(elem_offset) + " exceeds tensor size " +
                         std::to_string(size()));
    }
    return ConstMatrixMap(data_.data() + elem_offset, rows, cols);
}

VectorMap Tensor::vector() { return VectorMap(data_.data(), size()); }

ConstVectorMap Tensor::vector() const { return ConstVectorMap(data_.data(), size()); }

void require_extent(int got, int expected, const std::string& axis_name) {
    if (got != expected) {
        throw ShapeError("axis '" + axis_name + "': extent " + std::to_string(got) +
                         ", expected " + std::to_string(expected));
    }
}

void require_rank(const Tensor& t, int rank, const std::string& who) {
    if (t.rank() != rank) {
        throw ShapeError(who + ": rank " + std::to_string(t.rank()) + ", expected " +
                         std::to_string(rank) + " (shape " + shape_string(t.shape()) + ")");
    }
}

}  // namespace megc
