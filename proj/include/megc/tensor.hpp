#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace megc {

using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<MatrixRM>;
using ConstMatrixMap = Eigen::Map<const MatrixRM>;
using VectorMap = Eigen::Map<Eigen::VectorXd>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;

/// Shape/axis mismatch between tensors. The message names the offending axis.
class ShapeError : public std::invalid_argument {
  public:
    explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

std::string shape_string(const std::vector<int>& shape);

/// Dense row-major multi-dimensional array of doubles with shape metadata.
/// Every extent is >= 1 and the flat storage length equals the product of
/// the extents.
class Tensor {
  public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape);
    Tensor(std::vector<int> shape, std::vector<double> values);

    static Tensor full(std::vector<int> shape, double value);
    static Tensor scalar(double value);

    int rank() const { return static_cast<int>(shape_.size()); }
    const std::vector<int>& shape() const { return shape_; }
    int extent(int axis) const { return shape_.at(static_cast<size_t>(axis)); }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<size_t>(i)]; }

    /// Row-major flat offset of a multi-index; bounds-checked.
    std::int64_t offset(std::initializer_list<int> idx) const;
    double& at(std::initializer_list<int> idx) { return data_[static_cast<size_t>(offset(idx))]; }
    double at(std::initializer_list<int> idx) const { return data_[static_cast<size_t>(offset(idx))]; }

    void fill(double value);
    void set_zero() { fill(0.0); }
    bool all_finite() const;

    double max_abs() const;
    double max_abs_diff(const Tensor& other) const;

    // Eigen views over contiguous storage. Callers pick the factorization
    // of the flat buffer; rows*cols (+offset) must stay in range.
    MatrixMap matrix(Eigen::Index rows, Eigen::Index cols, std::int64_t elem_offset = 0);
    ConstMatrixMap matrix(Eigen::Index rows, Eigen::Index cols, std::int64_t elem_offset = 0) const;
    VectorMap vector();
    ConstVectorMap vector() const;

  private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

std::int64_t shape_numel(const std::vector<int>& shape);

/// Throws ShapeError naming `axis_name` unless the two extents agree.
void require_extent(int got, int expected, const std::string& axis_name);
void require_rank(const Tensor& t, int rank, const std::string& who);

}  // namespace megc
