#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>

#include <Eigen/Core>

namespace lrgan {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense row-major 2-D array of doubles.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Eigen::Index rows, Eigen::Index cols) : values_(Matrix::Zero(rows, cols)) {}
  explicit Tensor(Matrix values) : values_(std::move(values)) {}

  static Tensor scalar(double v) {
    Tensor t(1, 1);
    t.values_(0, 0) = v;
    return t;
  }
  static Tensor filled(Eigen::Index rows, Eigen::Index cols, double v) {
    return Tensor(Matrix::Constant(rows, cols, v));
  }
  /// Builds a tensor from nested rows; every row must have the same length.
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);

  Eigen::Index rows() const { return values_.rows(); }
  Eigen::Index cols() const { return values_.cols(); }
  Eigen::Index size() const { return values_.size(); }
  bool is_scalar() const { return rows() == 1 && cols() == 1; }

  double& operator()(Eigen::Index r, Eigen::Index c) { return values_(r, c); }
  double operator()(Eigen::Index r, Eigen::Index c) const { return values_(r, c); }
  double item() const { return values_(0, 0); }

  std::span<double> flat() { return {values_.data(), static_cast<std::size_t>(values_.size())}; }
  std::span<const double> flat() const {
    return {values_.data(), static_cast<std::size_t>(values_.size())};
  }

  Matrix& matrix() { return values_; }
  const Matrix& matrix() const { return values_; }

  bool all_finite() const { return values_.allFinite(); }
  bool same_shape(const Tensor& other) const {
    return rows() == other.rows() && cols() == other.cols();
  }

 private:
  Matrix values_;
};

inline Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const auto r = static_cast<Eigen::Index>(rows.size());
  const auto c = r == 0 ? Eigen::Index{0} : static_cast<Eigen::Index>(rows.begin()->size());
  Tensor t(r, c);
  Eigen::Index i = 0;
  for (const auto& row : rows) {
    Eigen::Index j = 0;
    for (double v : row) {
      if (j < c) t(i, j) = v;
      ++j;
    }
    if (j != c) throw std::invalid_argument("Tensor::from_rows: ragged rows");
    ++i;
  }
  return t;
}

}  // namespace lrgan
