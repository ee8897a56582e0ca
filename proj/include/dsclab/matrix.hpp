#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace dsclab {

// Dense row-major matrix of doubles. Everything in this project is desk-scale
// (d <= 4096), so a flat std::vector with explicit loops is both fast enough
// and fully deterministic: no blocking, no threads, fixed summation order.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix identity(std::size_t n);

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const {
    return {data_.data() + i * cols_, cols_};
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  Matrix transposed() const;
  double frobenius_norm() const;
  // Largest absolute asymmetry max_ij |a(i,j) - a(j,i)|; 0 for non-square is a
  // caller error and throws.
  double max_asymmetry() const;

  bool operator==(const Matrix& other) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// a (r x k) * b (k x c) -> r x c
Matrix matmul(const Matrix& a, const Matrix& b);
// a (r x c) * x (c) -> r
std::vector<double> matvec(const Matrix& a, std::span<const double> x);
// a^T (c x r) * x (r) -> c
std::vector<double> matvec_transposed(const Matrix& a, std::span<const double> x);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);          // Euclidean norm
double squared_norm(std::span<const double> a);
// a - b elementwise; sizes must match.
std::vector<double> subtract(std::span<const double> a, std::span<const double> b);
void add_in_place(std::span<double> a, std::span<const double> b);
void scale_in_place(std::span<double> a, double s);

}  // namespace dsclab
