#pragma once

// Data-parallel numeric kernels. Each has an OpenMP version, used by the
// toolkit, and a plain serial version in forge::kernels::serial that is kept
// as the reference for tests and benchmarks. Both compute every output
// element with the same operation order, so results agree bit for bit.

#include <cstdint>
#include <span>
#include <vector>

namespace forge::kernels {

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}
  static Matrix from_rows(const std::vector<std::vector<double>>& rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  const std::vector<double>& data() const { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Rows scaled to unit L2 norm. Throws ValidationError on a zero row.
Matrix normalize_rows(const Matrix& m);

/// S(i, j) = cos(a_i, b_j). Throws ValidationError on mismatched widths or a
/// zero row.
Matrix cosine_matrix(const Matrix& a, const Matrix& b);

/// Mean of `values` under `resamples` bootstrap resamples (with replacement,
/// same size). Resample r draws from Rng(mix_seed(seed, r)), so the output is
/// independent of the thread count.
std::vector<double> bootstrap_means(std::span<const double> values, std::size_t resamples, std::uint64_t seed);

namespace serial {

Matrix normalize_rows(const Matrix& m);
Matrix cosine_matrix(const Matrix& a, const Matrix& b);
std::vector<double> bootstrap_means(std::span<const double> values, std::size_t resamples, std::uint64_t seed);

}  // namespace serial

}  // namespace forge::kernels
