#include "forge/kernels.hpp"

#include <cmath>
#include <string>

#include "forge/error.hpp"
#include "forge/rng.hpp"

namespace forge::kernels {

Matrix Matrix::from_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) return {};
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != m.cols()) throw ValidationError("ragged matrix rows");
    std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
  }
  return m;
}

namespace {

double dot(std::span<const double> x, std::span<const double> y) {
  double s = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) s += x[k] * y[k];
  return s;
}

void normalize_row(std::span<const double> in, std::span<double> out, bool& zero) {
  double norm = std::sqrt(dot(in, in));
  if (!(norm > 0.0)) {
    zero = true;
    return;
  }
  for (std::size_t k = 0; k < in.size(); ++k) out[k] = in[k] / norm;
}

void check_widths(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ValidationError("dimension mismatch: " + std::to_string(a.cols()) + " vs " + std::to_string(b.cols()));
  }
}

double resample_mean(std::span<const double> values, std::uint64_t seed, std::size_t r) {
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(r)));
  double s = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) s += values[rng.below(values.size())];
  return s / static_cast<double>(values.size());
}

}  // namespace

Matrix normalize_rows(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  const auto n = static_cast<long long>(m.rows());
  long long zero_row = -1;
#pragma omp parallel for schedule(static)
  for (long long r = 0; r < n; ++r) {
    bool zero = false;
    normalize_row(m.row(static_cast<std::size_t>(r)), out.row(static_cast<std::size_t>(r)), zero);
    if (zero) {
#pragma omp critical(forge_zero_row)
      if (zero_row < 0 || r < zero_row) zero_row = r;
    }
  }
  if (zero_row >= 0) throw ValidationError("zero vector at row " + std::to_string(zero_row) + "; cosine undefined");
  return out;
}

Matrix cosine_matrix(const Matrix& a, const Matrix& b) {
  check_widths(a, b);
  Matrix na = normalize_rows(a);
  Matrix nb = normalize_rows(b);
  Matrix s(a.rows(), b.rows());
  const auto n = static_cast<long long>(a.rows());
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < n; ++i) {
    const auto ai = na.row(static_cast<std::size_t>(i));
    for (std::size_t j = 0; j < nb.rows(); ++j) s(static_cast<std::size_t>(i), j) = dot(ai, nb.row(j));
  }
  return s;
}

std::vector<double> bootstrap_means(std::span<const double> values, std::size_t resamples, std::uint64_t seed) {
  if (values.empty()) throw ValidationError("bootstrap over an empty sample");
  std::vector<double> out(resamples);
  const auto n = static_cast<long long>(resamples);
#pragma omp parallel for schedule(static)
  for (long long r = 0; r < n; ++r) {
    out[static_cast<std::size_t>(r)] = resample_mean(values, seed, static_cast<std::size_t>(r));
  }
  return out;
}

namespace serial {

Matrix normalize_rows(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    bool zero = false;
    normalize_row(m.row(r), out.row(r), zero);
    if (zero) throw ValidationError("zero vector at row " + std::to_string(r) + "; cosine undefined");
  }
  return out;
}

Matrix cosine_matrix(const Matrix& a, const Matrix& b) {
  check_widths(a, b);
  Matrix na = serial::normalize_rows(a);
  Matrix nb = serial::normalize_rows(b);
  Matrix s(a.rows(), b.rows());
  for (std::size_t i = 0; i < na.rows(); ++i) {
    for (std::size_t j = 0; j < nb.rows(); ++j) s(i, j) = dot(na.row(i), nb.row(j));
  }
  return s;
}

std::vector<double> bootstrap_means(std::span<const double> values, std::size_t resamples, std::uint64_t seed) {
  if (values.empty()) throw ValidationError("bootstrap over an empty sample");
  std::vector<double> out(resamples);
  for (std::size_t r = 0; r < resamples; ++r) out[r] = resample_mean(values, seed, r);
  return out;
}

}  // namespace serial

}  // namespace forge::kernels
