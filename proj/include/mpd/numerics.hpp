#pragma once

// Small dense linear algebra and the Adam optimizer shared by the decoder.
// Storage is double precision; reductions accumulate in double as well.

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <vector>

namespace mpd {

using Vector = std::vector<double>;

/// The single random source threaded through initialization and data
/// generation. Always passed explicitly.
using Rng = std::mt19937_64;

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  Matrix transposed() const;
  bool all_finite() const noexcept;
  double sum() const noexcept;
  std::vector<double> row_sums() const;
  std::vector<double> col_sums() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Throws ConfigError on a.cols() != b.rows().
Matrix matmul(const Matrix& a, const Matrix& b);

/// a * b^T without materializing the transpose.
Matrix matmul_transposed(const Matrix& a, const Matrix& b);

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);

/// Max-subtracted softmax of v / temperature. Throws NumericError on
/// non-finite input and ConfigError on a non-positive temperature.
Vector softmax(std::span<const double> v, double temperature = 1.0);

/// log(sum(exp(v))) computed stably; -inf for an empty span.
double log_sum_exp(std::span<const double> v);

/// Throws NumericError when either vector has zero norm.
double cosine_sim(std::span<const double> a, std::span<const double> b);

/// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(std::span<const double> v);

struct AdamSettings {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamSettings settings;
  std::uint64_t step = 0;
  Matrix first_moment;
  Matrix second_moment;

  /// Fresh zeroed accumulators shaped like `param`.
  static AdamState for_param(const Matrix& param, AdamSettings settings = {});
};

/// One bias-corrected Adam update. `param` and `state` are updated in place.
/// Throws ConfigError on shape mismatch and NumericError on a non-finite
/// gradient; on error neither argument is modified.
void adam_step(Matrix& param, const Matrix& grad, AdamState& state);

}  // namespace mpd
