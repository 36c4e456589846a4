#pragma once

// Dense double-precision vector/matrix arithmetic and a counter-based RNG.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "uniam/errors.hpp"

namespace uniam {

using Vector = std::vector<double>;

/// Row-major dense matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  /// Builds a matrix whose columns are the given vectors.
  static Matrix from_columns(std::span<const Vector> columns);
  static Matrix from_rows(std::span<const Vector> rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  Vector col(std::size_t c) const;
  void set_col(std::size_t c, std::span<const double> v);

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  Matrix transpose() const;
  void fill(double v);

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
/// a * bᵀ without materialising the transpose.
Matrix matmul_transposed(const Matrix& a, const Matrix& b);
/// aᵀ * b.
Matrix transposed_matmul(const Matrix& a, const Matrix& b);
Vector matvec(const Matrix& a, std::span<const double> x);
/// aᵀ x.
Vector matTvec(const Matrix& a, std::span<const double> x);

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> v);
double squared_distance(std::span<const double> a, std::span<const double> b);
/// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);
Vector scaled(std::span<const double> v, double s);
Vector subtract(std::span<const double> a, std::span<const double> b);

/// (v - min) / (max - min); all zeros when max == min.
Vector minmax_normalize(std::span<const double> v);

bool all_finite(std::span<const double> v);
void require_finite(std::span<const double> v, const char* what);

/// Central-difference gradient of f at x. Throws NumericError if f is
/// non-finite at any probe point.
Vector finite_diff_grad(const std::function<double(const Vector&)>& f, const Vector& x,
                        double h);

/// Solves the symmetric positive definite system a x = b by Cholesky.
/// Returns false if a is not numerically positive definite.
bool cholesky_solve(const Matrix& a, std::span<const double> b, Vector& x);

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
double power_iteration_max_eigenvalue(const Matrix& sym, int iterations);

/// Counter-based generator: draw k is a SplitMix64 finalisation of
/// (seed, k), so streams can be forked and replayed without shared state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0);

  std::uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi);
  /// Uniform integer in [0, n).
  std::size_t uniform_index(std::size_t n);
  /// Standard normal (Box-Muller, no cached second value).
  double normal();
  double normal(double mean, double sigma);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = uniform_index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

  /// Independent generator for a sub-stream (e.g. one per sample or epoch).
  Rng fork(std::uint64_t stream) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace uniam
