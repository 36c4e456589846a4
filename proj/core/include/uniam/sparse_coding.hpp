#pragma once

// l1-regularised reconstruction of a query over a prototype dictionary and
// the per-class residual decomposition used for commonness scoring.

#include <span>
#include <vector>

#include "uniam/numeric.hpp"

namespace uniam {

/// Columns of `atoms` are prototypes; `atom_labels[j]` is the class (or
/// cluster) id of column j. Several atoms may share a label.
struct Dictionary {
  Matrix atoms;
  std::vector<int> atom_labels;
  bool normalized = false;

  std::size_t dim() const { return atoms.rows(); }
  std::size_t num_atoms() const { return atoms.cols(); }
  Vector atom(std::size_t j) const { return atoms.col(j); }
  /// Distinct labels in ascending order.
  std::vector<int> class_ids() const;

  void validate() const;
};

struct SparseCode {
  Vector coeffs;
  double rho = 0.0;
  int iterations_used = 0;
  bool converged = false;
};

/// Per-class reconstruction errors, aligned with `class_ids` (ascending).
struct ResidualVector {
  Vector values;
  std::vector<int> class_ids;
};

struct LassoOptions {
  double rho = 0.1;
  int max_iter = 2000;
  double tol = 1e-6;
};

/// Scales every column to unit l2 norm. Throws ArgumentError naming the
/// first zero column.
Dictionary normalize_dictionary(const Dictionary& d);

/// ‖query − D c‖² + ρ‖c‖₁
double lasso_objective(std::span<const double> coeffs, std::span<const double> query,
                       const Dictionary& d, double rho);

/// Minimises ‖query − D c‖² + ρ‖c‖₁ by FISTA with step 1/L, L the largest
/// eigenvalue of 2DᵀD (power iteration). Every 25 iterations the current
/// support and signs are tried in a closed-form reduced solve; the result is
/// accepted when it satisfies the optimality conditions to `tol`.
SparseCode solve_lasso(std::span<const double> query, const Dictionary& d, double rho,
                       int max_iter = 2000, double tol = 1e-6);
SparseCode solve_lasso(std::span<const double> query, const Dictionary& d,
                       const LassoOptions& opts);

/// Largest violation of the subgradient optimality conditions of the lasso
/// objective at `code.coeffs`. Zero at an exact optimum.
double kkt_residual(const SparseCode& code, std::span<const double> query, const Dictionary& d,
                    double rho);

/// r(k) = ‖query − D δ_k(c)‖₂ where δ_k keeps only coefficients of atoms
/// labelled k.
ResidualVector class_residuals(std::span<const double> query, const Dictionary& d,
                               const SparseCode& code);

/// Normalises the query and dictionary (unless `raw`), solves, and returns
/// the residual vector against the normalised dictionary. The dictionary is
/// normalised once by the caller when `d.normalized` is already set.
struct ResidualMatch {
  SparseCode code;
  ResidualVector residuals;
};
ResidualMatch match_residuals(std::span<const double> query, const Dictionary& d,
                              const LassoOptions& opts, bool raw = false);

}  // namespace uniam
