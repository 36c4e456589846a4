#include "uniam/sparse_coding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace uniam {

namespace {

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

double soft_threshold(double x, double t) {
  if (x > t) return x - t;
  if (x < -t) return x + t;
  return 0.0;
}

void check_query(std::span<const double> query, const Dictionary& d) {
  d.validate();
  if (query.size() != d.dim())
    throw ShapeError("query has dimension " + std::to_string(query.size()) +
                     ", dictionary atoms have " + std::to_string(d.dim()));
  require_finite(query, "solve_lasso query");
  require_finite(d.atoms.data(), "solve_lasso dictionary");
}

// KKT violation from the precomputed Gram system: grad = 2(G c − b).
double kkt_from_gram(const Matrix& gram, const Vector& b, const Vector& c, double rho) {
  double worst = 0.0;
  for (std::size_t j = 0; j < c.size(); ++j) {
    const double g = 2.0 * (dot(gram.row(j), c) - b[j]);
    const double v = c[j] != 0.0 ? std::abs(g + rho * sign(c[j])) : std::max(0.0, std::abs(g) - rho);
    worst = std::max(worst, v);
  }
  return worst;
}

// Closed-form solve on the support of `c` with fixed signs:
// G_SS c_S = b_S − (ρ/2) sign(c_S). Returns false if the result flips a sign
// or the reduced Gram matrix is singular.
bool polish_support(const Matrix& gram, const Vector& b, const Vector& c, double rho,
                    Vector& out) {
  std::vector<std::size_t> support;
  for (std::size_t j = 0; j < c.size(); ++j)
    if (c[j] != 0.0) support.push_back(j);
  out.assign(c.size(), 0.0);
  if (support.empty()) return true;
  const std::size_t s = support.size();
  Matrix g(s, s);
  Vector rhs(s);
  for (std::size_t a = 0; a < s; ++a) {
    for (std::size_t bb = 0; bb < s; ++bb) g(a, bb) = gram(support[a], support[bb]);
    rhs[a] = b[support[a]] - 0.5 * rho * sign(c[support[a]]);
  }
  Vector x;
  if (!cholesky_solve(g, rhs, x)) return false;
  for (std::size_t a = 0; a < s; ++a) {
    if (sign(x[a]) != sign(c[support[a]])) return false;
    out[support[a]] = x[a];
  }
  return true;
}

}  // namespace

std::vector<int> Dictionary::class_ids() const {
  std::vector<int> ids = atom_labels;
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

void Dictionary::validate() const {
  if (atoms.cols() == 0 || atoms.rows() == 0) throw ShapeError("dictionary has no atoms");
  if (atom_labels.size() != atoms.cols())
    throw ShapeError("dictionary has " + std::to_string(atoms.cols()) + " atoms but " +
                     std::to_string(atom_labels.size()) + " labels");
}

Dictionary normalize_dictionary(const Dictionary& d) {
  d.validate();
  Dictionary out = d;
  for (std::size_t j = 0; j < d.num_atoms(); ++j) {
    double norm_sq = 0.0;
    for (std::size_t r = 0; r < d.dim(); ++r) norm_sq += d.atoms(r, j) * d.atoms(r, j);
    const double norm = std::sqrt(norm_sq);
    if (!(norm > 0.0) || !std::isfinite(norm))
      throw ArgumentError("normalize_dictionary: degenerate atom in column " + std::to_string(j));
    for (std::size_t r = 0; r < d.dim(); ++r) out.atoms(r, j) /= norm;
  }
  out.normalized = true;
  return out;
}

double lasso_objective(std::span<const double> coeffs, std::span<const double> query,
                       const Dictionary& d, double rho) {
  const Vector recon = matvec(d.atoms, coeffs);
  double l1 = 0.0;
  for (double c : coeffs) l1 += std::abs(c);
  return squared_distance(query, recon) + rho * l1;
}

SparseCode solve_lasso(std::span<const double> query, const Dictionary& d, double rho,
                       int max_iter, double tol) {
  check_query(query, d);
  if (!(rho >= 0.0) || !std::isfinite(rho)) throw ArgumentError("solve_lasso: rho must be >= 0");
  if (max_iter < 1) throw ArgumentError("solve_lasso: max_iter must be >= 1");

  const std::size_t n = d.num_atoms();
  const Matrix gram = transposed_matmul(d.atoms, d.atoms);
  const Vector b = matTvec(d.atoms, query);

  SparseCode code;
  code.rho = rho;
  code.coeffs.assign(n, 0.0);

  if (kkt_from_gram(gram, b, code.coeffs, rho) <= tol) {
    code.converged = true;
    return code;
  }

  Matrix gram2 = gram;
  for (double& x : gram2.data()) x *= 2.0;
  const double lipschitz = power_iteration_max_eigenvalue(gram2, 50);
  if (!(lipschitz > 0.0)) {
    code.converged = true;
    return code;
  }
  // Power iteration may undershoot slightly; a small margin keeps the step
  // within the convergence region.
  const double step = 1.0 / (lipschitz * 1.01);

  Vector x = code.coeffs;
  Vector y = x;
  Vector x_next(n);
  double t = 1.0;
  Vector polished;
  // The reduced solve on the current support is exact when the support and
  // signs are right; keep whichever point satisfies the conditions better.
  const auto settle = [&](const Vector& iterate) {
    const double k_iter = kkt_from_gram(gram, b, iterate, rho);
    double k_pol = std::numeric_limits<double>::infinity();
    if (polish_support(gram, b, iterate, rho, polished)) k_pol = kkt_from_gram(gram, b, polished, rho);
    code.coeffs = k_pol < k_iter ? polished : iterate;
    code.converged = std::min(k_iter, k_pol) <= tol;
    return code.converged;
  };
  for (int it = 1; it <= max_iter; ++it) {
    for (std::size_t j = 0; j < n; ++j) {
      const double grad = 2.0 * (dot(gram.row(j), y) - b[j]);
      x_next[j] = soft_threshold(y[j] - step * grad, step * rho);
    }
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    const double momentum = (t - 1.0) / t_next;
    for (std::size_t j = 0; j < n; ++j) y[j] = x_next[j] + momentum * (x_next[j] - x[j]);
    x.swap(x_next);
    t = t_next;
    code.iterations_used = it;

    if (kkt_from_gram(gram, b, x, rho) <= tol) {
      settle(x);
      return code;
    }
    if (it % 25 == 0 && polish_support(gram, b, x, rho, polished) &&
        kkt_from_gram(gram, b, polished, rho) <= tol) {
      code.coeffs = polished;
      code.converged = true;
      return code;
    }
  }
  settle(x);
  require_finite(code.coeffs, "solve_lasso coefficients");
  return code;
}

SparseCode solve_lasso(std::span<const double> query, const Dictionary& d,
                       const LassoOptions& opts) {
  return solve_lasso(query, d, opts.rho, opts.max_iter, opts.tol);
}

double kkt_residual(const SparseCode& code, std::span<const double> query, const Dictionary& d,
                    double rho) {
  check_query(query, d);
  if (code.coeffs.size() != d.num_atoms())
    throw ShapeError("kkt_residual: code length does not match atom count");
  const Vector residual = subtract(matvec(d.atoms, code.coeffs), query);
  const Vector corr = matTvec(d.atoms, residual);
  double worst = 0.0;
  for (std::size_t j = 0; j < corr.size(); ++j) {
    const double g = 2.0 * corr[j];
    const double c = code.coeffs[j];
    const double v = c != 0.0 ? std::abs(g + rho * sign(c)) : std::max(0.0, std::abs(g) - rho);
    worst = std::max(worst, v);
  }
  return worst;
}

ResidualVector class_residuals(std::span<const double> query, const Dictionary& d,
                               const SparseCode& code) {
  d.validate();
  if (query.size() != d.dim()) throw ShapeError("class_residuals: query dimension mismatch");
  if (code.coeffs.size() != d.num_atoms())
    throw ShapeError("class_residuals: code length does not match atom count");
  ResidualVector out;
  out.class_ids = d.class_ids();
  out.values.reserve(out.class_ids.size());
  Vector recon(d.dim());
  for (int k : out.class_ids) {
    std::fill(recon.begin(), recon.end(), 0.0);
    for (std::size_t j = 0; j < d.num_atoms(); ++j) {
      const double c = code.coeffs[j];
      if (d.atom_labels[j] != k || c == 0.0) continue;
      for (std::size_t r = 0; r < d.dim(); ++r) recon[r] += c * d.atoms(r, j);
    }
    out.values.push_back(std::sqrt(squared_distance(query, recon)));
  }
  return out;
}

ResidualMatch match_residuals(std::span<const double> query, const Dictionary& d,
                              const LassoOptions& opts, bool raw) {
  if (raw) {
    ResidualMatch m;
    m.code = solve_lasso(query, d, opts);
    m.residuals = class_residuals(query, d, m.code);
    return m;
  }
  const Dictionary unit = d.normalized ? d : normalize_dictionary(d);
  Vector q(query.begin(), query.end());
  const double norm = l2_norm(q);
  if (norm > 0.0)
    for (double& x : q) x /= norm;
  ResidualMatch m;
  m.code = solve_lasso(q, unit, opts);
  m.residuals = class_residuals(q, unit, m.code);
  return m;
}

}  // namespace uniam
