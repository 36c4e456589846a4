#include <cmath>
#include <limits>

#include "test_support.hpp"
#include "uniam/numeric.hpp"

using namespace uniam;
using uniam::test::random_matrix;
using uniam::test::random_vector;

namespace {

Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

}  // namespace

TEST_CASE("matmul by identity returns the input") {
  const Matrix a{{1, 2}, {3, 4}};
  CHECK(matmul(a, Matrix::identity(2)) == a);
}

TEST_CASE("matmul of a column by a row is the outer product") {
  const Matrix a{{1}, {2}};
  const Matrix b{{3, 4}};
  CHECK(matmul(a, b) == Matrix{{3, 4}, {6, 8}});
}

TEST_CASE("matmul agrees with the triple loop") {
  Rng rng(11);
  const Matrix a = random_matrix(rng, 5, 4);
  const Matrix b = random_matrix(rng, 4, 3);
  CHECK(test::max_abs_diff(matmul(a, b).data(), naive_matmul(a, b).data()) <= 1e-12);
}

TEST_CASE("matmul rejects a dimension mismatch") {
  CHECK_THROWS_AS(matmul(Matrix(2, 3), Matrix(2, 3)), ShapeError);
}

TEST_CASE("transposed products agree with explicit transposes") {
  Rng rng(12);
  const Matrix a = random_matrix(rng, 4, 3);
  const Matrix b = random_matrix(rng, 5, 3);
  const Matrix c = random_matrix(rng, 4, 2);
  CHECK(test::max_abs_diff(matmul_transposed(a, b).data(), matmul(a, b.transpose()).data()) <= 1e-12);
  CHECK(test::max_abs_diff(transposed_matmul(a, c).data(), matmul(a.transpose(), c).data()) <= 1e-12);
  const Vector x = random_vector(rng, 3);
  const Vector y = random_vector(rng, 4);
  const Vector ax = matvec(a, x);
  const Vector aty = matTvec(a, y);
  for (std::size_t i = 0; i < 4; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < 3; ++k) s += a(i, k) * x[k];
    CHECK(ax[i] == doctest::Approx(s).epsilon(1e-14));
  }
  for (std::size_t k = 0; k < 3; ++k) {
    double s = 0.0;
    for (std::size_t i = 0; i < 4; ++i) s += a(i, k) * y[i];
    CHECK(aty[k] == doctest::Approx(s).epsilon(1e-14));
  }
}

TEST_CASE("matmul is associative on random triples") {
  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = 1 + rng.uniform_index(6), n = 1 + rng.uniform_index(6),
                      p = 1 + rng.uniform_index(6), q = 1 + rng.uniform_index(6);
    const Matrix a = random_matrix(rng, m, n);
    const Matrix b = random_matrix(rng, n, p);
    const Matrix c = random_matrix(rng, p, q);
    const Matrix left = matmul(matmul(a, b), c);
    const Matrix right = matmul(a, matmul(b, c));
    CHECK(test::max_rel_error(left.data(), right.data()) <= 1e-9);
  }
}

TEST_CASE("l2_norm examples") {
  CHECK(l2_norm(Vector{0, 0, 0}) == 0.0);
  CHECK(l2_norm(Vector{3, 4}) == 5.0);
  Rng rng(14);
  for (int trial = 0; trial < 20; ++trial) {
    const Vector v = random_vector(rng, 7);
    const double c = rng.normal() * 3.0;
    CHECK(l2_norm(scaled(v, c)) == doctest::Approx(std::abs(c) * l2_norm(v)).epsilon(1e-12));
  }
}

TEST_CASE("minmax_normalize examples") {
  CHECK(minmax_normalize(Vector{1, 3, 5}) == Vector{0, 0.5, 1});
  CHECK(minmax_normalize(Vector{7, 7, 7}) == Vector{0, 0, 0});
  CHECK(minmax_normalize(Vector{-2, 0, 2}) == Vector{0, 0.5, 1});
  CHECK_THROWS_AS(minmax_normalize(Vector{}), ArgumentError);
}

TEST_CASE("minmax_normalize output lies in [0,1]") {
  Rng rng(15);
  for (int trial = 0; trial < 500; ++trial) {
    const Vector v = random_vector(rng, 1 + rng.uniform_index(20), std::exp(rng.uniform(-5, 5)));
    const Vector out = minmax_normalize(v);
    for (double x : out) {
      CHECK(x >= 0.0);
      CHECK(x <= 1.0);
    }
  }
}

TEST_CASE("finite_diff_grad examples") {
  const auto sq = [](const Vector& x) { return dot(x, x); };
  const Vector g = finite_diff_grad(sq, {1, 2}, 1e-5);
  CHECK(g[0] == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(g[1] == doctest::Approx(4.0).epsilon(1e-6));

  const Vector g0 = finite_diff_grad([](const Vector&) { return 3.5; }, {0.3, -2, 9}, 1e-4);
  for (double x : g0) CHECK(std::abs(x) <= 1e-9);

  const auto l1 = [](const Vector& x) { return std::abs(x[0]) + std::abs(x[1]); };
  const Vector g1 = finite_diff_grad(l1, {1, -1}, 1e-5);
  CHECK(g1[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(g1[1] == doctest::Approx(-1.0).epsilon(1e-6));
}

TEST_CASE("finite_diff_grad reports non-finite evaluations") {
  const auto bad = [](const Vector& x) { return x[0] > 0 ? std::log(-1.0) : 0.0; };
  CHECK_THROWS_AS(finite_diff_grad(bad, {0.0}, 1e-3), NumericError);
  CHECK_THROWS_AS(finite_diff_grad(bad, {0.0}, 0.0), ArgumentError);
}

TEST_CASE("require_finite flags NaN and infinity") {
  CHECK_NOTHROW(require_finite(Vector{1, 2}, "x"));
  CHECK_THROWS_AS(require_finite(Vector{1, std::numeric_limits<double>::quiet_NaN()}, "x"),
                  NumericError);
  CHECK_THROWS_AS(require_finite(Vector{std::numeric_limits<double>::infinity()}, "x"),
                  NumericError);
}

TEST_CASE("cholesky_solve on an SPD system") {
  const Matrix a{{4, 1}, {1, 3}};
  Vector x;
  REQUIRE(cholesky_solve(a, Vector{1, 2}, x));
  CHECK(x[0] == doctest::Approx(1.0 / 11.0).epsilon(1e-14));
  CHECK(x[1] == doctest::Approx(7.0 / 11.0).epsilon(1e-14));
  CHECK_FALSE(cholesky_solve(Matrix{{1, 2}, {2, 1}}, Vector{1, 1}, x));
}

TEST_CASE("power iteration finds the largest eigenvalue") {
  const Matrix a{{2, 1}, {1, 2}};
  CHECK(power_iteration_max_eigenvalue(a, 100) == doctest::Approx(3.0).epsilon(1e-9));
}

TEST_CASE("Rng: equal seeds give equal streams") {
  Rng a(42), b(42);
  bool same = true;
  for (int i = 0; i < 10000; ++i) same = same && a.next_u64() == b.next_u64();
  CHECK(same);
  Rng c(43);
  Rng d(42);
  int equal = 0;
  for (int i = 0; i < 100; ++i) equal += c.next_u64() == d.next_u64();
  CHECK(equal == 0);
}

TEST_CASE("Rng: forks and streams are reproducible and distinct") {
  const Rng base(7);
  Rng f1 = base.fork(3), f2 = base.fork(3), f3 = base.fork(4);
  for (int i = 0; i < 100; ++i) {
    const auto x = f1.next_u64();
    CHECK(x == f2.next_u64());
    CHECK(x != f3.next_u64());
  }
}

TEST_CASE("Rng: draws stay in range and have sane moments") {
  Rng rng(99);
  double sum = 0.0, sumsq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    const std::size_t k = rng.uniform_index(7);
    CHECK(k < 7);
    const double z = rng.normal();
    sum += z;
    sumsq += z * z;
  }
  CHECK(std::abs(sum / n) < 0.05);
  CHECK(std::abs(sumsq / n - 1.0) < 0.05);
}

TEST_CASE("Rng::shuffle is a permutation") {
  Rng rng(5);
  std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  rng.shuffle(v);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
}

TEST_CASE("Matrix construction helpers") {
  const Matrix m = Matrix::from_columns(std::vector<Vector>{{1, 2}, {3, 4}, {5, 6}});
  CHECK(m == Matrix{{1, 3, 5}, {2, 4, 6}});
  CHECK(Matrix::from_rows(std::vector<Vector>{{1, 3, 5}, {2, 4, 6}}) == m);
  CHECK(m.transpose() == Matrix{{1, 2}, {3, 4}, {5, 6}});
  CHECK(m.col(1) == Vector{3, 4});
  CHECK_THROWS_AS(Matrix({{1, 2}, {3}}), ShapeError);
}
