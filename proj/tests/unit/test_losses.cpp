#include <cmath>

#include "test_support.hpp"
#include "uniam/clustering.hpp"
#include "uniam/losses.hpp"

using namespace uniam;
using uniam::test::random_matrix;

namespace {

const Matrix kZ{{0.5, -1, 2}, {1.5, 0.3, -0.7}, {-0.2, 0.8, 0.4}, {1, 1, 1}};
const std::vector<std::size_t> kAnchors{0, 2};
const Matrix kW{{0, 1, 0.5, 0.25}, {0.3, 0, 0, 1}};

Matrix from_flat(const Vector& flat, std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  m.data() = flat;
  return m;
}

struct RandomBatch {
  Matrix z;
  std::vector<Domain> domains;
  std::vector<int> labels;
  std::vector<TargetPseudoLabel> pseudo;
};

RandomBatch random_batch(Rng& rng, std::size_t n, std::size_t dim, int classes) {
  RandomBatch b;
  b.z = random_matrix(rng, n, dim);
  for (std::size_t i = 0; i < n; ++i) {
    const bool src = i < (n + 1) / 2;
    b.domains.push_back(src ? Domain::source : Domain::target);
    b.labels.push_back(src ? static_cast<int>(rng.uniform_index(classes)) : -1);
    TargetPseudoLabel p;
    p.label_attn = static_cast<int>(rng.uniform_index(classes));
    p.label_feat = static_cast<int>(rng.uniform_index(classes));
    p.w_attn = rng.uniform(0, 1);
    p.w_feat = rng.uniform(0, 1);
    b.pseudo.push_back(p);
  }
  return b;
}

}  // namespace

TEST_CASE("adversarial_loss examples") {
  const std::vector<Domain> dom{Domain::source, Domain::target};
  CHECK(adversarial_loss(Vector{0.5, 0.5}, dom, Vector{1, 1}).value ==
        doctest::Approx(2.0 * std::log(0.5)).epsilon(1e-15));
  CHECK(adversarial_loss(Vector{0.3, 0.8}, dom, Vector{0, 0}).value == 0.0);

  const std::vector<Domain> dom5{Domain::source, Domain::source, Domain::target, Domain::target,
                                 Domain::target};
  const LossValue v = adversarial_loss(Vector{0.2, 0.7, 0.9, 0.35, 0.6}, dom5, Vector{1, 0.5, 0.8, 0, 1.2});
  CHECK(v.value == doctest::Approx(-0.6449913637537388).epsilon(1e-14));
}

TEST_CASE("adversarial_loss rejects outputs outside [0,1]") {
  const std::vector<Domain> dom{Domain::source};
  CHECK_THROWS_AS(adversarial_loss(Vector{1.2}, dom, Vector{1}), NumericError);
  CHECK_THROWS_AS(adversarial_loss(Vector{0.5}, dom, Vector{-1}), ArgumentError);
}

TEST_CASE("adversarial_loss: value is never positive and gradient matches finite differences") {
  Rng rng(1);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t n = 2 + rng.uniform_index(8);
    std::vector<Domain> dom(n);
    Vector w(n), p(n);
    for (std::size_t i = 0; i < n; ++i) {
      dom[i] = rng.uniform() < 0.5 ? Domain::source : Domain::target;
      w[i] = rng.uniform(0, 1.5);
      p[i] = rng.uniform(0.05, 0.95);
    }
    const LossValue v = adversarial_loss(p, dom, w);
    CHECK(v.value <= 0.0);
    const Vector fd = finite_diff_grad([&](const Vector& x) { return adversarial_loss(x, dom, w).value; },
                                       p, 1e-7);
    CHECK(test::max_rel_error(v.grad.data(), fd) <= 1e-4);
  }
}

TEST_CASE("gated_cross_entropy examples") {
  const Matrix zero{{0, 0}};
  CHECK(gated_cross_entropy(zero, std::vector<int>{0}, Vector{0.9}, 0.85).value ==
        doctest::Approx(std::log(2.0)).epsilon(1e-15));
  const LossValue closed = gated_cross_entropy(zero, std::vector<int>{0}, Vector{0.5}, 0.85);
  CHECK(closed.value == 0.0);
  CHECK(closed.grad == Matrix(1, 2));

  const Matrix logits{{2, -1, 0.5}, {0.1, 0.2, 0.3}, {-1, 3, 0}};
  CHECK(gated_cross_entropy(logits, std::vector<int>{0, 2, 1}, Vector{0.9, 0.5, 0.86}, 0.85).value ==
        doctest::Approx(0.10239840013819546).epsilon(1e-14));

  CHECK_THROWS_AS(gated_cross_entropy(zero, std::vector<int>{2}, Vector{1}, 0.85), ArgumentError);
}

TEST_CASE("gated_cross_entropy: gradient and monotonicity in the true logit") {
  Rng rng(2);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(6), m = 2 + rng.uniform_index(4);
    const Matrix logits = random_matrix(rng, n, m, 2.0);
    std::vector<int> y(n);
    Vector w(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = static_cast<int>(rng.uniform_index(m));
      w[i] = rng.uniform();
    }
    const LossValue v = gated_cross_entropy(logits, y, w, 0.5);
    const Vector fd = finite_diff_grad(
        [&](const Vector& x) { return gated_cross_entropy(from_flat(x, n, m), y, w, 0.5).value; },
        logits.data(), 1e-6);
    CHECK(test::max_rel_error(v.grad.data(), fd) <= 1e-4);

    Matrix up = logits;
    for (std::size_t i = 0; i < n; ++i) up(i, static_cast<std::size_t>(y[i])) += 0.1;
    CHECK(gated_cross_entropy(up, y, w, 0.5).value <= v.value);
  }
}

TEST_CASE("pair weight examples") {
  CHECK(agreement_weight(true, false, 0.6, 0.7, 0.3) == doctest::Approx(0.18 / 0.67).epsilon(1e-14));
  CHECK(agreement_weight(true, false, 0.6, 0.7, 0.3) == doctest::Approx(0.2687).epsilon(1e-4));
  CHECK(agreement_weight(true, true, 0.6, 0.7, 0.3) == 1.0);
  CHECK(agreement_weight(false, false, 0.6, 0.7, 0.3) == 0.0);
  CHECK(agreement_weight(false, true, 0.6, 0.7, 0.3) == doctest::Approx(0.49 / 0.67).epsilon(1e-14));
  CHECK(agreement_weight(true, false, 0.0, 0.0, 0.3) == 0.0);
  CHECK(source_pair_weight(2, 2) == 1.0);
  CHECK(source_pair_weight(2, 3) == 0.0);
  TargetPseudoLabel p{1, 4, 0.6, 0.7};
  CHECK(target_pair_weight(1, p, 0.3) == doctest::Approx(0.18 / 0.67).epsilon(1e-14));
}

TEST_CASE("property: pair weights lie in [0,1]") {
  Rng rng(3);
  for (int i = 0; i < 2000; ++i) {
    const double w = agreement_weight(rng.uniform() < 0.5, rng.uniform() < 0.5, rng.uniform(0, 3),
                                      rng.uniform(0, 3), rng.uniform());
    CHECK(w >= 0.0);
    CHECK(w <= 1.0);
  }
}

TEST_CASE("contrastive_similarity examples") {
  const std::vector<Vector> c{{1, 0}, {0, 1}};
  CHECK(contrastive_similarity(Vector{1, 0}, c, 1.0, 0) ==
        doctest::Approx(std::exp(1.0) / (std::exp(1.0) + 1.0)).epsilon(1e-14));
  CHECK(contrastive_similarity(Vector{1, 0}, c, 1.0, 0) == doctest::Approx(0.7311).epsilon(1e-4));

  const std::vector<Vector> same{{1, 1}, {1, 1}, {1, 1}, {1, 1}};
  for (std::size_t j = 0; j < 4; ++j)
    CHECK(contrastive_similarity(Vector{0.3, -2}, same, 0.1, j) == doctest::Approx(0.25).epsilon(1e-14));

  CHECK_THROWS_AS(contrastive_similarity(Vector{1, 0}, c, 0.0, 0), ArgumentError);
}

TEST_CASE("property: contrastive similarities sum to one") {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Vector> c;
    const std::size_t n = 1 + rng.uniform_index(10);
    for (std::size_t k = 0; k < n; ++k) c.push_back(test::random_vector(rng, 5));
    const Vector zi = test::random_vector(rng, 5);
    const double tau = rng.uniform(0.05, 2.0);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += contrastive_similarity(zi, c, tau, j);
    CHECK(std::abs(s - 1.0) <= 1e-12);
  }
}

TEST_CASE("weighted_contrastive_loss matches the reference values") {
  const double expected[2][2] = {{-0.5928797947461896, 1.7490479750830419},
                                 {-0.22469084101039122, 3.3013359699814355}};
  for (int exclude = 0; exclude < 2; ++exclude)
    for (int log_variant = 0; log_variant < 2; ++log_variant) {
      ContrastiveOptions o;
      o.tau = 0.5;
      o.exclude_anchor = exclude == 0;
      o.log_variant = log_variant == 1;
      CHECK(weighted_contrastive_loss(kZ, kAnchors, kW, o).value ==
            doctest::Approx(expected[exclude][log_variant]).epsilon(1e-13));
    }
}

TEST_CASE("weighted_contrastive_loss gradients match finite differences") {
  for (int exclude = 0; exclude < 2; ++exclude)
    for (int log_variant = 0; log_variant < 2; ++log_variant) {
      ContrastiveOptions o;
      o.tau = 0.5;
      o.exclude_anchor = exclude == 0;
      o.log_variant = log_variant == 1;
      const LossValue v = weighted_contrastive_loss(kZ, kAnchors, kW, o);
      const Vector fd = finite_diff_grad(
          [&](const Vector& x) { return weighted_contrastive_loss(from_flat(x, 4, 3), kAnchors, kW, o).value; },
          kZ.data(), 1e-6);
      CHECK(test::max_rel_error(v.grad.data(), fd) <= 1e-4);
    }
}

TEST_CASE("source_contrastive_loss examples") {
  // Anchors 0 and 1 share a label; row 2 is a target sample matching neither view.
  const Matrix z{{1, 0}, {1, 0}, {0, 1}};
  const std::vector<Domain> dom{Domain::source, Domain::source, Domain::target};
  const std::vector<int> labels{0, 0, -1};
  const std::vector<TargetPseudoLabel> pseudo{{}, {}, {5, 5, 1, 1}};
  ContrastiveOptions o;
  o.tau = 1.0;
  const LossValue v = source_contrastive_loss(z, dom, labels, pseudo, 0.3, o);
  CHECK(v.value == doctest::Approx(-std::exp(1.0) / (std::exp(1.0) + 1.0)).epsilon(1e-14));
  CHECK(v.value == doctest::Approx(-0.7311).epsilon(1e-4));

  // All pair weights zero.
  const std::vector<int> distinct{0, 1, -1};
  const LossValue zero = source_contrastive_loss(z, dom, distinct, pseudo, 0.3, o);
  CHECK(zero.value == 0.0);
  for (double g : zero.grad.data()) CHECK(g == 0.0);

  const std::vector<Domain> all_target(3, Domain::target);
  CHECK_THROWS_AS(source_contrastive_loss(z, all_target, labels, pseudo, 0.3, o), ArgumentError);
}

TEST_CASE("source_contrastive_loss gradients match finite differences on random batches") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const RandomBatch b = random_batch(rng, 4 + rng.uniform_index(6), 5, 3);
    ContrastiveOptions o;
    o.tau = rng.uniform(0.2, 1.0);
    o.log_variant = trial % 2 == 1;
    const LossValue v = source_contrastive_loss(b.z, b.domains, b.labels, b.pseudo, 0.3, o);
    const Vector fd = finite_diff_grad(
        [&](const Vector& x) {
          return source_contrastive_loss(from_flat(x, b.z.rows(), 5), b.domains, b.labels, b.pseudo, 0.3, o)
              .value;
        },
        b.z.data(), 1e-6);
    CHECK(test::max_rel_error(v.grad.data(), fd) <= 1e-4);
  }
}

TEST_CASE("target_contrastive_loss matches the reference value") {
  const Matrix o{{1, 0}, {0.4, 0.6}, {0, 1}, {0.7, 0.3}};
  ContrastiveOptions opts;
  opts.tau = 0.1;
  CHECK(target_contrastive_loss(kZ, o, opts).value ==
        doctest::Approx(-0.4470985965601484).epsilon(1e-13));
}

TEST_CASE("target_contrastive_loss gradients match finite differences") {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + rng.uniform_index(6), k = 2 + rng.uniform_index(3);
    const Matrix z = random_matrix(rng, n, 4);
    Matrix o(n, k);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t a = rng.uniform_index(k), b = rng.uniform_index(k);
      const double share = rng.uniform();
      o(i, a) += share;
      o(i, b) += 1.0 - share;
    }
    ContrastiveOptions opts;
    opts.tau = rng.uniform(0.1, 1.0);
    const LossValue v = target_contrastive_loss(z, o, opts);
    const Vector fd = finite_diff_grad(
        [&](const Vector& x) { return target_contrastive_loss(from_flat(x, n, 4), o, opts).value; },
        z.data(), 1e-6);
    CHECK(test::max_rel_error(v.grad.data(), fd) <= 1e-4);
  }
}
