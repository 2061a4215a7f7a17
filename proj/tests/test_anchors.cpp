#include "manifold_forge/anchors.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <numeric>
#include <set>

using namespace manifold_forge;
using namespace manifold_forge::testing;

namespace {

// An rng whose first uniform index draw over n elements returns 0.
std::mt19937_64 rng_picking_first(std::size_t n) {
  for (std::uint64_t seed = 0;; ++seed) {
    std::mt19937_64 probe(seed);
    if (std::uniform_int_distribution<std::size_t>(0, n - 1)(probe) == 0) return std::mt19937_64(seed);
  }
}

// Squared distance from p to the convex hull of the rows of z: enumerate every
// support subset, solve the affine least squares on it, keep feasible solutions.
double hull_residual(const Matrix& z, std::span<const double> p) {
  const std::size_t k = z.rows(), dim = z.cols();
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t mask = 1; mask < (std::size_t{1} << k); ++mask) {
    std::vector<std::size_t> s;
    for (std::size_t i = 0; i < k; ++i)
      if (mask >> i & 1) s.push_back(i);
    const std::size_t m = s.size() - 1;
    Vector w(s.size(), 0.0);
    w[0] = 1.0;
    if (m > 0) {
      // p - z_s0 ≈ Σ c_t (z_st - z_s0)
      Matrix g(m, m);
      Vector rhs(m, 0.0);
      for (std::size_t a = 0; a < m; ++a) {
        for (std::size_t c = 0; c < dim; ++c) rhs[a] += (z(s[a + 1], c) - z(s[0], c)) * (p[c] - z(s[0], c));
        for (std::size_t b = 0; b < m; ++b)
          for (std::size_t c = 0; c < dim; ++c)
            g(a, b) += (z(s[a + 1], c) - z(s[0], c)) * (z(s[b + 1], c) - z(s[0], c));
      }
      const auto l = cholesky(g);
      if (!l) continue;
      const Vector coef = cholesky_solve(*l, rhs);
      for (std::size_t a = 0; a < m; ++a) w[a + 1] = coef[a], w[0] -= coef[a];
    }
    if (*std::min_element(w.begin(), w.end()) < -1e-12) continue;
    double r2 = 0.0;
    for (std::size_t c = 0; c < dim; ++c) {
      double r = p[c];
      for (std::size_t t = 0; t < s.size(); ++t) r -= w[t] * z(s[t], c);
      r2 += r * r;
    }
    best = std::min(best, r2);
  }
  return best;
}

} // namespace

TEST(NeighborAnchors, FirstSampleAndNearestNeighbor) {
  const Matrix x = Matrix::from_rows({{0.0}, {1.0}, {10.0}});
  auto rng = rng_picking_first(3);
  const AnchorSet s = neighbor_anchors(x, 2, rng);
  EXPECT_EQ(s.indices, (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(s.z, Matrix::from_rows({{0.0}, {1.0}}));
}

TEST(NeighborAnchors, DistinctRowsOfData) {
  std::mt19937_64 rng(40);
  const Matrix x = random_matrix(30, 3, rng);
  for (int rep = 0; rep < 50; ++rep) {
    const AnchorSet s = neighbor_anchors(x, 5, rng);
    EXPECT_EQ(std::set<std::size_t>(s.indices.begin(), s.indices.end()).size(), 5u);
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(s.z(i, c), x(s.indices[i], c));
    // The others are the nearest to the first.
    const double far = squared_distance(x.row(s.indices[0]), x.row(s.indices[4]));
    for (std::size_t j = 0; j < 30; ++j)
      if (std::find(s.indices.begin(), s.indices.end(), j) == s.indices.end()) {
        EXPECT_GE(squared_distance(x.row(s.indices[0]), x.row(j)), far);
      }
  }
  EXPECT_THROW(neighbor_anchors(x, 31, rng), InvalidArgument);
}

TEST(NeighborAnchors, TiesBrokenByLowerIndex) {
  const Matrix x = Matrix::from_rows({{0.0}, {1.0}, {-1.0}, {1.0}});
  auto rng = rng_picking_first(4);
  EXPECT_EQ(neighbor_anchors(x, 3, rng).indices, (std::vector<std::size_t>{0, 1, 2}));
}

TEST(RandomAnchors, PermutationWhenTakingAll) {
  std::mt19937_64 rng(41);
  const Matrix x = random_matrix(6, 2, rng);
  auto idx = random_anchors(x, 6, rng).indices;
  std::sort(idx.begin(), idx.end());
  EXPECT_EQ(idx, (std::vector<std::size_t>{0, 1, 2, 3, 4, 5}));
}

TEST(RandomAnchors, SameSeedSameSet) {
  std::mt19937_64 data_rng(42);
  const Matrix x = random_matrix(50, 2, data_rng);
  std::mt19937_64 a(7), b(7);
  for (int rep = 0; rep < 10; ++rep) EXPECT_EQ(random_anchors(x, 2, a).indices, random_anchors(x, 2, b).indices);
}

TEST(RandomAnchors, SetCountDefaults) {
  AnchorRule rule;
  rule.kind = AnchorKind::Random;
  rule.p = 2;
  EXPECT_EQ(rule.set_count(50), 1225u);
  rule.p = 5;
  EXPECT_EQ(rule.set_count(50), 20000u);
  rule.kind = AnchorKind::Neighbor;
  EXPECT_EQ(rule.set_count(100), 100u);
}

TEST(ScaleAnchors, TriangleExample) {
  const Matrix t = Matrix::from_rows({{0.0, 0.0}, {2.0, 0.0}, {0.0, 2.0}});
  const Matrix z = scale_anchors(t, 0.5);
  EXPECT_NEAR(z(0, 0), 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(z(0, 1), 1.0 / 3.0, 1e-15);
  EXPECT_EQ(scale_anchors(t, 1.0), t);
  EXPECT_THROW(scale_anchors(t, 0.0), InvalidArgument);
}

TEST(ScaleAnchors, CentroidInvariant) {
  std::mt19937_64 rng(43);
  const Matrix p = random_matrix(4, 3, rng);
  const Matrix z = scale_anchors(p, 1.7);
  for (std::size_t c = 0; c < 3; ++c) {
    double a = 0.0, b = 0.0;
    for (std::size_t i = 0; i < 4; ++i) a += p(i, c), b += z(i, c);
    EXPECT_NEAR(a, b, 1e-12);
  }
}

TEST(InitGamma, FeasibleUnderEveryRule) {
  std::mt19937_64 rng(44);
  AnchorRule neighbor;
  AnchorRule random;
  random.kind = AnchorKind::Random;
  random.p = 2;
  AnchorRule biased = neighbor;
  biased.bias = BiasedSimplexConstraint{1, 0.9};
  for (int rep = 0; rep < 500; ++rep)
    for (const AnchorRule* rule : {&neighbor, &random, &biased}) {
      const auto g = init_gamma(*rule, rng);
      ASSERT_EQ(g.size(), rule->p);
      for (double v : g.gamma) EXPECT_GE(v, 0.0);
      EXPECT_NEAR(std::accumulate(g.gamma.begin(), g.gamma.end(), 0.0), 1.0, 1e-12);
      if (rule->bias) {
        EXPECT_GE(g[1], 0.9 - 1e-15);
      }
    }
}

TEST(InitGamma, RandomAnchorsFollowDirichlet) {
  std::mt19937_64 rng(45);
  AnchorRule rule;
  rule.kind = AnchorKind::Random;
  rule.p = 2;
  rule.dirichlet_alpha = {2.0, 3.0};
  const int n = 50000;
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += init_gamma(rule, rng)[0];
  EXPECT_LE(std::abs(s / n - 0.4), 3.0 * std::sqrt(6.0 / 150.0 / n));
}

TEST(AnchorRule, Validation) {
  AnchorRule rule;
  rule.p = 1;
  EXPECT_THROW(rule.validate(), InvalidArgument);
  rule.p = 3;
  rule.dirichlet_alpha = {1.0, 1.0};
  EXPECT_THROW(rule.validate(), InvalidArgument);
  rule.dirichlet_alpha.clear();
  rule.bias = BiasedSimplexConstraint{3, 0.5};
  EXPECT_THROW(rule.validate(), InvalidArgument);
  rule.bias = BiasedSimplexConstraint{0, 1.0};
  EXPECT_THROW(rule.validate(), InvalidArgument);
}

TEST(ComposeVirtual, Examples) {
  const AnchorSet s = anchors_from_indices(Matrix::from_rows({{0.0}, {4.0}}), {0, 1});
  EXPECT_EQ(compose_virtual(s, Vector{0.25, 0.75})[0], 3.0);
  EXPECT_EQ(compose_virtual(s, Vector{1.0, 0.0})[0], 0.0);
  const AnchorSet t = anchors_from_indices(Matrix::from_rows({{0.0, 0.0}, {3.0, 0.0}, {0.0, 3.0}}), {0, 1, 2});
  const Vector c = compose_virtual(t, Vector(3, 1.0 / 3.0));
  EXPECT_NEAR(c[0], 1.0, 1e-15);
  EXPECT_NEAR(c[1], 1.0, 1e-15);
  EXPECT_THROW(compose_virtual(t, Vector{1.0}), DimensionError);
}

TEST(ComposeVirtual, ExactlyLinearInGamma) {
  std::mt19937_64 rng(46);
  const Matrix x = random_matrix(20, 3, rng);
  const AnchorSet s = random_anchors(x, 4, rng);
  AnchorRule rule;
  rule.p = 4;
  for (int rep = 0; rep < 100; ++rep) {
    const auto g1 = init_gamma(rule, rng), g2 = init_gamma(rule, rng);
    const double a = 0.3;
    Vector mix(4);
    for (std::size_t i = 0; i < 4; ++i) mix[i] = a * g1[i] + (1 - a) * g2[i];
    const Vector lhs = compose_virtual(s, mix);
    const Vector p1 = compose_virtual(s, g1.gamma), p2 = compose_virtual(s, g2.gamma);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(lhs[c], a * p1[c] + (1 - a) * p2[c], 1e-14);
  }
}

TEST(ComposeVirtual, InsideHullOfOriginalAnchors) {
  std::mt19937_64 rng(47);
  const Matrix x = random_matrix(40, 3, rng);
  AnchorRule rule;
  rule.p = 4;
  for (int rep = 0; rep < 20; ++rep) {
    rule.scale = rep % 2 == 0 ? 1.0 : 0.6;
    const AnchorSet s = draw_anchor_set(x, rule, rng);
    const Vector p = compose_virtual(s, init_gamma(rule, rng).gamma);
    EXPECT_LE(hull_residual(x.select_rows(s.indices), p), 1e-9);
  }
}
