#include "manifold_forge/losses.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <numeric>

using namespace manifold_forge;
using namespace manifold_forge::testing;

namespace {

double dist(std::span<const double> a, std::span<const double> b) { return std::sqrt(squared_distance(a, b)); }

double brute_mds(const Matrix& x, const Matrix& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.rows(); ++j)
      if (i != j) s += std::pow(dist(a.row(i), a.row(j)) - dist(x.row(i), x.row(j)), 2);
  return s;
}

double brute_le(const Matrix& x, const Matrix& a, double sigma) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.rows(); ++j)
      if (i != j)
        s += std::exp(-squared_distance(x.row(i), x.row(j)) / (2 * sigma * sigma)) *
             squared_distance(a.row(i), a.row(j));
  return s;
}

// Neighborhood indicator: j among the k nearest of i, or i among those of j.
bool is_neighbor(const Matrix& x, std::size_t i, std::size_t j, std::size_t k) {
  const auto in_knn = [&](std::size_t p, std::size_t q) {
    std::size_t closer = 0;
    const double d = squared_distance(x.row(p), x.row(q));
    for (std::size_t r = 0; r < x.rows(); ++r) {
      if (r == p || r == q) continue;
      const double dr = squared_distance(x.row(p), x.row(r));
      if (dr < d || (dr == d && r < q)) ++closer;
    }
    return closer < k;
  };
  return in_knn(i, j) || in_knn(j, i);
}

double brute_contrastive(const Matrix& x, const Matrix& a, const EmbeddingLossSpec& spec) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.rows(); ++j) {
      if (i == j) continue;
      const double dx = spec.smooth_similarity
                            ? std::exp(-squared_distance(x.row(i), x.row(j)) / (2 * spec.sigma * spec.sigma))
                            : (is_neighbor(x, i, j, spec.k_neighbors) ? 1.0 : 0.0);
      const double da = squared_distance(a.row(i), a.row(j));
      s += dx * da + (1 - dx) * std::max(0.0, spec.margin - da);
    }
  return s;
}

Matrix row_normalized_gaussian(const Matrix& pts, double sigma) {
  const std::size_t n = pts.rows();
  Matrix p(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) z += p(i, j) = std::exp(-squared_distance(pts.row(i), pts.row(j)) / (2 * sigma * sigma));
    for (std::size_t j = 0; j < n; ++j) p(i, j) /= z;
  }
  return p;
}

double brute_sne(const Matrix& x, const Matrix& a, double sigma) {
  const Matrix p = row_normalized_gaussian(x, sigma), q = row_normalized_gaussian(a, sigma);
  double s = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.rows(); ++j)
      if (i != j && p(i, j) > 0) s += p(i, j) * std::log(p(i, j) / q(i, j));
  return s;
}

EmbeddingLossSpec spec_of(LossKind kind) {
  EmbeddingLossSpec s;
  s.kind = kind;
  s.sigma = 0.7;
  s.k_neighbors = kind == LossKind::LE ? 0 : 3;
  s.margin = 1.5;
  s.smooth_similarity = true;
  return s;
}

void expect_embedding_gradient(const EmbeddingLossSpec& spec, const Matrix& x, Matrix a) {
  const LossResult r = embedding_loss(spec, x, a);
  const Vector fd = central_difference([&] { return embedding_loss(spec, x, a).value; }, a.data(), 1e-6);
  EXPECT_LT(relative_error(r.grad_embedding.data(), fd), 1e-6) << to_string(spec.kind);
}

} // namespace

TEST(Mds, IsometricEmbeddingHasZeroLoss) {
  const Matrix x = Matrix::from_rows({{0.0}, {1.0}, {3.0}});
  EXPECT_EQ(mds_loss(x, x).value, 0.0);
}

TEST(Mds, CollapsedEmbeddingExample) {
  const Matrix x = Matrix::from_rows({{0.0}, {1.0}, {3.0}});
  EXPECT_DOUBLE_EQ(mds_loss(x, Matrix(3, 1, 0.5)).value, 28.0);
}

TEST(Mds, MatchesBruteForce) {
  std::mt19937_64 rng(20);
  for (int rep = 0; rep < 50; ++rep) {
    const Matrix x = random_matrix(6, 3, rng), a = random_matrix(6, 2, rng);
    EXPECT_NEAR(mds_loss(x, a).value, brute_mds(x, a), 1e-12);
  }
  EXPECT_THROW(mds_loss(Matrix(1, 2), Matrix(1, 2)), DegenerateBatchError);
}

TEST(Le, GraphInvariants) {
  std::mt19937_64 rng(21);
  const Matrix x = random_matrix(8, 3, rng);
  EmbeddingLossSpec spec = spec_of(LossKind::LE);
  const GraphMatrices g = build_similarity_graph(x, spec);
  for (std::size_t i = 0; i < 8; ++i) {
    EXPECT_EQ(g.w(i, i), 0.0);
    double row = 0.0;
    for (std::size_t j = 0; j < 8; ++j) {
      EXPECT_EQ(g.w(i, j), g.w(j, i));
      row += g.laplacian(i, j);
    }
    EXPECT_NEAR(row, 0.0, 1e-12);
  }
  EXPECT_THROW(graph_from_similarities(Matrix::from_rows({{0.0, 1.0}, {0.5, 0.0}})), InvalidArgument);
}

TEST(Le, CollapsedEmbeddingHasZeroLoss) {
  std::mt19937_64 rng(22);
  const Matrix x = random_matrix(5, 3, rng);
  EXPECT_EQ(embedding_loss(spec_of(LossKind::LE), x, Matrix(5, 2, 0.3)).value, 0.0);
}

TEST(Le, DoubleSumEqualsTraceForm) {
  std::mt19937_64 rng(23);
  for (int rep = 0; rep < 50; ++rep) {
    const Matrix x = random_matrix(9, 3, rng), a = random_matrix(9, 2, rng);
    const GraphMatrices g = build_similarity_graph(x, spec_of(LossKind::LE));
    EXPECT_NEAR(le_loss(g, a).value, le_trace_form(g, a), 1e-10);
    EXPECT_NEAR(le_loss(g, a).value, brute_le(x, a, 0.7), 1e-12);
  }
}

TEST(Le, SparsificationRules) {
  const Matrix x = Matrix::from_rows({{0.0}, {0.1}, {5.0}});
  EmbeddingLossSpec spec = spec_of(LossKind::LE);
  spec.sigma = 10.0;
  spec.k_neighbors = 1;
  const GraphMatrices knn = build_similarity_graph(x, spec);
  EXPECT_GT(knn.w(0, 1), 0.0);
  EXPECT_GT(knn.w(1, 2), 0.0); // 2's nearest is 1, kept by the union
  EXPECT_EQ(knn.w(0, 2), 0.0);
  spec.k_neighbors = 0;
  spec.distance_cutoff = 1.0;
  const GraphMatrices cut = build_similarity_graph(x, spec);
  EXPECT_GT(cut.w(0, 1), 0.0);
  EXPECT_EQ(cut.w(1, 2), 0.0);
}

TEST(Lle, CollinearExactReconstruction) {
  const Matrix x = Matrix::from_rows({{0.0, 0.0}, {1.0, 1.0}, {2.0, 2.0}});
  const ReconstructionWeights rw = lle_fit_weights(x, 2);
  EXPECT_NEAR(rw.v(1, 0), 0.5, 1e-12);
  EXPECT_NEAR(rw.v(1, 2), 0.5, 1e-12);
  EXPECT_EQ(rw.v(1, 1), 0.0);
}

TEST(Lle, WeightsSumToOneOnSupport) {
  std::mt19937_64 rng(24);
  const Matrix x = random_matrix(12, 3, rng);
  const ReconstructionWeights rw = lle_fit_weights(x, 4);
  for (std::size_t i = 0; i < 12; ++i) {
    double s = 0.0;
    std::size_t nonzero = 0;
    for (std::size_t j = 0; j < 12; ++j) {
      s += rw.v(i, j);
      nonzero += rw.v(i, j) != 0.0;
    }
    EXPECT_NEAR(s, 1.0, 1e-10);
    EXPECT_LE(nonzero, 4u);
  }
  EXPECT_THROW(lle_fit_weights(x, 12), InvalidArgument);
}

TEST(Lle, FittedWeightsBeatEveryGridCandidate) {
  std::mt19937_64 rng(25);
  const Matrix x = random_matrix(10, 3, rng);
  const ReconstructionWeights rw = lle_fit_weights(x, 3);
  for (std::size_t i = 0; i < 10; ++i) {
    const auto& nb = rw.support[i];
    const auto residual = [&](double w0, double w1, double w2) {
      double s = 0.0;
      for (std::size_t c = 0; c < 3; ++c) {
        const double r = x(i, c) - w0 * x(nb[0], c) - w1 * x(nb[1], c) - w2 * x(nb[2], c);
        s += r * r;
      }
      return s;
    };
    const double fitted = residual(rw.v(i, nb[0]), rw.v(i, nb[1]), rw.v(i, nb[2]));
    double best_grid = std::numeric_limits<double>::infinity();
    for (int a = -300; a <= 300; ++a)
      for (int b = -300; b <= 300; ++b) {
        const double w0 = a * 0.01, w1 = b * 0.01;
        best_grid = std::min(best_grid, residual(w0, w1, 1.0 - w0 - w1));
      }
    EXPECT_LE(fitted, best_grid + 1e-12) << "sample " << i;
  }
}

TEST(Lle, ElementwiseEqualsTraceForm) {
  std::mt19937_64 rng(26);
  for (int rep = 0; rep < 50; ++rep) {
    const Matrix x = random_matrix(10, 3, rng), a = random_matrix(10, 2, rng);
    const ReconstructionWeights rw = lle_fit_weights(x, 3);
    EXPECT_NEAR(lle_loss(rw, a).value, lle_trace_form(rw, a), 1e-10);
  }
}

TEST(Lle, ExactFitGivesZeroLoss) {
  const Matrix x = Matrix::from_rows({{0.0}, {1.0}, {2.0}, {3.0}});
  EmbeddingLossSpec spec = spec_of(LossKind::LLE);
  spec.k_neighbors = 2;
  // With A = X the loss is the residual of the weight fit itself.
  const ReconstructionWeights rw = lle_fit_weights(x, 2);
  EXPECT_NEAR(embedding_loss(spec, x, x).value, lle_loss(rw, x).value, 1e-15);
  // A non-degenerate triangle around a centroid is reconstructed exactly.
  const Matrix y = Matrix::from_rows({{0.0, 0.0}, {3.0, 0.0}, {0.0, 3.0}, {1.0, 1.0}});
  const ReconstructionWeights ry = lle_fit_weights(y, 3);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(ry.v(3, j), 1.0 / 3.0, 1e-12);
}

TEST(Contrastive, PairExamples) {
  EmbeddingLossSpec spec = spec_of(LossKind::Contrastive);
  spec.smooth_similarity = false;
  spec.k_neighbors = 1;
  // Two points are each other's neighbor: identical embeddings cost nothing.
  EXPECT_EQ(contrastive_loss(Matrix::from_rows({{0.0}, {1.0}}), Matrix(2, 1, 0.0), spec).value, 0.0);
  // Non-neighbors farther apart than the margin cost nothing.
  const Matrix x = Matrix::from_rows({{0.0}, {0.1}, {9.0}, {9.1}});
  const Matrix a = Matrix::from_rows({{0.0}, {0.0}, {5.0}, {5.0}});
  EXPECT_EQ(contrastive_loss(x, a, spec).value, 0.0);
  spec.margin = 0.0;
  EXPECT_THROW(contrastive_loss(x, a, spec), InvalidArgument);
}

TEST(Contrastive, MatchesBruteForce) {
  std::mt19937_64 rng(27);
  for (int rep = 0; rep < 50; ++rep) {
    const Matrix x = random_matrix(7, 3, rng), a = random_matrix(7, 2, rng);
    EmbeddingLossSpec spec = spec_of(LossKind::Contrastive);
    spec.smooth_similarity = rep % 2 == 0;
    EXPECT_NEAR(contrastive_loss(x, a, spec).value, brute_contrastive(x, a, spec), 1e-12);
  }
}

TEST(Sne, RigidCopyHasZeroLoss) {
  std::mt19937_64 rng(28);
  const Matrix x = random_matrix(6, 2, rng);
  Matrix a = x;
  for (std::size_t i = 0; i < a.rows(); ++i) a(i, 0) += 3.0; // translation
  EXPECT_NEAR(sne_loss(x, a, spec_of(LossKind::SNE)).value, 0.0, 1e-12);
}

TEST(Sne, MatchesBruteForceAndIsNonNegative) {
  std::mt19937_64 rng(29);
  for (int rep = 0; rep < 50; ++rep) {
    const Matrix x = random_matrix(5, 3, rng), a = random_matrix(5, 2, rng);
    const double v = sne_loss(x, a, spec_of(LossKind::SNE)).value;
    EXPECT_NEAR(v, brute_sne(x, a, 0.7), 1e-12);
    EXPECT_GE(v, 0.0);
  }
}

TEST(Sne, FarApartPointsStayFinite) {
  // Plain exponentials would underflow every similarity here.
  const Matrix x = Matrix::from_rows({{0.0}, {100.0}, {250.0}});
  const double v = sne_loss(x, Matrix::from_rows({{0.0}, {1.0}, {2.0}}), spec_of(LossKind::SNE)).value;
  EXPECT_TRUE(std::isfinite(v));
}

TEST(Losses, EmbeddingGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(30);
  for (LossKind kind : {LossKind::MDS, LossKind::LE, LossKind::LLE, LossKind::Contrastive, LossKind::SNE})
    for (int rep = 0; rep < 20; ++rep) {
      EmbeddingLossSpec spec = spec_of(kind);
      spec.smooth_similarity = rep % 2 == 0;
      expect_embedding_gradient(spec, random_matrix(7, 3, rng), random_matrix(7, 2, rng));
    }
}

TEST(Losses, InputGradientsMatchFiniteDifferences) {
  // LLE weights are held fixed, so only the other kinds differentiate through x.
  std::mt19937_64 rng(31);
  for (LossKind kind : {LossKind::MDS, LossKind::LE, LossKind::Contrastive, LossKind::SNE})
    for (int rep = 0; rep < 20; ++rep) {
      const EmbeddingLossSpec spec = spec_of(kind);
      Matrix x = random_matrix(6, 3, rng);
      const Matrix a = random_matrix(6, 2, rng);
      const LossResult r = embedding_loss(spec, x, a);
      const Vector fd = central_difference([&] { return embedding_loss(spec, x, a).value; }, x.data(), 1e-6);
      EXPECT_LT(relative_error(r.grad_input.data(), fd), 1e-6) << to_string(kind);
    }
}

TEST(Losses, NonNegativeAndPermutationEquivariant) {
  std::mt19937_64 rng(32);
  for (LossKind kind : {LossKind::MDS, LossKind::LE, LossKind::LLE, LossKind::Contrastive, LossKind::SNE}) {
    const EmbeddingLossSpec spec = spec_of(kind);
    const Matrix x = random_matrix(7, 3, rng), a = random_matrix(7, 2, rng);
    const std::vector<std::size_t> perm{3, 0, 6, 1, 5, 2, 4};
    const Vector per = per_point_loss(spec, x, a);
    const Vector per_perm = per_point_loss(spec, x.select_rows(perm), a.select_rows(perm));
    for (std::size_t i = 0; i < perm.size(); ++i) {
      EXPECT_GE(per[i], 0.0);
      EXPECT_NEAR(per_perm[i], per[perm[i]], 1e-12) << to_string(kind);
    }
    const double total = std::accumulate(per.begin(), per.end(), 0.0);
    EXPECT_NEAR(embedding_loss(spec, x, a).value, total, 1e-10);
  }
}

TEST(TotalPgsLoss, UniformWeightingMatchesPlainLoss) {
  std::mt19937_64 rng(33);
  const Matrix x = random_matrix(7, 3, rng), a = random_matrix(7, 2, rng);
  std::vector<PointRole> roles(7, PointRole::Data);
  roles[5] = roles[6] = PointRole::Virtual; // 2 virtual + 5 data
  for (LossKind kind : {LossKind::MDS, LossKind::LE, LossKind::SNE}) {
    const EmbeddingLossSpec spec = spec_of(kind);
    EXPECT_NEAR(total_pgs_loss(spec, x, a, {}, roles).value, embedding_loss(spec, x, a).value, 1e-12);
  }
}

TEST(TotalPgsLoss, DataOnlyWeightingDropsVirtualPairs) {
  std::mt19937_64 rng(34);
  const Matrix x = random_matrix(7, 3, rng), a = random_matrix(7, 2, rng);
  std::vector<PointRole> roles(7, PointRole::Data);
  roles[5] = roles[6] = PointRole::Virtual;
  const std::vector<std::size_t> data{0, 1, 2, 3, 4};
  for (LossKind kind : {LossKind::MDS, LossKind::LE}) {
    const EmbeddingLossSpec spec = spec_of(kind);
    const double full = total_pgs_loss(spec, x, a, {1.0, 0.0, 0.0}, roles).value;
    EXPECT_NEAR(full, embedding_loss(spec, x.select_rows(data), a.select_rows(data)).value, 1e-12);
  }
}

TEST(TotalPgsLoss, ThreePartDecomposition) {
  std::mt19937_64 rng(35);
  const Matrix x = random_matrix(7, 3, rng), a = random_matrix(7, 2, rng);
  std::vector<PointRole> roles(7, PointRole::Data);
  roles[1] = roles[4] = PointRole::Virtual;
  const EmbeddingLossSpec spec = spec_of(LossKind::MDS);
  const double dd = total_pgs_loss(spec, x, a, {1, 0, 0}, roles).value;
  const double dv = total_pgs_loss(spec, x, a, {0, 1, 0}, roles).value;
  const double vv = total_pgs_loss(spec, x, a, {0, 0, 1}, roles).value;
  EXPECT_NEAR(total_pgs_loss(spec, x, a, {2, 3, 5}, roles).value, 2 * dd + 3 * dv + 5 * vv, 1e-12);
  EXPECT_NEAR(dd + dv + vv, mds_loss(x, a).value, 1e-12);
}

TEST(TotalPgsLoss, NonDecomposableKindsRejectWeights) {
  std::mt19937_64 rng(36);
  const Matrix x = random_matrix(5, 3, rng), a = random_matrix(5, 2, rng);
  const std::vector<PointRole> roles(5, PointRole::Data);
  EXPECT_THROW(total_pgs_loss(spec_of(LossKind::SNE), x, a, {1, 0.5, 1}, roles), UnsupportedDecomposition);
  EXPECT_THROW(total_pgs_loss(spec_of(LossKind::MDS), x, a, {0, 0, 0}, roles), InvalidArgument);
  EXPECT_THROW(total_pgs_loss(spec_of(LossKind::MDS), x, a, {}, std::span(roles).first(4)), DimensionError);
}
