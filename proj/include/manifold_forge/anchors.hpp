#pragma once

#include "errors.hpp"
#include "matrix.hpp"
#include "simplex.hpp"

#include <algorithm>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <vector>

namespace manifold_forge {

enum class AnchorKind { Neighbor, Random };

/// How anchor sets are drawn from the data and how their γ is initialized.
struct AnchorRule {
  AnchorKind kind = AnchorKind::Neighbor;
  std::size_t p = 5;
  /// Radial scaling about the anchors' centroid (1 keeps the samples).
  double scale = 1.0;
  /// Dirichlet concentrations for Random anchors; empty means 0.5 for every anchor.
  Vector dirichlet_alpha;
  std::optional<BiasedSimplexConstraint> bias;
  /// Number of anchor sets; 0 selects N (Neighbor) or C(N, p) capped at 20000 (Random).
  std::size_t sets = 0;

  void validate() const {
    if (p < 2) throw InvalidArgument("anchor rule: p must be at least 2");
    if (!(scale > 0.0)) throw InvalidArgument("anchor rule: scale must be positive");
    if (!dirichlet_alpha.empty() && dirichlet_alpha.size() != p)
      throw InvalidArgument("anchor rule: one Dirichlet concentration per anchor required");
    if (bias) {
      if (bias->index >= p) throw InvalidArgument("anchor rule: bias index out of range");
      if (!(bias->tau >= 0.0 && bias->tau < 1.0)) throw InvalidArgument("anchor rule: tau must lie in [0, 1)");
    }
  }

  Vector alpha() const { return dirichlet_alpha.empty() ? Vector(p, 0.5) : dirichlet_alpha; }

  std::size_t set_count(std::size_t n) const {
    if (sets > 0) return sets;
    if (kind == AnchorKind::Neighbor) return n;
    double c = 1.0; // C(n, p), capped
    for (std::size_t i = 0; i < p; ++i) {
      c = c * static_cast<double>(n - i) / static_cast<double>(i + 1);
      if (c > 20000.0) return 20000;
    }
    return static_cast<std::size_t>(std::llround(c));
  }
};

/// Dataset indices of the anchors and the (possibly scaled) anchor points, one per row.
struct AnchorSet {
  std::vector<std::size_t> indices;
  Matrix z;

  std::size_t size() const noexcept { return indices.size(); }
};

inline AnchorSet anchors_from_indices(const Matrix& x, std::vector<std::size_t> idx) {
  Matrix z = x.select_rows(idx);
  return {std::move(idx), std::move(z)};
}

/// One uniformly drawn sample and its p-1 nearest Euclidean neighbors (ties by index).
template <class Rng>
AnchorSet neighbor_anchors(const Matrix& x, std::size_t p, Rng& rng) {
  const std::size_t n = x.rows();
  if (p == 0 || n < p) throw InvalidArgument("neighbor_anchors: need N >= p");
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  const std::size_t first = pick(rng);
  std::vector<std::pair<double, std::size_t>> cand;
  cand.reserve(n - 1);
  for (std::size_t j = 0; j < n; ++j)
    if (j != first) cand.emplace_back(squared_distance(x.row(first), x.row(j)), j);
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(p - 1), cand.end());
  std::vector<std::size_t> idx{first};
  for (std::size_t t = 0; t + 1 < p; ++t) idx.push_back(cand[t].second);
  return anchors_from_indices(x, std::move(idx));
}

/// p distinct indices drawn uniformly (partial Fisher-Yates).
template <class Rng>
AnchorSet random_anchors(const Matrix& x, std::size_t p, Rng& rng) {
  const std::size_t n = x.rows();
  if (p == 0 || n < p) throw InvalidArgument("random_anchors: need N >= p");
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  for (std::size_t i = 0; i < p; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(p);
  return anchors_from_indices(x, std::move(pool));
}

/// z_i = μ + s (x_i - μ), μ the centroid of the rows.
inline Matrix scale_anchors(const Matrix& points, double s) {
  if (!(s > 0.0)) throw InvalidArgument("scale_anchors: s must be positive");
  if (s == 1.0 || points.rows() == 0) return points;
  Vector mu(points.cols(), 0.0);
  for (std::size_t i = 0; i < points.rows(); ++i)
    for (std::size_t k = 0; k < points.cols(); ++k) mu[k] += points(i, k);
  for (double& m : mu) m /= static_cast<double>(points.rows());
  Matrix out(points.rows(), points.cols());
  for (std::size_t i = 0; i < points.rows(); ++i)
    for (std::size_t k = 0; k < points.cols(); ++k) out(i, k) = mu[k] + s * (points(i, k) - mu[k]);
  return out;
}

inline AnchorSet scale_anchors(AnchorSet set, double s) {
  set.z = scale_anchors(set.z, s);
  return set;
}

template <class Rng>
AnchorSet draw_anchor_set(const Matrix& x, const AnchorRule& rule, Rng& rng) {
  AnchorSet set = rule.kind == AnchorKind::Neighbor ? neighbor_anchors(x, rule.p, rng)
                                                    : random_anchors(x, rule.p, rng);
  return scale_anchors(std::move(set), rule.scale);
}

/// Projection that keeps γ feasible for this rule (plain or biased simplex).
inline SimplexCoordinates project_for_rule(std::span<const double> kappa,
                                           const std::optional<BiasedSimplexConstraint>& bias) {
  return bias ? project_simplex_biased(kappa, *bias) : project_simplex(kappa, 1.0);
}

/// Uniform draws normalized to sum 1 (Neighbor) or a Dirichlet draw (Random),
/// then passed through the biased projection when the rule carries a floor.
template <class Rng>
SimplexCoordinates init_gamma(const AnchorRule& rule, Rng& rng) {
  SimplexCoordinates g;
  if (rule.kind == AnchorKind::Neighbor) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Vector v(rule.p);
    double sum = 0.0;
    do {
      sum = 0.0;
      for (double& e : v) sum += (e = u(rng));
    } while (!(sum > 0.0));
    for (double& e : v) e /= sum;
    g = {std::move(v), 1.0};
  } else {
    const Vector a = rule.alpha();
    g = sample_dirichlet(std::span<const double>(a), rng);
  }
  if (rule.bias) g = project_simplex_biased(g.gamma, *rule.bias);
  return g;
}

/// x̃ = Σ γ_i z_i.
inline Vector compose_virtual(const AnchorSet& anchors, std::span<const double> gamma) {
  if (gamma.size() != anchors.z.rows())
    throw DimensionError("compose_virtual: one coordinate per anchor required");
  Vector x(anchors.z.cols(), 0.0);
  for (std::size_t i = 0; i < gamma.size(); ++i)
    for (std::size_t k = 0; k < x.size(); ++k) x[k] += gamma[i] * anchors.z(i, k);
  return x;
}

} // namespace manifold_forge
