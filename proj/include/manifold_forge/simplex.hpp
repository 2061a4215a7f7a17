#pragma once

#include "errors.hpp"
#include "matrix.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <span>
#include <string>

namespace manifold_forge {

/// Barycentric coordinates: nonnegative entries summing to `total`.
struct SimplexCoordinates {
  Vector gamma;
  double total = 1.0;

  std::size_t size() const noexcept { return gamma.size(); }
  double operator[](std::size_t i) const noexcept { return gamma[i]; }
};

/// Extra floor gamma[index] >= tau on top of the unit simplex.
struct BiasedSimplexConstraint {
  std::size_t index = 0;
  double tau = 0.0;
};

namespace detail {

inline void check_finite(std::span<const double> v, const char* who) {
  for (double x : v)
    if (!std::isfinite(x)) throw NumericalError(std::string(who) + ": non-finite input");
}

// Alternating sum/positivity projection, in place. Returns the number of
// positivity sweeps. A point that is already feasible up to rounding is kept
// bit-for-bit so that the projection is exactly idempotent.
inline std::size_t project_simplex_inplace(Vector& g, double c) {
  const std::size_t p = g.size();
  double sum = 0.0, mag = 0.0;
  bool nonneg = true;
  for (double v : g) {
    sum += v;
    mag += std::abs(v);
    nonneg = nonneg && v >= 0.0;
  }
  const double slack = 4.0 * std::numeric_limits<double>::epsilon() * std::max(c, mag) *
                       static_cast<double>(p);
  if (nonneg && std::abs(sum - c) <= slack) return 0;

  const double delta = (c - sum) / static_cast<double>(p);
  for (double& v : g) v += delta;

  std::size_t sweeps = 0;
  for (;;) {
    bool any_negative = false;
    for (double v : g) any_negative = any_negative || v < 0.0;
    if (!any_negative) break;
    ++sweeps;
    double pos_sum = 0.0;
    std::size_t pos_count = 0;
    for (double& v : g) {
      if (v < 0.0) v = 0.0;
      else if (v > 0.0) {
        pos_sum += v;
        ++pos_count;
      }
    }
    const double d = (c - pos_sum) / static_cast<double>(pos_count);
    for (double& v : g)
      if (v > 0.0) v += d;
  }
  return sweeps;
}

} // namespace detail

/// Euclidean projection of `kappa` onto {γ >= 0, Σγ = c}.
inline SimplexCoordinates project_simplex(std::span<const double> kappa, double c = 1.0) {
  if (kappa.empty()) throw InvalidArgument("project_simplex: empty input");
  if (!(c > 0.0) || !std::isfinite(c)) throw InvalidArgument("project_simplex: total must be positive");
  detail::check_finite(kappa, "project_simplex");
  Vector g(kappa.begin(), kappa.end());
  detail::project_simplex_inplace(g, c);
  return {std::move(g), c};
}

/// Projection onto the unit simplex with the extra floor γ_k >= τ: shift κ_k by
/// -τ, project onto total 1 - τ, shift back.
inline SimplexCoordinates project_simplex_biased(std::span<const double> kappa,
                                                 const BiasedSimplexConstraint& constraint) {
  if (!(constraint.tau >= 0.0 && constraint.tau < 1.0))
    throw InvalidArgument("project_simplex_biased: tau must lie in [0, 1), got " +
                          std::to_string(constraint.tau));
  if (constraint.index >= kappa.size())
    throw InvalidArgument("project_simplex_biased: dominant index out of range");
  if (constraint.tau == 0.0) return project_simplex(kappa, 1.0);
  detail::check_finite(kappa, "project_simplex_biased");
  Vector shifted(kappa.begin(), kappa.end());
  shifted[constraint.index] -= constraint.tau;
  detail::project_simplex_inplace(shifted, 1.0 - constraint.tau);
  shifted[constraint.index] += constraint.tau;
  return {std::move(shifted), 1.0};
}

/// Projection used when a pair is parametrized by γ₁ alone: [0,1] for Mix-up,
/// [0.5,1] when γ₁ >= γ₂ is also required.
inline double clamp_interval(double gamma1, double lo, double hi) {
  if (!(lo < hi)) throw InvalidArgument("clamp_interval: lo must be below hi");
  return std::min(hi, std::max(lo, gamma1));
}

/// Dirichlet draw by normalizing independent Gamma(α_i, 1) variates.
template <class Rng>
SimplexCoordinates sample_dirichlet(std::span<const double> alpha, Rng& rng) {
  if (alpha.empty()) throw InvalidArgument("sample_dirichlet: empty alpha");
  for (double a : alpha)
    if (!(a > 0.0) || !std::isfinite(a))
      throw InvalidArgument("sample_dirichlet: concentrations must be positive");
  Vector g(alpha.size());
  double sum = 0.0;
  do {
    sum = 0.0;
    for (std::size_t i = 0; i < alpha.size(); ++i) {
      std::gamma_distribution<double> gamma(alpha[i], 1.0);
      g[i] = gamma(rng);
      sum += g[i];
    }
  } while (!(sum > 0.0)); // all draws underflowed; only possible for tiny α
  for (double& v : g) v /= sum;
  return {std::move(g), 1.0};
}

/// γ₁ ~ Beta(a, b), the two-anchor marginal of the Dirichlet.
template <class Rng>
double sample_beta(double a, double b, Rng& rng) {
  const double alpha[2] = {a, b};
  return sample_dirichlet(std::span<const double>(alpha, 2), rng).gamma[0];
}

} // namespace manifold_forge
