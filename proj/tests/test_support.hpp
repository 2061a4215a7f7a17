#pragma once

#include "manifold_forge/matrix.hpp"
#include "manifold_forge/model.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

namespace manifold_forge::testing {

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = u(rng);
  return m;
}

inline Vector random_vector(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Vector v(n);
  for (double& e : v) e = u(rng);
  return v;
}

/// Fc[in, hidden] -> ReLU -> Fc[hidden, out], randomly initialized.
inline Model two_layer_model(std::size_t in, std::size_t hidden, std::size_t out, std::mt19937_64& rng) {
  ModelSpec spec{{1, 1, in}, {layers::Linear{in, hidden}, layers::Relu{}, layers::Linear{hidden, out}}};
  return Model::initialize(spec, rng);
}

/// Central difference of f at v along every coordinate, restoring v afterwards.
inline Vector central_difference(const std::function<double()>& f, std::span<double> v, double h) {
  Vector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double keep = v[i];
    v[i] = keep + h;
    const double up = f();
    v[i] = keep - h;
    const double down = f();
    v[i] = keep;
    out[i] = (up - down) / (2.0 * h);
  }
  return out;
}

/// max_i |a_i - b_i| / max(max_i |b_i|, floor): a scale-aware relative error.
inline double relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-8) {
  double diff = 0.0, scale = floor;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max(scale, std::abs(b[i]));
  }
  return diff / scale;
}

/// Euclidean projection onto {γ >= 0, Σγ = c} by sorting and thresholding.
inline Vector sort_threshold_projection(std::span<const double> v, double c) {
  Vector u(v.begin(), v.end());
  std::sort(u.begin(), u.end(), std::greater<>());
  double cum = 0.0, theta = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    cum += u[k];
    const double t = (cum - c) / static_cast<double>(k + 1);
    if (u[k] - t > 0.0) theta = t;
  }
  Vector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::max(0.0, v[i] - theta);
  return out;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

} // namespace manifold_forge::testing
