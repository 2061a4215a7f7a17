#pragma once

#include "matrix.hpp"

#include <algorithm>
#include <span>

namespace manifold_forge {

/// Frozen output normalization y = M (h - mean), where M is the inverse lower
/// Cholesky factor of the reference covariance. Unbiased (N-1) covariance.
struct WhiteningState {
  Vector mean;
  Matrix inv_factor; // M, lower triangular d x d

  std::size_t dim() const noexcept { return mean.size(); }
};

namespace detail {

struct CovarianceFactor {
  Matrix factor;     // L with L Lᵀ = cov + jitter·I
  Matrix inv_factor; // L⁻¹
  Vector mean;
  Matrix centered;   // reference rows minus mean
};

// Plain Cholesky first; on failure add 1e-8·s·I, then 10x more, up to three retries,
// where s = max(1, tr(cov)/d) keeps the jitter above rounding for large features.
inline CovarianceFactor factor_covariance(const Matrix& h, std::span<const std::size_t> ref) {
  const std::size_t d = h.cols();
  const std::size_t n = ref.size();
  if (n < d + 1)
    throw DegenerateBatchError("whitening needs at least " + std::to_string(d + 1) +
                               " reference rows, got " + std::to_string(n));
  CovarianceFactor out;
  out.mean.assign(d, 0.0);
  for (std::size_t r : ref)
    for (std::size_t k = 0; k < d; ++k) out.mean[k] += h(r, k);
  for (double& m : out.mean) m /= static_cast<double>(n);

  out.centered = Matrix(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k) out.centered(i, k) = h(ref[i], k) - out.mean[k];

  Matrix cov(d, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b)
        cov(a, b) += out.centered(i, a) * out.centered(i, b);
  for (double& v : cov.data()) v /= static_cast<double>(n - 1);

  auto l = cholesky(cov);
  double scale = 0.0;
  for (std::size_t k = 0; k < d; ++k) scale += cov(k, k);
  scale = std::max(1.0, scale / static_cast<double>(d));
  double jitter = 1e-8 * scale;
  for (int attempt = 0; !l && attempt < 3; ++attempt, jitter *= 10.0) {
    Matrix c = cov;
    for (std::size_t k = 0; k < d; ++k) c(k, k) += jitter;
    l = cholesky(c);
  }
  if (!l) throw SingularityError("whitening: covariance is rank deficient even after jitter");
  out.factor = std::move(*l);
  out.inv_factor = invert_lower(out.factor);
  return out;
}

} // namespace detail

/// Fits the whitening statistics on every row of `features`.
inline WhiteningState fit_whitening_state(const Matrix& features) {
  std::vector<std::size_t> all(features.rows());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  auto f = detail::factor_covariance(features, all);
  return {std::move(f.mean), std::move(f.inv_factor)};
}

inline Matrix apply_whitening(const WhiteningState& w, const Matrix& h) {
  if (h.cols() != w.dim()) throw DimensionError("apply_whitening: feature dimension mismatch");
  const std::size_t d = w.dim();
  Matrix y(h.rows(), d);
  for (std::size_t i = 0; i < h.rows(); ++i)
    for (std::size_t a = 0; a < d; ++a) {
      double s = 0.0;
      for (std::size_t b = 0; b <= a; ++b) s += w.inv_factor(a, b) * (h(i, b) - w.mean[b]);
      y(i, a) = s;
    }
  return y;
}

/// Adjoint of apply_whitening with the statistics held fixed.
inline Matrix apply_whitening_backward(const WhiteningState& w, const Matrix& upstream) {
  const std::size_t d = w.dim();
  Matrix g(upstream.rows(), d);
  for (std::size_t i = 0; i < upstream.rows(); ++i)
    for (std::size_t b = 0; b < d; ++b) {
      double s = 0.0;
      for (std::size_t a = b; a < d; ++a) s += upstream(i, a) * w.inv_factor(a, b);
      g(i, b) = s;
    }
  return g;
}

/// Whitening refit on a subset of rows of the batch, differentiable through the
/// statistics. Every row is transformed; only `reference` rows define mean/cov.
class BatchWhitening {
public:
  BatchWhitening(const Matrix& features, std::vector<std::size_t> reference)
      : reference_(std::move(reference)), features_(features),
        fac_(detail::factor_covariance(features, reference_)) {
    output_ = apply_whitening(state(), features_);
  }

  const Matrix& output() const noexcept { return output_; }
  WhiteningState state() const { return {fac_.mean, fac_.inv_factor}; }

  /// Gradient with respect to the pre-whitening features, including the paths
  /// through the mean and the Cholesky factor of the reference covariance.
  Matrix backward(const Matrix& upstream) const {
    const std::size_t d = features_.cols();
    const std::size_t n_ref = reference_.size();
    const Matrix& m = fac_.inv_factor;
    const Matrix& l = fac_.factor;

    Matrix grad = apply_whitening_backward(state(), upstream);

    Vector mean_bar(d, 0.0);
    for (std::size_t i = 0; i < grad.rows(); ++i)
      for (std::size_t k = 0; k < d; ++k) mean_bar[k] -= grad(i, k);

    // M̄ = Ȳᵀ (H - mean)
    Matrix m_bar(d, d);
    for (std::size_t i = 0; i < upstream.rows(); ++i)
      for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b < d; ++b)
          m_bar(a, b) += upstream(i, a) * (features_(i, b) - fac_.mean[b]);

    // M = L⁻¹  =>  L̄ = -Mᵀ M̄ Mᵀ
    const Matrix mt = transpose(m);
    Matrix l_bar = matmul(matmul(mt, m_bar), mt);
    for (double& v : l_bar.data()) v = -v;

    // Σ̄ = Mᵀ Φ(Lᵀ L̄) M, Φ keeps the lower triangle and halves the diagonal.
    Matrix phi = matmul(transpose(l), l_bar);
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b) {
        if (b > a) phi(a, b) = 0.0;
        else if (a == b) phi(a, b) *= 0.5;
      }
    const Matrix sigma_bar = matmul(matmul(mt, phi), m);

    Matrix sym(d, d);
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b)
        sym(a, b) = (sigma_bar(a, b) + sigma_bar(b, a)) / static_cast<double>(n_ref - 1);

    const Matrix c_bar = matmul(fac_.centered, sym);
    for (std::size_t i = 0; i < n_ref; ++i)
      for (std::size_t k = 0; k < d; ++k) {
        grad(reference_[i], k) += c_bar(i, k);
        mean_bar[k] -= c_bar(i, k);
      }
    for (std::size_t r : reference_)
      for (std::size_t k = 0; k < d; ++k) grad(r, k) += mean_bar[k] / static_cast<double>(n_ref);
    return grad;
  }

private:
  std::vector<std::size_t> reference_;
  Matrix features_;
  detail::CovarianceFactor fac_;
  Matrix output_;
};

} // namespace manifold_forge
