#pragma once

#include "errors.hpp"
#include "matrix.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace manifold_forge {

enum class LossKind { MDS, LE, LLE, Contrastive, SNE };

inline std::string to_string(LossKind k) {
  switch (k) {
  case LossKind::MDS: return "mds";
  case LossKind::LE: return "le";
  case LossKind::LLE: return "lle";
  case LossKind::Contrastive: return "contrastive";
  case LossKind::SNE: return "sne";
  }
  return "?";
}

/// Which embedding loss to use and its metric parameters. Fields irrelevant to
/// the chosen kind are ignored.
struct EmbeddingLossSpec {
  LossKind kind = LossKind::MDS;
  /// Gaussian bandwidth of the input-space similarity (LE, SNE, smoothed contrastive).
  double sigma = 1.0;
  /// SNE embedding-space bandwidth; 0 means "same as sigma".
  double sigma_embedding = 0.0;
  /// LLE neighborhood (required); LE sparsification (0 = dense); contrastive neighborhood.
  std::size_t k_neighbors = 0;
  /// LE: similarity set to zero when the squared input distance exceeds this.
  std::optional<double> distance_cutoff;
  /// Contrastive hinge margin on the squared embedding distance.
  double margin = 1.0;
  /// Contrastive: Gaussian similarity instead of the 0/1 neighborhood indicator.
  bool smooth_similarity = false;

  void validate() const {
    switch (kind) {
    case LossKind::LE:
    case LossKind::SNE:
      if (!(sigma > 0.0)) throw InvalidArgument(to_string(kind) + " loss: sigma must be positive");
      if (sigma_embedding < 0.0) throw InvalidArgument("sigma_embedding must be nonnegative");
      if (distance_cutoff && !(*distance_cutoff > 0.0))
        throw InvalidArgument("le loss: distance cutoff must be positive");
      break;
    case LossKind::LLE:
      if (k_neighbors == 0) throw InvalidArgument("lle loss: k_neighbors must be at least 1");
      break;
    case LossKind::Contrastive:
      if (!(margin > 0.0)) throw InvalidArgument("contrastive loss: margin must be positive");
      if (smooth_similarity && !(sigma > 0.0))
        throw InvalidArgument("contrastive loss: sigma must be positive");
      if (!smooth_similarity && k_neighbors == 0)
        throw InvalidArgument("contrastive loss: k_neighbors must be at least 1");
      break;
    case LossKind::MDS: break;
    }
  }

  /// Losses that are a sum of elementary pair terms and can be reweighted per pair type.
  bool pairwise_decomposable() const noexcept {
    return kind == LossKind::MDS || kind == LossKind::LE;
  }
};

/// A loss value with its gradients. `grad_input` is the gradient through the
/// input-space metric; it is zero for losses whose input statistics are held fixed.
struct LossResult {
  double value = 0.0;
  Matrix grad_embedding;
  Matrix grad_input;
};

/// k nearest neighbors of each row (self excluded), ordered by distance then index.
inline std::vector<std::vector<std::size_t>> knn_indices(const Matrix& x, std::size_t k) {
  const std::size_t n = x.rows();
  if (k >= n) throw InvalidArgument("knn: k must be smaller than the number of points");
  std::vector<std::vector<std::size_t>> out(n);
  std::vector<std::pair<double, std::size_t>> cand;
  for (std::size_t i = 0; i < n; ++i) {
    cand.clear();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) cand.emplace_back(squared_distance(x.row(i), x.row(j)), j);
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
    out[i].reserve(k);
    for (std::size_t t = 0; t < k; ++t) out[i].push_back(cand[t].second);
  }
  return out;
}

/// Symmetric kNN indicator: i ~ j when either is among the other's k nearest.
inline Matrix knn_mask(const Matrix& x, std::size_t k) {
  Matrix mask(x.rows(), x.rows());
  const auto nn = knn_indices(x, k);
  for (std::size_t i = 0; i < nn.size(); ++i)
    for (std::size_t j : nn[i]) mask(i, j) = mask(j, i) = 1.0;
  return mask;
}

// ---------------------------------------------------------------------------
// Laplacian eigenmaps

/// Similarity graph: W (zero diagonal), degree D, Laplacian L = D - W.
struct GraphMatrices {
  Matrix w;
  Vector degree;
  Matrix laplacian;
  /// Bandwidth W was built with (0 when W came from raw similarities).
  double sigma = 0.0;
  /// 0/1 sparsity pattern applied on top of the Gaussian kernel.
  Matrix mask;
};

inline GraphMatrices graph_from_similarities(Matrix w) {
  const std::size_t n = w.rows();
  if (w.cols() != n) throw DimensionError("similarity matrix must be square");
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double a = w(i, j), b = w(j, i);
      if (std::abs(a - b) > 1e-12 * std::max(1.0, std::max(std::abs(a), std::abs(b))))
        throw InvalidArgument("similarity matrix is not symmetric at (" + std::to_string(i) +
                              "," + std::to_string(j) + ")");
      if (a < 0.0) throw InvalidArgument("similarity matrix has a negative entry");
    }
  GraphMatrices g;
  g.degree.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    w(i, i) = 0.0;
    for (std::size_t j = 0; j < n; ++j) g.degree[i] += w(i, j);
  }
  g.laplacian = Matrix(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) g.laplacian(i, j) = (i == j ? g.degree[i] : 0.0) - w(i, j);
  g.mask = Matrix(n, n, 1.0);
  g.w = std::move(w);
  return g;
}

/// Gaussian similarity exp(-|xi-xj|²/2σ²), optionally sparsified by kNN union or cutoff.
inline GraphMatrices build_similarity_graph(const Matrix& x, const EmbeddingLossSpec& spec) {
  if (!(spec.sigma > 0.0)) throw InvalidArgument("similarity graph: sigma must be positive");
  const std::size_t n = x.rows();
  Matrix mask = (spec.k_neighbors > 0 && spec.k_neighbors < n) ? knn_mask(x, spec.k_neighbors)
                                                               : Matrix(n, n, 1.0);
  Matrix w(n, n);
  const double inv = 1.0 / (2.0 * spec.sigma * spec.sigma);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double d2 = squared_distance(x.row(i), x.row(j));
      if (spec.distance_cutoff && d2 > *spec.distance_cutoff) mask(i, j) = 0.0;
      w(i, j) = mask(i, j) * std::exp(-d2 * inv);
    }
  GraphMatrices g = graph_from_similarities(std::move(w));
  g.sigma = spec.sigma;
  g.mask = std::move(mask);
  return g;
}

namespace detail {

// Per-pair weights. Row weights scale a point's whole embedding loss; the pair
// matrix (pairwise kinds only) scales individual ordered pairs.
struct Weights {
  std::span<const double> row;
  const Matrix* pair = nullptr;

  double operator()(std::size_t i, std::size_t j) const {
    double w = row.empty() ? 1.0 : row[i];
    if (pair) w *= (*pair)(i, j);
    return w;
  }
  double row_weight(std::size_t i) const { return row.empty() ? 1.0 : row[i]; }
};

inline void accumulate_pair(Matrix& grad, std::size_t i, std::size_t j, const Matrix& pts,
                            double coeff) {
  if (coeff == 0.0) return;
  for (std::size_t k = 0; k < pts.cols(); ++k) {
    const double d = coeff * (pts(i, k) - pts(j, k));
    grad(i, k) += d;
    grad(j, k) -= d;
  }
}

inline void check_pair(const Matrix& x, const Matrix& a, const char* who) {
  if (x.rows() != a.rows())
    throw DimensionError(std::string(who) + ": input and embedding row counts differ");
}

// LE value/gradient given a graph, with ∂/∂x through the Gaussian kernel when
// the graph was built from x with bandwidth sigma.
inline LossResult le_weighted(const GraphMatrices& g, const Matrix& a, const Matrix* x,
                              const Weights& wts) {
  const std::size_t n = a.rows();
  if (g.w.rows() != n) throw DimensionError("le loss: graph size does not match the batch");
  LossResult r{0.0, Matrix(n, a.cols()), Matrix(x ? x->rows() : 0, x ? x->cols() : 0)};
  const bool through_x = x && g.sigma > 0.0;
  const double inv_s2 = through_x ? 1.0 / (g.sigma * g.sigma) : 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double wij = g.w(i, j);
      if (wij == 0.0) continue;
      const double w = wts(i, j);
      if (w == 0.0) continue;
      const double e = squared_distance(a.row(i), a.row(j));
      r.value += w * wij * e;
      accumulate_pair(r.grad_embedding, i, j, a, 2.0 * w * wij);
      if (through_x) accumulate_pair(r.grad_input, i, j, *x, -w * e * wij * inv_s2);
    }
  return r;
}

inline LossResult mds_weighted(const Matrix& x, const Matrix& a, const Weights& wts) {
  const std::size_t n = a.rows();
  LossResult r{0.0, Matrix(n, a.cols()), Matrix(n, x.cols())};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double w = wts(i, j);
      if (w == 0.0) continue;
      const double dx = std::sqrt(squared_distance(x.row(i), x.row(j)));
      const double da = std::sqrt(squared_distance(a.row(i), a.row(j)));
      const double diff = da - dx;
      r.value += w * diff * diff;
      if (da > 0.0) accumulate_pair(r.grad_embedding, i, j, a, 2.0 * w * diff / da);
      if (dx > 0.0) accumulate_pair(r.grad_input, i, j, x, -2.0 * w * diff / dx);
    }
  return r;
}

inline LossResult contrastive_weighted(const Matrix& x, const Matrix& a,
                                       const EmbeddingLossSpec& spec, const Weights& wts) {
  const std::size_t n = a.rows();
  LossResult r{0.0, Matrix(n, a.cols()), Matrix(n, x.cols())};
  Matrix neighbors;
  if (!spec.smooth_similarity) {
    if (spec.k_neighbors >= n)
      throw InvalidArgument("contrastive loss: k_neighbors must be below the point count");
    neighbors = knn_mask(x, spec.k_neighbors);
  }
  const double inv_s2 = spec.smooth_similarity ? 1.0 / (spec.sigma * spec.sigma) : 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double w = wts(i, j);
      if (w == 0.0) continue;
      const double sim = spec.smooth_similarity
                             ? std::exp(-squared_distance(x.row(i), x.row(j)) * inv_s2 / 2.0)
                             : neighbors(i, j);
      const double e = squared_distance(a.row(i), a.row(j));
      const double slack = spec.margin - e;
      const double hinge = slack > 0.0 ? slack : 0.0; // subgradient 0 at the kink
      r.value += w * (sim * e + (1.0 - sim) * hinge);
      const double d_e = sim - (1.0 - sim) * (slack > 0.0 ? 1.0 : 0.0);
      accumulate_pair(r.grad_embedding, i, j, a, 2.0 * w * d_e);
      if (spec.smooth_similarity)
        accumulate_pair(r.grad_input, i, j, x, -w * (e - hinge) * sim * inv_s2);
    }
  return r;
}

// Row-normalized Gaussian affinities, log domain. Rows are shifted by their
// nearest squared distance before exponentiation so normalizers never underflow.
inline Matrix sne_log_affinity(const Matrix& pts, double sigma) {
  const std::size_t n = pts.rows();
  const double inv = 1.0 / (2.0 * sigma * sigma);
  Matrix logp(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    double fmin = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) fmin = std::min(fmin, squared_distance(pts.row(i), pts.row(j)));
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      logp(i, j) = -(squared_distance(pts.row(i), pts.row(j)) - fmin) * inv;
      z += std::exp(logp(i, j));
    }
    if (!(z > 0.0) || !std::isfinite(z))
      throw DegenerateBatchError("sne loss: zero similarity normalizer at row " + std::to_string(i));
    const double lz = std::log(z);
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) logp(i, j) -= lz;
  }
  return logp;
}

inline LossResult sne_weighted(const Matrix& x, const Matrix& a, const EmbeddingLossSpec& spec,
                               const Weights& wts) {
  const std::size_t n = a.rows();
  const double sx = spec.sigma;
  const double sa = spec.sigma_embedding > 0.0 ? spec.sigma_embedding : spec.sigma;
  const Matrix logp = sne_log_affinity(x, sx);
  const Matrix logq = sne_log_affinity(a, sa);
  LossResult r{0.0, Matrix(n, a.cols()), Matrix(n, x.cols())};
  for (std::size_t i = 0; i < n; ++i) {
    const double rho = wts.row_weight(i);
    if (rho == 0.0) continue;
    double kl = 0.0; // also the P-weighted mean log ratio used by the input gradient
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double p = std::exp(logp(i, j));
      if (p == 0.0) continue; // 0·log(0/q) = 0
      kl += p * (logp(i, j) - logq(i, j));
    }
    r.value += rho * kl;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double p = std::exp(logp(i, j));
      const double q = std::exp(logq(i, j));
      accumulate_pair(r.grad_embedding, i, j, a, rho * (p - q) / (sa * sa));
      if (p > 0.0)
        accumulate_pair(r.grad_input, i, j, x,
                        -rho * p * ((logp(i, j) - logq(i, j)) - kl) / (sx * sx));
    }
  }
  return r;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Individual losses

/// Σ over ordered pairs of (|ai-aj| - |xi-xj|)².
inline LossResult mds_loss(const Matrix& x, const Matrix& a) {
  detail::check_pair(x, a, "mds loss");
  if (a.rows() < 2) throw DegenerateBatchError("mds loss: needs at least 2 points");
  return detail::mds_weighted(x, a, {});
}

/// Σ over ordered pairs of W_ij |ai-aj|², equal to 2 tr(Aᵀ L A) for row-major A.
inline LossResult le_loss(const GraphMatrices& graph, const Matrix& a) {
  return detail::le_weighted(graph, a, nullptr, {});
}

/// The same quantity through the Laplacian: 2 tr(Aᵀ L A).
inline double le_trace_form(const GraphMatrices& graph, const Matrix& a) {
  return 2.0 * trace(matmul(transpose(a), matmul(graph.laplacian, a)));
}

/// LLE barycentric weights; v(i, j) = λ_ij, so row i holds sample i's weights.
struct ReconstructionWeights {
  Matrix v;
  std::vector<std::vector<std::size_t>> support;
};

/// Per-sample constrained least squares over the k nearest neighbors, via the
/// local Gram system normalized to sum 1. The Gram is regularized by
/// (1e-3·trace/k)·I when k exceeds the input dimension (it is then singular)
/// or when the plain factorization fails.
inline ReconstructionWeights lle_fit_weights(const Matrix& x, std::size_t k) {
  const std::size_t n = x.rows();
  if (k == 0 || k >= n) throw InvalidArgument("lle_fit_weights: need N > k >= 1");
  ReconstructionWeights out{Matrix(n, n), knn_indices(x, k)};
  const std::size_t dim = x.cols();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& nb = out.support[i];
    Matrix gram(k, k);
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b <= a; ++b) {
        double s = 0.0;
        for (std::size_t c = 0; c < dim; ++c)
          s += (x(nb[a], c) - x(i, c)) * (x(nb[b], c) - x(i, c));
        gram(a, b) = gram(b, a) = s;
      }
    auto l = k > dim ? std::nullopt : cholesky(gram);
    if (!l) {
      const double reg = 1e-3 * trace(gram) / static_cast<double>(k);
      for (std::size_t a = 0; a < k; ++a) gram(a, a) += reg;
      l = cholesky(gram);
    }
    if (!l) throw SingularityError("lle_fit_weights: singular local Gram at sample " + std::to_string(i));
    Vector w = cholesky_solve(*l, Vector(k, 1.0));
    const double sum = std::accumulate(w.begin(), w.end(), 0.0);
    if (!(std::abs(sum) > 0.0) || !std::isfinite(sum))
      throw SingularityError("lle_fit_weights: degenerate weights at sample " + std::to_string(i));
    for (std::size_t a = 0; a < k; ++a) out.v(i, nb[a]) = w[a] / sum;
  }
  return out;
}

namespace detail {

inline LossResult lle_weighted(const ReconstructionWeights& rw, const Matrix& a, std::size_t x_cols,
                               const Weights& wts) {
  const std::size_t n = a.rows();
  if (rw.v.rows() != n) throw DimensionError("lle loss: weights were fitted on a different set");
  const std::size_t d = a.cols();
  LossResult r{0.0, Matrix(n, d), Matrix(n, x_cols)};
  Matrix resid(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < d; ++c) resid(i, c) = a(i, c);
    for (std::size_t j : rw.support[i])
      for (std::size_t c = 0; c < d; ++c) resid(i, c) -= rw.v(i, j) * a(j, c);
    const double rho = wts.row_weight(i);
    r.value += rho * dot(resid.row(i), resid.row(i));
    for (std::size_t c = 0; c < d; ++c) r.grad_embedding(i, c) += 2.0 * rho * resid(i, c);
    for (std::size_t j : rw.support[i])
      for (std::size_t c = 0; c < d; ++c)
        r.grad_embedding(j, c) -= 2.0 * rho * rw.v(i, j) * resid(i, c);
  }
  return r;
}

} // namespace detail

/// Σ_i |ai - Σ_j λ_ij aj|².
inline LossResult lle_loss(const ReconstructionWeights& rw, const Matrix& a) {
  return detail::lle_weighted(rw, a, 0, {});
}

/// tr(Aᵀ (I - V - Vᵀ + VᵀV) A) with V(i, j) = λ_ij.
inline double lle_trace_form(const ReconstructionWeights& rw, const Matrix& a) {
  const std::size_t n = rw.v.rows();
  const Matrix vt = transpose(rw.v);
  Matrix l = matmul(vt, rw.v);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) l(i, j) += (i == j ? 1.0 : 0.0) - rw.v(i, j) - vt(i, j);
  return trace(matmul(transpose(a), matmul(l, a)));
}

/// Σ over ordered pairs of d_x·e + (1-d_x)·max(0, margin - e), e = |ai-aj|².
inline LossResult contrastive_loss(const Matrix& x, const Matrix& a, const EmbeddingLossSpec& spec) {
  detail::check_pair(x, a, "contrastive loss");
  if (!(spec.margin > 0.0)) throw InvalidArgument("contrastive loss: margin must be positive");
  return detail::contrastive_weighted(x, a, spec, {});
}

/// Σ_i KL(P_i || Q_i) with row-normalized Gaussian affinities in both spaces.
inline LossResult sne_loss(const Matrix& x, const Matrix& a, const EmbeddingLossSpec& spec) {
  detail::check_pair(x, a, "sne loss");
  if (a.rows() < 2) throw DegenerateBatchError("sne loss: needs at least 2 points");
  return detail::sne_weighted(x, a, spec, {});
}

// ---------------------------------------------------------------------------
// Dispatch

namespace detail {

inline LossResult dispatch(const EmbeddingLossSpec& spec, const Matrix& x, const Matrix& a,
                           const Weights& wts) {
  check_pair(x, a, "embedding loss");
  if (a.rows() < 2) throw DegenerateBatchError("embedding loss: needs at least 2 points");
  switch (spec.kind) {
  case LossKind::MDS: return mds_weighted(x, a, wts);
  case LossKind::LE: {
    const GraphMatrices g = build_similarity_graph(x, spec);
    return le_weighted(g, a, &x, wts);
  }
  case LossKind::LLE: {
    const auto rw = lle_fit_weights(x, std::min(spec.k_neighbors, x.rows() - 1));
    return lle_weighted(rw, a, x.cols(), wts);
  }
  case LossKind::Contrastive: return contrastive_weighted(x, a, spec, wts);
  case LossKind::SNE: return sne_weighted(x, a, spec, wts);
  }
  throw InvalidArgument("unknown loss kind");
}

} // namespace detail

/// Σ_i L_e(a_i, A \ a_i): the plain total over every point of the set.
/// Input-space statistics (graph, LLE weights) are computed from `x`.
inline LossResult embedding_loss(const EmbeddingLossSpec& spec, const Matrix& x, const Matrix& a) {
  spec.validate();
  return detail::dispatch(spec, x, a, {});
}

/// Σ_i ρ_i L_e(a_i, A \ a_i). With ρ = e_v this is the loss of point v alone.
inline LossResult weighted_embedding_loss(const EmbeddingLossSpec& spec, const Matrix& x,
                                          const Matrix& a, std::span<const double> row_weights) {
  spec.validate();
  if (row_weights.size() != a.rows()) throw DimensionError("row weights length mismatch");
  return detail::dispatch(spec, x, a, {row_weights, nullptr});
}

/// L_e(a_i, A \ a_i) for every i.
inline Vector per_point_loss(const EmbeddingLossSpec& spec, const Matrix& x, const Matrix& a) {
  Vector out(a.rows());
  Vector rho(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    rho[i] = 1.0;
    out[i] = weighted_embedding_loss(spec, x, a, rho).value;
    rho[i] = 0.0;
  }
  return out;
}

enum class PointRole { Data, Virtual };

/// Weights of the data-data, data-virtual (both orders) and virtual-virtual pair sets.
struct PairwiseWeighting {
  double data_data = 1.0;
  double data_virtual = 1.0;
  double virtual_virtual = 1.0;

  bool uniform() const noexcept {
    return data_data == 1.0 && data_virtual == 1.0 && virtual_virtual == 1.0;
  }
  void validate() const {
    if (data_data < 0.0 || data_virtual < 0.0 || virtual_virtual < 0.0)
      throw InvalidArgument("pair weights must be nonnegative");
    if (data_data == 0.0 && data_virtual == 0.0 && virtual_virtual == 0.0)
      throw InvalidArgument("at least one pair weight must be positive");
  }
};

/// Batch objective over data and virtual points. Pairwise kinds are split into
/// the three pair populations and reweighted; other kinds need uniform weights.
inline LossResult total_pgs_loss(const EmbeddingLossSpec& spec, const Matrix& x, const Matrix& a,
                                 const PairwiseWeighting& weighting,
                                 std::span<const PointRole> roles) {
  spec.validate();
  weighting.validate();
  if (roles.size() != a.rows()) throw DimensionError("total_pgs_loss: one role per point required");
  if (weighting.uniform()) return detail::dispatch(spec, x, a, {});
  if (!spec.pairwise_decomposable())
    throw UnsupportedDecomposition(to_string(spec.kind) +
                                   " loss has no pairwise decomposition; use uniform weights");
  const std::size_t n = a.rows();
  Matrix pair(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const bool di = roles[i] == PointRole::Data, dj = roles[j] == PointRole::Data;
      pair(i, j) = (di && dj)     ? weighting.data_data
                   : (!di && !dj) ? weighting.virtual_virtual
                                  : weighting.data_virtual;
    }
  return detail::dispatch(spec, x, a, {{}, &pair});
}

} // namespace manifold_forge
