#pragma once

#include "anchors.hpp"
#include "errors.hpp"
#include "losses.hpp"
#include "matrix.hpp"
#include "model.hpp"
#include "optimizer.hpp"
#include "simplex.hpp"
#include "whitening.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace manifold_forge {

/// Projected gradient ascent settings for γ.
struct AttackConfig {
  /// Ascent step; with `xi_end` set it is interpolated linearly over the epochs.
  double xi = 1.0;
  std::optional<double> xi_end;
  /// 0 never moves the virtual points (random-virtual training).
  std::size_t n_iters = 2;
  /// Accept an ascent step only if it increases the loss.
  bool monotone_guard = false;
  /// Share of the batch's anchor sets attacked per stage; the rest stay frozen.
  double attack_fraction = 1.0;

  void validate() const {
    if (!(xi > 0.0)) throw InvalidArgument("attack: xi must be positive");
    if (xi_end && !(*xi_end > 0.0)) throw InvalidArgument("attack: xi_end must be positive");
    if (!(attack_fraction > 0.0 && attack_fraction <= 1.0))
      throw InvalidArgument("attack: attack_fraction must lie in (0, 1]");
  }

  double xi_at(std::size_t epoch, std::size_t epochs) const {
    if (!xi_end || epochs <= 1) return xi;
    const double t = static_cast<double>(epoch) / static_cast<double>(epochs - 1);
    return xi + (*xi_end - xi) * t;
  }
};

/// Number of virtual and data points per batch.
struct BatchComposition {
  std::size_t virtual_per_batch = 2;
  std::size_t data_per_batch = 5;
};

/// Outcome of one attack stage. `loss_after` is NaN when the final iterate was
/// not re-evaluated (guard off).
struct AttackStageStats {
  double loss_before = std::numeric_limits<double>::quiet_NaN();
  double loss_after = std::numeric_limits<double>::quiet_NaN();
  std::size_t iterations = 0;
  std::size_t accepted = 0;
  bool aborted = false;
  std::string diagnostic;
};

namespace detail {

struct GammaEval {
  double loss = 0.0;
  std::vector<Vector> grad;

  bool finite() const {
    if (!std::isfinite(loss)) return false;
    for (const auto& g : grad)
      for (double v : g)
        if (!std::isfinite(v)) return false;
    return true;
  }
};

using GammaObjective = std::function<GammaEval(std::span<const SimplexCoordinates>)>;

// γ ← Π(γ + ξ∇γL) for the active sets, n_iters times. On a non-finite
// evaluation the stage is abandoned and the starting coordinates restored.
inline AttackStageStats projected_ascent(const GammaObjective& objective,
                                         std::vector<SimplexCoordinates>& gammas,
                                         std::span<const std::optional<BiasedSimplexConstraint>> bias,
                                         const std::vector<bool>& active, const AttackConfig& cfg,
                                         double xi) {
  AttackStageStats stats;
  if (cfg.n_iters == 0 || gammas.empty()) return stats;
  const std::vector<SimplexCoordinates> start = gammas;
  const auto abort = [&](const std::string& why) {
    gammas = start;
    stats.loss_after = stats.loss_before; // the starting coordinates are back in place
    stats.aborted = true;
    stats.diagnostic = why;
    return stats;
  };

  GammaEval cur = objective(gammas);
  stats.loss_before = cur.loss;
  if (!cur.finite()) return abort("non-finite loss or gradient at the initial coordinates");

  for (std::size_t it = 0; it < cfg.n_iters; ++it) {
    ++stats.iterations;
    std::vector<SimplexCoordinates> cand = gammas;
    for (std::size_t k = 0; k < gammas.size(); ++k) {
      if (!active[k]) continue;
      Vector step = gammas[k].gamma;
      for (std::size_t i = 0; i < step.size(); ++i) step[i] += xi * cur.grad[k][i];
      cand[k] = project_for_rule(step, bias[k]);
    }
    const bool need_eval = cfg.monotone_guard || it + 1 < cfg.n_iters;
    if (!need_eval) {
      gammas = std::move(cand);
      ++stats.accepted;
      stats.loss_after = std::numeric_limits<double>::quiet_NaN();
      return stats;
    }
    GammaEval next = objective(cand);
    if (!next.finite()) return abort("non-finite loss or gradient at iteration " + std::to_string(it));
    if (cfg.monotone_guard && !(next.loss > cur.loss)) break; // rejected, and the gradient would not change
    gammas = std::move(cand);
    cur = std::move(next);
    ++stats.accepted;
  }
  stats.loss_after = cur.loss;
  return stats;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Individual attack

struct IndividualAttackResult {
  SimplexCoordinates gamma;
  Vector point;
  AttackStageStats stats;
};

/// Maximizes L_e(g(x̃), {g(x_1), .., g(x_N)}) over the coordinates of one virtual
/// point. The model is evaluated as-is, including a fitted whitening layer.
inline IndividualAttackResult individual_attack(const AnchorSet& anchors, const Matrix& data,
                                                const EmbeddingLossSpec& spec, const Model& model,
                                                const AttackConfig& cfg, SimplexCoordinates gamma0,
                                                std::optional<BiasedSimplexConstraint> bias = {}) {
  cfg.validate();
  if (gamma0.size() != anchors.size()) throw DimensionError("individual_attack: γ size differs from anchor count");
  const std::size_t n = data.rows();
  Vector rho(n + 1, 0.0);
  rho[n] = 1.0;
  Matrix x(n + 1, data.cols());
  std::copy(data.data().begin(), data.data().end(), x.data().begin());

  detail::GammaObjective objective = [&](std::span<const SimplexCoordinates> g) {
    const Vector xv = compose_virtual(anchors, g[0].gamma);
    std::copy(xv.begin(), xv.end(), x.row(n).begin());
    const auto tape = model.record(x, true);
    const LossResult loss = weighted_embedding_loss(spec, x, tape.output, rho);
    const ModelGradients mg = model.backward(tape, loss.grad_embedding);
    Vector gx(x.cols());
    for (std::size_t k = 0; k < gx.size(); ++k)
      gx[k] = mg.inputs(n, k) + (loss.grad_input.rows() ? loss.grad_input(n, k) : 0.0);
    detail::GammaEval e{loss.value, {Vector(anchors.size())}};
    for (std::size_t i = 0; i < anchors.size(); ++i) e.grad[0][i] = dot(anchors.z.row(i), gx);
    return e;
  };

  std::vector<SimplexCoordinates> gammas{std::move(gamma0)};
  const std::optional<BiasedSimplexConstraint> biases[1] = {bias};
  auto stats = detail::projected_ascent(objective, gammas, biases, {true}, cfg, cfg.xi);
  Vector point = compose_virtual(anchors, gammas[0].gamma);
  return {std::move(gammas[0]), std::move(point), std::move(stats)};
}

// ---------------------------------------------------------------------------
// Batch objective shared by the attack and the model update

/// One batch: observed samples plus virtual points generated from anchor sets.
struct PgsBatch {
  const EmbeddingLossSpec* spec = nullptr;
  PairwiseWeighting weighting;
  const Model* model = nullptr;
  Matrix data_x;
  std::vector<const AnchorSet*> anchors;
  /// Refit the trailing whitening layer on this batch's data rows.
  bool whiten = false;

  std::size_t size() const noexcept { return data_x.rows() + anchors.size(); }
};

struct PgsBatchResult {
  double loss = 0.0;
  std::vector<Vector> grad_gamma;
  Vector grad_params;
  Matrix inputs;
};

/// Batch loss (1/|B|) Σ_{a∈B} L_e(a, B \ a) and its gradients with respect to the
/// virtual points' coordinates and the model parameters.
inline PgsBatchResult evaluate_pgs_batch(const PgsBatch& batch,
                                         std::span<const SimplexCoordinates> gammas,
                                         bool want_params) {
  const std::size_t nd = batch.data_x.rows();
  const std::size_t nv = batch.anchors.size();
  const std::size_t n = nd + nv;
  if (gammas.size() != nv) throw DimensionError("evaluate_pgs_batch: one γ per anchor set required");
  Matrix x(n, batch.data_x.cols());
  std::copy(batch.data_x.data().begin(), batch.data_x.data().end(), x.data().begin());
  std::vector<PointRole> roles(n, PointRole::Data);
  for (std::size_t v = 0; v < nv; ++v) {
    const Vector xv = compose_virtual(*batch.anchors[v], gammas[v].gamma);
    std::copy(xv.begin(), xv.end(), x.row(nd + v).begin());
    roles[nd + v] = PointRole::Virtual;
  }

  const Model& model = *batch.model;
  const auto tape = model.record(x, !batch.whiten);
  std::optional<BatchWhitening> white;
  if (batch.whiten) {
    std::vector<std::size_t> ref(nd);
    std::iota(ref.begin(), ref.end(), std::size_t{0});
    white.emplace(tape.output, std::move(ref));
  }
  const Matrix& a = white ? white->output() : tape.output;

  LossResult loss = total_pgs_loss(*batch.spec, x, a, batch.weighting, roles);
  const double scale = 1.0 / static_cast<double>(n);
  Matrix upstream = loss.grad_embedding;
  for (double& v : upstream.data()) v *= scale;
  if (white) upstream = white->backward(upstream);
  ModelGradients mg = model.backward(tape, upstream);

  PgsBatchResult out;
  out.loss = loss.value * scale;
  out.grad_gamma.resize(nv);
  for (std::size_t v = 0; v < nv; ++v) {
    const AnchorSet& set = *batch.anchors[v];
    Vector gx(x.cols());
    for (std::size_t k = 0; k < gx.size(); ++k)
      gx[k] = mg.inputs(nd + v, k) + (loss.grad_input.rows() ? scale * loss.grad_input(nd + v, k) : 0.0);
    out.grad_gamma[v].resize(set.size());
    for (std::size_t i = 0; i < set.size(); ++i) out.grad_gamma[v][i] = dot(set.z.row(i), gx);
  }
  if (want_params) out.grad_params = std::move(mg.params);
  out.inputs = std::move(x);
  return out;
}

/// Joint projected ascent on the γ of every anchor set in the batch, with a
/// per-set projection. Sets outside the attack fraction are left untouched.
template <class Rng>
AttackStageStats virtual_points_update(const PgsBatch& batch, std::vector<SimplexCoordinates>& gammas,
                                       std::span<const std::optional<BiasedSimplexConstraint>> bias,
                                       const AttackConfig& cfg, double xi, Rng& rng) {
  if (gammas.size() != batch.anchors.size() || bias.size() != gammas.size())
    throw DimensionError("virtual_points_update: one γ and one constraint per anchor set required");
  const std::size_t m = gammas.size();
  std::vector<bool> active(m, true);
  if (cfg.n_iters > 0 && cfg.attack_fraction < 1.0 && m > 0) {
    const auto count = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(cfg.attack_fraction * static_cast<double>(m))));
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    active.assign(m, false);
    for (std::size_t i = 0; i < count; ++i) active[order[i]] = true;
  }
  detail::GammaObjective objective = [&](std::span<const SimplexCoordinates> g) {
    auto r = evaluate_pgs_batch(batch, g, false);
    return detail::GammaEval{r.loss, std::move(r.grad_gamma)};
  };
  return detail::projected_ascent(objective, gammas, bias, active, cfg, xi);
}

// ---------------------------------------------------------------------------
// Training loop

struct PgsTrainOptions {
  std::size_t epochs = 40;
  double learning_rate = 0.001;
  double momentum = 0.9;
  DecaySchedule schedule{0.5, 10};
  /// Gradient norm cap, 0 disables.
  double max_grad_norm = 0.0;
  PairwiseWeighting weighting;
  /// Optional held-out set; its evaluation loss is recorded every `eval_every`
  /// epochs and after the last one.
  const Matrix* eval_set = nullptr;
  std::size_t eval_every = 1;
  /// Keep per-stage attack statistics.
  bool log_attacks = false;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double mean_batch_loss = 0.0;
  double eval_loss = std::numeric_limits<double>::quiet_NaN();
  double wall_ms = 0.0;
  /// Distinct observed samples that entered the training loss this epoch.
  std::size_t data_participants = 0;
  /// Virtual points used this epoch, with repeats.
  std::size_t virtual_participants = 0;
  /// Batches dropped because their whitening covariance was singular.
  std::size_t skipped_batches = 0;
};

struct PgsTrainResult {
  Model model;
  std::vector<EpochRecord> history;
  std::vector<AttackStageStats> attacks;
  std::size_t failed_attacks = 0;
};

/// Indices of the observed samples and anchor sets that form one batch.
struct BatchPlan {
  std::vector<std::size_t> data;
  std::vector<std::size_t> virtual_sets;
};

/// Zips the shuffled data and virtual orders into batches at the composition
/// ratio. The longer stream is consumed once with a ragged last batch; the
/// shorter one wraps around so every batch keeps its share. A ragged data tail
/// smaller than `min_data` joins the previous batch.
inline std::vector<BatchPlan> plan_batches(std::span<const std::size_t> data_order,
                                           std::span<const std::size_t> virt_order,
                                           const BatchComposition& comp, std::size_t min_data = 1) {
  const std::size_t n = data_order.size(), m = virt_order.size();
  const std::size_t dpb = comp.data_per_batch;
  const std::size_t vpb = m == 0 ? 0 : std::min(comp.virtual_per_batch, m);
  if (dpb == 0) throw InvalidArgument("batch composition: data_per_batch must be >= 1");
  if (n == 0) return {};
  const std::size_t data_batches = (n + dpb - 1) / dpb;
  const std::size_t virt_batches = vpb == 0 ? 0 : (m + vpb - 1) / vpb;
  std::vector<BatchPlan> plan;

  if (virt_batches > data_batches) {
    const std::size_t take = std::min(dpb, n);
    for (std::size_t b = 0; b < virt_batches; ++b) {
      BatchPlan bp;
      for (std::size_t t = 0; t < take; ++t) bp.data.push_back(data_order[(b * take + t) % n]);
      for (std::size_t t = b * vpb; t < std::min(m, (b + 1) * vpb); ++t) bp.virtual_sets.push_back(virt_order[t]);
      plan.push_back(std::move(bp));
    }
    return plan;
  }

  for (std::size_t b = 0; b < data_batches; ++b) {
    BatchPlan bp;
    bp.data.assign(data_order.begin() + static_cast<std::ptrdiff_t>(b * dpb),
                   data_order.begin() + static_cast<std::ptrdiff_t>(std::min(n, (b + 1) * dpb)));
    for (std::size_t t = 0; t < vpb; ++t) bp.virtual_sets.push_back(virt_order[(b * vpb + t) % m]);
    plan.push_back(std::move(bp));
  }
  const std::size_t floor = std::max<std::size_t>(min_data, vpb == 0 ? 2 : 1);
  if (plan.size() > 1 && plan.back().data.size() < floor) {
    BatchPlan tail = std::move(plan.back());
    plan.pop_back();
    auto& prev = plan.back();
    prev.data.insert(prev.data.end(), tail.data.begin(), tail.data.end());
    for (std::size_t v : tail.virtual_sets)
      if (std::find(prev.virtual_sets.begin(), prev.virtual_sets.end(), v) == prev.virtual_sets.end())
        prev.virtual_sets.push_back(v);
  }
  return plan;
}

/// Evaluation loss (1/N) Σ_i L_e(g(x_i), {g(x_j) | j ≠ i}) on a held-out set.
inline double evaluate_embedding(const Model& model, const Matrix& test, const EmbeddingLossSpec& spec) {
  if (test.rows() < 2) throw DegenerateBatchError("evaluate_embedding: need at least 2 test points");
  const Matrix a = model.forward(test);
  return embedding_loss(spec, test, a).value / static_cast<double>(test.rows());
}

/// Alternating manifold-attack training: anchor sets are drawn once; every epoch
/// re-initializes γ, pools data and virtual points into batches, and for each
/// batch ascends the batch loss in γ then takes one descent step in θ.
/// With zero virtual points per batch this is plain data-only training.
template <class Rng>
PgsTrainResult manifold_attack_train(const Matrix& data, const EmbeddingLossSpec& spec, Model model,
                                     const AnchorRule& rule, const AttackConfig& cfg,
                                     const BatchComposition& comp, const PgsTrainOptions& opt, Rng& rng) {
  spec.validate();
  cfg.validate();
  if (data.rows() == 0) throw InvalidArgument("manifold_attack_train: empty dataset");
  if (comp.data_per_batch == 0) throw InvalidArgument("batch composition: data_per_batch must be >= 1");
  if (data.cols() != model.input_size()) throw DimensionError("dataset width does not match the model input");
  const bool use_virtual = comp.virtual_per_batch > 0;
  if (use_virtual) rule.validate();

  const bool whiten = model.has_whitening();
  const std::size_t min_data = whiten ? model.output_size() + 1 : 1;
  const std::size_t n = data.rows();
  if (n < min_data) throw DegenerateBatchError("manifold_attack_train: too few samples");
  if (std::min(n, comp.data_per_batch) < min_data)
    throw DegenerateBatchError("manifold_attack_train: data_per_batch too small to fit the whitening layer");

  std::vector<AnchorSet> sets;
  if (use_virtual) {
    const std::size_t m = rule.set_count(n);
    sets.reserve(m);
    for (std::size_t k = 0; k < m; ++k) sets.push_back(draw_anchor_set(data, rule, rng));
  }

  OptimizerState optim(opt.learning_rate, opt.momentum, model.param_count(), 0.0, opt.schedule);
  optim.max_grad_norm = opt.max_grad_norm;
  PgsTrainResult result{model, {}, {}, 0};
  Model& net = result.model;

  std::vector<std::size_t> data_order(n);
  std::iota(data_order.begin(), data_order.end(), std::size_t{0});
  std::vector<std::size_t> virt_order(sets.size());
  std::iota(virt_order.begin(), virt_order.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<SimplexCoordinates> gammas;
    gammas.reserve(sets.size());
    for (std::size_t k = 0; k < sets.size(); ++k) gammas.push_back(init_gamma(rule, rng));

    std::shuffle(data_order.begin(), data_order.end(), rng);
    std::shuffle(virt_order.begin(), virt_order.end(), rng);

    const auto plan = plan_batches(data_order, virt_order, comp, min_data);

    const double xi = cfg.xi_at(epoch, opt.epochs);
    double loss_sum = 0.0;
    std::size_t used = 0, skipped = 0, virt_seen = 0;
    std::vector<bool> seen(n, false);
    for (const BatchPlan& bp : plan) {
      PgsBatch batch;
      batch.spec = &spec;
      batch.weighting = opt.weighting;
      batch.model = &net;
      batch.whiten = whiten;
      batch.data_x = data.select_rows(bp.data);
      const std::vector<std::size_t>& vidx = bp.virtual_sets;
      for (std::size_t v : vidx) batch.anchors.push_back(&sets[v]);
      if (batch.size() < 2) continue;

      std::vector<SimplexCoordinates> bg;
      for (std::size_t v : vidx) bg.push_back(gammas[v]);
      try {
        if (cfg.n_iters > 0 && !vidx.empty()) {
          std::vector<std::optional<BiasedSimplexConstraint>> bias(vidx.size(), rule.bias);
          auto stats = virtual_points_update(batch, bg, bias, cfg, xi, rng);
          if (stats.aborted) ++result.failed_attacks; // degrades to random virtual points for this batch
          if (opt.log_attacks) result.attacks.push_back(std::move(stats));
          for (std::size_t t = 0; t < vidx.size(); ++t) gammas[vidx[t]] = bg[t];
        }
        const PgsBatchResult r = evaluate_pgs_batch(batch, bg, true);
        optimizer_step(optim, net.params(), r.grad_params);
        loss_sum += r.loss;
      } catch (const SingularityError&) {
        ++skipped; // whitening statistics of this batch are rank deficient
        continue;
      }
      ++used;
      for (std::size_t i : bp.data) seen[i] = true;
      virt_seen += vidx.size();
    }
    optim.end_epoch(epoch + 1);

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.mean_batch_loss = used == 0 ? 0.0 : loss_sum / static_cast<double>(used);
    rec.data_participants = static_cast<std::size_t>(std::count(seen.begin(), seen.end(), true));
    rec.skipped_batches = skipped;
    rec.virtual_participants = virt_seen;
    const bool last = epoch + 1 == opt.epochs;
    if (opt.eval_set && (last || (opt.eval_every > 0 && (epoch + 1) % opt.eval_every == 0))) {
      if (whiten) fit_whitening(net, data);
      rec.eval_loss = evaluate_embedding(net, *opt.eval_set, spec);
    }
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(rec);
  }
  if (whiten) fit_whitening(net, data);
  return result;
}

} // namespace manifold_forge
