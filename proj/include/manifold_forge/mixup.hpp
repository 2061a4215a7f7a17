#pragma once

#include "attack.hpp"
#include "errors.hpp"
#include "matrix.hpp"
#include "model.hpp"
#include "optimizer.hpp"
#include "simplex.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace manifold_forge {

enum class GammaConstraint { UnitInterval, HalfInterval };

/// Mix-up and adversarial Mix-up settings.
struct MixupConfig {
  /// γ₁ ~ Beta(α, α).
  double alpha = 0.2;
  /// Weight of the mixed-pair term; 0 gives plain cross-entropy training.
  double lambda_w = 1.0;
  /// Mixing draws per sample and batch.
  std::size_t n_gamma = 1;
  /// n_iters = 0 gives standard Mix-up.
  AttackConfig attack{0.01, 0.001, 0, false, 1.0};
  GammaConstraint constraint = GammaConstraint::UnitInterval;

  void validate() const {
    if (!(alpha > 0.0)) throw InvalidArgument("mixup: alpha must be positive");
    if (!(lambda_w >= 0.0)) throw InvalidArgument("mixup: lambda_w must be nonnegative");
    if (n_gamma == 0) throw InvalidArgument("mixup: n_gamma must be at least 1");
    attack.validate();
  }

  double lower() const noexcept { return constraint == GammaConstraint::HalfInterval ? 0.5 : 0.0; }
};

struct ClassifierTrainOptions {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  DecaySchedule schedule;
};

inline Vector one_hot(std::size_t label, std::size_t classes) {
  if (label >= classes)
    throw InvalidArgument("label " + std::to_string(label) + " out of range for " + std::to_string(classes) + " classes");
  Vector y(classes, 0.0);
  y[label] = 1.0;
  return y;
}

/// One one-hot row per label.
inline Matrix one_hot_rows(std::span<const std::size_t> labels, std::size_t classes) {
  Matrix y(labels.size(), classes, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const Vector row = one_hot(labels[i], classes);
    std::copy(row.begin(), row.end(), y.row(i).begin());
  }
  return y;
}

/// Rejects anything but a probability vector over the classes.
inline void check_label_vector(std::span<const double> y, std::size_t classes) {
  if (y.size() != classes) throw InvalidArgument("label vector has wrong length");
  double sum = 0.0;
  for (double v : y) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidArgument("label vector entries must be nonnegative");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw InvalidArgument("label vector must sum to 1");
}

/// Cross-entropy -Σ y_k log softmax(z)_k. Writes log-probabilities to `log_p`
/// and, when `grad` is nonempty, softmax(z)·Σy - y to `grad`.
inline double softmax_cross_entropy(std::span<const double> logits, std::span<const double> target,
                                    std::span<double> log_p, std::span<double> grad = {}) {
  const double zmax = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (double z : logits) s += std::exp(z - zmax);
  const double lse = zmax + std::log(s);
  double value = 0.0, tsum = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    log_p[k] = logits[k] - lse;
    value -= target[k] * log_p[k];
    tsum += target[k];
  }
  if (!grad.empty())
    for (std::size_t k = 0; k < logits.size(); ++k) grad[k] = std::exp(log_p[k]) * tsum - target[k];
  return value;
}

inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

/// Sum of cross-entropies over rows and its parameter gradient, each row weighted by `scale`.
struct CrossEntropyResult {
  double value = 0.0;
  Vector grad_params;
  Matrix grad_inputs;
};

inline CrossEntropyResult cross_entropy_batch(const Model& model, const Matrix& x, const Matrix& targets,
                                              double scale = 1.0) {
  const auto tape = model.record(x, true);
  const Matrix& z = tape.output;
  if (targets.rows() != z.rows() || targets.cols() != z.cols())
    throw DimensionError("cross_entropy_batch: targets do not match model outputs");
  Matrix up(z.rows(), z.cols());
  Vector log_p(z.cols());
  CrossEntropyResult r;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    r.value += softmax_cross_entropy(z.row(i), targets.row(i), log_p, up.row(i));
    for (double& g : up.row(i)) g *= scale;
  }
  auto mg = model.backward(tape, up);
  r.value *= scale;
  r.grad_params = std::move(mg.params);
  r.grad_inputs = std::move(mg.inputs);
  return r;
}

/// Per-pair mixed cross-entropies CE(f(γ₁x_a + γ₂x_b), γ₁y_a + γ₂y_b), their sum,
/// the gradient of the sum in θ, and each pair's derivative in γ₁.
struct MixupBatchResult {
  double loss = 0.0;
  Vector pair_loss;
  Vector grad_gamma;
  Vector grad_params;
};

inline MixupBatchResult mixup_batch_loss(const Model& model, const Matrix& xa, const Matrix& ya,
                                         const Matrix& xb, const Matrix& yb, std::span<const double> gamma1) {
  const std::size_t n = xa.rows();
  if (xb.rows() != n || ya.rows() != n || yb.rows() != n || gamma1.size() != n)
    throw DimensionError("mixup_batch_loss: pair arrays differ in length");
  Matrix xm(n, xa.cols());
  Matrix ym(n, ya.cols());
  for (std::size_t i = 0; i < n; ++i) {
    const double g = gamma1[i], h = 1.0 - gamma1[i];
    for (std::size_t k = 0; k < xa.cols(); ++k) xm(i, k) = g * xa(i, k) + h * xb(i, k);
    for (std::size_t k = 0; k < ya.cols(); ++k) ym(i, k) = g * ya(i, k) + h * yb(i, k);
  }
  const auto tape = model.record(xm, true);
  const Matrix& z = tape.output;
  if (z.cols() != ya.cols()) throw DimensionError("mixup_batch_loss: label width differs from model outputs");
  Matrix up(n, z.cols());
  Matrix log_p(n, z.cols());
  MixupBatchResult r;
  r.pair_loss.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    r.pair_loss[i] = softmax_cross_entropy(z.row(i), ym.row(i), log_p.row(i), up.row(i));
    r.loss += r.pair_loss[i];
  }
  auto mg = model.backward(tape, up);
  r.grad_gamma.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double g = 0.0;
    for (std::size_t k = 0; k < xa.cols(); ++k) g += mg.inputs(i, k) * (xa(i, k) - xb(i, k));
    for (std::size_t k = 0; k < ya.cols(); ++k) g -= (ya(i, k) - yb(i, k)) * log_p(i, k);
    r.grad_gamma[i] = g;
  }
  r.grad_params = std::move(mg.params);
  return r;
}

struct MixupPairLoss {
  double value = 0.0;
  Vector grad_params;
  double grad_gamma = 0.0;
};

inline MixupPairLoss mixup_pair_loss(const Model& model, std::span<const double> xi, std::span<const double> yi,
                                     std::span<const double> xj, std::span<const double> yj, double gamma1) {
  if (!(gamma1 >= 0.0 && gamma1 <= 1.0)) throw InvalidArgument("mixup_pair_loss: gamma1 must lie in [0, 1]");
  const std::size_t classes = model.output_size();
  check_label_vector(yi, classes);
  check_label_vector(yj, classes);
  const auto row = [](std::span<const double> v) { return Matrix(1, v.size(), Vector(v.begin(), v.end())); };
  const double g[1] = {gamma1};
  auto r = mixup_batch_loss(model, row(xi), row(yi), row(xj), row(yj), g);
  return {r.loss, std::move(r.grad_params), r.grad_gamma[0]};
}

/// Mixed-loss totals before and after one γ₁ attack stage.
struct MixupAttackStats {
  double loss_before = 0.0;
  double loss_after = 0.0;
};

namespace detail {

// n_iters clamped ascent steps on every γ₁; the pairs are independent terms of
// the objective so each follows its own gradient. With the guard, a pair whose
// step does not raise its loss keeps its previous γ₁ and stops.
inline MixupAttackStats attack_mixing(const Model& model, const Matrix& xa, const Matrix& ya, const Matrix& xb,
                                      const Matrix& yb, Vector& gamma1, const MixupConfig& cfg, double xi) {
  MixupAttackStats stats;
  MixupBatchResult cur = mixup_batch_loss(model, xa, ya, xb, yb, gamma1);
  stats.loss_before = stats.loss_after = cur.loss;
  const Vector start = gamma1;
  std::vector<bool> active(gamma1.size(), true);
  for (std::size_t it = 0; it < cfg.attack.n_iters; ++it) {
    Vector cand = gamma1;
    for (std::size_t i = 0; i < cand.size(); ++i)
      if (active[i]) cand[i] = clamp_interval(gamma1[i] + xi * cur.grad_gamma[i], cfg.lower(), 1.0);
    const bool need_eval = cfg.attack.monotone_guard || it + 1 < cfg.attack.n_iters;
    if (!need_eval) {
      gamma1 = std::move(cand);
      break;
    }
    MixupBatchResult next = mixup_batch_loss(model, xa, ya, xb, yb, cand);
    if (!std::isfinite(next.loss)) {
      gamma1 = start;
      return stats;
    }
    for (std::size_t i = 0; i < cand.size(); ++i) {
      if (!active[i]) continue;
      if (cfg.attack.monotone_guard && !(next.pair_loss[i] > cur.pair_loss[i])) {
        active[i] = false;
        cand[i] = gamma1[i];
      }
    }
    gamma1 = std::move(cand);
    if (cfg.attack.monotone_guard) {
      cur = mixup_batch_loss(model, xa, ya, xb, yb, gamma1);
    } else {
      cur = std::move(next);
    }
    stats.loss_after = cur.loss;
  }
  return stats;
}

} // namespace detail

struct ClassifierEpoch {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double clean_error = std::numeric_limits<double>::quiet_NaN();
  double adv_error = std::numeric_limits<double>::quiet_NaN();
};

struct MixupTrainResult {
  Model model;
  std::vector<ClassifierEpoch> history;
  std::vector<MixupAttackStats> attacks;
};

struct ErrorRates {
  double clean = 0.0;
  double adversarial = 0.0;
};

/// x' = clip(x + ε·sign(∇_x CE(f(x), y)), lo, hi), with sign(0) = 0.
inline Matrix fgsm_generate(const Model& source, const Matrix& x, std::span<const std::size_t> labels,
                            double epsilon, double lo, double hi) {
  if (!(epsilon >= 0.0)) throw InvalidArgument("fgsm: epsilon must be nonnegative");
  if (labels.size() != x.rows()) throw DimensionError("fgsm: one label per sample required");
  if (epsilon == 0.0) return x;
  const auto ce = cross_entropy_batch(source, x, one_hot_rows(labels, source.output_size()));
  Matrix out = x;
  for (std::size_t i = 0; i < x.data().size(); ++i) {
    const double g = ce.grad_inputs.data()[i];
    const double s = g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0);
    out.data()[i] = std::clamp(x.data()[i] + epsilon * s, lo, hi);
  }
  return out;
}

inline double error_rate(const Model& model, const Matrix& x, std::span<const std::size_t> labels) {
  if (x.rows() == 0) return 0.0;
  const Matrix z = model.forward(x);
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < x.rows(); ++i) wrong += argmax(z.row(i)) != labels[i];
  return static_cast<double>(wrong) / static_cast<double>(x.rows());
}

/// FGSM evaluation settings; `source` crafts the perturbations.
struct AdvEvalConfig {
  double epsilon = 0.05;
  const Model* source = nullptr;
  double lo = 0.0;
  double hi = 1.0;
};

/// Top-1 error on clean inputs and on FGSM inputs crafted from the source model.
inline ErrorRates evaluate_error_rates(const Model& model, const Matrix& x, std::span<const std::size_t> labels,
                                       const AdvEvalConfig& adv) {
  if (!adv.source) throw InvalidArgument("evaluate_error_rates: missing source model");
  ErrorRates r;
  r.clean = error_rate(model, x, labels);
  r.adversarial = error_rate(model, fgsm_generate(*adv.source, x, labels, adv.epsilon, adv.lo, adv.hi), labels);
  return r;
}

/// Minimizes (1/|B|) Σ CE(f(x_i), y_i) + λ_w (1/(|B| N_γ)) Σ CE(f(γ₁x_i + γ₂x_j), γ₁y_i + γ₂y_j)
/// per batch, with partners j from a shuffle of the batch and γ₁ ascended for
/// n_iters clamped steps before each descent step. Batch order is drawn from
/// `rng`; pairing and γ₁ come from a separate stream so that λ_w = 0 matches
/// plain training exactly.
template <class Rng>
MixupTrainResult adversarial_mixup_train(const Matrix& x, std::span<const std::size_t> labels, std::size_t classes,
                                         Model model, const MixupConfig& cfg, const ClassifierTrainOptions& opt,
                                         Rng& rng, const Matrix* eval_x = nullptr,
                                         std::span<const std::size_t> eval_labels = {},
                                         const AdvEvalConfig* adv = nullptr) {
  cfg.validate();
  if (x.rows() == 0) throw InvalidArgument("adversarial_mixup_train: empty dataset");
  if (labels.size() != x.rows()) throw DimensionError("adversarial_mixup_train: one label per sample required");
  if (opt.batch_size == 0) throw InvalidArgument("adversarial_mixup_train: batch_size must be positive");
  if (model.output_size() != classes) throw DimensionError("model outputs differ from class count");
  const Matrix y = one_hot_rows(labels, classes);

  std::mt19937_64 mix_rng(rng());
  OptimizerState optim(opt.learning_rate, opt.momentum, model.param_count(), opt.weight_decay, opt.schedule);
  MixupTrainResult result{std::move(model), {}, {}};
  Model& net = result.model;
  std::vector<std::size_t> order(x.rows());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    const double xi = cfg.attack.xi_at(epoch, opt.epochs);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t s = 0; s < order.size(); s += opt.batch_size) {
      const std::span<const std::size_t> idx(order.data() + s, std::min(opt.batch_size, order.size() - s));
      const Matrix xb = x.select_rows(idx);
      const Matrix yb = y.select_rows(idx);
      const double inv_b = 1.0 / static_cast<double>(idx.size());
      CrossEntropyResult clean = cross_entropy_batch(net, xb, yb, inv_b);
      double loss = clean.value;
      Vector grad = std::move(clean.grad_params);

      if (cfg.lambda_w > 0.0) {
        const double w = cfg.lambda_w * inv_b / static_cast<double>(cfg.n_gamma);
        for (std::size_t d = 0; d < cfg.n_gamma; ++d) {
          std::vector<std::size_t> partner(idx.size());
          std::iota(partner.begin(), partner.end(), std::size_t{0});
          std::shuffle(partner.begin(), partner.end(), mix_rng);
          const Matrix xp = xb.select_rows(partner);
          const Matrix yp = yb.select_rows(partner);
          Vector g1(idx.size());
          for (double& g : g1) {
            g = sample_beta(cfg.alpha, cfg.alpha, mix_rng);
            if (cfg.constraint == GammaConstraint::HalfInterval) g = std::max(g, 1.0 - g);
          }
          if (cfg.attack.n_iters > 0)
            result.attacks.push_back(detail::attack_mixing(net, xb, yb, xp, yp, g1, cfg, xi));
          const MixupBatchResult mixed = mixup_batch_loss(net, xb, yb, xp, yp, g1);
          loss += w * mixed.loss;
          for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += w * mixed.grad_params[k];
        }
      }
      optimizer_step(optim, net.params(), grad);
      loss_sum += loss;
      ++batches;
    }
    optim.end_epoch(epoch + 1);

    ClassifierEpoch rec;
    rec.epoch = epoch + 1;
    rec.train_loss = loss_sum / static_cast<double>(batches);
    if (eval_x) {
      if (adv) {
        const ErrorRates e = evaluate_error_rates(net, *eval_x, eval_labels, *adv);
        rec.clean_error = e.clean;
        rec.adv_error = e.adversarial;
      } else {
        rec.clean_error = error_rate(net, *eval_x, eval_labels);
      }
    }
    result.history.push_back(rec);
  }
  return result;
}

} // namespace manifold_forge
