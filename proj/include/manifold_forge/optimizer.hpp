#pragma once

#include "errors.hpp"
#include "matrix.hpp"

#include <cmath>
#include <string>

namespace manifold_forge {

/// Step decay: multiply the learning rate by `factor` every `period` epochs (0 disables).
struct DecaySchedule {
  double factor = 1.0;
  std::size_t period = 0;
};

/// SGD with classical momentum, in the v = μv + g; θ -= lr·v form.
struct OptimizerState {
  double learning_rate = 0.001;
  double momentum = 0.9;
  double weight_decay = 0.0;
  DecaySchedule schedule;
  /// Gradients with a larger Euclidean norm are rescaled to it; 0 disables.
  double max_grad_norm = 0.0;
  Vector velocity;

  OptimizerState() = default;
  OptimizerState(double lr, double mom, std::size_t n_params, double wd = 0.0,
                 DecaySchedule sched = {})
      : learning_rate(lr), momentum(mom), weight_decay(wd), schedule(sched),
        velocity(n_params, 0.0) {
    if (!(lr > 0.0)) throw InvalidArgument("learning rate must be positive");
    if (!(mom >= 0.0 && mom < 1.0)) throw InvalidArgument("momentum must lie in [0, 1)");
  }

  /// Applies the decay rule; call once after each completed epoch (1-based count).
  void end_epoch(std::size_t completed_epochs) {
    if (schedule.period > 0 && completed_epochs % schedule.period == 0)
      learning_rate *= schedule.factor;
  }
};

inline void optimizer_step(OptimizerState& state, Vector& params, const Vector& grad) {
  if (params.size() != grad.size() || state.velocity.size() != params.size())
    throw DimensionError("optimizer_step: parameter, gradient and velocity sizes differ");
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!std::isfinite(grad[i]))
      throw NumericalError("optimizer_step: non-finite gradient at parameter " + std::to_string(i));
  double scale = 1.0;
  if (state.max_grad_norm > 0.0) {
    double sq = 0.0;
    for (double g : grad) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > state.max_grad_norm) scale = state.max_grad_norm / norm;
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = scale * grad[i] + state.weight_decay * params[i];
    state.velocity[i] = state.momentum * state.velocity[i] + g;
    params[i] -= state.learning_rate * state.velocity[i];
  }
}

} // namespace manifold_forge
