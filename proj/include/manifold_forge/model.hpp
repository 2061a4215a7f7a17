#pragma once

#include "matrix.hpp"
#include "whitening.hpp"

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

namespace manifold_forge {

/// Activation shape (channels, height, width). 1-D signals use height 1.
struct Shape {
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;

  std::size_t size() const noexcept { return channels * height * width; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

namespace layers {

struct Conv1d {
  std::size_t in_channels, out_channels, kernel, stride = 1;
};
struct Conv2d {
  std::size_t in_channels, out_channels, kernel, stride = 1;
};
struct Linear {
  std::size_t in, out;
};
struct Relu {};
struct Flatten {};
struct Whitening {};

} // namespace layers

using Layer = std::variant<layers::Conv1d, layers::Conv2d, layers::Linear, layers::Relu,
                           layers::Flatten, layers::Whitening>;

struct ModelSpec {
  Shape input;
  std::vector<Layer> layers;
};

namespace detail {

// Conv1d and Conv2d share one kernel loop; 1-D is a 1 x k kernel on a height-1 image.
struct ConvGeometry {
  std::size_t cin, cout, kh, kw, sh, sw;
  Shape in, out;

  std::size_t weight_count() const noexcept { return cout * cin * kh * kw; }
  std::size_t param_count() const noexcept { return weight_count() + cout; }
};

inline std::string layer_name(const Layer& layer) {
  return std::visit(
      [](const auto& l) -> std::string {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, layers::Conv1d>) return "conv1d";
        else if constexpr (std::is_same_v<T, layers::Conv2d>) return "conv2d";
        else if constexpr (std::is_same_v<T, layers::Linear>) return "linear";
        else if constexpr (std::is_same_v<T, layers::Relu>) return "relu";
        else if constexpr (std::is_same_v<T, layers::Flatten>) return "flatten";
        else return "whitening";
      },
      layer);
}

inline ConvGeometry conv_geometry(std::size_t cin, std::size_t cout, std::size_t kh,
                                  std::size_t kw, std::size_t sh, std::size_t sw, Shape in,
                                  std::size_t index) {
  const auto fail = [&](const std::string& what) {
    return DimensionError("layer " + std::to_string(index) + ": " + what);
  };
  if (cin == 0 || cout == 0 || kh == 0 || kw == 0 || sh == 0 || sw == 0)
    throw fail("convolution fields must be positive");
  if (in.channels != cin)
    throw fail("expects " + std::to_string(cin) + " input channels, got " +
               std::to_string(in.channels));
  if (in.height < kh || in.width < kw) throw fail("kernel larger than input");
  Shape out{cout, (in.height - kh) / sh + 1, (in.width - kw) / sw + 1};
  return {cin, cout, kh, kw, sh, sw, in, out};
}

inline std::optional<ConvGeometry> geometry_of(const Layer& layer, Shape in, std::size_t index) {
  if (const auto* c = std::get_if<layers::Conv1d>(&layer)) {
    if (in.height != 1)
      throw DimensionError("layer " + std::to_string(index) + ": conv1d needs a 1-D input");
    return conv_geometry(c->in_channels, c->out_channels, 1, c->kernel, 1, c->stride, in, index);
  }
  if (const auto* c = std::get_if<layers::Conv2d>(&layer))
    return conv_geometry(c->in_channels, c->out_channels, c->kernel, c->kernel, c->stride,
                         c->stride, in, index);
  return std::nullopt;
}

inline Shape output_shape(const Layer& layer, Shape in, std::size_t index) {
  if (auto g = geometry_of(layer, in, index)) return g->out;
  if (const auto* fc = std::get_if<layers::Linear>(&layer)) {
    if (fc->in != in.size())
      throw DimensionError("layer " + std::to_string(index) + ": linear expects " +
                           std::to_string(fc->in) + " inputs, got " + std::to_string(in.size()));
    if (fc->out == 0) throw DimensionError("layer " + std::to_string(index) + ": zero outputs");
    return {fc->out, 1, 1};
  }
  if (std::holds_alternative<layers::Flatten>(layer)) return {in.size(), 1, 1};
  return in; // relu, whitening
}

inline std::size_t param_count(const Layer& layer, Shape in, std::size_t index) {
  if (auto g = geometry_of(layer, in, index)) return g->param_count();
  if (const auto* fc = std::get_if<layers::Linear>(&layer)) return fc->in * fc->out + fc->out;
  return 0;
}

inline void conv_forward(const ConvGeometry& g, const double* w, const double* x, double* y) {
  const double* bias = w + g.weight_count();
  for (std::size_t o = 0; o < g.cout; ++o)
    for (std::size_t oy = 0; oy < g.out.height; ++oy)
      for (std::size_t ox = 0; ox < g.out.width; ++ox) {
        double s = bias[o];
        for (std::size_t c = 0; c < g.cin; ++c)
          for (std::size_t ky = 0; ky < g.kh; ++ky) {
            const double* xrow = x + (c * g.in.height + oy * g.sh + ky) * g.in.width + ox * g.sw;
            const double* wrow = w + ((o * g.cin + c) * g.kh + ky) * g.kw;
            for (std::size_t kx = 0; kx < g.kw; ++kx) s += wrow[kx] * xrow[kx];
          }
        y[(o * g.out.height + oy) * g.out.width + ox] = s;
      }
}

inline void conv_backward(const ConvGeometry& g, const double* w, const double* x,
                          const double* dy, double* dw, double* dx) {
  double* dbias = dw + g.weight_count();
  for (std::size_t o = 0; o < g.cout; ++o)
    for (std::size_t oy = 0; oy < g.out.height; ++oy)
      for (std::size_t ox = 0; ox < g.out.width; ++ox) {
        const double go = dy[(o * g.out.height + oy) * g.out.width + ox];
        if (go == 0.0) continue;
        dbias[o] += go;
        for (std::size_t c = 0; c < g.cin; ++c)
          for (std::size_t ky = 0; ky < g.kh; ++ky) {
            const std::size_t xoff = (c * g.in.height + oy * g.sh + ky) * g.in.width + ox * g.sw;
            const std::size_t woff = ((o * g.cin + c) * g.kh + ky) * g.kw;
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
              dw[woff + kx] += go * x[xoff + kx];
              dx[xoff + kx] += go * w[woff + kx];
            }
          }
      }
}

} // namespace detail

/// Parameter and input gradients of a scalar objective.
struct ModelGradients {
  Vector params;
  Matrix inputs;
};

/// A small feed-forward network over flat sample rows, with exact reverse-mode
/// gradients. Immutable during evaluation, so forward/backward may run concurrently.
class Model {
public:
  /// Activations recorded by a forward pass, consumed by backward().
  struct Tape {
    std::vector<Matrix> inputs; // input of each evaluated layer
    Matrix output;
    std::size_t depth = 0;      // number of layers evaluated
  };

  /// An empty parameter vector means all zeros.
  Model(ModelSpec spec, Vector params) : spec_(std::move(spec)), params_(std::move(params)) {
    analyse();
    if (params_.empty()) params_.assign(param_count_, 0.0);
    if (params_.size() != param_count_)
      throw DimensionError("Model: expected " + std::to_string(param_count_) +
                           " parameters, got " + std::to_string(params_.size()));
  }

  /// Weights and biases uniform in ±1/sqrt(fan_in), drawn layer by layer.
  static Model initialize(ModelSpec spec, std::mt19937_64& rng) {
    Model m(std::move(spec), {});
    for (std::size_t i = 0; i < m.spec_.layers.size(); ++i) {
      const std::size_t count = m.counts_[i];
      if (count == 0) continue;
      std::size_t fan_in = 0;
      if (auto g = detail::geometry_of(m.spec_.layers[i], m.shapes_[i], i))
        fan_in = g->cin * g->kh * g->kw;
      else
        fan_in = std::get<layers::Linear>(m.spec_.layers[i]).in;
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (std::size_t k = 0; k < count; ++k) m.params_[m.offsets_[i] + k] = u(rng);
    }
    return m;
  }

  const ModelSpec& spec() const noexcept { return spec_; }
  const Vector& params() const noexcept { return params_; }
  Vector& params() noexcept { return params_; }
  std::size_t param_count() const noexcept { return param_count_; }
  std::size_t input_size() const noexcept { return spec_.input.size(); }
  std::size_t output_size() const noexcept { return shapes_.back().size(); }

  bool has_whitening() const noexcept {
    return !spec_.layers.empty() && std::holds_alternative<layers::Whitening>(spec_.layers.back());
  }
  const std::optional<WhiteningState>& whitening() const noexcept { return whitening_; }
  void set_whitening(WhiteningState w) {
    if (!has_whitening()) throw InvalidArgument("model spec has no whitening layer");
    if (w.dim() != output_size()) throw DimensionError("whitening state dimension mismatch");
    whitening_ = std::move(w);
  }

  /// Full evaluation, applying the frozen whitening layer last when configured.
  Matrix forward(const Matrix& batch) const { return record(batch, true).output; }

  /// Evaluation up to (excluding) a trailing whitening layer.
  Matrix forward_features(const Matrix& batch) const { return record(batch, false).output; }

  Tape record(const Matrix& batch, bool include_whitening) const {
    check_batch(batch);
    Tape tape;
    tape.depth = spec_.layers.size() - ((has_whitening() && !include_whitening) ? 1 : 0);
    tape.inputs.reserve(tape.depth);
    Matrix act = batch;
    for (std::size_t i = 0; i < tape.depth; ++i) {
      Matrix next = apply_layer(i, act);
      tape.inputs.push_back(std::move(act));
      act = std::move(next);
    }
    tape.output = std::move(act);
    return tape;
  }

  /// Reverse pass for the objective whose gradient with respect to the tape's
  /// output is `upstream`.
  ModelGradients backward(const Tape& tape, const Matrix& upstream) const {
    if (upstream.rows() != tape.output.rows() || upstream.cols() != tape.output.cols())
      throw DimensionError("backward: upstream gradient shape does not match forward output");
    ModelGradients grads{Vector(param_count_, 0.0), Matrix()};
    Matrix g = upstream;
    for (std::size_t i = tape.depth; i-- > 0;) g = layer_backward(i, tape.inputs[i], g, grads.params);
    grads.inputs = std::move(g);
    return grads;
  }

  ModelGradients backward(const Matrix& batch, const Matrix& upstream) const {
    return backward(record(batch, true), upstream);
  }

private:
  void analyse() {
    if (spec_.input.size() == 0) throw DimensionError("Model: empty input shape");
    shapes_.assign(1, spec_.input);
    offsets_.clear();
    counts_.clear();
    param_count_ = 0;
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
      const Layer& layer = spec_.layers[i];
      if (std::holds_alternative<layers::Whitening>(layer) && i + 1 != spec_.layers.size())
        throw DimensionError("whitening must be the last layer");
      offsets_.push_back(param_count_);
      counts_.push_back(detail::param_count(layer, shapes_.back(), i));
      param_count_ += counts_.back();
      shapes_.push_back(detail::output_shape(layer, shapes_.back(), i));
    }
  }

  void check_batch(const Matrix& batch) const {
    if (batch.rows() > 0 && batch.cols() != input_size())
      throw DimensionError("model expects " + std::to_string(input_size()) +
                           " input columns, got " + std::to_string(batch.cols()));
  }

  Matrix apply_layer(std::size_t i, const Matrix& x) const {
    const Layer& layer = spec_.layers[i];
    const std::size_t out_size = shapes_[i + 1].size();
    Matrix y(x.rows(), out_size);
    const double* w = params_.data() + offsets_[i];
    if (auto g = detail::geometry_of(layer, shapes_[i], i)) {
      for (std::size_t r = 0; r < x.rows(); ++r) detail::conv_forward(*g, w, x.row(r).data(), y.row(r).data());
    } else if (const auto* fc = std::get_if<layers::Linear>(&layer)) {
      const double* bias = w + fc->in * fc->out;
      for (std::size_t r = 0; r < x.rows(); ++r) {
        auto xr = x.row(r);
        for (std::size_t o = 0; o < fc->out; ++o)
          y(r, o) = bias[o] + dot({w + o * fc->in, fc->in}, xr);
      }
    } else if (std::holds_alternative<layers::Relu>(layer)) {
      for (std::size_t k = 0; k < x.size(); ++k) y.data()[k] = std::max(0.0, x.data()[k]);
    } else if (std::holds_alternative<layers::Flatten>(layer)) {
      y = x;
    } else {
      if (!whitening_) throw InvalidArgument("whitening layer has no fitted state");
      y = apply_whitening(*whitening_, x);
    }
    return y;
  }

  Matrix layer_backward(std::size_t i, const Matrix& x, const Matrix& dy, Vector& dparams) const {
    const Layer& layer = spec_.layers[i];
    Matrix dx(x.rows(), x.cols());
    const double* w = params_.data() + offsets_[i];
    double* dw = dparams.data() + offsets_[i];
    if (auto g = detail::geometry_of(layer, shapes_[i], i)) {
      for (std::size_t r = 0; r < x.rows(); ++r)
        detail::conv_backward(*g, w, x.row(r).data(), dy.row(r).data(), dw, dx.row(r).data());
    } else if (const auto* fc = std::get_if<layers::Linear>(&layer)) {
      double* dbias = dw + fc->in * fc->out;
      for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t o = 0; o < fc->out; ++o) {
          const double go = dy(r, o);
          if (go == 0.0) continue;
          dbias[o] += go;
          for (std::size_t k = 0; k < fc->in; ++k) {
            dw[o * fc->in + k] += go * x(r, k);
            dx(r, k) += go * w[o * fc->in + k];
          }
        }
    } else if (std::holds_alternative<layers::Relu>(layer)) {
      for (std::size_t k = 0; k < x.size(); ++k)
        dx.data()[k] = x.data()[k] > 0.0 ? dy.data()[k] : 0.0;
    } else if (std::holds_alternative<layers::Flatten>(layer)) {
      dx = dy;
    } else {
      if (!whitening_) throw InvalidArgument("whitening layer has no fitted state");
      dx = apply_whitening_backward(*whitening_, dy);
    }
    return dx;
  }

  ModelSpec spec_;
  Vector params_;
  std::optional<WhiteningState> whitening_;
  std::vector<Shape> shapes_;
  std::vector<std::size_t> offsets_;
  std::vector<std::size_t> counts_;
  std::size_t param_count_ = 0;
};

/// Fits the model's whitening layer on the pre-whitening outputs of `reference`.
inline WhiteningState fit_whitening(Model& model, const Matrix& reference) {
  if (reference.rows() < model.output_size() + 1)
    throw DegenerateBatchError("fit_whitening: need at least output dimension + 1 rows");
  WhiteningState w = fit_whitening_state(model.forward_features(reference));
  model.set_whitening(w);
  return w;
}

/// Conv1d[1,4,2] -> ReLU -> Conv1d[4,4,2] -> ReLU -> Flatten -> Fc[4,2] on 3-D points.
inline ModelSpec s_curve_model_spec(bool whitening) {
  ModelSpec s{{1, 1, 3},
              {layers::Conv1d{1, 4, 2}, layers::Relu{}, layers::Conv1d{4, 4, 2}, layers::Relu{},
               layers::Flatten{}, layers::Linear{4, 2}}};
  if (whitening) s.layers.push_back(layers::Whitening{});
  return s;
}

/// Conv2d[1,8,3] -> ReLU -> Conv2d[8,16,3, stride 2] -> ReLU -> Flatten -> Fc[64,outputs]
/// on 8x8 images. The stride makes the flattened size 64.
inline ModelSpec digits_model_spec(std::size_t outputs, bool whitening) {
  ModelSpec s{{1, 8, 8},
              {layers::Conv2d{1, 8, 3}, layers::Relu{}, layers::Conv2d{8, 16, 3, 2}, layers::Relu{},
               layers::Flatten{}, layers::Linear{64, outputs}}};
  if (whitening) s.layers.push_back(layers::Whitening{});
  return s;
}

} // namespace manifold_forge
