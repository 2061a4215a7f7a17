#pragma once

#include "anchors.hpp"
#include "attack.hpp"
#include "datasets.hpp"
#include "errors.hpp"
#include "losses.hpp"
#include "mixup.hpp"
#include "model.hpp"

#include "json.hpp"

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>

namespace manifold_forge {

using Json = nlohmann::json;

/// Training modes of the embedding experiment: reference (train and test data),
/// data only, random virtual points, manifold attack.
enum class PgsMode { REF, DD, RV, MA };

inline std::string to_string(PgsMode m) {
  switch (m) {
  case PgsMode::REF: return "REF";
  case PgsMode::DD: return "DD";
  case PgsMode::RV: return "RV";
  case PgsMode::MA: return "MA";
  }
  return "?";
}

struct DataConfig {
  /// "s-curve" or "digits".
  std::string name = "s-curve";
  /// Generated sample count (s-curve only).
  std::size_t n = 1000;
  /// Digits CSV; empty selects the bundled file.
  std::string path;
  std::size_t n_train = 100;
  /// Each repetition draws its own data and split; false keeps the ones from the root seed.
  bool resample_split = true;
};

struct PgsExperimentConfig {
  DataConfig data;
  EmbeddingLossSpec loss;
  AnchorRule anchors;
  AttackConfig attack;
  BatchComposition batch;
  /// Empty selects the dataset's preset (whitened for LE).
  std::optional<ModelSpec> model;
  PgsTrainOptions train;
  PgsMode mode = PgsMode::MA;
  std::size_t repetitions = 5;
  std::uint64_t seed = 0;
  bool log_attacks = false;
};

struct MixupExperimentConfig {
  DataConfig data{"digits", 0, "", 1200, true};
  std::optional<ModelSpec> model;
  ClassifierTrainOptions train;
  /// Shared by both Mix-up arms; the plain arm runs it with n_iters = 0.
  MixupConfig mixup = [] {
    MixupConfig m;
    m.attack.n_iters = 2;
    return m;
  }();
  double epsilon = 0.05;
  std::size_t repetitions = 3;
  std::uint64_t seed = 0;
};

namespace detail {

inline void check_keys(const Json& j, std::initializer_list<std::string_view> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
      throw ConfigError(where + ": unknown key '" + it.key() + "'");
}

template <class T>
void read(const Json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  const Json& v = j.at(key);
  const std::string at = where + "." + key;
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw ConfigError(at + ": expected true or false");
    out = v.get<bool>();
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_unsigned()) throw ConfigError(at + ": expected a nonnegative integer");
    out = v.get<T>();
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) throw ConfigError(at + ": expected a number");
    out = v.get<T>();
  } else {
    if (!v.is_string()) throw ConfigError(at + ": expected a string");
    out = v.get<T>();
  }
}

template <class E, std::size_t N>
E read_enum(const Json& j, const char* key, E current, const std::pair<const char*, E> (&names)[N],
            const std::string& where) {
  if (!j.contains(key)) return current;
  std::string s;
  read(j, key, s, where);
  for (const auto& [name, value] : names)
    if (s == name) return value;
  throw ConfigError(where + "." + key + ": unknown value '" + s + "'");
}

inline constexpr std::pair<const char*, LossKind> kLossNames[] = {
    {"mds", LossKind::MDS}, {"le", LossKind::LE}, {"lle", LossKind::LLE},
    {"contrastive", LossKind::Contrastive}, {"sne", LossKind::SNE}};
inline constexpr std::pair<const char*, AnchorKind> kAnchorNames[] = {{"neighbor", AnchorKind::Neighbor},
                                                                     {"random", AnchorKind::Random}};
inline constexpr std::pair<const char*, PgsMode> kModeNames[] = {
    {"REF", PgsMode::REF}, {"DD", PgsMode::DD}, {"RV", PgsMode::RV}, {"MA", PgsMode::MA}};
inline constexpr std::pair<const char*, GammaConstraint> kConstraintNames[] = {
    {"unit", GammaConstraint::UnitInterval}, {"half", GammaConstraint::HalfInterval}};

template <class E, std::size_t N>
std::string enum_name(E v, const std::pair<const char*, E> (&names)[N]) {
  for (const auto& [name, value] : names)
    if (v == value) return name;
  return "?";
}

} // namespace detail

// ---- pieces -----------------------------------------------------------------

inline Json to_json(const ModelSpec& s) {
  Json layers = Json::array();
  for (const Layer& layer : s.layers) {
    Json l{{"type", detail::layer_name(layer)}};
    std::visit(
        [&](const auto& v) {
          using T = std::decay_t<decltype(v)>;
          if constexpr (std::is_same_v<T, layers::Conv1d> || std::is_same_v<T, layers::Conv2d>) {
            l["in"] = v.in_channels;
            l["out"] = v.out_channels;
            l["kernel"] = v.kernel;
            l["stride"] = v.stride;
          } else if constexpr (std::is_same_v<T, layers::Linear>) {
            l["in"] = v.in;
            l["out"] = v.out;
          }
        },
        layer);
    layers.push_back(std::move(l));
  }
  return {{"input", {s.input.channels, s.input.height, s.input.width}}, {"layers", std::move(layers)}};
}

inline ModelSpec model_spec_from_json(const Json& j) {
  detail::check_keys(j, {"input", "layers"}, "model");
  if (!j.contains("input") || !j.contains("layers")) throw ConfigError("model: needs 'input' and 'layers'");
  const Json& in = j.at("input");
  if (!in.is_array() || in.size() != 3 || !std::all_of(in.begin(), in.end(), [](const Json& v) {
        return v.is_number_unsigned();
      }))
    throw ConfigError("model.input: expected [channels, height, width]");
  ModelSpec s;
  s.input = {in[0].get<std::size_t>(), in[1].get<std::size_t>(), in[2].get<std::size_t>()};
  if (!j.at("layers").is_array()) throw ConfigError("model.layers: expected an array");
  std::size_t idx = 0;
  for (const Json& l : j.at("layers")) {
    const std::string where = "model.layers[" + std::to_string(idx++) + "]";
    std::string type;
    if (!l.is_object() || !l.contains("type")) throw ConfigError(where + ": missing 'type'");
    detail::read(l, "type", type, where);
    if (type == "conv1d" || type == "conv2d") {
      detail::check_keys(l, {"type", "in", "out", "kernel", "stride"}, where);
      std::size_t cin = 0, cout = 0, k = 0, stride = 1;
      detail::read(l, "in", cin, where);
      detail::read(l, "out", cout, where);
      detail::read(l, "kernel", k, where);
      detail::read(l, "stride", stride, where);
      if (type == "conv1d") s.layers.push_back(layers::Conv1d{cin, cout, k, stride});
      else s.layers.push_back(layers::Conv2d{cin, cout, k, stride});
    } else if (type == "linear") {
      detail::check_keys(l, {"type", "in", "out"}, where);
      std::size_t a = 0, b = 0;
      detail::read(l, "in", a, where);
      detail::read(l, "out", b, where);
      s.layers.push_back(layers::Linear{a, b});
    } else if (type == "relu" || type == "flatten" || type == "whitening") {
      detail::check_keys(l, {"type"}, where);
      if (type == "relu") s.layers.push_back(layers::Relu{});
      else if (type == "flatten") s.layers.push_back(layers::Flatten{});
      else s.layers.push_back(layers::Whitening{});
    } else {
      throw ConfigError(where + ": unknown layer type '" + type + "'");
    }
  }
  try {
    Model probe(s, {});
  } catch (const Error& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  return s;
}

inline Json to_json(const DataConfig& d) {
  return {{"name", d.name}, {"n", d.n}, {"path", d.path}, {"n_train", d.n_train}, {"resample_split", d.resample_split}};
}

inline DataConfig data_config_from_json(const Json& j, DataConfig d) {
  detail::check_keys(j, {"name", "n", "path", "n_train", "resample_split"}, "data");
  detail::read(j, "name", d.name, "data");
  detail::read(j, "n", d.n, "data");
  detail::read(j, "path", d.path, "data");
  detail::read(j, "n_train", d.n_train, "data");
  detail::read(j, "resample_split", d.resample_split, "data");
  return d;
}

inline Json to_json(const EmbeddingLossSpec& s) {
  Json j{{"kind", to_string(s.kind)},
         {"sigma", s.sigma},
         {"sigma_embedding", s.sigma_embedding},
         {"k_neighbors", s.k_neighbors},
         {"margin", s.margin},
         {"smooth_similarity", s.smooth_similarity}};
  j["distance_cutoff"] = s.distance_cutoff ? Json(*s.distance_cutoff) : Json(nullptr);
  return j;
}

inline EmbeddingLossSpec loss_from_json(const Json& j) {
  const std::string w = "loss";
  detail::check_keys(j, {"kind", "sigma", "sigma_embedding", "k_neighbors", "distance_cutoff", "margin",
                         "smooth_similarity"},
                     w);
  EmbeddingLossSpec s;
  s.kind = detail::read_enum(j, "kind", s.kind, detail::kLossNames, w);
  detail::read(j, "sigma", s.sigma, w);
  detail::read(j, "sigma_embedding", s.sigma_embedding, w);
  detail::read(j, "k_neighbors", s.k_neighbors, w);
  detail::read(j, "margin", s.margin, w);
  detail::read(j, "smooth_similarity", s.smooth_similarity, w);
  if (j.contains("distance_cutoff") && !j.at("distance_cutoff").is_null()) {
    double c = 0.0;
    detail::read(j, "distance_cutoff", c, w);
    s.distance_cutoff = c;
  }
  return s;
}

inline Json to_json(const AnchorRule& r) {
  Json j{{"kind", detail::enum_name(r.kind, detail::kAnchorNames)},
         {"p", r.p},
         {"scale", r.scale},
         {"dirichlet_alpha", r.dirichlet_alpha},
         {"sets", r.sets}};
  j["bias"] = r.bias ? Json{{"index", r.bias->index}, {"tau", r.bias->tau}} : Json(nullptr);
  return j;
}

inline AnchorRule anchors_from_json(const Json& j) {
  const std::string w = "anchors";
  detail::check_keys(j, {"kind", "p", "scale", "dirichlet_alpha", "bias", "sets"}, w);
  AnchorRule r;
  r.kind = detail::read_enum(j, "kind", r.kind, detail::kAnchorNames, w);
  detail::read(j, "p", r.p, w);
  detail::read(j, "scale", r.scale, w);
  detail::read(j, "sets", r.sets, w);
  if (j.contains("dirichlet_alpha")) {
    const Json& a = j.at("dirichlet_alpha");
    if (!a.is_array() || !std::all_of(a.begin(), a.end(), [](const Json& v) { return v.is_number(); }))
      throw ConfigError("anchors.dirichlet_alpha: expected an array of numbers");
    r.dirichlet_alpha = a.get<Vector>();
  }
  if (j.contains("bias") && !j.at("bias").is_null()) {
    const Json& b = j.at("bias");
    detail::check_keys(b, {"index", "tau"}, "anchors.bias");
    BiasedSimplexConstraint c;
    detail::read(b, "index", c.index, "anchors.bias");
    detail::read(b, "tau", c.tau, "anchors.bias");
    r.bias = c;
  }
  return r;
}

inline Json to_json(const AttackConfig& c) {
  Json j{{"xi", c.xi},
         {"n_iters", c.n_iters},
         {"monotone_guard", c.monotone_guard},
         {"attack_fraction", c.attack_fraction}};
  j["xi_end"] = c.xi_end ? Json(*c.xi_end) : Json(nullptr);
  return j;
}

inline AttackConfig attack_from_json(const Json& j, AttackConfig c, const std::string& w = "attack") {
  detail::check_keys(j, {"xi", "xi_end", "n_iters", "monotone_guard", "attack_fraction"}, w);
  detail::read(j, "xi", c.xi, w);
  detail::read(j, "n_iters", c.n_iters, w);
  detail::read(j, "monotone_guard", c.monotone_guard, w);
  detail::read(j, "attack_fraction", c.attack_fraction, w);
  if (j.contains("xi_end")) {
    if (j.at("xi_end").is_null()) {
      c.xi_end.reset();
    } else {
      double e = 0.0;
      detail::read(j, "xi_end", e, w);
      c.xi_end = e;
    }
  }
  return c;
}

inline Json to_json(const DecaySchedule& s) { return {{"factor", s.factor}, {"period", s.period}}; }

inline DecaySchedule schedule_from_json(const Json& j, const std::string& w) {
  detail::check_keys(j, {"factor", "period"}, w);
  DecaySchedule s;
  detail::read(j, "factor", s.factor, w);
  detail::read(j, "period", s.period, w);
  return s;
}

// ---- whole configs ------------------------------------------------------------

inline Json to_json(const PgsExperimentConfig& c) {
  Json j;
  j["data"] = to_json(c.data);
  j["loss"] = to_json(c.loss);
  j["anchors"] = to_json(c.anchors);
  j["attack"] = to_json(c.attack);
  j["batch"] = {{"virtual", c.batch.virtual_per_batch}, {"data", c.batch.data_per_batch}};
  j["model"] = c.model ? to_json(*c.model) : Json(nullptr);
  j["train"] = {{"epochs", c.train.epochs},
                {"learning_rate", c.train.learning_rate},
                {"momentum", c.train.momentum},
                {"schedule", to_json(c.train.schedule)},
                {"max_grad_norm", c.train.max_grad_norm},
                {"eval_every", c.train.eval_every},
                {"pair_weights",
                 {{"data_data", c.train.weighting.data_data},
                  {"data_virtual", c.train.weighting.data_virtual},
                  {"virtual_virtual", c.train.weighting.virtual_virtual}}}};
  j["mode"] = to_string(c.mode);
  j["repetitions"] = c.repetitions;
  j["seed"] = c.seed;
  j["log_attacks"] = c.log_attacks;
  return j;
}

inline PgsExperimentConfig pgs_config_from_json(const Json& j) {
  const std::string w = "config";
  detail::check_keys(j, {"data", "loss", "anchors", "attack", "batch", "model", "train", "mode", "repetitions",
                         "seed", "log_attacks"},
                     w);
  PgsExperimentConfig c;
  if (j.contains("data")) c.data = data_config_from_json(j.at("data"), c.data);
  if (j.contains("loss")) c.loss = loss_from_json(j.at("loss"));
  if (j.contains("anchors")) c.anchors = anchors_from_json(j.at("anchors"));
  if (j.contains("attack")) c.attack = attack_from_json(j.at("attack"), c.attack);
  if (j.contains("batch")) {
    detail::check_keys(j.at("batch"), {"virtual", "data"}, "batch");
    detail::read(j.at("batch"), "virtual", c.batch.virtual_per_batch, "batch");
    detail::read(j.at("batch"), "data", c.batch.data_per_batch, "batch");
  }
  if (j.contains("model") && !j.at("model").is_null()) c.model = model_spec_from_json(j.at("model"));
  if (j.contains("train")) {
    const Json& t = j.at("train");
    detail::check_keys(t, {"epochs", "learning_rate", "momentum", "schedule", "max_grad_norm", "eval_every",
                           "pair_weights"},
                       "train");
    detail::read(t, "epochs", c.train.epochs, "train");
    detail::read(t, "learning_rate", c.train.learning_rate, "train");
    detail::read(t, "momentum", c.train.momentum, "train");
    detail::read(t, "max_grad_norm", c.train.max_grad_norm, "train");
    detail::read(t, "eval_every", c.train.eval_every, "train");
    if (t.contains("schedule")) c.train.schedule = schedule_from_json(t.at("schedule"), "train.schedule");
    if (t.contains("pair_weights")) {
      const Json& p = t.at("pair_weights");
      const std::string pw = "train.pair_weights";
      detail::check_keys(p, {"data_data", "data_virtual", "virtual_virtual"}, pw);
      detail::read(p, "data_data", c.train.weighting.data_data, pw);
      detail::read(p, "data_virtual", c.train.weighting.data_virtual, pw);
      detail::read(p, "virtual_virtual", c.train.weighting.virtual_virtual, pw);
    }
  }
  c.mode = detail::read_enum(j, "mode", c.mode, detail::kModeNames, w);
  detail::read(j, "repetitions", c.repetitions, w);
  detail::read(j, "seed", c.seed, w);
  detail::read(j, "log_attacks", c.log_attacks, w);
  return c;
}

inline Json to_json(const MixupExperimentConfig& c) {
  Json j;
  j["data"] = to_json(c.data);
  j["model"] = c.model ? to_json(*c.model) : Json(nullptr);
  j["train"] = {{"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"learning_rate", c.train.learning_rate},
                {"momentum", c.train.momentum},
                {"weight_decay", c.train.weight_decay},
                {"schedule", to_json(c.train.schedule)}};
  j["mixup"] = {{"alpha", c.mixup.alpha},
                {"lambda_w", c.mixup.lambda_w},
                {"n_gamma", c.mixup.n_gamma},
                {"constraint", detail::enum_name(c.mixup.constraint, detail::kConstraintNames)},
                {"attack", to_json(c.mixup.attack)}};
  j["epsilon"] = c.epsilon;
  j["repetitions"] = c.repetitions;
  j["seed"] = c.seed;
  return j;
}

inline MixupExperimentConfig mixup_config_from_json(const Json& j) {
  const std::string w = "config";
  detail::check_keys(j, {"data", "model", "train", "mixup", "epsilon", "repetitions", "seed"}, w);
  MixupExperimentConfig c;
  if (j.contains("data")) c.data = data_config_from_json(j.at("data"), c.data);
  if (j.contains("model") && !j.at("model").is_null()) c.model = model_spec_from_json(j.at("model"));
  if (j.contains("train")) {
    const Json& t = j.at("train");
    detail::check_keys(t, {"epochs", "batch_size", "learning_rate", "momentum", "weight_decay", "schedule"}, "train");
    detail::read(t, "epochs", c.train.epochs, "train");
    detail::read(t, "batch_size", c.train.batch_size, "train");
    detail::read(t, "learning_rate", c.train.learning_rate, "train");
    detail::read(t, "momentum", c.train.momentum, "train");
    detail::read(t, "weight_decay", c.train.weight_decay, "train");
    if (t.contains("schedule")) c.train.schedule = schedule_from_json(t.at("schedule"), "train.schedule");
  }
  if (j.contains("mixup")) {
    const Json& m = j.at("mixup");
    detail::check_keys(m, {"alpha", "lambda_w", "n_gamma", "constraint", "attack"}, "mixup");
    detail::read(m, "alpha", c.mixup.alpha, "mixup");
    detail::read(m, "lambda_w", c.mixup.lambda_w, "mixup");
    detail::read(m, "n_gamma", c.mixup.n_gamma, "mixup");
    c.mixup.constraint = detail::read_enum(m, "constraint", c.mixup.constraint, detail::kConstraintNames, "mixup");
    if (m.contains("attack")) c.mixup.attack = attack_from_json(m.at("attack"), c.mixup.attack, "mixup.attack");
  }
  detail::read(j, "epsilon", c.epsilon, w);
  detail::read(j, "repetitions", c.repetitions, w);
  detail::read(j, "seed", c.seed, w);
  return c;
}

// ---- resolution -------------------------------------------------------------

namespace detail {

inline void validate_data(const DataConfig& d) {
  if (d.name == "s-curve") {
    if (d.n < 3) throw ConfigError("data.n: the s-curve needs at least 3 samples");
    if (d.n_train < 1 || d.n_train + 2 > d.n) throw ConfigError("data.n_train: need 1 <= n_train <= n - 2");
  } else if (d.name == "digits") {
    if (d.n_train < 1 || d.n_train + 2 > kDigitsRows) throw ConfigError("data.n_train: need 1 <= n_train <= 1795");
  } else {
    throw ConfigError("data.name: unknown dataset '" + d.name + "'");
  }
}

inline std::size_t input_width(const DataConfig& d) { return d.name == "digits" ? 64 : 3; }

template <class F>
void rethrow_as_config(F&& f) {
  try {
    f();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

} // namespace detail

/// Applies the mode rules and fills defaults; throws ConfigError on anything
/// that would fail later. REF and DD train without virtual points and leave the
/// anchor rule unused, DD rejects a nonzero virtual count, RV forces n_iters = 0.
inline PgsExperimentConfig resolve(PgsExperimentConfig c) {
  detail::validate_data(c.data);
  if (c.repetitions == 0) throw ConfigError("repetitions must be at least 1");
  if (c.train.epochs == 0) throw ConfigError("train.epochs must be at least 1");
  if (!(c.train.max_grad_norm >= 0.0)) throw ConfigError("train.max_grad_norm must be nonnegative");
  switch (c.mode) {
  case PgsMode::REF:
    c.batch.virtual_per_batch = 0;
    c.anchors = AnchorRule{};
    break;
  case PgsMode::DD:
    if (c.batch.virtual_per_batch != 0) throw ConfigError("mode DD forbids virtual points: set batch.virtual to 0");
    c.anchors = AnchorRule{};
    break;
  case PgsMode::RV:
    c.attack.n_iters = 0;
    break;
  case PgsMode::MA: break;
  }
  if (c.mode == PgsMode::MA && c.batch.virtual_per_batch == 0)
    throw ConfigError("mode MA needs virtual points: batch.virtual must be at least 1");
  if (c.mode == PgsMode::RV && c.batch.virtual_per_batch == 0)
    throw ConfigError("mode RV needs virtual points: batch.virtual must be at least 1");
  if (c.batch.data_per_batch == 0) throw ConfigError("batch.data must be at least 1");
  detail::rethrow_as_config([&] {
    c.loss.validate();
    c.attack.validate();
    c.train.weighting.validate();
    if (c.batch.virtual_per_batch > 0) c.anchors.validate();
  });
  if (!c.model) {
    const bool whiten = c.loss.kind == LossKind::LE;
    c.model = c.data.name == "digits" ? digits_model_spec(2, whiten) : s_curve_model_spec(whiten);
  }
  const Model probe = [&] {
    try {
      return Model(*c.model, {});
    } catch (const Error& e) {
      throw ConfigError(std::string("model: ") + e.what());
    }
  }();
  if (probe.input_size() != detail::input_width(c.data))
    throw ConfigError("model: input size " + std::to_string(probe.input_size()) + " does not match the dataset");
  if (probe.has_whitening() && c.batch.data_per_batch < probe.output_size() + 1)
    throw ConfigError("batch.data must exceed the embedding dimension when the model whitens");
  return c;
}

inline MixupExperimentConfig resolve(MixupExperimentConfig c) {
  detail::validate_data(c.data);
  if (c.data.name != "digits") throw ConfigError("data.name: the mixup experiment needs a labeled dataset (digits)");
  if (c.repetitions == 0) throw ConfigError("repetitions must be at least 1");
  if (c.train.epochs == 0) throw ConfigError("train.epochs must be at least 1");
  if (c.train.batch_size == 0) throw ConfigError("train.batch_size must be at least 1");
  if (!(c.epsilon >= 0.0)) throw ConfigError("epsilon must be nonnegative");
  if (c.mixup.attack.n_iters == 0) throw ConfigError("mixup.attack.n_iters must be at least 1");
  detail::rethrow_as_config([&] { c.mixup.validate(); });
  if (!c.model) c.model = digits_model_spec(10, false);
  try {
    const Model probe(*c.model, {});
    if (probe.input_size() != 64 || probe.output_size() != 10)
      throw ConfigError("model: needs 64 inputs and 10 outputs for digits");
    if (probe.has_whitening()) throw ConfigError("model: a classifier cannot end in a whitening layer");
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  return c;
}

/// 64-bit FNV-1a of the text, as 16 hex digits.
inline std::string fnv1a_hex(std::string_view text) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Hash of the resolved configuration's canonical JSON (keys sorted, compact).
template <class Config>
std::string config_hash(const Config& resolved) {
  return fnv1a_hex(to_json(resolved).dump());
}

inline Json load_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

} // namespace manifold_forge
