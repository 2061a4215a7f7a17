#pragma once

#include "attack.hpp"
#include "config.hpp"
#include "datasets.hpp"
#include "mixup.hpp"
#include "model.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace manifold_forge {

/// Worker count for `jobs` independent tasks: MANIFOLD_FORGE_THREADS when set to
/// a positive integer, otherwise the hardware concurrency.
inline std::size_t worker_count(std::size_t jobs) {
  std::size_t cap = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("MANIFOLD_FORGE_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) cap = static_cast<std::size_t>(v);
  }
  return std::max<std::size_t>(1, std::min(cap, jobs));
}

/// Runs f(0..n-1) on up to worker_count(n) threads; rethrows the lowest-index failure.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& f) {
  std::vector<std::exception_ptr> errors(n);
  const std::size_t workers = worker_count(n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) try {
        f(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
  } else {
    std::mutex m;
    std::size_t next = 0;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        while (true) {
          std::size_t i;
          {
            std::lock_guard lock(m);
            if (next == n) return;
            i = next++;
          }
          try {
            f(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0; // sample standard deviation, 0 for one value
};

inline MeanStd mean_std(std::span<const double> v) {
  MeanStd r;
  if (v.empty()) return r;
  for (double x : v) r.mean += x;
  r.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - r.mean) * (x - r.mean);
    r.stddev = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return r;
}

namespace detail {

inline std::filesystem::path digits_path(const DataConfig& d) {
  if (!d.path.empty()) return d.path;
#ifdef MANIFOLD_FORGE_DATA_DIR
  return std::filesystem::path(MANIFOLD_FORGE_DATA_DIR) / "digits.csv";
#else
  return std::filesystem::path("data") / "digits.csv";
#endif
}

// The full dataset and its split for one repetition. Everything is drawn from
// `rng` unless the split is shared across repetitions, in which case it comes
// from the root seed.
template <class Rng>
std::pair<Dataset, Split> draw_data(const DataConfig& d, const Dataset* digits, std::uint64_t root, Rng& rng) {
  const auto make = [&](auto& r) {
    Dataset full = d.name == "digits" ? *digits : generate_s_curve(d.n, r);
    Split s = split(full.size(), d.n_train, r);
    return std::pair{std::move(full), std::move(s)};
  };
  if (d.resample_split) return make(rng);
  std::mt19937_64 fixed(root);
  return make(fixed);
}

inline std::optional<Dataset> load_if_digits(const DataConfig& d) {
  if (d.name != "digits") return std::nullopt;
  return load_digits(digits_path(d));
}

} // namespace detail

// ---- embedding experiment ---------------------------------------------------

struct PgsRepetition {
  std::size_t rep = 0;
  std::uint64_t seed = 0;
  double eval_loss = 0.0;
  /// Rows in the training objective and the most distinct data rows seen in one epoch.
  std::size_t train_rows = 0;
  std::size_t max_participants = 0;
  std::vector<EpochRecord> history;
  std::vector<AttackStageStats> attacks;
  std::size_t failed_attacks = 0;
  Matrix test_embedding;
  Vector test_color;
  bool categorical_color = false;
  double wall_ms = 0.0;
};

struct PgsRunReport {
  PgsExperimentConfig config; // resolved
  std::string config_hash;
  std::vector<PgsRepetition> reps;
  MeanStd eval_loss;
  double wall_ms = 0.0;
};

/// Runs the configured mode `repetitions` times; repetition k seeds everything
/// with seed + k. REF trains on train and test rows together.
inline PgsRunReport run_pgs_experiment(const PgsExperimentConfig& raw) {
  const auto t0 = std::chrono::steady_clock::now();
  PgsRunReport report;
  report.config = resolve(raw);
  const PgsExperimentConfig& c = report.config;
  report.config_hash = config_hash(c);
  const std::optional<Dataset> digits = detail::load_if_digits(c.data);

  report.reps.resize(c.repetitions);
  parallel_for(c.repetitions, [&](std::size_t k) {
    const auto r0 = std::chrono::steady_clock::now();
    PgsRepetition& out = report.reps[k];
    out.rep = k;
    out.seed = c.seed + k;
    std::mt19937_64 rng(out.seed);
    auto [full, sp] = detail::draw_data(c.data, digits ? &*digits : nullptr, c.seed, rng);
    const Dataset test = full.subset(sp.test);
    const Matrix train = c.mode == PgsMode::REF ? full.x : full.x.select_rows(sp.train);

    Model init = Model::initialize(*c.model, rng);
    PgsTrainOptions opt = c.train;
    opt.eval_set = &test.x;
    opt.log_attacks = c.log_attacks;
    PgsTrainResult res = manifold_attack_train(train, c.loss, std::move(init), c.anchors, c.attack, c.batch, opt, rng);

    out.eval_loss = res.history.back().eval_loss;
    out.train_rows = train.rows();
    for (const auto& e : res.history) out.max_participants = std::max(out.max_participants, e.data_participants);
    out.failed_attacks = res.failed_attacks;
    out.history = std::move(res.history);
    out.attacks = std::move(res.attacks);
    out.test_embedding = res.model.forward(test.x);
    out.test_color = test.color;
    out.categorical_color = test.descriptor.classes.has_value();
    out.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - r0).count();
  });

  Vector losses;
  for (const auto& r : report.reps) losses.push_back(r.eval_loss);
  report.eval_loss = mean_std(losses);
  report.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

// ---- mix-up experiment --------------------------------------------------------

inline constexpr const char* kMixupMethods[] = {"ERM", "Mixup", "AdvMixup"};

struct MixupMethodResult {
  ErrorRates final_error;
  std::vector<ClassifierEpoch> history;
};

struct MixupRepetition {
  std::size_t rep = 0;
  std::uint64_t seed = 0;
  ErrorRates source_error; // the FGSM source model on clean and its own perturbations
  MixupMethodResult methods[3];
  double wall_ms = 0.0;
};

struct MixupRunReport {
  MixupExperimentConfig config; // resolved
  std::string config_hash;
  std::vector<MixupRepetition> reps;
  double wall_ms = 0.0;
};

/// The three arms of the comparison: λ_w = 0, plain Mix-up, adversarial Mix-up.
inline MixupConfig method_config(const MixupExperimentConfig& c, std::size_t method) {
  MixupConfig m = c.mixup;
  if (method == 0) m.lambda_w = 0.0;
  if (method != 2) m.attack.n_iters = 0;
  return m;
}

/// Per repetition: one shared initialization, a separately seeded ERM model that
/// crafts the FGSM inputs, then the three arms trained from the same
/// initialization and batch stream, each evaluated on the test split.
inline MixupRunReport run_mixup_experiment(const MixupExperimentConfig& raw) {
  const auto t0 = std::chrono::steady_clock::now();
  MixupRunReport report;
  report.config = resolve(raw);
  const MixupExperimentConfig& c = report.config;
  report.config_hash = config_hash(c);
  const std::optional<Dataset> digits = detail::load_if_digits(c.data);

  report.reps.resize(c.repetitions);
  parallel_for(c.repetitions, [&](std::size_t k) {
    const auto r0 = std::chrono::steady_clock::now();
    MixupRepetition& out = report.reps[k];
    out.rep = k;
    out.seed = c.seed + k;
    std::mt19937_64 rng(out.seed);
    auto [full, sp] = detail::draw_data(c.data, &*digits, c.seed, rng);
    const Dataset train = full.subset(sp.train), test = full.subset(sp.test);
    const std::size_t classes = *full.descriptor.classes;
    const Model init = Model::initialize(*c.model, rng);
    const std::uint64_t source_seed = rng();
    const std::uint64_t train_seed = rng();

    std::mt19937_64 src_rng(source_seed);
    const Model src_init = Model::initialize(*c.model, src_rng);
    const Model source =
        adversarial_mixup_train(train.x, train.labels, classes, src_init, method_config(c, 0), c.train, src_rng).model;
    const AdvEvalConfig adv{c.epsilon, &source, full.descriptor.lo, full.descriptor.hi};
    out.source_error = evaluate_error_rates(source, test.x, test.labels, adv);

    for (std::size_t m = 0; m < 3; ++m) {
      std::mt19937_64 r(train_seed);
      MixupTrainResult res = adversarial_mixup_train(train.x, train.labels, classes, init, method_config(c, m),
                                                     c.train, r, &test.x, test.labels, &adv);
      out.methods[m].final_error = {res.history.back().clean_error, res.history.back().adv_error};
      out.methods[m].history = std::move(res.history);
    }
    out.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - r0).count();
  });
  report.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

// ---- report files -------------------------------------------------------------

namespace detail {

inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write " + p.string());
  out << text;
  out.close();
  if (!out) throw Error("write failed: " + p.string());
}

inline void write_json(const std::filesystem::path& p, const Json& j) { write_text(p, j.dump(2) + "\n"); }

inline std::string hex_color(double r, double g, double b) {
  char buf[8];
  const auto c = [](double v) { return static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); };
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", c(r), c(g), c(b));
  return buf;
}

// Piecewise-linear blue-green-yellow ramp on [0, 1].
inline std::string ramp_color(double t) {
  static constexpr double stops[5][3] = {
      {0.267, 0.005, 0.329}, {0.231, 0.322, 0.545}, {0.129, 0.569, 0.549}, {0.369, 0.788, 0.384}, {0.992, 0.906, 0.145}};
  t = std::clamp(t, 0.0, 1.0) * 4.0;
  const std::size_t i = std::min<std::size_t>(3, static_cast<std::size_t>(t));
  const double f = t - static_cast<double>(i);
  return hex_color(stops[i][0] + f * (stops[i + 1][0] - stops[i][0]), stops[i][1] + f * (stops[i + 1][1] - stops[i][1]),
                   stops[i][2] + f * (stops[i + 1][2] - stops[i][2]));
}

inline const char* category_color(std::size_t k) {
  static constexpr const char* palette[10] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                              "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return palette[k % 10];
}

} // namespace detail

/// Scatter plot of a 2-D embedding, one circle per row.
inline void write_embedding_svg(const std::filesystem::path& path, const Matrix& emb, std::span<const double> color,
                                bool categorical, const std::string& title) {
  if (emb.cols() != 2) throw DimensionError("write_embedding_svg: embedding must be 2-D");
  constexpr double size = 480.0, pad = 24.0;
  double lo[2] = {INFINITY, INFINITY}, hi[2] = {-INFINITY, -INFINITY};
  double clo = INFINITY, chi = -INFINITY;
  for (std::size_t i = 0; i < emb.rows(); ++i) {
    for (std::size_t c = 0; c < 2; ++c) {
      if (!std::isfinite(emb(i, c))) continue;
      lo[c] = std::min(lo[c], emb(i, c));
      hi[c] = std::max(hi[c], emb(i, c));
    }
    if (i < color.size()) clo = std::min(clo, color[i]), chi = std::max(chi, color[i]);
  }
  const auto scale = [&](double v, std::size_t c) {
    const double span = hi[c] - lo[c];
    const double t = span > 0.0 && std::isfinite(v) ? (v - lo[c]) / span : 0.5;
    return pad + t * (size - 2 * pad);
  };
  std::ostringstream out;
  char buf[160];
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"480\" height=\"480\" viewBox=\"0 0 480 480\">\n";
  out << "<title>" << title << "</title>\n";
  out << "<rect width=\"480\" height=\"480\" fill=\"white\"/>\n";
  for (std::size_t i = 0; i < emb.rows(); ++i) {
    const double cv = i < color.size() ? color[i] : 0.0;
    const std::string fill = categorical ? detail::category_color(static_cast<std::size_t>(cv))
                                         : detail::ramp_color(chi > clo ? (cv - clo) / (chi - clo) : 0.5);
    std::snprintf(buf, sizeof buf, "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"3\" fill=\"%s\"/>\n", scale(emb(i, 0), 0),
                  size - scale(emb(i, 1), 1), fill.c_str());
    out << buf;
  }
  out << "</svg>\n";
  detail::write_text(path, out.str());
}

/// report.csv (deterministic), config.json, summary.json, timing.json, per-repetition
/// history CSVs and, for 2-D embeddings, embedding_rep{k}.svg.
inline void emit_report(const PgsRunReport& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ostringstream csv;
  csv << "rep,seed,metric,value\n";
  for (const auto& rep : r.reps)
    csv << rep.rep << ',' << rep.seed << ",L_ev," << detail::format_number(rep.eval_loss) << '\n';
  csv << "mean," << r.config.seed << ",L_ev," << detail::format_number(r.eval_loss.mean) << '\n';
  detail::write_text(dir / "report.csv", csv.str());
  detail::write_json(dir / "config.json", to_json(r.config));
  Json summary{{"config_hash", r.config_hash},
               {"mode", to_string(r.config.mode)},
               {"L_ev_mean", r.eval_loss.mean},
               {"L_ev_std", r.eval_loss.stddev}};
  Json reps = Json::array(), timing{{"total_ms", r.wall_ms}, {"repetition_ms", Json::array()}};
  for (const auto& rep : r.reps) {
    reps.push_back({{"rep", rep.rep},
                    {"seed", rep.seed},
                    {"L_ev", rep.eval_loss},
                    {"train_rows", rep.train_rows},
                    {"max_participants", rep.max_participants},
                    {"failed_attacks", rep.failed_attacks}});
    timing["repetition_ms"].push_back(rep.wall_ms);
  }
  summary["repetitions"] = std::move(reps);
  detail::write_json(dir / "summary.json", summary);
  detail::write_json(dir / "timing.json", timing);

  for (const auto& rep : r.reps) {
    std::ostringstream h;
    h << "epoch,mean_batch_loss,L_ev,wall_ms\n";
    for (const auto& e : rep.history)
      h << e.epoch << ',' << detail::format_number(e.mean_batch_loss) << ',' << detail::format_number(e.eval_loss)
        << ',' << detail::format_number(e.wall_ms) << '\n';
    detail::write_text(dir / ("history_rep" + std::to_string(rep.rep) + ".csv"), h.str());
    if (!rep.attacks.empty()) {
      std::ostringstream a;
      a << "stage,loss_before,loss_after,iterations,accepted,aborted\n";
      for (std::size_t s = 0; s < rep.attacks.size(); ++s) {
        const auto& st = rep.attacks[s];
        a << s << ',' << detail::format_number(st.loss_before) << ',' << detail::format_number(st.loss_after) << ','
          << st.iterations << ',' << st.accepted << ',' << (st.aborted ? 1 : 0) << '\n';
      }
      detail::write_text(dir / ("attacks_rep" + std::to_string(rep.rep) + ".csv"), a.str());
    }
    if (rep.test_embedding.cols() == 2)
      write_embedding_svg(dir / ("embedding_rep" + std::to_string(rep.rep) + ".svg"), rep.test_embedding,
                          rep.test_color, rep.categorical_color,
                          to_string(r.config.mode) + " repetition " + std::to_string(rep.rep));
  }
}

inline void emit_report(const MixupRunReport& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto metric = [](std::size_t m, bool adv) {
    return std::string(kMixupMethods[m]) + (adv ? "_adv_error" : "_clean_error");
  };
  std::ostringstream csv;
  csv << "rep,seed,metric,value\n";
  for (std::size_t m = 0; m < 3; ++m)
    for (bool adv : {false, true}) {
      Vector vals;
      for (const auto& rep : r.reps) {
        const double v = adv ? rep.methods[m].final_error.adversarial : rep.methods[m].final_error.clean;
        vals.push_back(v);
        csv << rep.rep << ',' << rep.seed << ',' << metric(m, adv) << ',' << detail::format_number(v) << '\n';
      }
      csv << "mean," << r.config.seed << ',' << metric(m, adv) << ',' << detail::format_number(mean_std(vals).mean)
          << '\n';
    }
  detail::write_text(dir / "report.csv", csv.str());
  detail::write_json(dir / "config.json", to_json(r.config));
  Json summary{{"config_hash", r.config_hash}};
  for (std::size_t m = 0; m < 3; ++m)
    for (bool adv : {false, true}) {
      Vector vals;
      for (const auto& rep : r.reps)
        vals.push_back(adv ? rep.methods[m].final_error.adversarial : rep.methods[m].final_error.clean);
      const MeanStd s = mean_std(vals);
      summary[metric(m, adv)] = {{"mean", s.mean}, {"std", s.stddev}};
    }
  Json timing{{"total_ms", r.wall_ms}, {"repetition_ms", Json::array()}};
  for (const auto& rep : r.reps) timing["repetition_ms"].push_back(rep.wall_ms);
  detail::write_json(dir / "summary.json", summary);
  detail::write_json(dir / "timing.json", timing);

  for (const auto& rep : r.reps)
    for (std::size_t m = 0; m < 3; ++m) {
      std::ostringstream h;
      h << "epoch,train_loss,clean_error,adv_error\n";
      for (const auto& e : rep.methods[m].history)
        h << e.epoch << ',' << detail::format_number(e.train_loss) << ',' << detail::format_number(e.clean_error) << ','
          << detail::format_number(e.adv_error) << '\n';
      detail::write_text(dir / ("history_" + std::string(kMixupMethods[m]) + "_rep" + std::to_string(rep.rep) + ".csv"),
                         h.str());
    }
}

} // namespace manifold_forge
