#include "manifold_forge/config.hpp"
#include "manifold_forge/experiment.hpp"
#include "manifold_forge/simplex.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <iostream>
#include <sstream>

using namespace manifold_forge;

namespace {

struct RunArgs {
  std::string config;
  std::string output;
  std::optional<std::uint64_t> seed;
};

void add_run_flags(CLI::App* cmd, RunArgs& a) {
  cmd->add_option("--config", a.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--output", a.output, "output directory")->required();
  cmd->add_option("--seed", a.seed, "override the root seed");
}

int pgs_run(const RunArgs& a) {
  PgsExperimentConfig cfg = pgs_config_from_json(load_json_file(a.config));
  if (a.seed) cfg.seed = *a.seed;
  const PgsRunReport r = run_pgs_experiment(cfg);
  emit_report(r, a.output);
  std::printf("%s %s: L_ev %.6g +- %.6g over %zu repetitions (config %s)\n", to_string(r.config.mode).c_str(),
              to_string(r.config.loss.kind).c_str(), r.eval_loss.mean, r.eval_loss.stddev, r.reps.size(),
              r.config_hash.c_str());
  return 0;
}

int mixup_run(const RunArgs& a) {
  MixupExperimentConfig cfg = mixup_config_from_json(load_json_file(a.config));
  if (a.seed) cfg.seed = *a.seed;
  const MixupRunReport r = run_mixup_experiment(cfg);
  emit_report(r, a.output);
  for (std::size_t m = 0; m < 3; ++m) {
    Vector clean, adv;
    for (const auto& rep : r.reps) {
      clean.push_back(rep.methods[m].final_error.clean);
      adv.push_back(rep.methods[m].final_error.adversarial);
    }
    std::printf("%-8s clean %.4f  adversarial %.4f\n", kMixupMethods[m], mean_std(clean).mean, mean_std(adv).mean);
  }
  std::printf("config %s\n", r.config_hash.c_str());
  return 0;
}

// One vector per line of whitespace-separated numbers; prints its projection.
int project_debug(double total, std::optional<std::size_t> index, std::optional<double> tau) {
  if (index.has_value() != tau.has_value()) throw ConfigError("--index and --tau go together");
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(std::cin, line)) {
    ++line_no;
    std::istringstream in(line);
    Vector v;
    std::string tok;
    while (in >> tok) {
      try {
        std::size_t used = 0;
        v.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw ParseError("stdin:" + std::to_string(line_no) + ": not a number '" + tok + "'");
      }
    }
    if (v.empty()) continue;
    const SimplexCoordinates g =
        index ? project_simplex_biased(v, {*index, *tau}) : project_simplex(v, total);
    for (std::size_t i = 0; i < g.size(); ++i) std::printf("%s%.17g", i ? " " : "", g[i]);
    std::printf("\n");
  }
  return 0;
}

int gen_data(const RunArgs& a) {
  const Json j = load_json_file(a.config);
  DataConfig d = j.contains("data") ? data_config_from_json(j.at("data"), DataConfig{}) : DataConfig{};
  std::uint64_t seed = j.contains("seed") && j.at("seed").is_number_unsigned() ? j.at("seed").get<std::uint64_t>() : 0;
  if (a.seed) seed = *a.seed;
  detail::validate_data(d);
  std::mt19937_64 rng(seed);
  const std::optional<Dataset> digits = detail::load_if_digits(d);
  const auto [full, sp] = detail::draw_data(d, digits ? &*digits : nullptr, seed, rng);
  std::filesystem::create_directories(a.output);
  write_csv(full, std::filesystem::path(a.output) / (d.name + ".csv"));
  std::ostringstream s;
  s << "index,set\n";
  for (std::size_t i : sp.train) s << i << ",train\n";
  for (std::size_t i : sp.test) s << i << ",test\n";
  detail::write_text(std::filesystem::path(a.output) / "split.csv", s.str());
  std::printf("%s: %zu samples, %zu train, seed %llu\n", d.name.c_str(), full.size(), sp.train.size(),
              static_cast<unsigned long long>(seed));
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Manifold attack experiments: embedding training modes, adversarial Mix-up, simplex projections"};
  app.require_subcommand(1);

  RunArgs pgs, mix, gen;
  add_run_flags(app.add_subcommand("pgs-run", "train an embedding in REF, DD, RV or MA mode"), pgs);
  add_run_flags(app.add_subcommand("mixup-run", "compare ERM, Mix-up and adversarial Mix-up"), mix);
  add_run_flags(app.add_subcommand("gen-data", "write the dataset and split drawn from a config's data section"), gen);

  double total = 1.0;
  std::optional<std::size_t> index;
  std::optional<double> tau;
  auto* proj = app.add_subcommand("project-debug", "project stdin vectors onto the simplex, one per line");
  proj->add_option("--total", total, "simplex total c")->check(CLI::PositiveNumber);
  proj->add_option("--index", index, "coordinate with a floor (biased projection)");
  proj->add_option("--tau", tau, "floor on that coordinate, in [0, 1)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (app.got_subcommand("pgs-run")) return pgs_run(pgs);
    if (app.got_subcommand("mixup-run")) return mixup_run(mix);
    if (app.got_subcommand("gen-data")) return gen_data(gen);
    return project_debug(total, index, tau);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
