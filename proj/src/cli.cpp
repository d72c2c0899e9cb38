#include "recur/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <omp.h>

#include "recur/census.hpp"
#include "recur/cohort.hpp"
#include "recur/error.hpp"
#include "recur/model.hpp"
#include "recur/report.hpp"
#include "recur/simulation.hpp"

namespace recur {

namespace {

struct WindowArgs {
  std::string early = "2002-04-01,2010-03-31";
  std::string late = "2010-04-01,2017-03-31";

  WindowMap build() const {
    auto one = [](const std::string& text, Decade d) {
      const auto comma = text.find(',');
      if (comma == std::string::npos) {
        throw ValidationError(fmt::format("window '{}' must be START,END", text));
      }
      return ExtractionWindow{parse_date(text.substr(0, comma)), parse_date(text.substr(comma + 1)), d};
    };
    WindowMap w{{Decade::Early, one(early, Decade::Early)}, {Decade::Late, one(late, Decade::Late)}};
    validate_windows(w);
    return w;
  }
};

struct EstimationArgs {
  double bandwidth = 1.0;
  double tau_left = 1.0;
  double tau_right = 17.0;
  double grid_step = 1.0 / 6.0;
  int degree = 1;

  FitConfig build() const {
    if (!(bandwidth > 0.0)) throw ValidationError("bandwidth must be positive");
    if (!(tau_left < tau_right)) throw ValidationError("tau-left must be below tau-right");
    if (!(grid_step > 0.0)) throw ValidationError("grid-step must be positive");
    FitConfig cfg;
    cfg.estimator.kernel.bandwidth = bandwidth;
    cfg.estimator.tau = {tau_left, tau_right};
    cfg.estimator.degree = degree;
    cfg.grid_step = grid_step;
    return cfg;
  }
};

void add_window_options(CLI::App* cmd, WindowArgs& w) {
  cmd->add_option("--early-window", w.early, "Early extraction window START,END")
      ->capture_default_str();
  cmd->add_option("--late-window", w.late, "Late extraction window START,END")
      ->capture_default_str();
}

void add_estimation_options(CLI::App* cmd, EstimationArgs& e) {
  cmd->add_option("--bandwidth", e.bandwidth, "Kernel bandwidth in years")->capture_default_str();
  cmd->add_option("--tau-left", e.tau_left, "Lower evaluation bound (years)")->capture_default_str();
  cmd->add_option("--tau-right", e.tau_right, "Upper evaluation bound (years)")->capture_default_str();
  cmd->add_option("--grid-step", e.grid_step, "Grid spacing in years")->capture_default_str();
  cmd->add_option("--degree", e.degree, "Local polynomial degree")
      ->check(CLI::IsMember({0, 1}))
      ->capture_default_str();
}

std::ofstream open_output(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path);
  return f;
}

struct FitArgs {
  std::string data;
  std::string census;
  std::string model = "CCC";
  std::string target = "cohort";
  std::string stratum;
  std::string out = "fit";
  int k = 100;
  std::uint64_t seed = 1;
  std::optional<double> origin;
  WindowArgs windows;
  EstimationArgs est;
};


FittedModel run_fit(const FitArgs& a) {
  const auto windows = a.windows.build();
  const Target target = parse_target(a.target);
  if (target == Target::GeneralPopulation && a.census.empty()) {
    throw ValidationError("--census is required with --target population");
  }
  if (target == Target::Cohort && !a.census.empty()) {
    throw ValidationError("--census applies only to --target population");
  }
  std::optional<CensusTable> census;
  if (target == Target::GeneralPopulation) census = ingest_census_csv(a.census);
  const auto spec = ModelSpec::parse(a.model, target);
  auto dataset = ingest_csv(a.data, windows);
  Design design = Design::combined();
  if (!a.stratum.empty()) {
    const Decade d = parse_decade(a.stratum);
    dataset = subset(dataset, d);
    if (dataset.subjects().empty()) throw ValidationError("stratum has no subjects");
    design = Design::stratum_only(d);
  }
  const auto data = build_risk_data(dataset, {a.k, a.seed});
  FitConfig cfg = a.est.build();
  cfg.baseline_origin = a.origin;
  return fit_model(spec, design, data, census ? &*census : nullptr, cfg);
}

int cmd_fit(const FitArgs& a, bool baseline_only, std::ostream& out) {
  const auto model = run_fit(a);
  const std::string curves = a.out + ".curves.csv";
  const std::string baseline = a.out + ".baseline.csv";
  const std::string results = a.out + ".results.txt";
  {
    auto f = open_output(baseline);
    write_baseline_csv(f, baseline_rows(model.baseline));
  }
  if (!baseline_only) {
    auto c = open_output(curves);
    write_curve_csv(c, curve_rows(model));
    auto r = open_output(results);
    write_results(r, model, curves, baseline);
    write_results(out, model, curves, baseline);
  } else {
    out << "baseline written to " << baseline << '\n';
  }
  return model.converged ? 0 : 2;
}

struct SimArgs {
  std::string setting = "s1case2";
  int n = 50000;
  int reps = 300;
  std::uint64_t seed = 7;
  std::string analyses;
  int k = 100;
  bool degrade_early = true;
  std::string out = "simulate";
  std::string dump_dir;
  EstimationArgs est;
};

int cmd_simulate(const SimArgs& a, std::ostream& out) {
  auto cfg = sim::default_config(sim::parse_setting(a.setting));
  if (a.n < 1) throw ValidationError("--n must be positive");
  if (a.reps < 2) throw ValidationError("--reps must be at least 2");
  if (a.k < 1) throw ValidationError("--k must be positive");
  cfg.n = a.n;
  cfg.reps = a.reps;
  cfg.seed = a.seed;
  cfg.k = a.k;
  cfg.degrade_early = a.degrade_early;
  cfg.fit = a.est.build();
  const int s = sim::setting_number(cfg.setting);
  const std::string list =
      a.analyses.empty() ? fmt::format("A.{0}.1..A.{0}.3,B.{0}.1..B.{0}.6", s) : a.analyses;
  const auto ids = sim::parse_analysis_list(list);
  const auto study = sim::replicate_study(ids, cfg);
  {
    auto f = open_output(a.out + ".csv");
    sim::write_replicate_csv(f, study.table);
    auto t = open_output(a.out + ".txt");
    sim::write_replicate_text(t, study.table);
  }
  sim::write_replicate_text(out, study.table);
  if (!a.dump_dir.empty()) {
    std::filesystem::create_directories(a.dump_dir);
    sim::Replicate rep(cfg, sim::replicate_seed(cfg.seed, 0));
    auto pulls = open_output((std::filesystem::path(a.dump_dir) / "pulls.csv").string());
    write_cohort_csv(pulls, rep.pulls());
    auto c1 = open_output((std::filesystem::path(a.dump_dir) / "census_decade.csv").string());
    write_census_csv(c1, sim::census_from_population(rep.population(), sim::CensusCells::DecadeWindow));
    auto c2 = open_output((std::filesystem::path(a.dump_dir) / "census_indicator.csv").string());
    write_census_csv(c2, sim::census_from_population(rep.population(), sim::CensusCells::TrueIndicator));
  }
  bool failures = false;
  for (const auto& r : study.table.rows) failures = failures || r.failures > 0;
  return failures ? 2 : 0;
}

struct CensusArgs {
  std::string data;
  std::string census;
  int k = 100;
  std::uint64_t seed = 1;
  double max_variation = AcOptions{}.max_variation;
  double min_count = AcOptions{}.min_count;
  std::string out;
  WindowArgs windows;
};

int cmd_validate_census(const CensusArgs& a, std::ostream& out) {
  const auto windows = a.windows.build();
  const auto census = ingest_census_csv(a.census);
  const auto data = build_risk_data(ingest_csv(a.data, windows), {a.k, a.seed});
  AcOptions opts;
  opts.max_variation = a.max_variation;
  opts.min_count = a.min_count;
  const auto report = validate_ac(census, data, opts);
  write_ac_report(out, report);
  if (!a.out.empty()) {
    auto f = open_output(a.out);
    write_ac_report(f, report);
  }
  return report.clean() ? 0 : 2;
}

// Flat key=value config files become --key=value flags appended after the
// command line, so flags given explicitly take precedence.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::vector<std::string> out;
  std::vector<std::string> files;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      files.push_back(args[++i]);
    } else if (args[i].rfind("--config=", 0) == 0) {
      files.push_back(args[i].substr(9));
    } else {
      out.push_back(args[i]);
    }
  }
  std::set<std::string> given;
  for (const auto& a : out) {
    if (a.rfind("--", 0) != 0) continue;
    auto name = a.substr(2, a.find('=') == std::string::npos ? std::string::npos : a.find('=') - 2);
    if (name.rfind("no-", 0) == 0) name = name.substr(3);
    given.insert(name);
  }
  auto trim = [](std::string t) {
    const auto b = t.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    return t.substr(b, t.find_last_not_of(" \t\r") - b + 1);
  };
  for (const auto& file : files) {
    std::ifstream in(file);
    if (!in) throw Error("cannot read config file " + file);
    std::string line;
    int number = 0;
    while (std::getline(in, line)) {
      ++number;
      line = trim(line);
      if (line.empty() || line[0] == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ValidationError(fmt::format("{} line {}: expected key=value", file, number));
      }
      auto key = trim(line.substr(0, eq));
      auto value = trim(line.substr(eq + 1));
      if (key.rfind("--", 0) == 0) key = key.substr(2);
      if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
        value = value.substr(1, value.size() - 2);
      }
      if (key.empty()) throw ValidationError(fmt::format("{} line {}: empty key", file, number));
      if (given.insert(key).second) out.push_back("--" + key + "=" + value);
    }
  }
  return out;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Age-varying proportional rates models for doubly-censored recurrent events"};
  app.require_subcommand(1);
  app.fallthrough();
  int threads = 0;
  app.add_option("--threads", threads, "OpenMP threads (0 = runtime default)");

  FitArgs fit;
  auto add_fit_options = [](CLI::App* cmd, FitArgs& f) {
    cmd->add_option("--config", "Flat key=value file; command-line flags take precedence");
    cmd->add_option("--data", f.data, "Cohort CSV")->required();
    cmd->add_option("--census", f.census, "Census CSV (population target)");
    cmd->add_option("--model", f.model, "Model: three letters of C/V for alpha, beta, gamma")
        ->capture_default_str();
    cmd->add_option("--target", f.target, "cohort or population")->capture_default_str();
    cmd->add_option("--stratum", f.stratum, "Fit one decade only (early or late)");
    cmd->add_option("--k", f.k, "Birthdate draws per subject without a birthdate")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd->add_option("--seed", f.seed, "Seed for birthdate draws")->capture_default_str();
    cmd->add_option("--origin", f.origin, "Baseline origin age (default tau-left)");
    cmd->add_option("--out", f.out, "Output prefix")->capture_default_str();
    add_window_options(cmd, f.windows);
    add_estimation_options(cmd, f.est);
  };
  auto* fit_cmd = app.add_subcommand("fit", "Fit a model; writes results, curves and baseline");
  add_fit_options(fit_cmd, fit);
  FitArgs base;
  auto* base_cmd = app.add_subcommand("baseline", "Fit a model and write only its baseline CSV");
  add_fit_options(base_cmd, base);

  SimArgs sim;
  auto* sim_cmd = app.add_subcommand("simulate", "Replicate simulation study");
  sim_cmd->add_option("--config", "Flat key=value file; command-line flags take precedence");
  sim_cmd->add_option("--setting", sim.setting, "s1case1, s1case2 or s2")->capture_default_str();
  sim_cmd->add_option("--n", sim.n, "Population size per replicate")->capture_default_str();
  sim_cmd->add_option("--reps", sim.reps, "Number of replicates")->capture_default_str();
  sim_cmd->add_option("--seed", sim.seed, "Master seed")->capture_default_str();
  sim_cmd->add_option("--analyses", sim.analyses,
                      "Comma-separated ids such as B.1.5,B.1.6 or ranges B.2.1..B.2.6 "
                      "(default: all for the setting)");
  sim_cmd->add_option("--k", sim.k, "Birthdate draws for degraded records")->capture_default_str();
  sim_cmd->add_flag("--degrade-early,!--no-degrade-early", sim.degrade_early,
                    "Strip birthdates from the early pull")
      ->capture_default_str();
  sim_cmd->add_option("--out", sim.out, "Output prefix (.csv and .txt)")->capture_default_str();
  sim_cmd->add_option("--dump-dir", sim.dump_dir, "Write replicate 0 data pulls and censuses here");
  add_estimation_options(sim_cmd, sim.est);

  CensusArgs cen;
  auto* cen_cmd = app.add_subcommand("validate-census", "Check census counts against a cohort");
  cen_cmd->add_option("--config", "Flat key=value file; command-line flags take precedence");
  cen_cmd->add_option("--data", cen.data, "Cohort CSV")->required();
  cen_cmd->add_option("--census", cen.census, "Census CSV")->required();
  cen_cmd->add_option("--k", cen.k, "Birthdate draws per subject")->capture_default_str();
  cen_cmd->add_option("--seed", cen.seed, "Seed for birthdate draws")->capture_default_str();
  cen_cmd->add_option("--max-variation", cen.max_variation,
                      "Allowed relative range of cohort counts within an age-year")
      ->capture_default_str();
  cen_cmd->add_option("--min-count", cen.min_count, "Smallest cohort count judged for variation")
      ->capture_default_str();
  cen_cmd->add_option("--out", cen.out, "Also write the report to this file");
  add_window_options(cen_cmd, cen.windows);

  try {
    const auto expanded = expand_config(args);
    std::vector<std::string> reversed(expanded.rbegin(), expanded.rend());
    app.parse(reversed);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  if (threads < 0) {
    err << "error: --threads must be nonnegative\n";
    return 1;
  }
  if (threads > 0) omp_set_num_threads(threads);
  try {
    if (fit_cmd->parsed()) return cmd_fit(fit, false, out);
    if (base_cmd->parsed()) return cmd_fit(base, true, out);
    if (sim_cmd->parsed()) return cmd_simulate(sim, out);
    if (cen_cmd->parsed()) return cmd_validate_census(cen, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace recur
