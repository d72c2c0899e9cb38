#include <omp.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "checks.hpp"
#include "recur/cli.hpp"
#include "recur/model.hpp"
#include "recur/risk_data.hpp"
#include "recur/simulation.hpp"

using namespace recur;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void verdict(int criterion, bool pass, const std::string& what) {
  fmt::print("{} criterion {}: {}\n", pass ? "PASS" : "FAIL", criterion, what);
  if (!pass) ++failures;
}

void info(const std::string& what) { fmt::print("  info: {}\n", what); }

struct Target3 {
  double value[3];
  double sse[3];  // full-scale SSE, for the band at smaller n
};

const char* const kCoefs[] = {"alpha", "beta", "gamma"};

// 3 * SSE * sqrt(50000 / n) / sqrt(reps)
double clt_band(double sse, int n, int reps) {
  return 3.0 * sse * std::sqrt(50000.0 / n) / std::sqrt(static_cast<double>(reps));
}

sim::ReplicateStudy run_study(sim::Setting s, int n, int reps, const std::vector<sim::AnalysisId>& ids) {
  auto cfg = sim::default_config(s);
  cfg.n = n;
  cfg.reps = reps;
  cfg.seed = 7;
  return sim::replicate_study(ids, cfg);
}

std::string row_text(const sim::ReplicateRow& r) {
  return fmt::format("{} {}: SMean {:.4f} SSE {:.4f} ESE(a) {:.4f} ESE(b) {:.4f} ok {}/{}",
                     r.analysis, r.parameter, r.smean, r.sse, r.ese_a, r.ese_b, r.n_ok,
                     r.n_ok + r.failures);
}

sim::ReplicateTable criterion_one() {
  const std::vector<sim::AnalysisId> ids{{'B', 1, 5}, {'B', 1, 6}};
  const auto desk = run_study(sim::Setting::S1Case2, 10000, 50, ids).table;
  const double center[] = {0.295, 0.699, 0.150};
  const double width[] = {0.020, 0.017, 0.022};
  const Target3 t5{{0.2948, 0.6991, 0.1495}, {0.0391, 0.0337, 0.0442}};
  const Target3 t6{{0.2964, 0.6992, 0.1497}, {0.0393, 0.0337, 0.0445}};
  bool ok = true;
  for (const char* id : {"B.1.5", "B.1.6"}) {
    const auto& t = std::string(id) == "B.1.5" ? t5 : t6;
    for (int j = 0; j < 3; ++j) {
      const auto& r = desk.row(id, kCoefs[j]);
      const bool in = std::abs(r.smean - center[j]) <= width[j] && r.failures == 0;
      ok = ok && in;
      info(fmt::format("{}  stated band {:.3f} +- {:.3f} {}  CLT band {:.4f} +- {:.4f} {}", row_text(r),
                       center[j], width[j], in ? "inside" : "OUTSIDE", t.value[j],
                       clt_band(t.sse[j], 10000, 50),
                       std::abs(r.smean - t.value[j]) <= clt_band(t.sse[j], 10000, 50) ? "inside"
                                                                                      : "OUTSIDE"));
    }
  }
  verdict(1, ok, "S1 Case 2 desk scale (n=10000, reps=50), B.1.5/B.1.6 SMeans in stated bands");

  const auto full = run_study(sim::Setting::S1Case2, 50000, 300, ids).table;
  bool full_ok = true;
  for (const char* id : {"B.1.5", "B.1.6"}) {
    const auto& t = std::string(id) == "B.1.5" ? t5 : t6;
    for (int j = 0; j < 3; ++j) {
      const auto& r = full.row(id, kCoefs[j]);
      const bool in = std::abs(r.smean - t.value[j]) <= 0.01 && r.failures == 0;
      full_ok = full_ok && in;
      info(fmt::format("full scale {}  table {:.4f} {}", row_text(r), t.value[j], in ? "within .01" : "OFF"));
    }
  }
  verdict(1, full_ok, "S1 Case 2 full scale (n=50000, reps=300), SMeans within .01 of the table");
  return desk;
}

void criterion_two() {
  const std::vector<sim::AnalysisId> ids{{'B', 2, 3}, {'B', 2, 5}, {'B', 2, 6}};
  const auto desk = run_study(sim::Setting::S2, 10000, 50, ids).table;
  const Target3 biased{{0.245, 0.861, 0.134}, {0.0363, 0.0320, 0.0427}};
  const Target3 b5{{0.596, 0.697, 0.355}, {0.0439, 0.0368, 0.0458}};
  const Target3 b6{{0.596, 0.697, 0.355}, {0.0424, 0.0368, 0.0455}};
  bool ok = true;
  for (const auto& [id, t] : {std::pair{"B.2.3", biased}, std::pair{"B.2.5", b5}, std::pair{"B.2.6", b6}}) {
    for (int j = 0; j < 3; ++j) {
      const auto& r = desk.row(id, kCoefs[j]);
      const double band = clt_band(t.sse[j], 10000, 50);
      const bool in = std::abs(r.smean - t.value[j]) <= band && r.failures == 0;
      ok = ok && in;
      info(fmt::format("{}  target {:.3f} +- {:.4f} {}", row_text(r), t.value[j], band,
                       in ? "inside" : "OUTSIDE"));
    }
  }
  verdict(2, ok, "S2 desk scale, B.2.5/B.2.6 near truth and B.2.3 reproduces its bias");
}

void criterion_three() {
  const auto s = oracle::census_exactness(17, 3000);
  const double worst = std::max({s.score, s.local_theta, s.global_theta, s.inflated_score, s.inflated_theta});
  info(fmt::format("score {:.2e}, local theta {:.2e} over {} fits, global theta {:.2e}, inflated census "
                   "score {:.2e} theta {:.2e}",
                   s.score, s.local_theta, s.local_fits, s.global_theta, s.inflated_score,
                   s.inflated_theta));
  verdict(3, worst < 1e-10, fmt::format("census estimating function and estimates equal the cohort ones (max {:.2e})", worst));
}

void criterion_four(const sim::ReplicateTable& desk) {
  bool ok = true;
  for (const char* id : {"B.1.5", "B.1.6"}) {
    for (const char* c : kCoefs) {
      const auto& r = desk.row(id, c);
      const double ra = r.ese_a / r.sse;
      const double rb = r.ese_b / r.sse;
      const bool in = ra >= 0.85 && ra <= 1.20 && rb >= 0.85 && rb <= 1.20;
      ok = ok && in;
      info(fmt::format("{} {}: ESE(a)/SSE {:.3f}  ESE(b)/SSE {:.3f} {}", id, c, ra, rb, in ? "" : "OUTSIDE"));
    }
  }
  verdict(4, ok, "ESE/SSE within [0.85, 1.20] in the desk-scale runs");
}

void criterion_five() {
  const auto s = oracle::run_oracle_cases(1000, 20240611);
  info(fmt::format("{} cases ({} with global fits, {} sandwich): moments {:.2e} score {:.2e} info {:.2e} "
                   "sigma {:.2e} sandwich {:.2e} kernels {:.2e}",
                   s.cases, s.global_cases, s.sandwich_cases, s.moments, s.score, s.info, s.sigma,
                   s.sandwich, s.kernels));
  double newton = 0.0;
  for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) newton = std::max(newton, oracle::ccc_newton_check(seed));
  info(fmt::format("CCC fit vs independent Newton root: {:.2e}", newton));
  verdict(5, s.worst_piece() < 1e-12 && newton < 1e-6,
          "brute-force oracles agree to 1e-12 and the CCC fit matches an independent Newton solve to 1e-6");
}

void criterion_six(const sim::ReplicateTable& desk) {
  auto cfg = sim::default_config(sim::Setting::S1Case1);
  cfg.truth = {0.002, 0.0, 0.0, 0.0};
  cfg.n = 20000;
  const auto pop = sim::generate_population(cfg, 8);
  const std::vector<int> z{1};
  const auto rd = sim::union_sample(pop, false).project(z);
  const CoefficientPath null = [](double) { return Eigen::VectorXd::Zero(1); };
  const auto base = breslow(rd, rd, null, 0.0);
  const double per_year = cfg.truth.lambda0 * 6.0;
  bool ok = true;
  for (double a : {9.0, 17.0}) {
    const double ratio = base(a) / (per_year * a);
    ok = ok && std::abs(ratio - 1.0) < 0.05;
    info(fmt::format("null model: Lambda0({})/(lambda0 a) = {:.4f}", a, ratio));
  }
  const auto& r = desk.row("B.1.5", "lambda0");
  const bool rate_ok = std::abs(r.smean - 0.0020) <= 0.0001;
  info(fmt::format("desk B.1.5 lambda0 SMean {:.5f} (table .0020)", r.smean));
  verdict(6, ok && rate_ok, "Breslow baseline recovers the homogeneous rate and the simulated lambda0");
}

void criterion_seven() {
  sim::RegistryConfig rc;
  const auto data = sim::generate_registry_cohort(rc, sim::default_windows(), 77);
  const auto design = Design::stratum_only(Decade::Late);
  const auto spec = ModelSpec::parse("CCC");
  FitConfig cfg;
  const auto a = fit_model(spec, design, build_risk_data(data, {100, 1}), nullptr, cfg);
  const auto b = fit_model(spec, design, build_risk_data(strip_birthdates(data), {100, 1}), nullptr, cfg);
  bool ok = a.converged && b.converged;
  info(fmt::format("{} subjects", data.subjects().size()));
  for (int j = 0; j < design.size(); ++j) {
    const auto k = static_cast<Eigen::Index>(j);
    const double diff = std::abs(a.constant_coefs[k] - b.constant_coefs[k]);
    const double se = std::sqrt(a.constant_cov(k, k) + b.constant_cov(k, k));
    ok = ok && diff < 2.0 * se;
    info(fmt::format("{}: A {:.4f} (se {:.4f})  B {:.4f} (se {:.4f})  |diff|/combined se {:.3f}",
                     design.names[j], a.constant_coefs[k], std::sqrt(a.constant_cov(k, k)),
                     b.constant_coefs[k], std::sqrt(b.constant_cov(k, k)), diff / se));
  }
  verdict(7, ok, "known birthdates (A) and K=100 augmentation (B) agree within 2 combined SEs");
}

void criterion_eight() {
  const auto s = oracle::jacobian_check(100, 5);
  info(fmt::format("{} points: cohort {:.2e}, census {:.2e}", s.points, s.cohort, s.census));
  verdict(8, s.points == 100 && std::max(s.cohort, s.census) < 1e-5,
          "information matrix matches central differences of the estimating function");
}

std::string slurp(const fs::path& f) {
  std::ifstream in(f, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void criterion_nine() {
  const fs::path dir(RECUR_TEST_TMP);
  fs::create_directories(dir);
  bool ok = true;
  std::string outs[2];
  for (int t = 0; t < 2; ++t) {
    const auto prefix = (dir / fmt::format("threads{}", t + 1)).string();
    std::ostringstream out, err;
    const int code = run_cli({"--threads", std::to_string(t == 0 ? 1 : 4), "simulate", "--setting",
                              "s1case2", "--n", "3000", "--reps", "4", "--seed", "11", "--k", "10",
                              "--out", prefix},
                             out, err);
    ok = ok && code != 1;
    outs[t] = slurp(prefix + ".csv") + slurp(prefix + ".txt");
    if (code == 1) info(err.str());
  }
  ok = ok && !outs[0].empty() && outs[0] == outs[1];
  info(fmt::format("{} bytes compared", outs[0].size()));
  verdict(9, ok, "simulate output is byte-identical with 1 and 4 threads");
}

}  // namespace

int main() {
  const auto desk = criterion_one();
  criterion_two();
  criterion_three();
  criterion_four(desk);
  criterion_five();
  criterion_six(desk);
  criterion_seven();
  criterion_eight();
  criterion_nine();
  fmt::print("{} failed\n", failures);
  return failures == 0 ? 0 : 1;
}
