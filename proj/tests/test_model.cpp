#include <cmath>
#include <random>

#include "doctest.h"
#include "oracle.hpp"
#include "recur/error.hpp"
#include "recur/model.hpp"
#include "recur/simulation.hpp"

using namespace recur;

namespace {

// Every unit is at risk on (0, 18]; each event age carries one early and
// one late event, so the decade composition of the risk set never changes.
struct SharedRisk {
  RiskData early, late, both;
};

SharedRisk shared_risk(std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const int per = 60;
  std::vector<std::vector<double>> ev(2 * per);
  for (int i = 0; i < 240; ++i) {
    const double u = 0.5 + 17.0 * unif(rng);
    ev[static_cast<std::size_t>(unif(rng) * per)].push_back(u);
    ev[per + static_cast<std::size_t>(unif(rng) * per)].push_back(u);
  }
  auto build = [&](bool early, bool late) {
    RiskDataBuilder b(kCovariateDim);
    for (int i = 0; i < 2 * per; ++i) {
      const Decade d = i < per ? Decade::Early : Decade::Late;
      if ((d == Decade::Early && !early) || (d == Decade::Late && !late)) continue;
      const Sex g = i % 3 == 0 ? Sex::Male : Sex::Female;
      b.add_unit(b.new_cluster(), 1.0, {0.0, 18.0}, b.intern(encode(g, Region::Other, d).stacked()),
                 ev[static_cast<std::size_t>(i)]);
    }
    return std::move(b).build();
  };
  return {build(true, false), build(false, true), build(true, true)};
}

// Age-varying truth on (x, male): alpha 0.3, beta(u) = -0.8 + 0.1 u.
RiskData varying_truth(std::uint64_t seed, int n) {
  Rng rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  RiskDataBuilder b(kCovariateDim);
  const double base = 0.5;
  for (int i = 0; i < n; ++i) {
    const Sex g = unif(rng) < 0.5 ? Sex::Male : Sex::Female;
    const Decade d = unif(rng) < 0.5 ? Decade::Late : Decade::Early;
    const double left = 12.0 * unif(rng);
    const double right = std::min(18.0, left + 3.0 + 4.0 * unif(rng));
    const double x = d == Decade::Late ? 1.0 : 0.0;
    const double z = g == Sex::Male ? 1.0 : 0.0;
    auto rate = [&](double u) { return base * std::exp(0.3 * x + (-0.8 + 0.1 * u) * z); };
    const double bound = base * std::exp(0.3 + 1.0);
    std::exponential_distribution<double> gap(bound);
    std::vector<double> ages;
    for (double t = left + gap(rng); t <= right; t += gap(rng)) {
      if (unif(rng) * bound < rate(t)) ages.push_back(t);
    }
    b.add_unit(b.new_cluster(), 1.0, {left, right}, b.intern(encode(g, Region::Other, d).stacked()), ages);
  }
  return std::move(b).build();
}

const RiskData& varying_data() {
  static const RiskData d = varying_truth(12, 3000);
  return d;
}

// Union-window sample of the first setting's second case.
const RiskData& setting_one_data() {
  static const RiskData d = [] {
    auto cfg = sim::default_config(sim::Setting::S1Case2);
    cfg.n = 20000;
    return sim::windows_sample(sim::generate_population(cfg, 31), false);
  }();
  return d;
}

}  // namespace

TEST_CASE("model names") {
  for (const char* name : {"CCC", "CCV", "CVC", "CVV", "VCC", "VCV", "VVC", "VVV"}) {
    CHECK(ModelSpec::parse(name).name() == name);
  }
  const auto s = ModelSpec::parse("vcv", Target::GeneralPopulation);
  CHECK(s.alpha == Shape::Varying);
  CHECK(s.beta == Shape::Constant);
  CHECK(s.gamma == Shape::Varying);
  CHECK(s.name() == "VCV");
  CHECK_THROWS_AS(ModelSpec::parse("CC"), ValidationError);
  CHECK_THROWS_AS(ModelSpec::parse("CXC"), ValidationError);
  CHECK(parse_target("cohort") == Target::Cohort);
  CHECK(parse_target("general-population") == Target::GeneralPopulation);
  CHECK(parse_target("Population") == Target::GeneralPopulation);
  CHECK_THROWS_AS(parse_target("everyone"), ValidationError);
}

TEST_CASE("designs") {
  const auto d = Design::combined();
  CHECK(d.columns == std::vector<int>{0, 1, 2, 3, 4, 5, 6});
  CHECK(d.block == std::vector<char>{'a', 'b', 'b', 'b', 'g', 'g', 'g'});
  const auto s = Design::combined({1});
  CHECK(s.columns == std::vector<int>{0, 1, 4});
  CHECK(Design::stratum_only(Decade::Late, {1}).stratum == Decade::Late);
  CHECK_THROWS_AS(Design::combined({0}), PreconditionError);
}

TEST_CASE("census presence must match the target") {
  const auto& rd = setting_one_data();
  CensusTable t;
  FitConfig cfg;
  CHECK_THROWS_AS(fit_model(ModelSpec::parse("CCC"), Design::combined({1}), rd, &t, cfg),
                  PreconditionError);
  CHECK_THROWS_AS(fit_model(ModelSpec::parse("CCC", Target::GeneralPopulation),
                            Design::combined({1}), rd, nullptr, cfg),
                  PreconditionError);
  const std::vector<int> one{1};
  CHECK_THROWS_AS(fit_model(ModelSpec::parse("CCC"), Design::combined({1}), rd.project(one),
                            nullptr, cfg),
                  PreconditionError);
}

TEST_CASE("CCC on the combined windows recovers the truth") {
  const auto& rd = setting_one_data();
  const auto fit = fit_model(ModelSpec::parse("CCC"), Design::combined({1}), rd, nullptr, {});
  REQUIRE(fit.converged);
  CHECK(std::abs(fit.constant("late") - 0.3) < 3.0 * fit.constant_se("late"));
  CHECK(std::abs(fit.constant("male") - 0.7) < 3.0 * fit.constant_se("male"));
  CHECK(std::abs(fit.constant("late:male") - 0.15) < 3.0 * fit.constant_se("late:male"));
  CHECK(fit.constant_se_model("male") > 0.0);
  CHECK(fit.effective_params == 3.0);
  CHECK(fit.aic == 2.0 * 3.0 - 2.0 * fit.loglik);
  CHECK(aic(fit) == fit.aic);
  const auto again = fit_model(ModelSpec::parse("CCC"), Design::combined({1}), rd, nullptr, {});
  CHECK(again.aic == fit.aic);
  CHECK(again.constant_coefs == fit.constant_coefs);
  CHECK_THROWS_AS(fit.constant("nothing"), PreconditionError);
}

TEST_CASE("VCC agrees with CCC when alpha is constant") {
  const auto& rd = setting_one_data();
  FitConfig cfg;
  cfg.grid_step = 0.5;
  const auto c = fit_model(ModelSpec::parse("CCC"), Design::combined({1}), rd, nullptr, cfg);
  const auto flagged = fit_model(ModelSpec::parse("VCC"), Design::combined({1}), rd, nullptr, cfg);
  if (!flagged.converged) {
    CHECK(flagged.backfit_iters == cfg.backfit_max);
    CHECK(flagged.backfit_trajectory.back() >= cfg.backfit_tol);
    CHECK_FALSE(flagged.message.empty());
  }
  cfg.backfit_max = 200;
  const auto v = fit_model(ModelSpec::parse("VCC"), Design::combined({1}), rd, nullptr, cfg);
  REQUIRE(v.converged);
  CHECK(v.backfit_iters >= 1);
  CHECK(v.backfit_trajectory.size() == static_cast<std::size_t>(v.backfit_iters));
  CHECK(v.backfit_trajectory.back() < cfg.backfit_tol);
  for (const char* name : {"male", "late:male"}) {
    CHECK(std::abs(v.constant(name) - c.constant(name)) < 2.0 * c.constant_se(name));
  }
  CHECK_THROWS_AS(v.constant_se("late"), PreconditionError);
}

TEST_CASE("VVV on constant truth stays within pointwise bands") {
  const auto& rd = setting_one_data();
  FitConfig cfg;
  cfg.grid_step = 0.5;
  const auto fit = fit_model(ModelSpec::parse("VVV"), Design::combined({1}), rd, nullptr, cfg);
  REQUIRE(fit.curve.has_value());
  const double truth[] = {0.3, 0.7, 0.15};
  int covered = 0, total = 0;
  for (std::size_t g = 0; g < fit.curve->fits.size(); ++g) {
    if (!fit.curve->fits[g].converged) continue;
    for (int j = 0; j < 3; ++j) {
      const auto [lo, hi] = fit.curve->band(g, j);
      covered += lo <= truth[j] && truth[j] <= hi;
      ++total;
    }
  }
  CHECK(total >= 90);
  CHECK(static_cast<double>(covered) / total >= 0.85);
}

TEST_CASE("age-varying truth: VVV beats CCC") {
  const auto& rd = varying_data();
  FitConfig cfg;
  cfg.grid_step = 0.5;
  const auto ccc = fit_model(ModelSpec::parse("CCC"), Design::combined({1}), rd, nullptr, cfg);
  const auto vvv = fit_model(ModelSpec::parse("VVV"), Design::combined({1}), rd, nullptr, cfg);
  REQUIRE(ccc.converged);
  REQUIRE(vvv.converged);
  CHECK(vvv.loglik >= ccc.loglik);
  CHECK(vvv.aic < ccc.aic);
  CHECK(vvv.effective_params > 3.0);
  CHECK(std::abs(vvv.theta_at(3.0)[1] - (-0.5)) < 0.25);
  CHECK(std::abs(vvv.theta_at(14.0)[1] - 0.6) < 0.25);
}

TEST_CASE("stratified and combined CCC coincide on shared risk sets") {
  const auto d = shared_risk(21);
  FitConfig cfg;
  const auto comb = fit_model(ModelSpec::parse("CCC"), Design::combined({1}), d.both, nullptr, cfg);
  const auto strat = stratified_fit(d.early, d.late, Shape::Constant, nullptr, cfg, {1});
  REQUIRE(comb.converged);
  const double beta = comb.constant("male");
  const double gamma = comb.constant("late:male");
  const double alpha = comb.constant("late");
  CHECK(std::abs(strat.early.constant("male") - beta) < 1e-6);
  CHECK(std::abs(strat.late.constant("male") - (beta + gamma)) < 1e-6);
  // Late baseline is exp(alpha) times the combined one, early baseline equals it.
  for (double a : {3.0, 8.0, 12.5, 17.0}) {
    CHECK(std::abs(strat.early.baseline(a) - comb.baseline(a)) < 1e-6 * comb.baseline(a) + 1e-12);
    CHECK(std::abs(strat.late.baseline(a) - std::exp(alpha) * comb.baseline(a)) <
          1e-6 * strat.late.baseline(a) + 1e-12);
  }
}

TEST_CASE("stratified and combined local-constant VVV coincide on shared risk sets") {
  const auto d = shared_risk(22);
  FitConfig cfg;
  cfg.estimator.degree = 0;
  cfg.estimator.kernel.bandwidth = 2.0;
  cfg.grid = {3.0, 5.0, 7.0, 9.0, 11.0, 13.0, 15.0};
  cfg.estimator.tau = {2.0, 16.0};
  const auto comb = fit_model(ModelSpec::parse("VVV"), Design::combined({1}), d.both, nullptr, cfg);
  const auto strat = stratified_fit(d.early, d.late, Shape::Varying, nullptr, cfg, {1});
  REQUIRE(comb.curve.has_value());
  REQUIRE(comb.curve->all_converged());
  for (std::size_t g = 0; g < cfg.grid.size(); ++g) {
    const auto& c = comb.curve->fits[g].theta;
    CHECK(std::abs(strat.early.curve->fits[g].theta[0] - c[1]) < 1e-6);
    CHECK(std::abs(strat.late.curve->fits[g].theta[0] - (c[1] + c[2])) < 1e-6);
  }
}

TEST_CASE("stratified fit needs both strata") {
  const auto d = shared_risk(23);
  RiskDataBuilder b(kCovariateDim);
  const auto empty = std::move(b).build();
  CHECK_THROWS_AS(stratified_fit(d.early, empty, Shape::Constant, nullptr, {}, {1}), ValidationError);
}

TEST_CASE("null-model Breslow recovers a homogeneous rate") {
  auto cfg = sim::default_config(sim::Setting::S1Case1);
  cfg.truth = {0.002, 0.0, 0.0, 0.0};
  cfg.n = 20000;
  const auto pop = sim::generate_population(cfg, 8);
  const std::vector<int> z{1};
  const auto rd = sim::union_sample(pop, false).project(z);
  const CoefficientPath null = [](double) { return Eigen::VectorXd::Zero(1); };
  const auto base = breslow(rd, rd, null, 0.0);
  const double per_year = 0.002 * 6.0;
  for (double a : {9.0, 17.0}) CHECK(std::abs(base(a) / (per_year * a) - 1.0) < 0.05);
  CHECK(base(0.0) == 0.0);
  double prev = -1.0;
  for (double a = 0.0; a <= 18.0; a += 0.1) {
    CHECK(base(a) >= prev);
    prev = base(a);
  }
  CHECK(base.average_rate(1.0, 17.0, 1.0 / 6.0) == doctest::Approx((base(17.0) - base(1.0)) / 96.0));
}

TEST_CASE("Breslow is unchanged on a duplicated dataset and satisfies the E-step identity") {
  Rng rng(9);
  oracle::CohortOptions co;
  co.n = 500;
  auto inst = oracle::random_cohort(rng, co);
  auto twice = inst;
  for (auto u : inst.units) {
    u.cluster += inst.clusters;
    twice.units.push_back(u);
  }
  twice.clusters *= 2;
  const std::vector<int> cols{0, 1};
  const auto rd = oracle::to_risk_data(inst).project(cols);
  const auto rd2 = oracle::to_risk_data(twice).project(cols);
  const CoefficientPath theta = [](double u) {
    Eigen::VectorXd t(2);
    t << 0.2, -0.1 + 0.02 * u;
    return t;
  };
  const auto b1 = breslow(rd, rd, theta, 1.0);
  const auto b2 = breslow(rd2, rd2, theta, 1.0);
  REQUIRE(b1.ages() == b2.ages());
  for (std::size_t i = 0; i < b1.jumps().size(); ++i) {
    CHECK(std::abs(b1.jumps()[i] - b2.jumps()[i]) <= 1e-12 * b1.jumps()[i]);
  }
  double expected = 0.0;
  std::vector<double> w(rd.patterns().size());
  for (std::size_t i = 0; i < b1.ages().size(); ++i) {
    rd.weights_at(b1.ages()[i], w);
    double s = 0.0;
    for (std::size_t p = 0; p < w.size(); ++p) s += w[p] * std::exp(theta(b1.ages()[i]).dot(rd.patterns()[p]));
    expected += s * b1.jumps()[i];
  }
  CHECK(std::abs(expected - rd.total_event_weight()) < 1e-10 * rd.total_event_weight());
}

TEST_CASE("log-likelihood special cases") {
  const CoefficientPath null = [](double) { return Eigen::VectorXd::Zero(1); };
  {
    RiskDataBuilder b(1);
    b.add_unit(b.new_cluster(), 1.0, {0.0, 10.0}, b.intern(Eigen::VectorXd::Zero(1)), std::vector<double>{});
    const auto rd = std::move(b).build();
    const Baseline zero({}, {}, 0.0);
    CHECK(log_likelihood(rd, rd, null, zero) == 0.0);
  }
  {
    RiskDataBuilder b(1);
    b.add_unit(b.new_cluster(), 1.0, {0.0, 10.0}, b.intern(Eigen::VectorXd::Zero(1)), std::vector<double>{4.0});
    const auto rd = std::move(b).build();
    const auto base = breslow(rd, rd, null, 0.0);
    REQUIRE(base.jumps().size() == 1);
    CHECK(base.jumps()[0] == 1.0);
    CHECK(log_likelihood(rd, rd, null, base) == -1.0);
    const Baseline flat({4.0}, {0.0}, 0.0);
    CHECK_THROWS_AS(log_likelihood(rd, rd, null, flat), Error);
  }
}

TEST_CASE("Breslow needs someone at risk at every event") {
  RiskDataBuilder eb(1);
  eb.add_unit(eb.new_cluster(), 1.0, {0.0, 10.0}, eb.intern(Eigen::VectorXd::Zero(1)), std::vector<double>{4.0});
  const auto events = std::move(eb).build();
  RiskDataBuilder rb(1);
  rb.add_unit(rb.new_cluster(), 1.0, {5.0, 10.0}, rb.intern(Eigen::VectorXd::Zero(1)), std::vector<double>{});
  const auto risk = std::move(rb).build();
  const CoefficientPath null = [](double) { return Eigen::VectorXd::Zero(1); };
  CHECK_THROWS_AS(breslow(events, risk, null, 0.0), Error);
}

TEST_CASE("baseline origin is configurable") {
  const auto& rd = setting_one_data();
  FitConfig cfg;
  const auto a = fit_model(ModelSpec::parse("CCC"), Design::combined({1}), rd, nullptr, cfg);
  CHECK(a.baseline(1.0) == 0.0);
  const auto b = breslow_baseline(a, rd, nullptr, 0.0);
  CHECK(b(0.0) == 0.0);
  CHECK(b(9.0) - b(1.0) == doctest::Approx(a.baseline(9.0)).epsilon(1e-12));
  CHECK(log_likelihood(a, rd, nullptr) == doctest::Approx(a.loglik).epsilon(1e-12));
}
