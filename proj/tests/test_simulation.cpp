#include <omp.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "recur/error.hpp"
#include "recur/simulation.hpp"

using namespace recur;
using namespace recur::sim;

namespace {

SimSubject subject(const char* birth, int z, std::vector<double> ages) {
  SimSubject s;
  s.birth_day = static_cast<long>(day_number(parse_date(birth)));
  s.z = z;
  s.change_age = years_between(static_cast<double>(s.birth_day), day_number(parse_date("2010-04-01")));
  s.event_ages = std::move(ages);
  return s;
}

double age_at(const SimSubject& s, const char* date) {
  return years_between(static_cast<double>(s.birth_day), day_number(parse_date(date)));
}

}  // namespace

TEST_CASE("settings and analysis ids") {
  CHECK(parse_setting("S1Case2") == Setting::S1Case2);
  CHECK(parse_setting("s1c1") == Setting::S1Case1);
  CHECK(parse_setting("s2") == Setting::S2);
  CHECK_THROWS_AS(parse_setting("s3"), ValidationError);
  CHECK(parse_analysis_id("b.1.5").str() == "B.1.5");
  for (const char* bad : {"C.1.1", "B.1.7", "A.1.4", "B.3.1", "B15", "B.1.10"}) {
    CHECK_THROWS_AS(parse_analysis_id(bad), ValidationError);
  }
  const auto list = parse_analysis_list("B.2.1..B.2.6, A.2.3");
  REQUIRE(list.size() == 7);
  CHECK(list[5].str() == "B.2.6");
  CHECK(list[6].str() == "A.2.3");
  CHECK_THROWS_AS(parse_analysis_list("B.2.4..B.2.1"), ValidationError);
  CHECK_THROWS_AS(parse_analysis_list("B.1.1,,B.1.2"), ValidationError);
  const auto t = default_truth(Setting::S2);
  CHECK(t.alpha == 0.6);
  CHECK(t.gamma == 0.35);
}

TEST_CASE("generation is deterministic") {
  auto cfg = default_config(Setting::S1Case2);
  cfg.n = 2000;
  const auto a = generate_population(cfg, 5);
  const auto b = generate_population(cfg, 5);
  const auto c = generate_population(cfg, 6);
  bool same = true, differs = false;
  for (std::size_t i = 0; i < a.subjects.size(); ++i) {
    same = same && a.subjects[i].birth_day == b.subjects[i].birth_day &&
           a.subjects[i].event_ages == b.subjects[i].event_ages;
    differs = differs || a.subjects[i].event_ages != c.subjects[i].event_ages;
  }
  CHECK(same);
  CHECK(differs);
  for (const auto& s : a.subjects) {
    CHECK(s.birth_day > static_cast<long>(day_number(parse_date("1984-04-01"))));
    CHECK(s.birth_day <= static_cast<long>(day_number(parse_date("2017-03-31"))));
  }
}

TEST_CASE("event counts match the Poisson mean") {
  auto cfg = default_config(Setting::S1Case1);
  cfg.n = 10000;
  const auto pop = generate_population(cfg, 17);
  double n[2] = {0, 0}, sum[2] = {0, 0};
  for (const auto& s : pop.subjects) {
    n[s.z] += 1;
    sum[s.z] += static_cast<double>(s.event_ages.size());
    for (double a : s.event_ages) {
      CHECK(a > 0.0);
      CHECK(a < 18.0);
    }
  }
  const double mean0 = 0.002 * 108.0;
  const double mean1 = mean0 * std::exp(0.7);
  CHECK(std::abs(sum[0] / n[0] - mean0) < 3.0 * std::sqrt(mean0 / n[0]));
  CHECK(std::abs(sum[1] / n[1] - mean1) < 3.0 * std::sqrt(mean1 / n[1]));
  CHECK(std::abs(n[1] / cfg.n - 0.6) < 3.0 * std::sqrt(0.24 / cfg.n));
}

TEST_CASE("change-point intensity") {
  auto cfg = default_config(Setting::S1Case2);
  cfg.n = 40000;
  const auto pop = generate_population(cfg, 18);
  double before = 0, after = 0, t_before = 0, t_after = 0;
  for (const auto& s : pop.subjects) {
    if (s.z != 0) continue;
    const double c = std::clamp(s.change_age, 0.0, 18.0);
    t_before += c;
    t_after += 18.0 - c;
    for (double a : s.event_ages) (a <= c ? before : after) += 1;
  }
  const double per_year = 0.012;
  CHECK(std::abs(before / t_before - per_year) < 3.0 * std::sqrt(per_year / t_before));
  const double late = per_year * std::exp(0.3);
  CHECK(std::abs(after / t_after - late) < 3.0 * std::sqrt(late / t_after));
}

TEST_CASE("subjects born after the late window opens are always in the late group") {
  auto cfg = default_config(Setting::S1Case2);
  cfg.n = 3000;
  const auto pop = generate_population(cfg, 19);
  const auto& early = pop.windows.at(Decade::Early);
  int seen = 0;
  for (const auto& s : pop.subjects) {
    if (s.change_age > 0.0) continue;
    ++seen;
    for (double a : {0.01, 5.0, 17.9}) CHECK(pop.indicator(s, a) == 1);
    CHECK(observation_interval(early, static_cast<double>(s.birth_day)).empty());
  }
  CHECK(seen > 0);
}

TEST_CASE("data pulls") {
  Population pop;
  pop.setting = Setting::S1Case2;
  pop.windows = default_windows();
  auto late_only = subject("2000-01-01", 1, {});
  late_only.event_ages = {age_at(late_only, "2012-05-05")};
  auto none = subject("1999-01-01", 0, {});
  auto both = subject("1998-01-01", 0, {});
  both.event_ages = {age_at(both, "2005-02-02"), age_at(both, "2013-03-03")};
  pop.subjects = {late_only, none, both};

  const auto pulls = extract_pulls(pop, true);
  REQUIRE(pulls.subjects().size() == 3);
  int early = 0, late = 0;
  for (const auto& s : pulls.subjects()) {
    CHECK(s.events.size() == 1);
    if (s.decade == Decade::Early) {
      ++early;
      CHECK_FALSE(s.birthdate.has_value());
      CHECK(s.id == "E3");
    } else {
      ++late;
      CHECK(s.birthdate.has_value());
    }
  }
  CHECK(early == 1);
  CHECK(late == 2);
  const auto kept = extract_pulls(pop, false);
  for (const auto& s : kept.subjects()) CHECK(s.birthdate.has_value());

  const auto e1 = window_sample(pop, Decade::Early, true);
  const auto e = window_sample(pop, Decade::Early, false);
  CHECK(e1.cluster_count() == 1);
  CHECK(e.cluster_count() == 3);
  CHECK(windows_sample(pop, true).cluster_count() == 3);
  CHECK(union_sample(pop, true).cluster_count() == 2);
}

TEST_CASE("census person-years") {
  Population pop;
  pop.setting = Setting::S1Case2;
  pop.windows = default_windows();
  pop.subjects = {subject("1986-04-01", 1, {})};
  const auto t = census_from_population(pop, CensusCells::DecadeWindow);
  CHECK(t.count(Decade::Early, Sex::Male, Region::Other, 16) == doctest::Approx(1.0).epsilon(0.01));
  CHECK(t.count(Decade::Early, Sex::Male, Region::Other, 17) == doctest::Approx(1.0).epsilon(0.01));
  CHECK(t.total(Decade::Early) == doctest::Approx(2.0).epsilon(0.01));
  CHECK(t.total(Decade::Late) == 0.0);

  auto cfg = default_config(Setting::S1Case2);
  cfg.n = 3000;
  const auto big = generate_population(cfg, 20);
  const auto c = census_from_population(big, CensusCells::DecadeWindow);
  for (auto d : {Decade::Early, Decade::Late}) {
    double py = 0.0;
    for (const auto& s : big.subjects) {
      const auto iv = observation_interval(big.windows.at(d), static_cast<double>(s.birth_day));
      if (!iv.empty()) py += iv.right - iv.left;
    }
    CHECK(c.total(d) == doctest::Approx(py).epsilon(1e-12));
  }
  const auto ind = census_from_population(big, CensusCells::TrueIndicator);
  CHECK(ind.total(Decade::Early) + ind.total(Decade::Late) > 0.0);
  CHECK(census_from_population(generate_population(cfg, 20), CensusCells::DecadeWindow) == c);
}

TEST_CASE("analyses return named estimates") {
  auto cfg = default_config(Setting::S1Case2);
  cfg.n = 4000;
  cfg.k = 10;
  Replicate rep(cfg, 3);
  for (int i = 1; i <= 6; ++i) {
    const auto r = rep.run({'B', 1, i});
    CHECK_MESSAGE(r.ok, r.message);
    CHECK(r.estimate.size() == r.names.size());
    CHECK(r.se_model.size() == r.names.size());
  }
  CHECK(rep.run({'B', 1, 1}).names[0] == "beta_E");
  CHECK(rep.run({'B', 1, 5}).names[0] == "alpha");
  CHECK_THROWS_AS(rep.run({'B', 2, 1}), ValidationError);
  auto c1 = default_config(Setting::S1Case1);
  c1.n = 4000;
  CHECK(run_analysis({'A', 1, 3}, c1, 1).names == std::vector<std::string>{"beta", "lambda0"});
}

TEST_CASE("replicate aggregation") {
  auto cfg = default_config(Setting::S1Case2);
  cfg.n = 3000;
  cfg.reps = 2;
  const std::vector<AnalysisId> ids{{'B', 1, 5}};
  AnalysisResult r = run_analysis(ids[0], cfg, 11);
  const auto table = aggregate(ids, cfg, {{r}, {r}});
  for (const auto& row : table.rows) {
    CHECK(row.sse == 0.0);
    CHECK(row.n_ok == 2);
    CHECK(row.failures == 0);
  }
  CHECK(table.row("B.1.5", "beta").smean == r.estimate[1]);

  AnalysisResult s = r;
  s.estimate[1] += 0.2;
  AnalysisResult bad = r;
  bad.ok = false;
  const auto t2 = aggregate(ids, cfg, {{r}, {s}, {bad}});
  CHECK(t2.row("B.1.5", "beta").sse == doctest::Approx(0.2 / std::sqrt(2.0)).epsilon(1e-12));
  CHECK(t2.row("B.1.5", "beta").failures == 1);
  CHECK(t2.row("B.1.5", "beta").n_ok == 2);
  CHECK_THROWS_AS(t2.row("B.1.5", "delta"), PreconditionError);
}

TEST_CASE("replicate studies are reproducible across thread counts") {
  auto cfg = default_config(Setting::S1Case2);
  cfg.n = 2000;
  cfg.reps = 3;
  cfg.k = 5;
  const std::vector<AnalysisId> ids{{'B', 1, 2}, {'B', 1, 5}};
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  const auto a = replicate_study(ids, cfg);
  omp_set_num_threads(3);
  const auto b = replicate_study(ids, cfg);
  omp_set_num_threads(saved);
  std::ostringstream sa, sb;
  write_replicate_csv(sa, a.table);
  write_replicate_csv(sb, b.table);
  CHECK(sa.str() == sb.str());
  std::istringstream in(sa.str());
  std::ostringstream again;
  write_replicate_csv(again, read_replicate_csv(in));
  CHECK(again.str() == sa.str());
  std::ostringstream text;
  write_replicate_text(text, a.table);
  CHECK(text.str().find("B.1.5") != std::string::npos);
  cfg.reps = 1;
  CHECK_THROWS_AS(replicate_study(ids, cfg), PreconditionError);
}

TEST_CASE("zero truncation inflates the baseline") {
  auto cfg = default_config(Setting::S1Case1);
  cfg.n = 10000;
  cfg.reps = 4;
  const auto study = replicate_study({{'A', 1, 3}}, cfg);
  CHECK(study.table.row("A.1.3", "lambda0").smean > cfg.truth.lambda0);
}

TEST_CASE("registry cohorts") {
  RegistryConfig rc;
  rc.n = 3000;
  const auto d = generate_registry_cohort(rc, default_windows(), 4);
  CHECK_FALSE(d.subjects().empty());
  int edmonton = 0;
  for (const auto& s : d.subjects()) {
    CHECK(s.decade == Decade::Late);
    CHECK(s.birthdate.has_value());
    CHECK_FALSE(s.events.empty());
    edmonton += s.region == Region::Edmonton;
  }
  CHECK(edmonton > 0);
}
