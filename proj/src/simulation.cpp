#include "recur/simulation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>

#include <fmt/format.h>

#include "recur/csv.hpp"
#include "recur/error.hpp"
#include "recur/random.hpp"

namespace recur::sim {

namespace {

constexpr double kUnitsPerYear = 6.0;

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

Sex sex_of(int z) { return z ? Sex::Male : Sex::Female; }

struct PatternTable {
  int p[2][2];  // [x][z]
  explicit PatternTable(RiskDataBuilder& b) {
    for (int x = 0; x < 2; ++x) {
      for (int z = 0; z < 2; ++z) {
        p[x][z] = b.intern(encode(sex_of(z), Region::Other, x ? Decade::Late : Decade::Early).stacked());
      }
    }
  }
};

ExtractionWindow union_window(const WindowMap& w) {
  return {w.at(Decade::Early).left, w.at(Decade::Late).right, Decade::Early};
}

bool has_event_in(const SimSubject& s, CensoringInterval iv) {
  return std::any_of(s.event_ages.begin(), s.event_ages.end(),
                     [&](double a) { return iv.contains(a); });
}

void add_person_time(CensusTable& table, Decade d, Sex g, double l, double r) {
  if (!(l < r)) return;
  for (int k = static_cast<int>(std::floor(l)); k < kCensusAges && k < r; ++k) {
    const double overlap = std::min(r, k + 1.0) - std::max(l, static_cast<double>(k));
    if (overlap > 0.0) table.add(d, g, Region::Other, k, overlap);
  }
}

}  // namespace

Setting parse_setting(std::string_view text) {
  const auto t = lower(text);
  if (t == "s1case1" || t == "s1c1") return Setting::S1Case1;
  if (t == "s1case2" || t == "s1c2") return Setting::S1Case2;
  if (t == "s2") return Setting::S2;
  throw ValidationError(fmt::format("invalid setting '{}' (s1case1, s1case2, s2)", text));
}

std::string_view to_string(Setting s) {
  switch (s) {
    case Setting::S1Case1: return "s1case1";
    case Setting::S1Case2: return "s1case2";
    case Setting::S2: break;
  }
  return "s2";
}

int setting_number(Setting s) { return s == Setting::S2 ? 2 : 1; }

Truth default_truth(Setting s) {
  switch (s) {
    case Setting::S1Case1: return {0.002, 0.0, 0.7, 0.0};
    case Setting::S1Case2: return {0.002, 0.3, 0.7, 0.15};
    case Setting::S2: break;
  }
  return {0.002, 0.6, 0.7, 0.35};
}

WindowMap default_windows() {
  return {{Decade::Early, {parse_date("2002-04-01"), parse_date("2010-03-31"), Decade::Early}},
          {Decade::Late, {parse_date("2010-04-01"), parse_date("2017-03-31"), Decade::Late}}};
}

SimConfig default_config(Setting s) {
  SimConfig cfg;
  cfg.setting = s;
  cfg.truth = default_truth(s);
  return cfg;
}

int Population::indicator(const SimSubject& s, double a) const {
  if (setting == Setting::S2) return s.late_generation ? 1 : 0;
  return a > s.change_age ? 1 : 0;
}

Population generate_population(const SimConfig& cfg, std::uint64_t seed) {
  validate_windows(cfg.windows);
  Population pop;
  pop.setting = cfg.setting;
  pop.windows = cfg.windows;
  pop.subjects.resize(static_cast<std::size_t>(cfg.n));
  Rng rng(seed);
  std::uniform_int_distribution<long> birth(static_cast<long>(day_number(cfg.birth_after)) + 1,
                                            static_cast<long>(day_number(cfg.birth_until)));
  std::bernoulli_distribution zdist(cfg.z_probability);
  const double late_start = day_number(cfg.windows.at(Decade::Late).left);
  const double cutoff = day_number(cfg.generation_cutoff);
  const double per_year = cfg.truth.lambda0 * kUnitsPerYear;
  const auto& t = cfg.truth;
  for (auto& s : pop.subjects) {
    s.birth_day = birth(rng);
    s.z = zdist(rng) ? 1 : 0;
    s.change_age = years_between(static_cast<double>(s.birth_day), late_start);
    s.late_generation = static_cast<double>(s.birth_day) >= cutoff;
    auto segment = [&](double start, double end, int x) {
      if (!(start < end)) return;
      const double rate = per_year * std::exp(t.alpha * x + t.beta * s.z + t.gamma * x * s.z);
      std::exponential_distribution<double> gap(rate);
      for (double a = start + gap(rng); a < end; a += gap(rng)) s.event_ages.push_back(a);
    };
    if (cfg.setting == Setting::S2) {
      segment(0.0, kAgeCap, s.late_generation ? 1 : 0);
    } else {
      const double change = std::clamp(s.change_age, 0.0, kAgeCap);
      segment(0.0, change, 0);
      segment(change, kAgeCap, 1);
    }
  }
  return pop;
}

CensusTable census_from_population(const Population& pop, CensusCells cells) {
  CensusTable table;
  const auto uw = union_window(pop.windows);
  for (const auto& s : pop.subjects) {
    const Sex g = sex_of(s.z);
    const double b = static_cast<double>(s.birth_day);
    if (cells == CensusCells::DecadeWindow) {
      for (auto d : {Decade::Early, Decade::Late}) {
        const auto iv = observation_interval(pop.windows.at(d), b);
        add_person_time(table, d, g, iv.left, iv.right);
      }
    } else {
      const auto iv = observation_interval(uw, b);
      if (pop.setting == Setting::S2) {
        add_person_time(table, s.late_generation ? Decade::Late : Decade::Early, g, iv.left,
                        iv.right);
      } else {
        add_person_time(table, Decade::Early, g, iv.left, std::min(iv.right, s.change_age));
        add_person_time(table, Decade::Late, g, std::max(iv.left, s.change_age), iv.right);
      }
    }
  }
  return table;
}

RiskData window_sample(const Population& pop, Decade d, bool require_event) {
  RiskDataBuilder b(kCovariateDim);
  const PatternTable pt(b);
  const auto& w = pop.windows.at(d);
  const int x = d == Decade::Late ? 1 : 0;
  for (const auto& s : pop.subjects) {
    const auto iv = observation_interval(w, static_cast<double>(s.birth_day));
    if (iv.empty() || (require_event && !has_event_in(s, iv))) continue;
    b.add_unit(b.new_cluster(), 1.0, iv, pt.p[x][s.z], s.event_ages);
  }
  return std::move(b).build();
}

RiskData windows_sample(const Population& pop, bool require_event) {
  RiskDataBuilder b(kCovariateDim);
  const PatternTable pt(b);
  for (auto d : {Decade::Early, Decade::Late}) {
    const auto& w = pop.windows.at(d);
    const int x = d == Decade::Late ? 1 : 0;
    for (const auto& s : pop.subjects) {
      const auto iv = observation_interval(w, static_cast<double>(s.birth_day));
      if (iv.empty() || (require_event && !has_event_in(s, iv))) continue;
      b.add_unit(b.new_cluster(), 1.0, iv, pt.p[x][s.z], s.event_ages);
    }
  }
  return std::move(b).build();
}

RiskData union_sample(const Population& pop, bool require_event) {
  RiskDataBuilder b(kCovariateDim);
  const PatternTable pt(b);
  const auto uw = union_window(pop.windows);
  for (const auto& s : pop.subjects) {
    const auto iv = observation_interval(uw, static_cast<double>(s.birth_day));
    if (iv.empty() || (require_event && !has_event_in(s, iv))) continue;
    const int cluster = b.new_cluster();
    if (pop.setting == Setting::S2) {
      b.add_unit(cluster, 1.0, iv, pt.p[s.late_generation ? 1 : 0][s.z], s.event_ages);
    } else {
      b.add_unit(cluster, 1.0, iv, pt.p[0][s.z], pt.p[1][s.z], s.change_age, s.event_ages);
    }
  }
  return std::move(b).build();
}

CohortDataset extract_pulls(const Population& pop, bool degrade_early) {
  std::vector<SubjectRecord> records;
  for (auto d : {Decade::Early, Decade::Late}) {
    const auto& w = pop.windows.at(d);
    const bool strip = degrade_early && d == Decade::Early;
    for (std::size_t i = 0; i < pop.subjects.size(); ++i) {
      const auto& s = pop.subjects[i];
      const double b = static_cast<double>(s.birth_day);
      const auto iv = observation_interval(w, b);
      if (iv.empty()) continue;
      SubjectRecord rec;
      for (double a : s.event_ages) {
        if (!iv.contains(a)) continue;
        const long visit = static_cast<long>(std::ceil(b + a * kDaysPerYear));
        const int years = completed_years(b, static_cast<double>(visit));
        if (years >= static_cast<int>(kAgeCap)) continue;
        rec.events.push_back({date_from_day_number(visit), years});
      }
      if (rec.events.empty()) continue;
      rec.id = fmt::format("{}{}", d == Decade::Early ? 'E' : 'L', i + 1);
      rec.sex = sex_of(s.z);
      rec.region = Region::Other;
      rec.decade = d;
      if (!strip) rec.birthdate = date_from_day_number(s.birth_day);
      records.push_back(std::move(rec));
    }
  }
  return CohortDataset(std::move(records), pop.windows);
}

std::string AnalysisId::str() const { return fmt::format("{}.{}.{}", group, setting, index); }

AnalysisId parse_analysis_id(std::string_view text) {
  AnalysisId id;
  const std::string t(text);
  if (t.size() != 5 || t[1] != '.' || t[3] != '.') {
    throw ValidationError(fmt::format("invalid analysis id '{}'", text));
  }
  id.group = static_cast<char>(std::toupper(static_cast<unsigned char>(t[0])));
  id.setting = t[2] - '0';
  id.index = t[4] - '0';
  const int max_index = id.group == 'A' ? 3 : 6;
  if ((id.group != 'A' && id.group != 'B') || (id.setting != 1 && id.setting != 2) ||
      id.index < 1 || id.index > max_index) {
    throw ValidationError(fmt::format("invalid analysis id '{}'", text));
  }
  return id;
}

std::vector<AnalysisId> parse_analysis_list(std::string_view text) {
  std::vector<AnalysisId> ids;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find(',', start);
    if (end == std::string_view::npos) end = text.size();
    auto item = text.substr(start, end - start);
    while (!item.empty() && std::isspace(static_cast<unsigned char>(item.front()))) item.remove_prefix(1);
    while (!item.empty() && std::isspace(static_cast<unsigned char>(item.back()))) item.remove_suffix(1);
    if (item.empty()) throw ValidationError("empty analysis id in list");
    const auto dots = item.find("..");
    if (dots != std::string_view::npos) {
      const auto a = parse_analysis_id(item.substr(0, dots));
      const auto b = parse_analysis_id(item.substr(dots + 2));
      if (a.group != b.group || a.setting != b.setting || a.index > b.index) {
        throw ValidationError(fmt::format("invalid analysis range '{}'", item));
      }
      for (int i = a.index; i <= b.index; ++i) ids.push_back({a.group, a.setting, i});
    } else {
      ids.push_back(parse_analysis_id(item));
    }
    start = end + 1;
  }
  return ids;
}

namespace {

std::vector<std::string> parameter_names(const AnalysisId& id, Setting setting) {
  const bool stratified = id.index == 1 || (id.group == 'B' && id.index == 2);
  if (stratified) return {"beta_E", "beta_L", "lambda0_E", "lambda0_L"};
  if (id.group == 'A' && id.index == 3 && setting == Setting::S1Case1) return {"beta", "lambda0"};
  return {"alpha", "beta", "gamma", "lambda0"};
}

double nan() { return std::numeric_limits<double>::quiet_NaN(); }

double average_rate(const FittedModel& m) {
  return m.baseline.average_rate(m.tau.left, m.tau.right, CohortDataset::time_unit_years());
}

}  // namespace

Replicate::Replicate(const SimConfig& cfg, std::uint64_t seed)
    : cfg_(&cfg), seed_(seed), pop_(generate_population(cfg, derive_seed(seed, {0}))) {}

const CohortDataset& Replicate::pulls() {
  if (!pulls_) pulls_ = extract_pulls(pop_, cfg_->degrade_early);
  return *pulls_;
}

const RiskData& Replicate::pulls_risk(int which) {
  auto& slot = pull_risk_[which];
  if (!slot) {
    const AugmentationConfig aug{cfg_->k, derive_seed(seed_, {1, static_cast<std::uint64_t>(which)})};
    if (which == 2) {
      slot = build_risk_data(pulls(), aug);
    } else {
      slot = build_risk_data(subset(pulls(), which == 0 ? Decade::Early : Decade::Late), aug);
    }
  }
  return *slot;
}

const CensusTable& Replicate::census(CensusCells cells) {
  auto& slot = census_[cells == CensusCells::DecadeWindow ? 0 : 1];
  if (!slot) slot = census_from_population(pop_, cells);
  return *slot;
}

AnalysisResult Replicate::run(const AnalysisId& id) {
  if (id.setting != setting_number(cfg_->setting)) {
    throw ValidationError(fmt::format("analysis {} does not belong to setting {}", id.str(),
                                      to_string(cfg_->setting)));
  }
  AnalysisResult res;
  res.id = id.str();
  res.names = parameter_names(id, cfg_->setting);
  const auto& fit_cfg = cfg_->fit;

  auto stratified = [&](const RiskData& early, const RiskData& late, const CensusTable* census) {
    const auto sf = stratified_fit(early, late, Shape::Constant, census, fit_cfg, {1});
    res.estimate = {sf.early.constant_coefs[0], sf.late.constant_coefs[0], average_rate(sf.early),
                    average_rate(sf.late)};
    res.se_model = {std::sqrt(sf.early.constant_cov_model(0, 0)),
                    std::sqrt(sf.late.constant_cov_model(0, 0)), nan(), nan()};
    res.se_sandwich = {std::sqrt(sf.early.constant_cov(0, 0)), std::sqrt(sf.late.constant_cov(0, 0)),
                       nan(), nan()};
    res.ok = sf.early.converged && sf.late.converged;
    if (!res.ok) res.message = sf.early.message + sf.late.message;
  };
  auto combined = [&](const RiskData& data, const CensusTable* census, bool z_only) {
    ModelSpec spec;
    spec.target = census ? Target::GeneralPopulation : Target::Cohort;
    const auto design = z_only ? Design::z_only({1}) : Design::combined({1});
    const auto m = fit_model(spec, design, data, census, fit_cfg);
    for (int i = 0; i < design.size(); ++i) {
      res.estimate.push_back(m.constant_coefs[i]);
      res.se_model.push_back(std::sqrt(m.constant_cov_model(i, i)));
      res.se_sandwich.push_back(std::sqrt(m.constant_cov(i, i)));
    }
    res.estimate.push_back(average_rate(m));
    res.se_model.push_back(nan());
    res.se_sandwich.push_back(nan());
    res.ok = m.converged;
    res.message = m.message;
  };

  try {
    if (id.group == 'A') {
      switch (id.index) {
        case 1: stratified(pulls_risk(0), pulls_risk(1), nullptr); break;
        case 2: combined(pulls_risk(2), nullptr, false); break;
        default:
          combined(union_sample(pop_, true), nullptr, cfg_->setting == Setting::S1Case1);
          break;
      }
    } else {
      switch (id.index) {
        case 1:
          stratified(window_sample(pop_, Decade::Early, false),
                     window_sample(pop_, Decade::Late, false), nullptr);
          break;
        case 2:
          stratified(pulls_risk(0), pulls_risk(1), &census(CensusCells::DecadeWindow));
          break;
        case 3: combined(windows_sample(pop_, false), nullptr, false); break;
        case 4: combined(pulls_risk(2), &census(CensusCells::DecadeWindow), false); break;
        case 5: combined(union_sample(pop_, false), nullptr, false); break;
        default:
          combined(union_sample(pop_, true), &census(CensusCells::TrueIndicator), false);
          break;
      }
    }
  } catch (const Error& e) {
    res.ok = false;
    res.message = e.what();
  }
  return res;
}

AnalysisResult run_analysis(const AnalysisId& id, const SimConfig& cfg, std::uint64_t seed) {
  Replicate rep(cfg, seed);
  return rep.run(id);
}

const ReplicateRow& ReplicateTable::row(std::string_view analysis,
                                        std::string_view parameter) const {
  for (const auto& r : rows) {
    if (r.analysis == analysis && r.parameter == parameter) return r;
  }
  throw PreconditionError(fmt::format("no row {} / {}", analysis, parameter));
}

std::uint64_t replicate_seed(std::uint64_t seed, int rep) {
  return derive_seed(seed, {static_cast<std::uint64_t>(rep)});
}

ReplicateStudy replicate_study(const std::vector<AnalysisId>& ids, const SimConfig& cfg) {
  if (cfg.reps < 2) throw PreconditionError("a replicate study needs at least 2 replicates");
  if (cfg.n < 1) throw PreconditionError("population size must be positive");
  for (const auto& id : ids) {
    if (id.setting != setting_number(cfg.setting)) {
      throw ValidationError(fmt::format("analysis {} does not belong to setting {}", id.str(),
                                        to_string(cfg.setting)));
    }
  }
  ReplicateStudy study;
  study.results.resize(static_cast<std::size_t>(cfg.reps));
#pragma omp parallel for schedule(dynamic, 1)
  for (int r = 0; r < cfg.reps; ++r) {
    auto& out = study.results[static_cast<std::size_t>(r)];
    try {
      Replicate rep(cfg, replicate_seed(cfg.seed, r));
      for (const auto& id : ids) out.push_back(rep.run(id));
    } catch (const std::exception& e) {
      out.clear();
      for (const auto& id : ids) {
        AnalysisResult failed;
        failed.id = id.str();
        failed.message = e.what();
        out.push_back(std::move(failed));
      }
    }
  }
  study.table = aggregate(ids, cfg, study.results);
  return study;
}

ReplicateTable aggregate(const std::vector<AnalysisId>& ids, const SimConfig& cfg,
                         const std::vector<std::vector<AnalysisResult>>& results) {
  ReplicateTable table;
  table.setting = cfg.setting;
  table.n = cfg.n;
  table.reps = static_cast<int>(results.size());
  table.seed = cfg.seed;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto names = parameter_names(ids[i], cfg.setting);
    for (std::size_t j = 0; j < names.size(); ++j) {
      ReplicateRow row;
      row.analysis = ids[i].str();
      row.parameter = names[j];
      std::vector<double> est, sa, sb;
      for (const auto& rep : results) {
        const auto& r = rep.at(i);
        if (!r.ok) continue;
        est.push_back(r.estimate[j]);
        sa.push_back(r.se_model[j]);
        sb.push_back(r.se_sandwich[j]);
      }
      row.n_ok = static_cast<int>(est.size());
      row.failures = static_cast<int>(results.size()) - row.n_ok;
      auto mean = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return v.empty() ? nan() : s / static_cast<double>(v.size());
      };
      row.smean = mean(est);
      if (est.size() >= 2) {
        double ss = 0.0;
        for (double x : est) ss += (x - row.smean) * (x - row.smean);
        row.sse = std::sqrt(ss / static_cast<double>(est.size() - 1));
      } else {
        row.sse = nan();
      }
      row.ese_a = mean(sa);
      row.ese_b = mean(sb);
      table.rows.push_back(std::move(row));
    }
  }
  return table;
}

void write_replicate_csv(std::ostream& out, const ReplicateTable& table) {
  out << "analysis,parameter,smean,sse,ese_a,ese_b,n_ok,failures\n";
  for (const auto& r : table.rows) {
    out << fmt::format("{},{},{:.10g},{:.10g},{:.10g},{:.10g},{},{}\n", r.analysis, r.parameter,
                       r.smean, r.sse, r.ese_a, r.ese_b, r.n_ok, r.failures);
  }
}

ReplicateTable read_replicate_csv(std::istream& in) {
  csv::Reader reader(in);
  reader.require_columns({"analysis", "parameter", "smean", "sse", "ese_a", "ese_b", "n_ok", "failures"});
  ReplicateTable table;
  while (reader.next()) {
    const auto row = reader.row_number();
    ReplicateRow r;
    r.analysis = reader.field("analysis");
    r.parameter = reader.field("parameter");
    r.smean = csv::parse_double(reader.field("smean"), row, "smean");
    r.sse = csv::parse_double(reader.field("sse"), row, "sse");
    r.ese_a = csv::parse_double(reader.field("ese_a"), row, "ese_a");
    r.ese_b = csv::parse_double(reader.field("ese_b"), row, "ese_b");
    r.n_ok = static_cast<int>(csv::parse_long(reader.field("n_ok"), row, "n_ok"));
    r.failures = static_cast<int>(csv::parse_long(reader.field("failures"), row, "failures"));
    table.rows.push_back(std::move(r));
  }
  return table;
}

void write_replicate_text(std::ostream& out, const ReplicateTable& table) {
  out << fmt::format("setting {}  n={}  reps={}  seed={}\n", to_string(table.setting), table.n,
                     table.reps, table.seed);
  auto cell = [](double v) { return std::isfinite(v) ? fmt::format("{:>11.5f}", v) : fmt::format("{:>11}", "-"); };
  std::size_t i = 0;
  while (i < table.rows.size()) {
    std::size_t j = i;
    while (j < table.rows.size() && table.rows[j].analysis == table.rows[i].analysis) ++j;
    out << '\n' << fmt::format("{:<8}", table.rows[i].analysis);
    for (std::size_t k = i; k < j; ++k) out << fmt::format("{:>11}", table.rows[k].parameter);
    out << '\n';
    const std::pair<const char*, double ReplicateRow::*> stats[] = {
        {"SMean", &ReplicateRow::smean}, {"SSE", &ReplicateRow::sse},
        {"ESE(a)", &ReplicateRow::ese_a}, {"ESE(b)", &ReplicateRow::ese_b}};
    for (const auto& [label, member] : stats) {
      out << fmt::format("{:<8}", label);
      for (std::size_t k = i; k < j; ++k) out << cell(table.rows[k].*member);
      out << '\n';
    }
    out << fmt::format("{:<8}", "ok");
    for (std::size_t k = i; k < j; ++k) {
      out << fmt::format("{:>11}", fmt::format("{}/{}", table.rows[k].n_ok,
                                               table.rows[k].n_ok + table.rows[k].failures));
    }
    out << '\n';
    i = j;
  }
}

CohortDataset generate_registry_cohort(const RegistryConfig& cfg, const WindowMap& windows,
                                       std::uint64_t seed) {
  const auto& w = windows.at(cfg.decade);
  Rng rng(seed);
  const double wl = day_number(w.left);
  const double wr = day_number(w.right);
  std::uniform_int_distribution<long> birth(static_cast<long>(std::floor(wl - kAgeCap * kDaysPerYear)) + 1,
                                            static_cast<long>(wr) - 1);
  std::bernoulli_distribution male(cfg.male_probability);
  std::discrete_distribution<int> region(
      {cfg.region_probability[0], cfg.region_probability[1], cfg.region_probability[2]});
  std::vector<SubjectRecord> records;
  for (int i = 0; i < cfg.n; ++i) {
    const long b = birth(rng);
    const Sex g = male(rng) ? Sex::Male : Sex::Female;
    const auto r = static_cast<Region>(region(rng));
    const Eigen::Vector3d z(g == Sex::Male ? 1.0 : 0.0, r == Region::Edmonton ? 1.0 : 0.0,
                            r == Region::Calgary ? 1.0 : 0.0);
    const double rate = cfg.lambda0 * kUnitsPerYear * std::exp(cfg.beta.dot(z));
    const auto iv = observation_interval(w, static_cast<double>(b));
    if (iv.empty()) continue;
    std::exponential_distribution<double> gap(rate);
    SubjectRecord rec;
    for (double a = iv.left + gap(rng); a <= iv.right; a += gap(rng)) {
      const long visit = static_cast<long>(std::ceil(static_cast<double>(b) + a * kDaysPerYear));
      const int years = completed_years(static_cast<double>(b), static_cast<double>(visit));
      if (years >= static_cast<int>(kAgeCap) || static_cast<double>(visit) > wr) continue;
      rec.events.push_back({date_from_day_number(visit), years});
    }
    if (rec.events.empty()) continue;
    rec.id = fmt::format("R{}", i + 1);
    rec.sex = g;
    rec.region = r;
    rec.decade = cfg.decade;
    rec.birthdate = date_from_day_number(b);
    records.push_back(std::move(rec));
  }
  return CohortDataset(std::move(records), windows);
}

}  // namespace recur::sim
