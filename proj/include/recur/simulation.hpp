#pragma once

// Synthetic populations for the two simulation settings, the data pulls that
// mimic the two extraction windows, population censuses, the analysis
// pipelines, and replicate aggregation.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "recur/census.hpp"
#include "recur/cohort.hpp"
#include "recur/model.hpp"
#include "recur/risk_data.hpp"

namespace recur::sim {

enum class Setting { S1Case1, S1Case2, S2 };

Setting parse_setting(std::string_view text);
std::string_view to_string(Setting s);
int setting_number(Setting s);  // 1 or 2

struct Truth {
  double lambda0 = 0.002;  // per two-month unit
  double alpha = 0.0;
  double beta = 0.7;
  double gamma = 0.0;
};

Truth default_truth(Setting s);
WindowMap default_windows();

struct SimConfig {
  Setting setting = Setting::S1Case2;
  int n = 50000;
  int reps = 300;
  std::uint64_t seed = 7;
  WindowMap windows = default_windows();
  Date birth_after = parse_date("1984-04-01");  // exclusive
  Date birth_until = parse_date("2017-03-31");  // inclusive
  Date generation_cutoff = parse_date("2001-03-31");
  double z_probability = 0.6;
  Truth truth = default_truth(Setting::S1Case2);
  bool degrade_early = true;
  int k = 100;
  FitConfig fit;
};

SimConfig default_config(Setting s);

struct SimSubject {
  long birth_day = 0;
  int z = 0;
  double change_age = 0.0;  // age at the start of the late window
  bool late_generation = false;
  std::vector<double> event_ages;  // sorted, in (0, 18)
};

struct Population {
  Setting setting = Setting::S1Case2;
  WindowMap windows;
  std::vector<SimSubject> subjects;

  // True group indicator at age a.
  int indicator(const SimSubject& s, double a) const;
};

Population generate_population(const SimConfig& cfg, std::uint64_t seed);

enum class CensusCells { DecadeWindow, TrueIndicator };

// Exact person-years at risk per (cell, z, completed age).
CensusTable census_from_population(const Population& pop, CensusCells cells);

// Subjects observed in one window, group indicator fixed to the window.
RiskData window_sample(const Population& pop, Decade d, bool require_event);
// Both windows as one collection (same units may appear twice, unlinked).
RiskData windows_sample(const Population& pop, bool require_event);
// Union window with the true indicator.
RiskData union_sample(const Population& pop, bool require_event);
// Data pulls O_E1 and O_L1 as cohort records. With `degrade_early` the early
// pull loses birthdates (ages kept as completed years).
CohortDataset extract_pulls(const Population& pop, bool degrade_early);

struct AnalysisId {
  char group = 'B';  // 'A' cohort target, 'B' general population
  int setting = 1;
  int index = 1;
  std::string str() const;
};

AnalysisId parse_analysis_id(std::string_view text);
// Comma-separated ids; "B.2.1..B.2.6" expands a range.
std::vector<AnalysisId> parse_analysis_list(std::string_view text);

struct AnalysisResult {
  std::string id;
  std::vector<std::string> names;
  std::vector<double> estimate;
  std::vector<double> se_model;     // ESE_a
  std::vector<double> se_sandwich;  // ESE_b
  bool ok = false;
  std::string message;
};

// Lazily built samples of one replicate.
class Replicate {
 public:
  Replicate(const SimConfig& cfg, std::uint64_t seed);
  const Population& population() const { return pop_; }
  AnalysisResult run(const AnalysisId& id);
  const CohortDataset& pulls();

 private:
  const RiskData& pulls_risk(int which);  // 0 early, 1 late, 2 both
  const CensusTable& census(CensusCells cells);

  const SimConfig* cfg_;
  std::uint64_t seed_;
  Population pop_;
  std::optional<CohortDataset> pulls_;
  std::optional<RiskData> pull_risk_[3];
  std::optional<CensusTable> census_[2];
};

AnalysisResult run_analysis(const AnalysisId& id, const SimConfig& cfg, std::uint64_t seed);

struct ReplicateRow {
  std::string analysis;
  std::string parameter;
  double smean = 0.0;
  double sse = 0.0;
  double ese_a = 0.0;
  double ese_b = 0.0;
  int n_ok = 0;
  int failures = 0;
};

struct ReplicateTable {
  Setting setting = Setting::S1Case2;
  int n = 0;
  int reps = 0;
  std::uint64_t seed = 0;
  std::vector<ReplicateRow> rows;

  const ReplicateRow& row(std::string_view analysis, std::string_view parameter) const;
};

struct ReplicateStudy {
  ReplicateTable table;
  // results[r][i]: replicate r, analysis i.
  std::vector<std::vector<AnalysisResult>> results;
};

std::uint64_t replicate_seed(std::uint64_t seed, int rep);
ReplicateStudy replicate_study(const std::vector<AnalysisId>& ids, const SimConfig& cfg);
ReplicateTable aggregate(const std::vector<AnalysisId>& ids, const SimConfig& cfg,
                         const std::vector<std::vector<AnalysisResult>>& results);

void write_replicate_csv(std::ostream& out, const ReplicateTable& table);
ReplicateTable read_replicate_csv(std::istream& in);
void write_replicate_text(std::ostream& out, const ReplicateTable& table);

// Registry-style cohort with sex and region: one decade, known birthdates,
// subjects with at least one visit in the window. Coefficients are for
// (male, edmonton, calgary).
struct RegistryConfig {
  int n = 20000;
  Decade decade = Decade::Late;
  double lambda0 = 0.002;
  Eigen::Vector3d beta{0.5, 0.3, -0.2};
  double male_probability = 0.5;
  Eigen::Vector3d region_probability{0.4, 0.3, 0.3};  // other, edmonton, calgary
};

CohortDataset generate_registry_cohort(const RegistryConfig& cfg, const WindowMap& windows,
                                       std::uint64_t seed);

}  // namespace recur::sim
