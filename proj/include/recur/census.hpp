#pragma once

// Population counts by decade, covariate cell and completed age, used in
// place of the cohort's own risk sets when the target is the general
// population rather than the zero-truncated cohort.

#include <array>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "recur/cohort.hpp"
#include "recur/local_estimator.hpp"
#include "recur/risk_data.hpp"

namespace recur {

inline constexpr int kCensusAges = 18;

class CensusTable {
 public:
  double count(Decade d, Sex g, Region r, int age) const;
  void set(Decade d, Sex g, Region r, int age, double value);
  void add(Decade d, Sex g, Region r, int age, double value);
  double total(Decade d) const;
  // Sum over cells at one age, optionally within a decade.
  double total_at_age(int age, std::optional<Decade> d = std::nullopt) const;
  bool operator==(const CensusTable&) const = default;

 private:
  static std::size_t index(Decade d, Sex g, Region r, int age);
  std::array<double, 2 * 2 * 3 * kCensusAges> counts_{};
};

CensusTable read_census_csv(std::istream& in);
CensusTable ingest_census_csv(const std::filesystem::path& path);
void write_census_csv(std::ostream& out, const CensusTable& table);

// Risk provider whose weight for a covariate cell at age u is M(cell, floor u).
// Cells are encoded like cohort subjects and reduced to `columns` of the
// length-7 design; `stratum` restricts to one decade.
class CensusRisk : public RiskProvider {
 public:
  CensusRisk(const CensusTable& table, std::span<const int> columns,
             std::optional<Decade> stratum = std::nullopt);

  const std::vector<Eigen::VectorXd>& patterns() const override { return patterns_; }
  void weights_at(double age, std::span<double> out) const override;

 private:
  struct Cell {
    Decade d;
    Sex g;
    Region r;
    int pattern;
  };
  const CensusTable* table_;
  std::vector<Cell> cells_;
  std::vector<Eigen::VectorXd> patterns_;
};

// Throws EmptyRiskSetError when every count at floor(u) is zero.
Moments s_moments_census(const Eigen::VectorXd& phi, double u, double a, const CensusRisk& census,
                         int degree = 1);

Eigen::VectorXd estimating_function_population(const Eigen::VectorXd& phi, double a,
                                               const RiskData& cohort_events,
                                               const CensusRisk& census, const KernelSpec& spec,
                                               int degree = 1);
LocalFit solve_local_population(double a, const RiskData& cohort_events, const CensusRisk& census,
                                const KernelSpec& spec, const SolverConfig& cfg = {},
                                int degree = 1);

struct AcOptions {
  double max_variation = 0.25;  // (max - min) / max within an age-year
  double min_count = 20.0;      // variation is only judged on cells this large
  int subpoints = 12;
};

struct AcCellIssue {
  Decade decade;
  Sex sex;
  Region region;
  int age = 0;
  double census = 0.0;
  double cohort_min = 0.0;
  double cohort_max = 0.0;
};

struct AcReport {
  std::vector<AcCellIssue> below_cohort;
  std::vector<AcCellIssue> nonconstant;
  bool clean() const { return below_cohort.empty() && nonconstant.empty(); }
};

// `cohort` must carry the full length-7 covariate encoding.
AcReport validate_ac(const CensusTable& census, const RiskData& cohort, const AcOptions& opts = {});
void write_ac_report(std::ostream& out, const AcReport& report);

}  // namespace recur
