#pragma once

// Data model for doubly-censored recurrent event cohorts pulled from two
// calendar extraction windows.

#include <array>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "recur/dates.hpp"

namespace recur {

enum class Sex { Female, Male };
enum class Region { Other, Edmonton, Calgary };
enum class Decade { Early, Late };

std::string_view to_string(Sex s);
std::string_view to_string(Region r);
std::string_view to_string(Decade d);
Sex parse_sex(std::string_view text);
Region parse_region(std::string_view text);
Decade parse_decade(std::string_view text);

inline constexpr double kAgeCap = 18.0;

struct ExtractionWindow {
  Date left;
  Date right;
  Decade label = Decade::Early;
};

using WindowMap = std::map<Decade, ExtractionWindow>;

// left < right for each window; Early.right <= Late.left when both present.
void validate_windows(const WindowMap& windows);

struct Visit {
  Date date;
  int age_years = 0;
};

struct SubjectRecord {
  std::string id;
  Sex sex = Sex::Female;
  Region region = Region::Other;
  Decade decade = Decade::Early;
  std::optional<Date> birthdate;
  std::vector<Visit> events;
};

// Stacked covariates (x, z, xz) with references Female / Other / Early.
// Index layout of the length-7 vector:
//   0 late, 1 male, 2 edmonton, 3 calgary, 4 late:male, 5 late:edmonton, 6 late:calgary
inline constexpr int kCovariateDim = 7;

struct CovariateVector {
  double x = 0.0;
  std::array<double, 3> z{};
  std::array<double, 3> xz{};

  Eigen::VectorXd stacked() const;
};

CovariateVector encode(Sex sex, Region region, Decade decade);
CovariateVector encode(const SubjectRecord& s);
std::string_view covariate_name(int column);

// Observation interval (left, right] in years of age.
struct CensoringInterval {
  double left = 0.0;
  double right = 0.0;
  bool empty() const { return !(left < right); }
  bool contains(double age) const { return left < age && age <= right; }
};

// (max(0, W_L - b), min(cap, W_R - b)] without validation. `birth_day` is a
// (possibly fractional) day number.
CensoringInterval observation_interval(const ExtractionWindow& w, double birth_day,
                                       double age_cap = kAgeCap);

class CohortDataset {
 public:
  CohortDataset(std::vector<SubjectRecord> subjects, WindowMap windows,
                double age_cap = kAgeCap);

  const std::vector<SubjectRecord>& subjects() const { return subjects_; }
  const WindowMap& windows() const { return windows_; }
  const ExtractionWindow& window_for(const SubjectRecord& s) const;
  double age_cap() const { return age_cap_; }
  // Bandwidths and baseline rates are reported in this unit (two months).
  static constexpr double time_unit_years() { return 1.0 / 6.0; }

 private:
  std::vector<SubjectRecord> subjects_;
  WindowMap windows_;
  double age_cap_;
};

CensoringInterval censoring_interval(const SubjectRecord& s, const ExtractionWindow& w, Date b,
                                     double age_cap = kAgeCap);

// 1 iff max(0, W_L - b) < u <= min(cap, W_R - b). Requires 0 < u < cap.
int at_risk(const ExtractionWindow& w, double birth_day, double u, double age_cap = kAgeCap);
int at_risk(const ExtractionWindow& w, Date b, double u, double age_cap = kAgeCap);

CohortDataset read_cohort_csv(std::istream& in, const WindowMap& windows);
CohortDataset ingest_csv(const std::filesystem::path& path, const WindowMap& windows);
void write_cohort_csv(std::ostream& out, const CohortDataset& data);
void export_csv(const CohortDataset& data, const std::filesystem::path& path);

}  // namespace recur
