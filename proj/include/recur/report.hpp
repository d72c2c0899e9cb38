#pragma once

// Result files: model summary text, curve and baseline CSVs, and readers
// for the CSVs.

#include <iosfwd>
#include <string>
#include <vector>

#include "recur/model.hpp"

namespace recur {

struct CurveRow {
  double age = 0.0;
  std::string coef_name;
  double estimate = 0.0;
  double stderr_ = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  bool converged = false;
};

struct BaselineRow {
  double age = 0.0;
  double jump = 0.0;
  double cumulative = 0.0;
};

// One row per grid age and varying coefficient.
std::vector<CurveRow> curve_rows(const FittedModel& model);
void write_curve_csv(std::ostream& out, const std::vector<CurveRow>& rows);
std::vector<CurveRow> read_curve_csv(std::istream& in);

std::vector<BaselineRow> baseline_rows(const Baseline& baseline);
void write_baseline_csv(std::ostream& out, const std::vector<BaselineRow>& rows);
std::vector<BaselineRow> read_baseline_csv(std::istream& in);

void write_results(std::ostream& out, const FittedModel& model, const std::string& curves_file,
                   const std::string& baseline_file);

}  // namespace recur
