#pragma once

// Missing-birthdate handling: the conditional birthdate distribution is
// uniform over the dates compatible with every recorded (visit, integer age)
// pair, and at-risk indicators are averaged over draws from it.

#include <cstdint>
#include <span>
#include <vector>

#include "recur/cohort.hpp"

namespace recur {

// (lo, hi] on the day-number axis.
struct DayInterval {
  double lo = 0.0;
  double hi = 0.0;
  double length() const { return hi - lo; }
};

struct BirthdateSupport {
  std::vector<DayInterval> intervals;

  double measure() const;
  bool contains(double day) const;
};

// (W_L - cap, W_R] intersected with (T_j - (A_j + 1)y, T_j - A_j y] over all
// visits. Throws InconsistentRecordError when the intersection is empty.
BirthdateSupport birthdate_support(const SubjectRecord& s, const ExtractionWindow& w,
                                   double age_cap = kAgeCap);

// K i.i.d. uniform draws, length-weighted across intervals. Deterministic in seed.
std::vector<double> sample_birthdates(const BirthdateSupport& support, int k, std::uint64_t seed);

// Fraction of sampled birthdates under which age u lies in the window.
double smoothed_at_risk(const ExtractionWindow& w, std::span<const double> samples, double u,
                        double age_cap = kAgeCap);

}  // namespace recur
