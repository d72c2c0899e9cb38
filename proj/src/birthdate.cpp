#include "recur/birthdate.hpp"

#include <algorithm>
#include <cmath>

#include "recur/error.hpp"
#include "recur/random.hpp"

namespace recur {

double BirthdateSupport::measure() const {
  double total = 0.0;
  for (const auto& iv : intervals) total += std::max(0.0, iv.length());
  return total;
}

bool BirthdateSupport::contains(double day) const {
  return std::any_of(intervals.begin(), intervals.end(),
                     [day](const DayInterval& iv) { return iv.lo < day && day <= iv.hi; });
}

BirthdateSupport birthdate_support(const SubjectRecord& s, const ExtractionWindow& w,
                                   double age_cap) {
  if (s.birthdate) throw PreconditionError("subject '" + s.id + "' already has a birthdate");
  if (s.events.empty()) throw PreconditionError("subject '" + s.id + "' has no recorded visits");
  DayInterval iv{day_number(w.left) - age_cap * kDaysPerYear, day_number(w.right)};
  for (const auto& v : s.events) {
    const double t = day_number(v.date);
    iv.lo = std::max(iv.lo, t - (v.age_years + 1) * kDaysPerYear);
    iv.hi = std::min(iv.hi, t - v.age_years * kDaysPerYear);
  }
  if (!(iv.lo < iv.hi)) {
    throw InconsistentRecordError("subject '" + s.id +
                                  "': recorded visit ages admit no common birthdate");
  }
  return BirthdateSupport{{iv}};
}

std::vector<double> sample_birthdates(const BirthdateSupport& support, int k, std::uint64_t seed) {
  if (k < 1) throw PreconditionError("sample size K must be at least 1");
  const double total = support.measure();
  if (!(total > 0.0)) throw PreconditionError("birthdate support is empty");
  Rng rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    // Position measured from the right end of the union keeps draws in (lo, hi].
    double pos = unif(rng) * total;
    double draw = support.intervals.back().hi;
    for (auto it = support.intervals.rbegin(); it != support.intervals.rend(); ++it) {
      const double len = std::max(0.0, it->length());
      if (pos < len || std::next(it) == support.intervals.rend()) {
        draw = it->hi - std::min(pos, len);
        if (!(draw > it->lo)) draw = it->hi;
        break;
      }
      pos -= len;
    }
    out.push_back(draw);
  }
  return out;
}

double smoothed_at_risk(const ExtractionWindow& w, std::span<const double> samples, double u,
                        double age_cap) {
  if (samples.empty()) throw PreconditionError("smoothed_at_risk needs at least one sample");
  int hits = 0;
  for (double b : samples) hits += at_risk(w, b, u, age_cap);
  return static_cast<double>(hits) / static_cast<double>(samples.size());
}

}  // namespace recur
