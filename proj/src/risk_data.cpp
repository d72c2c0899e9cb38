#include "recur/risk_data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "recur/birthdate.hpp"
#include "recur/error.hpp"
#include "recur/random.hpp"

namespace recur {

RiskData::RiskData(int dim, std::vector<Eigen::VectorXd> patterns,
                   std::vector<RiskSegment> segments, std::vector<EventPoint> events,
                   int clusters)
    : dim_(dim),
      clusters_(clusters),
      patterns_(std::move(patterns)),
      segments_(std::move(segments)),
      events_(std::move(events)) {
  for (const auto& p : patterns_) {
    if (p.size() != dim_) throw PreconditionError("pattern dimension mismatch");
  }
  std::stable_sort(events_.begin(), events_.end(),
                   [](const EventPoint& a, const EventPoint& b) { return a.age < b.age; });
  const auto npat = patterns_.size();
  index_.assign(npat, {});
  std::vector<std::vector<std::pair<double, double>>> lefts(npat), rights(npat);
  for (const auto& s : segments_) {
    if (s.pattern < 0 || static_cast<std::size_t>(s.pattern) >= npat) {
      throw PreconditionError("segment pattern out of range");
    }
    lefts[s.pattern].emplace_back(s.left, s.weight);
    rights[s.pattern].emplace_back(s.right, s.weight);
    scale_ += std::abs(s.weight);
  }
  for (std::size_t p = 0; p < npat; ++p) {
    auto fill = [](std::vector<std::pair<double, double>>& src, std::vector<double>& keys,
                   std::vector<double>& prefix) {
      std::sort(src.begin(), src.end());
      keys.resize(src.size());
      prefix.assign(src.size() + 1, 0.0);
      for (std::size_t i = 0; i < src.size(); ++i) {
        keys[i] = src[i].first;
        prefix[i + 1] = prefix[i] + src[i].second;
      }
    };
    fill(lefts[p], index_[p].lefts, index_[p].left_prefix);
    fill(rights[p], index_[p].rights, index_[p].right_prefix);
  }
}

void RiskData::weights_at(double age, std::span<double> out) const {
  const double snap = 1e-13 * std::max(1.0, scale_);
  for (std::size_t p = 0; p < index_.size(); ++p) {
    const auto& ix = index_[p];
    const auto nl = std::lower_bound(ix.lefts.begin(), ix.lefts.end(), age) - ix.lefts.begin();
    const auto nr = std::lower_bound(ix.rights.begin(), ix.rights.end(), age) - ix.rights.begin();
    const double w = ix.left_prefix[nl] - ix.right_prefix[nr];
    out[p] = w > snap ? w : 0.0;
  }
}

double RiskData::total_event_weight() const {
  double total = 0.0;
  for (const auto& e : events_) total += e.weight;
  return total;
}

double RiskData::min_left() const {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& s : segments_) m = std::min(m, s.left);
  return m;
}

double RiskData::max_right() const {
  double m = -std::numeric_limits<double>::infinity();
  for (const auto& s : segments_) m = std::max(m, s.right);
  return m;
}

RiskData RiskData::project(std::span<const int> columns) const {
  RiskDataBuilder b(static_cast<int>(columns.size()));
  std::vector<int> remap(patterns_.size());
  for (std::size_t p = 0; p < patterns_.size(); ++p) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(columns.size()));
    for (std::size_t c = 0; c < columns.size(); ++c) {
      if (columns[c] < 0 || columns[c] >= dim_) throw PreconditionError("column out of range");
      v[static_cast<Eigen::Index>(c)] = patterns_[p][columns[c]];
    }
    remap[p] = b.intern(v);
  }
  auto segs = segments_;
  for (auto& s : segs) s.pattern = remap[s.pattern];
  auto evs = events_;
  for (auto& e : evs) e.pattern = remap[e.pattern];
  RiskData out = std::move(b).build();
  return RiskData(out.dim_, out.patterns_, std::move(segs), std::move(evs), clusters_);
}

RiskDataBuilder::RiskDataBuilder(int dim) : dim_(dim) {}

int RiskDataBuilder::intern(const Eigen::VectorXd& pattern) {
  if (pattern.size() != dim_) throw PreconditionError("pattern dimension mismatch");
  for (std::size_t i = 0; i < patterns_.size(); ++i) {
    if (patterns_[i] == pattern) return static_cast<int>(i);
  }
  patterns_.push_back(pattern);
  return static_cast<int>(patterns_.size() - 1);
}

void RiskDataBuilder::add_unit(int cluster, double weight, CensoringInterval interval,
                               int pattern, std::span<const double> event_ages) {
  if (interval.empty()) return;
  segments_.push_back({interval.left, interval.right, pattern, weight, cluster});
  for (double age : event_ages) {
    if (interval.contains(age)) events_.push_back({age, pattern, weight, cluster});
  }
}

void RiskDataBuilder::add_unit(int cluster, double weight, CensoringInterval interval,
                               int before, int after, double change_age,
                               std::span<const double> event_ages) {
  if (interval.empty()) return;
  const CensoringInterval first{interval.left, std::min(interval.right, change_age)};
  const CensoringInterval second{std::max(interval.left, change_age), interval.right};
  if (!first.empty()) segments_.push_back({first.left, first.right, before, weight, cluster});
  if (!second.empty()) segments_.push_back({second.left, second.right, after, weight, cluster});
  for (double age : event_ages) {
    if (interval.contains(age)) {
      events_.push_back({age, age <= change_age ? before : after, weight, cluster});
    }
  }
}

RiskData RiskDataBuilder::build() && {
  return RiskData(dim_, std::move(patterns_), std::move(segments_), std::move(events_),
                  clusters_);
}

RiskData build_risk_data(const CohortDataset& data, const AugmentationConfig& aug) {
  const auto& subjects = data.subjects();
  const auto n = static_cast<std::int64_t>(subjects.size());
  // Birthdate draws per subject; seeds depend only on (seed, subject index).
  std::vector<std::vector<double>> draws(subjects.size());
#pragma omp parallel for schedule(dynamic, 64)
  for (std::int64_t i = 0; i < n; ++i) {
    const auto& s = subjects[static_cast<std::size_t>(i)];
    if (s.birthdate) {
      draws[static_cast<std::size_t>(i)] = {day_number(*s.birthdate)};
    } else {
      const auto support = birthdate_support(s, data.window_for(s), data.age_cap());
      draws[static_cast<std::size_t>(i)] =
          sample_birthdates(support, aug.k, derive_seed(aug.seed, {static_cast<std::uint64_t>(i)}));
    }
  }

  RiskDataBuilder b(kCovariateDim);
  std::vector<double> ages;
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    const auto& s = subjects[i];
    const auto& w = data.window_for(s);
    const int pattern = b.intern(encode(s).stacked());
    const int cluster = b.new_cluster();
    const auto& births = draws[i];
    const double weight = 1.0 / static_cast<double>(births.size());
    for (double birth : births) {
      ages.clear();
      for (const auto& v : s.events) ages.push_back(years_between(birth, day_number(v.date)));
      b.add_unit(cluster, weight, observation_interval(w, birth, data.age_cap()), pattern, ages);
    }
  }
  return std::move(b).build();
}

CohortDataset subset(const CohortDataset& data, Decade decade) {
  std::vector<SubjectRecord> keep;
  for (const auto& s : data.subjects()) {
    if (s.decade == decade) keep.push_back(s);
  }
  return CohortDataset(std::move(keep), data.windows(), data.age_cap());
}

CohortDataset strip_birthdates(const CohortDataset& data) {
  auto subjects = data.subjects();
  for (auto& s : subjects) s.birthdate.reset();
  return CohortDataset(std::move(subjects), data.windows(), data.age_cap());
}

}  // namespace recur
