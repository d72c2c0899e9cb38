#pragma once

// Estimation input: weighted at-risk segments and event jumps on the age
// axis, with covariates interned into a small set of distinct patterns.
// Every estimating-equation sum reduces to per-pattern at-risk weights at
// each event age, which is what RiskProvider supplies.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "recur/cohort.hpp"

namespace recur {

class RiskProvider {
 public:
  virtual ~RiskProvider() = default;
  // Design vectors, one per pattern.
  virtual const std::vector<Eigen::VectorXd>& patterns() const = 0;
  // Total weight at risk at `age` for each pattern; out.size() == patterns().size().
  virtual void weights_at(double age, std::span<double> out) const = 0;
};

struct RiskSegment {
  double left = 0.0;   // at risk on (left, right]
  double right = 0.0;
  int pattern = 0;
  double weight = 1.0;
  int cluster = 0;
};

struct EventPoint {
  double age = 0.0;
  int pattern = 0;
  double weight = 1.0;
  int cluster = 0;
};

class RiskData : public RiskProvider {
 public:
  RiskData() = default;
  RiskData(int dim, std::vector<Eigen::VectorXd> patterns, std::vector<RiskSegment> segments,
           std::vector<EventPoint> events, int clusters);

  int dim() const { return dim_; }
  int cluster_count() const { return clusters_; }
  const std::vector<Eigen::VectorXd>& patterns() const override { return patterns_; }
  void weights_at(double age, std::span<double> out) const override;
  const std::vector<RiskSegment>& segments() const { return segments_; }
  // Sorted by age.
  const std::vector<EventPoint>& events() const { return events_; }
  double total_event_weight() const;

  double min_left() const;
  double max_right() const;

  // Keeps the given design columns; patterns that coincide are merged.
  RiskData project(std::span<const int> columns) const;

 private:
  struct PatternIndex {
    std::vector<double> lefts, left_prefix;
    std::vector<double> rights, right_prefix;
  };

  int dim_ = 0;
  int clusters_ = 0;
  std::vector<Eigen::VectorXd> patterns_;
  std::vector<RiskSegment> segments_;
  std::vector<EventPoint> events_;
  std::vector<PatternIndex> index_;
  double scale_ = 0.0;
};

class RiskDataBuilder {
 public:
  explicit RiskDataBuilder(int dim);

  int intern(const Eigen::VectorXd& pattern);
  int new_cluster() { return clusters_++; }

  // Unit at risk on `interval` with a fixed covariate pattern. Events outside
  // the interval are dropped (they carry no at-risk indicator).
  void add_unit(int cluster, double weight, CensoringInterval interval, int pattern,
                std::span<const double> event_ages);
  // Covariate switches from `before` to `after` once age exceeds change_age.
  void add_unit(int cluster, double weight, CensoringInterval interval, int before, int after,
                double change_age, std::span<const double> event_ages);

  RiskData build() &&;

 private:
  int dim_;
  int clusters_ = 0;
  std::vector<Eigen::VectorXd> patterns_;
  std::vector<RiskSegment> segments_;
  std::vector<EventPoint> events_;
};

struct AugmentationConfig {
  int k = 100;
  std::uint64_t seed = 1;
};

// Subjects with a birthdate contribute one unit (exact ages); subjects
// without one contribute K pseudo-units of weight 1/K, one per sampled
// birthdate, with event ages recomputed from the visit dates. Covariates use
// the full length-7 encoding; clusters are dataset subject indices.
RiskData build_risk_data(const CohortDataset& data, const AugmentationConfig& aug);

CohortDataset subset(const CohortDataset& data, Decade decade);
CohortDataset strip_birthdates(const CohortDataset& data);

}  // namespace recur
