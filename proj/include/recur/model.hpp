#pragma once

// The eight constant/age-varying specifications of (alpha, beta, gamma),
// their fits (global, local, or backfitted mixtures), the Breslow-type
// baseline, the working log-likelihood and AIC.

#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "recur/census.hpp"
#include "recur/local_estimator.hpp"
#include "recur/risk_data.hpp"

namespace recur {

enum class Shape { Constant, Varying };
enum class Target { Cohort, GeneralPopulation };

struct ModelSpec {
  Shape alpha = Shape::Constant;
  Shape beta = Shape::Constant;
  Shape gamma = Shape::Constant;
  Target target = Target::Cohort;

  std::string name() const;
  static ModelSpec parse(std::string_view name, Target target = Target::Cohort);
};

Target parse_target(std::string_view text);
std::string_view to_string(Target t);

// Model columns taken from the length-7 covariate encoding.
struct Design {
  std::vector<int> columns;
  std::vector<char> block;  // 'a' (x), 'b' (z) or 'g' (xz) per column
  std::vector<std::string> names;
  std::optional<Decade> stratum;

  int size() const { return static_cast<int>(columns.size()); }
  // x, z, xz for the given z columns (subset of {1, 2, 3}).
  static Design combined(std::vector<int> z_columns = {1, 2, 3});
  // z only, for one decade.
  static Design stratum_only(Decade d, std::vector<int> z_columns = {1, 2, 3});
  // z only, all decades pooled.
  static Design z_only(std::vector<int> z_columns = {1, 2, 3});
};

class Baseline {
 public:
  Baseline() = default;
  Baseline(std::vector<double> ages, std::vector<double> jumps, double origin);

  // Cumulative baseline at a, zero at the origin.
  double operator()(double a) const;
  const std::vector<double>& ages() const { return ages_; }
  const std::vector<double>& jumps() const { return jumps_; }
  double origin() const { return origin_; }
  // Average increase per time unit over [lo, hi].
  double average_rate(double lo, double hi, double unit_years) const;

 private:
  double raw(double a) const;
  std::vector<double> ages_;
  std::vector<double> jumps_;
  std::vector<double> cumulative_;
  double origin_ = 0.0;
  double offset_ = 0.0;
};

using CoefficientPath = std::function<Eigen::VectorXd(double)>;

// Jumps at every distinct event age: event weight over sum_p W_p(u) exp(theta(u)' X_p).
Baseline breslow(const RiskData& events, const RiskProvider& risk, const CoefficientPath& theta,
                 double origin);
// Poisson working log-likelihood with log jump at each event age.
double log_likelihood(const RiskData& events, const RiskProvider& risk,
                      const CoefficientPath& theta, const Baseline& baseline);

struct FitConfig {
  EstimatorOptions estimator;
  std::vector<double> grid;  // empty: default grid over tau
  double grid_step = 1.0 / 6.0;
  double backfit_tol = 1e-6;
  int backfit_max = 25;
  std::optional<double> baseline_origin;  // defaults to tau_L
};

struct FittedModel {
  ModelSpec spec;
  Design design;
  std::vector<int> constant_index;  // positions within the design
  std::vector<int> varying_index;
  Eigen::VectorXd constant_coefs;
  Eigen::MatrixXd constant_cov;
  Eigen::MatrixXd constant_cov_model;
  std::optional<FitCurve> curve;  // varying columns, jointly
  Baseline baseline;
  AgeRange tau;
  double loglik = 0.0;
  double effective_params = 0.0;
  double aic = 0.0;
  int backfit_iters = 0;
  std::vector<double> backfit_trajectory;
  bool converged = false;
  std::string message;

  // Full design-length coefficients at an age (varying parts clamped to tau).
  Eigen::VectorXd theta_at(double age) const;
  double constant(std::string_view name) const;
  double constant_se(std::string_view name) const;
  double constant_se_model(std::string_view name) const;
};

FittedModel fit_model(const ModelSpec& spec, const Design& design, const RiskData& data,
                      const CensusTable* census, const FitConfig& cfg);

Baseline breslow_baseline(const FittedModel& fit, const RiskData& data, const CensusTable* census,
                          std::optional<double> origin = std::nullopt);
double log_likelihood(const FittedModel& fit, const RiskData& data, const CensusTable* census);
double aic(const FittedModel& fit);

struct StratifiedFit {
  FittedModel early;
  FittedModel late;
};

// Independent per-decade fits of beta and the baseline.
StratifiedFit stratified_fit(const RiskData& early, const RiskData& late, Shape beta,
                             const CensusTable* census, const FitConfig& cfg,
                             std::vector<int> z_columns = {1, 2, 3});
StratifiedFit stratified_fit(const CohortDataset& data, const AugmentationConfig& aug, Shape beta,
                             const CensusTable* census, const FitConfig& cfg);

}  // namespace recur
