#pragma once

// Pointwise kernel-weighted estimating equations for age-varying
// coefficients, their Newton solution, and sandwich variances.

#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "recur/risk_data.hpp"
#include "recur/score_kernel.hpp"

namespace recur {

// Epanechnikov kernel with bandwidth in years.
struct KernelSpec {
  double bandwidth = 1.0;
};

double kernel_weight(const KernelSpec& spec, double u, double a);

struct SolverConfig {
  double tol = 1e-8;
  int max_iters = 50;
  int max_halvings = 20;
};

struct AgeRange {
  double left = 1.0;
  double right = 17.0;
};

struct EstimatorOptions {
  KernelSpec kernel;
  int degree = 1;
  SolverConfig solver;
  AgeRange tau;
  // Columns estimated; empty means all. Remaining columns enter as offsets
  // fixed(u)' V, where fixed returns a full-length coefficient vector.
  std::vector<int> free_columns;
  std::function<Eigen::VectorXd(double)> fixed;
  bool serial_kernel = false;
};

struct Moments {
  double s0 = 0.0;
  Eigen::VectorXd s1;
  Eigen::MatrixXd s2;
};

// Unscaled moments of the expanded design at event age u for center a.
// Throws EmptyRiskSetError when nobody is at risk.
Moments s_moments(const Eigen::VectorXd& phi, double u, double a, const RiskProvider& risk,
                  int degree = 1);

struct LocalFit {
  double a = 0.0;
  bool global = false;
  Eigen::VectorXd theta;
  Eigen::VectorXd theta_dot;
  Eigen::VectorXd phi;
  Eigen::MatrixXd cov;        // sandwich, theta block
  Eigen::MatrixXd cov_model;  // Pi^-1 Omega Pi^-1, theta block
  Eigen::MatrixXd info;       // Pi at the root, full
  int newton_iters = 0;
  bool converged = false;
  double score_norm = std::numeric_limits<double>::quiet_NaN();
  std::string message;

  Eigen::VectorXd se() const { return cov.diagonal().cwiseMax(0.0).cwiseSqrt(); }
  Eigen::VectorXd se_model() const { return cov_model.diagonal().cwiseMax(0.0).cwiseSqrt(); }
};

// Events come from `events` (cohort, possibly pseudo-units); risk-set
// centering comes from `risk` (the same cohort, or census counts). Both must
// share the design dimension.
class Estimator {
 public:
  Estimator(const RiskData& events, const RiskProvider& risk, EstimatorOptions opts);

  const EstimatorOptions& options() const { return opts_; }
  const RiskData& events() const { return *events_; }
  int free_dim() const { return static_cast<int>(free_.size()); }
  const std::vector<int>& free_columns() const { return free_; }

  kernels::Problem local_problem(double a) const;
  kernels::Problem global_problem() const;

  kernels::Sums sums(const kernels::Problem& pb, const Eigen::VectorXd& phi,
                     int kernel_power = 1) const;
  Eigen::VectorXd estimating_function(const Eigen::VectorXd& phi, double a) const;

  LocalFit solve(const kernels::Problem& pb, const Eigen::VectorXd& start) const;
  LocalFit solve_local(double a) const;
  LocalFit solve_local(double a, const Eigen::VectorXd& start) const;
  LocalFit solve_global() const;
  LocalFit solve_global(const Eigen::VectorXd& start) const;

  // Full (q x q) sandwich Pi^-1 Sigma Pi^-1 and Sigma itself.
  Eigen::MatrixXd sandwich(const kernels::Problem& pb, const Eigen::VectorXd& phi) const;
  Eigen::MatrixXd cluster_score_covariance(const kernels::Problem& pb,
                                           const Eigen::VectorXd& phi) const;

 private:
  kernels::Problem assemble(std::vector<std::size_t> idx, std::vector<double> kernel,
                            double center, int degree) const;
  void fill_variance(const kernels::Problem& pb, LocalFit& fit) const;

  const RiskData* events_;
  const RiskProvider* risk_;
  EstimatorOptions opts_;
  std::vector<int> free_;
};

struct FitCurve {
  std::vector<double> grid;
  std::vector<LocalFit> fits;
  AgeRange tau;
  double effective_df = 0.0;

  bool all_converged() const;
  std::vector<double> failed_ages() const;
  // Linear interpolation between grid ages, clamped outside the grid.
  Eigen::VectorXd theta_at(double age) const;
  // theta +- 1.96 se for coefficient j at grid index i.
  std::pair<double, double> band(std::size_t i, int j) const;
};

std::vector<double> default_grid(AgeRange tau, double step = 1.0 / 6.0);
void validate_grid(const std::vector<double>& grid, AgeRange tau);
// Empirical check that some units are observed below tau_L and above tau_R.
void check_boundary_support(const RiskData& data, AgeRange tau);

FitCurve fit_curve(const std::vector<double>& grid, const Estimator& est);

// Convenience entry points on a single cohort.
Eigen::VectorXd estimating_function(const Eigen::VectorXd& phi, double a, const RiskData& cohort,
                                    const KernelSpec& spec, int degree = 1);
LocalFit solve_local(double a, const RiskData& cohort, const KernelSpec& spec,
                     const SolverConfig& cfg = {}, int degree = 1);
Eigen::MatrixXd sandwich_variance(const LocalFit& fit, const RiskData& cohort,
                                  const KernelSpec& spec, int degree = 1);
FitCurve fit_curve(const std::vector<double>& grid, const RiskData& cohort,
                   const KernelSpec& spec, const SolverConfig& cfg = {}, int degree = 1,
                   AgeRange tau = {});

}  // namespace recur
