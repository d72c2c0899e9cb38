#include "recur/local_estimator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "recur/error.hpp"

namespace recur {

namespace {

constexpr double kMinRcond = 1e-12;

Eigen::LDLT<Eigen::MatrixXd> factor(const Eigen::MatrixXd& info, double a) {
  Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
  if (ldlt.info() != Eigen::Success || !(ldlt.rcond() > kMinRcond) || !ldlt.isPositive()) {
    throw SingularMatrixError(fmt::format("singular information matrix at age {:.4f}", a));
  }
  return ldlt;
}

Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& m) { return 0.5 * (m + m.transpose()); }

}  // namespace

double kernel_weight(const KernelSpec& spec, double u, double a) {
  const double t = (u - a) / spec.bandwidth;
  if (!(std::abs(t) < 1.0)) return 0.0;
  return 0.75 * (1.0 - t * t) / spec.bandwidth;
}

Moments s_moments(const Eigen::VectorXd& phi, double u, double a, const RiskProvider& risk,
                  int degree) {
  const auto& pats = risk.patterns();
  std::vector<double> w(pats.size());
  risk.weights_at(u, w);
  const auto q = phi.size();
  Moments m{0.0, Eigen::VectorXd::Zero(q), Eigen::MatrixXd::Zero(q, q)};
  Eigen::VectorXd v(q);
  for (std::size_t j = 0; j < pats.size(); ++j) {
    if (w[j] <= 0.0) continue;
    if (pats[j].size() * (degree + 1) != q) throw PreconditionError("phi dimension mismatch");
    kernels::expand(pats[j].transpose(), u - a, degree, v);
    const double r = w[j] * std::exp(phi.dot(v));
    m.s0 += r;
    m.s1 += r * v;
    m.s2 += r * v * v.transpose();
  }
  if (!(m.s0 > 0.0)) {
    throw EmptyRiskSetError(fmt::format("empty risk set at age {:.4f}", u));
  }
  return m;
}

Estimator::Estimator(const RiskData& events, const RiskProvider& risk, EstimatorOptions opts)
    : events_(&events), risk_(&risk), opts_(std::move(opts)) {
  const int dim = events.dim();
  for (const auto& p : risk.patterns()) {
    if (p.size() != dim) throw PreconditionError("event and risk designs differ in dimension");
  }
  if (opts_.degree != 0 && opts_.degree != 1) throw PreconditionError("degree must be 0 or 1");
  if (!(opts_.kernel.bandwidth > 0.0)) throw PreconditionError("bandwidth must be positive");
  if (!(opts_.tau.left < opts_.tau.right)) throw PreconditionError("tau_L must be below tau_R");
  free_ = opts_.free_columns;
  if (free_.empty()) {
    free_.resize(static_cast<std::size_t>(dim));
    std::iota(free_.begin(), free_.end(), 0);
  }
  for (int c : free_) {
    if (c < 0 || c >= dim) throw PreconditionError("free column out of range");
  }
  if (static_cast<int>(free_.size()) < dim && !opts_.fixed) {
    throw PreconditionError("fixed coefficients required when some columns are not free");
  }
}

kernels::Problem Estimator::assemble(std::vector<std::size_t> idx, std::vector<double> kernel,
                                     double center, int degree) const {
  const auto& evs = events_->events();
  const auto& epats = events_->patterns();
  const auto& rpats = risk_->patterns();
  const auto n = static_cast<Eigen::Index>(idx.size());
  const auto npat = static_cast<Eigen::Index>(rpats.size());
  const auto p = static_cast<Eigen::Index>(free_.size());
  const int dim = events_->dim();

  kernels::Problem pb;
  pb.degree = degree;
  pb.center = center;
  pb.risk_design.resize(npat, p);
  for (Eigen::Index j = 0; j < npat; ++j) {
    for (Eigen::Index c = 0; c < p; ++c) pb.risk_design(j, c) = rpats[j][free_[c]];
  }
  std::vector<char> is_free(static_cast<std::size_t>(dim), 0);
  for (int c : free_) is_free[c] = 1;
  const bool offsets = p < dim;

  pb.risk_weight.resize(n, npat);
  if (offsets) pb.offset.resize(n, npat);
  pb.age.resize(n);
  pb.kernel.resize(n);
  pb.weight.resize(n);
  pb.event_design.resize(n, p);
  pb.cluster.resize(idx.size());

  long empty_at = -1;
#pragma omp parallel
  {
    std::vector<double> w(static_cast<std::size_t>(npat));
    Eigen::VectorXd fixed(dim);
#pragma omp for schedule(static)
    for (Eigen::Index e = 0; e < n; ++e) {
      const auto& ev = evs[idx[static_cast<std::size_t>(e)]];
      pb.age[e] = ev.age;
      pb.kernel[e] = kernel[static_cast<std::size_t>(e)];
      pb.weight[e] = ev.weight;
      pb.cluster[static_cast<std::size_t>(e)] = ev.cluster;
      for (Eigen::Index c = 0; c < p; ++c) pb.event_design(e, c) = epats[ev.pattern][free_[c]];
      risk_->weights_at(ev.age, w);
      double total = 0.0;
      for (Eigen::Index j = 0; j < npat; ++j) {
        pb.risk_weight(e, j) = w[static_cast<std::size_t>(j)];
        total += w[static_cast<std::size_t>(j)];
      }
      if (!(total > 0.0)) {
#pragma omp critical
        if (empty_at < 0 || e < empty_at) empty_at = static_cast<long>(e);
      }
      if (offsets) {
        fixed = opts_.fixed(ev.age);
        for (int c = 0; c < dim; ++c) {
          if (is_free[c]) fixed[c] = 0.0;
        }
        for (Eigen::Index j = 0; j < npat; ++j) pb.offset(e, j) = fixed.dot(rpats[j]);
      }
    }
  }
  if (empty_at >= 0) {
    throw EmptyRiskSetError(fmt::format("empty risk set at age {:.4f}", pb.age[empty_at]));
  }
  return pb;
}

kernels::Problem Estimator::local_problem(double a) const {
  const auto& evs = events_->events();
  const double h = opts_.kernel.bandwidth;
  auto lo = std::upper_bound(evs.begin(), evs.end(), a - h,
                             [](double x, const EventPoint& e) { return x < e.age; });
  std::vector<std::size_t> idx;
  std::vector<double> kern;
  for (auto it = lo; it != evs.end() && it->age < a + h; ++it) {
    const double k = kernel_weight(opts_.kernel, it->age, a);
    if (k <= 0.0) continue;
    idx.push_back(static_cast<std::size_t>(it - evs.begin()));
    kern.push_back(k);
  }
  if (idx.empty()) {
    throw EmptyWindowError(fmt::format("no events within one bandwidth of age {:.4f}", a));
  }
  return assemble(std::move(idx), std::move(kern), a, opts_.degree);
}

kernels::Problem Estimator::global_problem() const {
  const auto& evs = events_->events();
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < evs.size(); ++i) {
    if (evs[i].age >= opts_.tau.left && evs[i].age <= opts_.tau.right) idx.push_back(i);
  }
  if (idx.empty()) {
    throw EmptyWindowError(fmt::format("no events within [{}, {}]", opts_.tau.left,
                                       opts_.tau.right));
  }
  std::vector<double> kern(idx.size(), 1.0);
  return assemble(std::move(idx), std::move(kern), 0.0, 0);
}

kernels::Sums Estimator::sums(const kernels::Problem& pb, const Eigen::VectorXd& phi,
                              int kernel_power) const {
  if (phi.size() != pb.q()) throw PreconditionError("phi dimension mismatch");
  return opts_.serial_kernel ? kernels::accumulate_serial(pb, phi, kernel_power)
                             : kernels::accumulate(pb, phi, kernel_power);
}

Eigen::VectorXd Estimator::estimating_function(const Eigen::VectorXd& phi, double a) const {
  return sums(local_problem(a), phi).score;
}

LocalFit Estimator::solve(const kernels::Problem& pb, const Eigen::VectorXd& start) const {
  const int p = pb.p();
  const int q = pb.q();
  LocalFit fit;
  fit.a = pb.center;
  Eigen::VectorXd phi = start.size() == q ? start : Eigen::VectorXd::Zero(q);
  auto s = sums(pb, phi);
  const double tol = opts_.solver.tol;
  int it = 0;
  for (;;) {
    fit.score_norm = s.score.lpNorm<Eigen::Infinity>();
    if (fit.score_norm < tol) {
      fit.converged = true;
      break;
    }
    if (it >= opts_.solver.max_iters) {
      fit.message = fmt::format("no convergence after {} iterations", it);
      break;
    }
    const auto ldlt = factor(s.info, pb.center);
    const Eigen::VectorXd step = ldlt.solve(s.score);
    const double norm = s.score.norm();
    double scale = 1.0;
    bool accepted = false;
    for (int k = 0; k <= opts_.solver.max_halvings; ++k, scale *= 0.5) {
      Eigen::VectorXd cand = phi + scale * step;
      auto cs = sums(pb, cand);
      const double cn = cs.score.norm();
      if (std::isfinite(cn) && (cn < norm || cs.score.lpNorm<Eigen::Infinity>() < tol)) {
        phi = std::move(cand);
        s = std::move(cs);
        accepted = true;
        break;
      }
    }
    ++it;
    if (!accepted) {
      fit.message = "step halving failed to reduce the estimating function";
      break;
    }
  }
  fit.newton_iters = it;
  fit.phi = phi;
  fit.info = s.info;
  fit.theta = phi.head(p);
  if (pb.degree == 1) fit.theta_dot = phi.segment(p, p);
  if (fit.converged) {
    fill_variance(pb, fit);
  } else {
    fit.cov = Eigen::MatrixXd::Constant(p, p, std::numeric_limits<double>::quiet_NaN());
    fit.cov_model = fit.cov;
  }
  return fit;
}

void Estimator::fill_variance(const kernels::Problem& pb, LocalFit& fit) const {
  const int p = pb.p();
  const auto ldlt = factor(fit.info, pb.center);
  const Eigen::MatrixXd inv = ldlt.solve(Eigen::MatrixXd::Identity(pb.q(), pb.q()));
  const Eigen::MatrixXd omega = sums(pb, fit.phi, 2).info;
  const Eigen::MatrixXd sigma = cluster_score_covariance(pb, fit.phi);
  fit.cov_model = symmetrize(inv * omega * inv).topLeftCorner(p, p);
  fit.cov = symmetrize(inv * sigma * inv).topLeftCorner(p, p);
}

Eigen::MatrixXd Estimator::cluster_score_covariance(const kernels::Problem& pb,
                                                    const Eigen::VectorXd& phi) const {
  const Eigen::MatrixXd d = kernels::centered_events(pb, phi);
  std::vector<int> ids = pb.cluster;
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  Eigen::MatrixXd qc = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(ids.size()), pb.q());
  for (Eigen::Index e = 0; e < pb.events(); ++e) {
    const auto row = std::lower_bound(ids.begin(), ids.end(), pb.cluster[e]) - ids.begin();
    qc.row(row) += pb.kernel[e] * pb.weight[e] * d.row(e);
  }
  const double clusters = std::max<double>(events_->cluster_count(), 1.0);
  const Eigen::RowVectorXd mean = qc.colwise().sum() / clusters;
  const Eigen::MatrixXd centered = qc.rowwise() - mean;
  Eigen::MatrixXd sigma = centered.transpose() * centered;
  sigma += (clusters - static_cast<double>(ids.size())) * mean.transpose() * mean;
  return sigma;
}

Eigen::MatrixXd Estimator::sandwich(const kernels::Problem& pb, const Eigen::VectorXd& phi) const {
  const auto info = sums(pb, phi).info;
  const auto ldlt = factor(info, pb.center);
  const Eigen::MatrixXd inv = ldlt.solve(Eigen::MatrixXd::Identity(pb.q(), pb.q()));
  return symmetrize(inv * cluster_score_covariance(pb, phi) * inv);
}

LocalFit Estimator::solve_local(double a) const { return solve_local(a, Eigen::VectorXd()); }

LocalFit Estimator::solve_local(double a, const Eigen::VectorXd& start) const {
  return solve(local_problem(a), start);
}

LocalFit Estimator::solve_global() const { return solve_global(Eigen::VectorXd()); }

LocalFit Estimator::solve_global(const Eigen::VectorXd& start) const {
  auto fit = solve(global_problem(), start);
  fit.global = true;
  return fit;
}

bool FitCurve::all_converged() const {
  return std::all_of(fits.begin(), fits.end(), [](const LocalFit& f) { return f.converged; });
}

std::vector<double> FitCurve::failed_ages() const {
  std::vector<double> out;
  for (const auto& f : fits) {
    if (!f.converged) out.push_back(f.a);
  }
  return out;
}

Eigen::VectorXd FitCurve::theta_at(double age) const {
  const LocalFit* prev = nullptr;
  for (const auto& f : fits) {
    if (!f.converged) continue;
    if (f.a >= age) {
      if (prev == nullptr || f.a == age) return f.theta;
      const double t = (age - prev->a) / (f.a - prev->a);
      return (1.0 - t) * prev->theta + t * f.theta;
    }
    prev = &f;
  }
  if (prev == nullptr) throw PreconditionError("curve has no converged grid ages");
  return prev->theta;
}

std::pair<double, double> FitCurve::band(std::size_t i, int j) const {
  const auto& f = fits.at(i);
  const double se = std::sqrt(std::max(f.cov(j, j), 0.0));
  return {f.theta[j] - 1.96 * se, f.theta[j] + 1.96 * se};
}

std::vector<double> default_grid(AgeRange tau, double step) {
  if (!(step > 0.0)) throw ValidationError("grid step must be positive");
  if (!(tau.left < tau.right)) throw ValidationError("tau_L must be below tau_R");
  const auto n = static_cast<long>(std::floor((tau.right - tau.left) / step + 1e-9));
  std::vector<double> grid;
  for (long i = 0; i <= n; ++i) grid.push_back(tau.left + static_cast<double>(i) * step);
  if (grid.back() < tau.right - 1e-9) grid.push_back(tau.right);
  grid.back() = std::min(grid.back(), tau.right);
  return grid;
}

void validate_grid(const std::vector<double>& grid, AgeRange tau) {
  if (grid.empty()) throw ValidationError("grid is empty");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid[i] < tau.left - 1e-12 || grid[i] > tau.right + 1e-12) {
      throw ValidationError(fmt::format("grid age {} outside [{}, {}]", grid[i], tau.left,
                                        tau.right));
    }
    if (i > 0 && !(grid[i] > grid[i - 1])) {
      throw ValidationError("grid must be strictly increasing");
    }
  }
}

void check_boundary_support(const RiskData& data, AgeRange tau) {
  if (!(data.min_left() < tau.left)) {
    throw ValidationError(fmt::format("no unit is observed before tau_L = {}", tau.left));
  }
  if (!(data.max_right() > tau.right)) {
    throw ValidationError(fmt::format("no unit is observed after tau_R = {}", tau.right));
  }
}

FitCurve fit_curve(const std::vector<double>& grid, const Estimator& est) {
  const auto& opts = est.options();
  validate_grid(grid, opts.tau);
  check_boundary_support(est.events(), opts.tau);
  FitCurve curve;
  curve.grid = grid;
  curve.tau = opts.tau;
  const int p = est.free_dim();
  const double k0 = kernel_weight(opts.kernel, 0.0, 0.0);
  Eigen::VectorXd start;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const double a = grid[g];
    LocalFit fit;
    try {
      const auto pb = est.local_problem(a);
      fit = est.solve(pb, start);
      if (fit.converged) {
        start = fit.phi;
        // Smoother trace contribution from events nearest this grid age.
        const double lo = g > 0 ? 0.5 * (grid[g - 1] + a)
                                : a - (grid.size() > 1 ? 0.5 * (grid[1] - a) : opts.kernel.bandwidth);
        const double hi = g + 1 < grid.size()
                              ? 0.5 * (a + grid[g + 1])
                              : a + (grid.size() > 1 ? 0.5 * (a - grid[g - 1]) : opts.kernel.bandwidth);
        const Eigen::MatrixXd inv =
            factor(fit.info, a).solve(Eigen::MatrixXd::Identity(pb.q(), pb.q()));
        const Eigen::MatrixXd block = inv.topLeftCorner(p, p);
        const Eigen::MatrixXd d = kernels::centered_events(pb, fit.phi);
        for (Eigen::Index e = 0; e < pb.events(); ++e) {
          if (pb.age[e] < lo || pb.age[e] >= hi) continue;
          const Eigen::VectorXd de = d.row(e).head(p).transpose();
          curve.effective_df += k0 * pb.weight[e] * de.dot(block * de);
        }
      }
    } catch (const Error& err) {
      fit = LocalFit{};
      fit.a = a;
      fit.theta = Eigen::VectorXd::Constant(p, std::numeric_limits<double>::quiet_NaN());
      fit.cov = Eigen::MatrixXd::Constant(p, p, std::numeric_limits<double>::quiet_NaN());
      fit.cov_model = fit.cov;
      fit.message = err.what();
    }
    curve.fits.push_back(std::move(fit));
  }
  return curve;
}

namespace {
EstimatorOptions simple_options(const KernelSpec& spec, const SolverConfig& cfg, int degree,
                                AgeRange tau = {}) {
  EstimatorOptions o;
  o.kernel = spec;
  o.solver = cfg;
  o.degree = degree;
  o.tau = tau;
  return o;
}
}  // namespace

Eigen::VectorXd estimating_function(const Eigen::VectorXd& phi, double a, const RiskData& cohort,
                                    const KernelSpec& spec, int degree) {
  const Estimator est(cohort, cohort, simple_options(spec, {}, degree));
  return est.estimating_function(phi, a);
}

LocalFit solve_local(double a, const RiskData& cohort, const KernelSpec& spec,
                     const SolverConfig& cfg, int degree) {
  const Estimator est(cohort, cohort, simple_options(spec, cfg, degree));
  return est.solve_local(a);
}

Eigen::MatrixXd sandwich_variance(const LocalFit& fit, const RiskData& cohort,
                                  const KernelSpec& spec, int degree) {
  if (!fit.converged) throw PreconditionError("sandwich variance requires a converged fit");
  const Estimator est(cohort, cohort, simple_options(spec, {}, degree));
  const auto pb = fit.global ? est.global_problem() : est.local_problem(fit.a);
  const auto p = fit.theta.size();
  return est.sandwich(pb, fit.phi).topLeftCorner(p, p);
}

FitCurve fit_curve(const std::vector<double>& grid, const RiskData& cohort,
                   const KernelSpec& spec, const SolverConfig& cfg, int degree, AgeRange tau) {
  const Estimator est(cohort, cohort, simple_options(spec, cfg, degree, tau));
  return fit_curve(grid, est);
}

}  // namespace recur
