#include "recur/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <memory>

#include <fmt/format.h>

#include "recur/error.hpp"
#include "recur/random.hpp"

namespace recur {

namespace {

char letter(Shape s) { return s == Shape::Constant ? 'C' : 'V'; }

Shape shape_of(const ModelSpec& spec, char block) {
  switch (block) {
    case 'a': return spec.alpha;
    case 'g': return spec.gamma;
    default: return spec.beta;
  }
}

std::unique_ptr<RiskProvider> make_risk(const ModelSpec& spec, const Design& design,
                                        const RiskData& events, const CensusTable* census) {
  if (spec.target == Target::GeneralPopulation) {
    if (census == nullptr) throw PreconditionError("population target requires a census table");
    return std::make_unique<CensusRisk>(*census, design.columns, design.stratum);
  }
  if (census != nullptr) throw PreconditionError("census table given for a cohort-target model");
  return std::make_unique<RiskData>(events);
}

double clamp_age(double u, AgeRange tau) { return std::clamp(u, tau.left, tau.right); }

std::vector<int> index_of(const std::vector<std::string>& names, std::string_view name) {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return {static_cast<int>(i)};
  }
  throw PreconditionError(fmt::format("unknown coefficient '{}'", name));
}

}  // namespace

std::string ModelSpec::name() const {
  return {letter(alpha), letter(beta), letter(gamma)};
}

ModelSpec ModelSpec::parse(std::string_view name, Target target) {
  if (name.size() != 3) throw ValidationError(fmt::format("invalid model '{}'", name));
  std::array<Shape, 3> s{};
  for (std::size_t i = 0; i < 3; ++i) {
    const char c = static_cast<char>(std::toupper(static_cast<unsigned char>(name[i])));
    if (c == 'C') {
      s[i] = Shape::Constant;
    } else if (c == 'V') {
      s[i] = Shape::Varying;
    } else {
      throw ValidationError(fmt::format("invalid model '{}' (expected three of C/V)", name));
    }
  }
  return {s[0], s[1], s[2], target};
}

Target parse_target(std::string_view text) {
  std::string t(text);
  for (auto& c : t) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (t == "cohort") return Target::Cohort;
  if (t == "population" || t == "general-population") return Target::GeneralPopulation;
  throw ValidationError(fmt::format("invalid target '{}'", text));
}

std::string_view to_string(Target t) {
  return t == Target::Cohort ? "cohort" : "population";
}

Design Design::combined(std::vector<int> z_columns) {
  Design d;
  d.columns.push_back(0);
  d.block.push_back('a');
  for (int z : z_columns) {
    if (z < 1 || z > 3) throw PreconditionError("z columns must lie in 1..3");
    d.columns.push_back(z);
    d.block.push_back('b');
  }
  for (int z : z_columns) {
    d.columns.push_back(z + 3);
    d.block.push_back('g');
  }
  for (int c : d.columns) d.names.emplace_back(covariate_name(c));
  return d;
}

Design Design::stratum_only(Decade dec, std::vector<int> z_columns) {
  Design d;
  for (int z : z_columns) {
    if (z < 1 || z > 3) throw PreconditionError("z columns must lie in 1..3");
    d.columns.push_back(z);
    d.block.push_back('b');
    d.names.emplace_back(covariate_name(z));
  }
  d.stratum = dec;
  return d;
}

Design Design::z_only(std::vector<int> z_columns) {
  Design d = stratum_only(Decade::Early, std::move(z_columns));
  d.stratum.reset();
  return d;
}

Baseline::Baseline(std::vector<double> ages, std::vector<double> jumps, double origin)
    : ages_(std::move(ages)), jumps_(std::move(jumps)), origin_(origin) {
  if (ages_.size() != jumps_.size()) throw PreconditionError("baseline size mismatch");
  cumulative_.resize(jumps_.size());
  double c = 0.0;
  for (std::size_t i = 0; i < jumps_.size(); ++i) cumulative_[i] = c += jumps_[i];
  offset_ = raw(origin_);
}

double Baseline::raw(double a) const {
  const auto n = std::upper_bound(ages_.begin(), ages_.end(), a) - ages_.begin();
  return n == 0 ? 0.0 : cumulative_[static_cast<std::size_t>(n - 1)];
}

double Baseline::operator()(double a) const { return raw(a) - offset_; }

double Baseline::average_rate(double lo, double hi, double unit_years) const {
  return ((*this)(hi) - (*this)(lo)) / ((hi - lo) / unit_years);
}

namespace {

struct TieGroup {
  double age;
  std::size_t begin, end;
};

std::vector<TieGroup> tie_groups(const std::vector<EventPoint>& evs) {
  std::vector<TieGroup> groups;
  for (std::size_t i = 0; i < evs.size();) {
    std::size_t j = i;
    while (j < evs.size() && evs[j].age == evs[i].age) ++j;
    groups.push_back({evs[i].age, i, j});
    i = j;
  }
  return groups;
}

double risk_total(const RiskProvider& risk, double u, const Eigen::VectorXd& theta,
                  std::vector<double>& w) {
  risk.weights_at(u, w);
  const auto& pats = risk.patterns();
  double s0 = 0.0;
  for (std::size_t p = 0; p < pats.size(); ++p) {
    if (w[p] > 0.0) s0 += w[p] * std::exp(theta.dot(pats[p]));
  }
  return s0;
}

}  // namespace

Baseline breslow(const RiskData& events, const RiskProvider& risk, const CoefficientPath& theta,
                 double origin) {
  const auto& evs = events.events();
  const auto groups = tie_groups(evs);
  std::vector<double> ages(groups.size()), jumps(groups.size());
  std::vector<double> w(risk.patterns().size());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& grp = groups[g];
    double num = 0.0;
    for (std::size_t i = grp.begin; i < grp.end; ++i) num += evs[i].weight;
    const double den = risk_total(risk, grp.age, theta(grp.age), w);
    if (!(den > 0.0)) {
      throw EmptyRiskSetError(fmt::format("zero baseline denominator at age {:.6f}", grp.age));
    }
    ages[g] = grp.age;
    jumps[g] = num / den;
  }
  return Baseline(std::move(ages), std::move(jumps), origin);
}

double log_likelihood(const RiskData& events, const RiskProvider& risk,
                      const CoefficientPath& theta, const Baseline& baseline) {
  const auto& evs = events.events();
  const auto& epats = events.patterns();
  const auto& ages = baseline.ages();
  std::vector<double> w(risk.patterns().size());
  double ll = 0.0;
  for (const auto& grp : tie_groups(evs)) {
    const auto pos = std::lower_bound(ages.begin(), ages.end(), grp.age) - ages.begin();
    if (static_cast<std::size_t>(pos) >= ages.size() || ages[pos] != grp.age ||
        !(baseline.jumps()[pos] > 0.0)) {
      throw Error(fmt::format("zero baseline jump at observed event age {:.6f}", grp.age));
    }
    const double jump = baseline.jumps()[pos];
    const Eigen::VectorXd th = theta(grp.age);
    for (std::size_t i = grp.begin; i < grp.end; ++i) {
      ll += evs[i].weight * (th.dot(epats[evs[i].pattern]) + std::log(jump));
    }
    ll -= jump * risk_total(risk, grp.age, th, w);
  }
  return ll;
}

Eigen::VectorXd FittedModel::theta_at(double age) const {
  Eigen::VectorXd th = Eigen::VectorXd::Zero(design.size());
  for (std::size_t i = 0; i < constant_index.size(); ++i) th[constant_index[i]] = constant_coefs[i];
  if (curve) {
    const Eigen::VectorXd v = curve->theta_at(clamp_age(age, tau));
    for (std::size_t i = 0; i < varying_index.size(); ++i) th[varying_index[i]] = v[i];
  }
  return th;
}

double FittedModel::constant(std::string_view name) const {
  const int col = index_of(design.names, name)[0];
  const auto it = std::find(constant_index.begin(), constant_index.end(), col);
  if (it == constant_index.end()) throw PreconditionError(fmt::format("'{}' is not constant", name));
  return constant_coefs[it - constant_index.begin()];
}

double FittedModel::constant_se(std::string_view name) const {
  const int col = index_of(design.names, name)[0];
  const auto it = std::find(constant_index.begin(), constant_index.end(), col);
  if (it == constant_index.end()) throw PreconditionError(fmt::format("'{}' is not constant", name));
  const auto k = it - constant_index.begin();
  return std::sqrt(std::max(constant_cov(k, k), 0.0));
}

double FittedModel::constant_se_model(std::string_view name) const {
  const int col = index_of(design.names, name)[0];
  const auto it = std::find(constant_index.begin(), constant_index.end(), col);
  if (it == constant_index.end()) throw PreconditionError(fmt::format("'{}' is not constant", name));
  const auto k = it - constant_index.begin();
  return std::sqrt(std::max(constant_cov_model(k, k), 0.0));
}

FittedModel fit_model(const ModelSpec& spec, const Design& design, const RiskData& data,
                      const CensusTable* census, const FitConfig& cfg) {
  if (data.dim() != kCovariateDim) {
    throw PreconditionError("fit_model expects the full covariate encoding");
  }
  const RiskData events = data.project(design.columns);
  const auto risk = make_risk(spec, design, events, census);

  FittedModel model;
  model.spec = spec;
  model.design = design;
  model.tau = cfg.estimator.tau;
  for (int i = 0; i < design.size(); ++i) {
    (shape_of(spec, design.block[i]) == Shape::Constant ? model.constant_index
                                                        : model.varying_index)
        .push_back(i);
  }
  const auto grid = cfg.grid.empty() ? default_grid(model.tau, cfg.grid_step) : cfg.grid;
  const int dim = design.size();
  const auto& cidx = model.constant_index;
  const auto& vidx = model.varying_index;

  auto finish_constant = [&](const LocalFit& fit) {
    model.constant_coefs = fit.theta;
    model.constant_cov = fit.cov;
    model.constant_cov_model = fit.cov_model;
    if (!fit.converged) {
      model.converged = false;
      model.message = "constant-coefficient solve: " + fit.message;
    }
  };
  auto curve_message = [](const FitCurve& c) {
    std::string msg = "no convergence at ages:";
    for (double a : c.failed_ages()) msg += fmt::format(" {:.4f}", a);
    return msg;
  };

  model.converged = true;
  if (vidx.empty()) {
    const Estimator est(events, *risk, cfg.estimator);
    finish_constant(est.solve_global());
  } else if (cidx.empty()) {
    const Estimator est(events, *risk, cfg.estimator);
    model.curve = fit_curve(grid, est);
    model.constant_coefs.resize(0);
    model.constant_cov.resize(0, 0);
    model.constant_cov_model.resize(0, 0);
    if (!model.curve->all_converged()) {
      model.converged = false;
      model.message = curve_message(*model.curve);
    }
  } else {
    // Start from the all-constant fit, then alternate.
    const Estimator full(events, *risk, cfg.estimator);
    const auto init = full.solve_global();
    if (!init.converged) throw Error("initial constant fit failed: " + init.message);
    Eigen::VectorXd c(static_cast<Eigen::Index>(cidx.size()));
    for (std::size_t i = 0; i < cidx.size(); ++i) c[i] = init.theta[cidx[i]];

    EstimatorOptions local_opts = cfg.estimator;
    local_opts.free_columns = vidx;
    local_opts.fixed = [&c, &cidx, dim](double) {
      Eigen::VectorXd f = Eigen::VectorXd::Zero(dim);
      for (std::size_t i = 0; i < cidx.size(); ++i) f[cidx[i]] = c[i];
      return f;
    };
    FitCurve curve;
    EstimatorOptions global_opts = cfg.estimator;
    global_opts.free_columns = cidx;
    global_opts.fixed = [&curve, &vidx, dim, tau = model.tau](double u) {
      Eigen::VectorXd f = Eigen::VectorXd::Zero(dim);
      const Eigen::VectorXd v = curve.theta_at(clamp_age(u, tau));
      for (std::size_t i = 0; i < vidx.size(); ++i) f[vidx[i]] = v[i];
      return f;
    };
    const Estimator local(events, *risk, local_opts);
    const Estimator global(events, *risk, global_opts);

    bool settled = false;
    LocalFit gfit;
    for (int cycle = 1; cycle <= cfg.backfit_max; ++cycle) {
      FitCurve next = fit_curve(grid, local);
      double change = 0.0;
      if (!curve.fits.empty()) {
        for (std::size_t g = 0; g < next.fits.size(); ++g) {
          if (next.fits[g].converged && curve.fits[g].converged) {
            change = std::max(change,
                              (next.fits[g].theta - curve.fits[g].theta).lpNorm<Eigen::Infinity>());
          }
        }
      } else {
        change = std::numeric_limits<double>::infinity();
      }
      curve = std::move(next);
      if (!curve.all_converged() &&
          std::none_of(curve.fits.begin(), curve.fits.end(),
                       [](const LocalFit& f) { return f.converged; })) {
        throw Error("backfitting: local solve failed at every grid age");
      }
      gfit = global.solve_global(c);
      if (!gfit.converged) throw Error("backfitting: constant solve failed: " + gfit.message);
      change = std::max(change, (gfit.theta - c).lpNorm<Eigen::Infinity>());
      c = gfit.theta;
      model.backfit_iters = cycle;
      model.backfit_trajectory.push_back(change);
      if (change < cfg.backfit_tol) {
        settled = true;
        break;
      }
    }
    finish_constant(gfit);
    model.curve = std::move(curve);
    if (!model.curve->all_converged()) {
      model.converged = false;
      model.message = curve_message(*model.curve);
    }
    if (!settled) {
      model.converged = false;
      model.message += fmt::format("{}backfitting did not settle within {} cycles",
                                   model.message.empty() ? "" : "; ", cfg.backfit_max);
    }
  }

  const bool usable = model.constant_coefs.allFinite() &&
                      (!model.curve || std::any_of(model.curve->fits.begin(), model.curve->fits.end(),
                                                   [](const LocalFit& f) { return f.converged; }));
  const double cdf = static_cast<double>(cidx.size());
  model.effective_params = cdf + (model.curve ? model.curve->effective_df : 0.0);
  if (usable) {
    const CoefficientPath path = [&model](double u) { return model.theta_at(u); };
    model.baseline = breslow(events, *risk, path, cfg.baseline_origin.value_or(model.tau.left));
    model.loglik = log_likelihood(events, *risk, path, model.baseline);
    model.aic = 2.0 * model.effective_params - 2.0 * model.loglik;
  } else {
    model.loglik = model.aic = std::numeric_limits<double>::quiet_NaN();
  }
  return model;
}

Baseline breslow_baseline(const FittedModel& fit, const RiskData& data, const CensusTable* census,
                          std::optional<double> origin) {
  const RiskData events = data.project(fit.design.columns);
  const auto risk = make_risk(fit.spec, fit.design, events, census);
  const CoefficientPath path = [&fit](double u) { return fit.theta_at(u); };
  return breslow(events, *risk, path, origin.value_or(fit.tau.left));
}

double log_likelihood(const FittedModel& fit, const RiskData& data, const CensusTable* census) {
  const RiskData events = data.project(fit.design.columns);
  const auto risk = make_risk(fit.spec, fit.design, events, census);
  const CoefficientPath path = [&fit](double u) { return fit.theta_at(u); };
  return log_likelihood(events, *risk, path, fit.baseline);
}

double aic(const FittedModel& fit) { return 2.0 * fit.effective_params - 2.0 * fit.loglik; }

StratifiedFit stratified_fit(const RiskData& early, const RiskData& late, Shape beta,
                             const CensusTable* census, const FitConfig& cfg,
                             std::vector<int> z_columns) {
  if (early.events().empty()) throw ValidationError("early stratum has no events");
  if (late.events().empty()) throw ValidationError("late stratum has no events");
  ModelSpec spec;
  spec.beta = beta;
  spec.target = census ? Target::GeneralPopulation : Target::Cohort;
  return {fit_model(spec, Design::stratum_only(Decade::Early, z_columns), early, census, cfg),
          fit_model(spec, Design::stratum_only(Decade::Late, z_columns), late, census, cfg)};
}

StratifiedFit stratified_fit(const CohortDataset& data, const AugmentationConfig& aug, Shape beta,
                             const CensusTable* census, const FitConfig& cfg) {
  auto early_aug = aug;
  auto late_aug = aug;
  early_aug.seed = derive_seed(aug.seed, {0});
  late_aug.seed = derive_seed(aug.seed, {1});
  const auto early = subset(data, Decade::Early);
  const auto late = subset(data, Decade::Late);
  if (early.subjects().empty()) throw ValidationError("early stratum is empty");
  if (late.subjects().empty()) throw ValidationError("late stratum is empty");
  return stratified_fit(build_risk_data(early, early_aug), build_risk_data(late, late_aug), beta,
                        census, cfg);
}

}  // namespace recur
