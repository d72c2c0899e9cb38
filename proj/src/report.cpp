#include "recur/report.hpp"

#include <cmath>
#include <ostream>

#include <fmt/format.h>

#include "recur/csv.hpp"
#include "recur/error.hpp"

namespace recur {

namespace {
std::string num(double v) { return fmt::format("{:.10g}", v); }
}  // namespace

std::vector<CurveRow> curve_rows(const FittedModel& model) {
  std::vector<CurveRow> rows;
  if (!model.curve) return rows;
  const auto& c = *model.curve;
  for (std::size_t g = 0; g < c.fits.size(); ++g) {
    const auto& f = c.fits[g];
    for (std::size_t j = 0; j < model.varying_index.size(); ++j) {
      CurveRow r;
      r.age = f.a;
      r.coef_name = model.design.names[model.varying_index[j]];
      r.estimate = f.theta[static_cast<Eigen::Index>(j)];
      r.stderr_ = std::sqrt(std::max(f.cov(j, j), 0.0));
      r.ci_lo = r.estimate - 1.96 * r.stderr_;
      r.ci_hi = r.estimate + 1.96 * r.stderr_;
      r.converged = f.converged;
      rows.push_back(std::move(r));
    }
  }
  return rows;
}

void write_curve_csv(std::ostream& out, const std::vector<CurveRow>& rows) {
  out << "age,coef_name,estimate,stderr,ci_lo,ci_hi,converged\n";
  for (const auto& r : rows) {
    out << num(r.age) << ',' << r.coef_name << ',' << num(r.estimate) << ',' << num(r.stderr_)
        << ',' << num(r.ci_lo) << ',' << num(r.ci_hi) << ',' << (r.converged ? 1 : 0) << '\n';
  }
}

std::vector<CurveRow> read_curve_csv(std::istream& in) {
  csv::Reader reader(in);
  reader.require_columns({"age", "coef_name", "estimate", "stderr", "ci_lo", "ci_hi", "converged"});
  std::vector<CurveRow> rows;
  while (reader.next()) {
    const auto n = reader.row_number();
    CurveRow r;
    r.age = csv::parse_double(reader.field("age"), n, "age");
    r.coef_name = reader.field("coef_name");
    r.estimate = csv::parse_double(reader.field("estimate"), n, "estimate");
    r.stderr_ = csv::parse_double(reader.field("stderr"), n, "stderr");
    r.ci_lo = csv::parse_double(reader.field("ci_lo"), n, "ci_lo");
    r.ci_hi = csv::parse_double(reader.field("ci_hi"), n, "ci_hi");
    r.converged = csv::parse_long(reader.field("converged"), n, "converged") != 0;
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<BaselineRow> baseline_rows(const Baseline& baseline) {
  std::vector<BaselineRow> rows;
  for (std::size_t i = 0; i < baseline.ages().size(); ++i) {
    const double a = baseline.ages()[i];
    rows.push_back({a, baseline.jumps()[i], baseline(a)});
  }
  return rows;
}

void write_baseline_csv(std::ostream& out, const std::vector<BaselineRow>& rows) {
  out << "age,jump,cumulative\n";
  for (const auto& r : rows) out << num(r.age) << ',' << num(r.jump) << ',' << num(r.cumulative) << '\n';
}

std::vector<BaselineRow> read_baseline_csv(std::istream& in) {
  csv::Reader reader(in);
  reader.require_columns({"age", "jump", "cumulative"});
  std::vector<BaselineRow> rows;
  while (reader.next()) {
    const auto n = reader.row_number();
    rows.push_back({csv::parse_double(reader.field("age"), n, "age"),
                    csv::parse_double(reader.field("jump"), n, "jump"),
                    csv::parse_double(reader.field("cumulative"), n, "cumulative")});
  }
  return rows;
}

void write_results(std::ostream& out, const FittedModel& m, const std::string& curves_file,
                   const std::string& baseline_file) {
  out << "model " << m.spec.name() << '\n';
  out << "target " << to_string(m.spec.target) << '\n';
  if (m.design.stratum) out << "stratum " << to_string(*m.design.stratum) << '\n';
  out << "tau " << num(m.tau.left) << ' ' << num(m.tau.right) << '\n';
  out << "converged " << (m.converged ? "yes" : "no") << '\n';
  if (!m.message.empty()) out << "message " << m.message << '\n';
  out << "backfit_iters " << m.backfit_iters << '\n';
  if (!m.backfit_trajectory.empty()) {
    out << "backfit_trajectory";
    for (double c : m.backfit_trajectory) out << ' ' << fmt::format("{:.3e}", c);
    out << '\n';
  }
  out << "\nconstant coefficients\n";
  out << fmt::format("{:<16}{:>14}{:>14}{:>14}\n", "name", "estimate", "se", "se_model");
  for (std::size_t i = 0; i < m.constant_index.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    out << fmt::format("{:<16}{:>14.6f}{:>14.6f}{:>14.6f}\n", m.design.names[m.constant_index[i]],
                       m.constant_coefs[k], std::sqrt(std::max(m.constant_cov(k, k), 0.0)),
                       std::sqrt(std::max(m.constant_cov_model(k, k), 0.0)));
  }
  if (m.curve) {
    out << "\nvarying coefficients";
    for (int j : m.varying_index) out << ' ' << m.design.names[j];
    out << "\ncurves " << curves_file << '\n';
    out << "grid_points " << m.curve->grid.size() << '\n';
    const auto failed = m.curve->failed_ages();
    out << "failed_ages";
    for (double a : failed) out << ' ' << num(a);
    out << '\n';
  }
  out << "\nbaseline " << baseline_file << '\n';
  out << "baseline_origin " << num(m.baseline.origin()) << '\n';
  out << "loglik " << fmt::format("{:.6f}", m.loglik) << '\n';
  out << "effective_params " << fmt::format("{:.6f}", m.effective_params) << '\n';
  out << "aic " << fmt::format("{:.6f}", m.aic) << '\n';
}

}  // namespace recur
