#include "recur/score_kernel.hpp"

#include <cmath>
#include <limits>

namespace recur::kernels {

namespace {

constexpr Eigen::Index kBlock = 64;

struct Workspace {
  Eigen::VectorXd v, s1, mean;
  Eigen::MatrixXd s2;
  explicit Workspace(int q) : v(q), s1(q), mean(q), s2(q, q) {}
};

// Moments at event e, scaled by exp(-max eta). Returns S0 on that scale.
double moments(const Problem& pb, Eigen::Index e, const Eigen::VectorXd& phi, Workspace& ws,
               bool second) {
  const double t = pb.age[e] - pb.center;
  const auto npat = pb.risk_design.rows();
  const bool has_offset = pb.offset.size() > 0;
  double shift = -std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < npat; ++j) {
    if (pb.risk_weight(e, j) <= 0.0) continue;
    expand(pb.risk_design.row(j), t, pb.degree, ws.v);
    double eta = phi.dot(ws.v);
    if (has_offset) eta += pb.offset(e, j);
    shift = std::max(shift, eta);
  }
  double s0 = 0.0;
  ws.s1.setZero();
  if (second) ws.s2.setZero();
  for (Eigen::Index j = 0; j < npat; ++j) {
    const double w = pb.risk_weight(e, j);
    if (w <= 0.0) continue;
    expand(pb.risk_design.row(j), t, pb.degree, ws.v);
    double eta = phi.dot(ws.v);
    if (has_offset) eta += pb.offset(e, j);
    const double r = w * std::exp(eta - shift);
    s0 += r;
    ws.s1.noalias() += r * ws.v;
    if (second) ws.s2.noalias() += r * ws.v * ws.v.transpose();
  }
  return s0;
}

void add_event(const Problem& pb, Eigen::Index e, const Eigen::VectorXd& phi, int kernel_power,
               Workspace& ws, Sums& out) {
  const double s0 = moments(pb, e, phi, ws, true);
  ws.mean = ws.s1 / s0;
  const double k = pb.kernel[e];
  const double kw = k * pb.weight[e];
  const double kpw = (kernel_power == 2 ? k * k : k) * pb.weight[e];
  expand(pb.event_design.row(e), pb.age[e] - pb.center, pb.degree, ws.v);
  out.score.noalias() += kw * (ws.v - ws.mean);
  out.info.noalias() += kpw * (ws.s2 / s0 - ws.mean * ws.mean.transpose());
}

}  // namespace

void expand(const Eigen::Ref<const Eigen::RowVectorXd>& x, double t, int degree,
            Eigen::Ref<Eigen::VectorXd> out) {
  const auto p = x.size();
  out.head(p) = x.transpose();
  if (degree == 1) out.segment(p, p) = t * x.transpose();
}

Sums accumulate(const Problem& pb, const Eigen::VectorXd& phi, int kernel_power) {
  const int q = pb.q();
  const Eigen::Index n = pb.events();
  const Eigen::Index blocks = (n + kBlock - 1) / kBlock;
  std::vector<Sums> partial(static_cast<std::size_t>(blocks));
#pragma omp parallel
  {
    Workspace ws(q);
#pragma omp for schedule(dynamic)
    for (Eigen::Index b = 0; b < blocks; ++b) {
      Sums& s = partial[static_cast<std::size_t>(b)];
      s.score = Eigen::VectorXd::Zero(q);
      s.info = Eigen::MatrixXd::Zero(q, q);
      const Eigen::Index end = std::min(n, (b + 1) * kBlock);
      for (Eigen::Index e = b * kBlock; e < end; ++e) add_event(pb, e, phi, kernel_power, ws, s);
    }
  }
  Sums total{Eigen::VectorXd::Zero(q), Eigen::MatrixXd::Zero(q, q)};
  for (const auto& s : partial) {
    total.score += s.score;
    total.info += s.info;
  }
  return total;
}

Sums accumulate_serial(const Problem& pb, const Eigen::VectorXd& phi, int kernel_power) {
  const int q = pb.q();
  Workspace ws(q);
  Sums total{Eigen::VectorXd::Zero(q), Eigen::MatrixXd::Zero(q, q)};
  for (Eigen::Index e = 0; e < pb.events(); ++e) add_event(pb, e, phi, kernel_power, ws, total);
  return total;
}

Eigen::MatrixXd centered_events(const Problem& pb, const Eigen::VectorXd& phi) {
  const int q = pb.q();
  const Eigen::Index n = pb.events();
  Eigen::MatrixXd out(n, q);
#pragma omp parallel
  {
    Workspace ws(q);
#pragma omp for schedule(dynamic, kBlock)
    for (Eigen::Index e = 0; e < n; ++e) {
      const double s0 = moments(pb, e, phi, ws, false);
      expand(pb.event_design.row(e), pb.age[e] - pb.center, pb.degree, ws.v);
      out.row(e) = (ws.v - ws.s1 / s0).transpose();
    }
  }
  return out;
}

}  // namespace recur::kernels
