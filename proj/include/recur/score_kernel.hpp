#pragma once

// Inner loop of every fit: per-event risk-set moments S0, S1, S2 and the
// kernel-weighted score / information sums. Two implementations with the
// same contract: an OpenMP version reducing fixed event blocks in order
// (deterministic for any thread count) and a plain serial reference.

#include <vector>

#include <Eigen/Dense>

namespace recur::kernels {

struct Problem {
  int degree = 1;                  // 0 local constant, 1 local linear
  double center = 0.0;             // a
  Eigen::MatrixXd risk_design;     // P x p, free columns of each risk pattern
  Eigen::MatrixXd risk_weight;     // E x P, weight at risk at each event age
  Eigen::MatrixXd offset;          // E x P or empty
  Eigen::VectorXd age;             // E
  Eigen::VectorXd kernel;          // E
  Eigen::VectorXd weight;          // E
  Eigen::MatrixXd event_design;    // E x p
  std::vector<int> cluster;        // E

  int p() const { return static_cast<int>(risk_design.cols()); }
  int q() const { return p() * (degree + 1); }
  Eigen::Index events() const { return age.size(); }
};

struct Sums {
  Eigen::VectorXd score;   // sum k w (V* - S1/S0)
  Eigen::MatrixXd info;    // sum k^power w (S2/S0 - (S1/S0)(S1/S0)')
};

// kernel_power 1 gives (U, Pi); 2 gives the middle matrix of the
// model-based variance in `info`.
Sums accumulate(const Problem& pb, const Eigen::VectorXd& phi, int kernel_power = 1);
Sums accumulate_serial(const Problem& pb, const Eigen::VectorXd& phi, int kernel_power = 1);

// Rows are V*_e - S1/S0 at each event (unweighted).
Eigen::MatrixXd centered_events(const Problem& pb, const Eigen::VectorXd& phi);

// Expanded design V*(u, a) for one pattern row.
void expand(const Eigen::Ref<const Eigen::RowVectorXd>& x, double t, int degree,
            Eigen::Ref<Eigen::VectorXd> out);

}  // namespace recur::kernels
