#pragma once

/**
 * @file linearizer.hpp
 * @brief Linearized multi-delay TCP/AQM model around an equilibrium, its
 *        anomaly-augmented form, and a finite-difference oracle.
 *
 * State ordering: (dx_1, ..., dx_N, db) for the linear model and
 * (dx_1, ..., dx_N, db, d) for the augmented one. Only the rate components
 * are delayed (by their forward delays); db enters undelayed.
 */

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tcpobs/errors.hpp"
#include "tcpobs/fluid_model.hpp"
#include "tcpobs/topology.hpp"

namespace tcpobs {

/// Scalar coefficients a_i, h_i, f_i, e_i of the linearization.
struct LinearCoefficients {
  Eigen::VectorXd a;  ///< own-rate damping
  Eigen::VectorXd h;  ///< queue (RTT) coupling
  Eigen::VectorXd f;  ///< aggregate delayed-inflow coupling (per session)
  Eigen::VectorXd e;  ///< drop-probability gain
};

[[nodiscard]] inline LinearCoefficients linear_coefficients(const Equilibrium& eq, double capacity) {
  const auto n = static_cast<Eigen::Index>(eq.size());
  LinearCoefficients k;
  k.a.resize(n);
  k.h.resize(n);
  k.f.resize(n);
  k.e.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = eq.sources[static_cast<std::size_t>(i)];
    const double tau = s.rtt;
    const double x = s.rate;
    const double p = s.drop_prob;
    k.a[i] = -(1.0 - p) / (x * tau * tau) - x * p / 2.0;
    k.h[i] = -2.0 * (1.0 - p) / (capacity * tau * tau * tau);
    k.f[i] = -x / (tau * capacity);
    k.e[i] = -1.0 / (tau * tau) - x * x / 2.0;
  }
  return k;
}

struct LinearModel {
  Eigen::MatrixXd A;   ///< (N+1)x(N+1), acts on the current state
  Eigen::MatrixXd Ad;  ///< (N+1)x(N+1), acts on (dx_i(t - tau_i^f), db(t))
  Eigen::MatrixXd B;   ///< (N+1)xN, acts on dp_i(t - tau_i^b)
  Eigen::RowVectorXd C;
  std::vector<double> fwd_delays;
  std::vector<double> bwd_delays;
  std::vector<int> sessions;
  LinearCoefficients coeffs;

  [[nodiscard]] std::size_t sources() const { return fwd_delays.size(); }
};

[[nodiscard]] inline LinearModel linearize(const Equilibrium& eq, const ValidatedConfig& vcfg) {
  const auto& cfg = vcfg.config();
  const auto n = static_cast<Eigen::Index>(cfg.size());
  if (static_cast<std::size_t>(n) != eq.size())
    throw ValidationError("equilibrium does not match the configuration");

  LinearModel m;
  m.coeffs = linear_coefficients(eq, cfg.capacity);
  const auto& k = m.coeffs;
  m.A = Eigen::MatrixXd::Zero(n + 1, n + 1);
  m.Ad = Eigen::MatrixXd::Zero(n + 1, n + 1);
  m.B = Eigen::MatrixXd::Zero(n + 1, n);
  m.C = Eigen::RowVectorXd::Zero(n + 1);
  m.C[n] = 1.0;

  for (Eigen::Index i = 0; i < n; ++i) {
    const auto si = static_cast<std::size_t>(i);
    m.A(i, i) = k.a[i];
    m.A(i, n) = k.h[i];
    m.B(i, i) = k.e[i];
    for (Eigen::Index j = 0; j < n; ++j)
      m.Ad(i, j) = k.f[i] * cfg.sources[static_cast<std::size_t>(j)].sessions;
    m.Ad(n, i) = cfg.sources[si].sessions;
    m.fwd_delays.push_back(eq.sources[si].fwd_delay);
    m.bwd_delays.push_back(eq.sources[si].bwd_delay);
    m.sessions.push_back(cfg.sources[si].sessions);
  }
  return m;
}

struct AugmentedModel {
  Eigen::MatrixXd A;                 ///< (N+2)x(N+2)
  Eigen::MatrixXd Ad;                ///< (N+2)x(N+2), sum of Adi
  std::vector<Eigen::MatrixXd> Adi;  ///< column i only, delayed by tau_i^f
  Eigen::MatrixXd B;                 ///< (N+2)xN
  Eigen::RowVectorXd C;
  std::vector<double> fwd_delays;
  std::vector<double> bwd_delays;

  [[nodiscard]] std::size_t sources() const { return Adi.size(); }
  [[nodiscard]] Eigen::Index dim() const { return A.rows(); }
};

/// Observability matrix of (A, C), rows C, CA, ..., CA^(n-1).
[[nodiscard]] inline Eigen::MatrixXd observability_matrix(const Eigen::MatrixXd& A,
                                                          const Eigen::RowVectorXd& C) {
  const auto n = A.rows();
  Eigen::MatrixXd O(n, n);
  Eigen::RowVectorXd row = C;
  for (Eigen::Index k = 0; k < n; ++k) {
    O.row(k) = row;
    row = row * A;
  }
  return O;
}

/**
 * Rank test on the observability matrix with each row normalised first,
 * so that the growth of C A^k with k does not mask a rank drop.
 */
[[nodiscard]] inline bool is_observable(const Eigen::MatrixXd& A, const Eigen::RowVectorXd& C,
                                        double rel_tol = 1e-10) {
  Eigen::MatrixXd O = observability_matrix(A, C);
  for (Eigen::Index k = 0; k < O.rows(); ++k) {
    const double nrm = O.row(k).norm();
    if (nrm == 0.0) return false;
    O.row(k) /= nrm;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(O);
  const auto& s = svd.singularValues();
  return s[s.size() - 1] > rel_tol * s[0];
}

[[nodiscard]] inline AugmentedModel augment(const LinearModel& lin) {
  const auto n = static_cast<Eigen::Index>(lin.sources());
  const Eigen::Index dim = n + 2;

  AugmentedModel aug;
  aug.A = Eigen::MatrixXd::Zero(dim, dim);
  aug.A.topLeftCorner(n + 1, n + 1) = lin.A;
  aug.A(n, n + 1) = 1.0;

  aug.Ad = Eigen::MatrixXd::Zero(dim, dim);
  aug.Ad.topLeftCorner(n + 1, n + 1) = lin.Ad;

  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::MatrixXd Mi = Eigen::MatrixXd::Zero(dim, dim);
    Mi.col(i).head(n + 1) = aug.Ad.col(i).head(n + 1);
    aug.Adi.push_back(std::move(Mi));
  }

  aug.B = Eigen::MatrixXd::Zero(dim, n);
  aug.B.topRows(n + 1) = lin.B;
  aug.C = Eigen::RowVectorXd::Zero(dim);
  aug.C.head(n + 1) = lin.C;
  aug.fwd_delays = lin.fwd_delays;
  aug.bwd_delays = lin.bwd_delays;

  if (!is_observable(aug.A + aug.Ad, aug.C))
    throw ValidationError("augmented model is not observable from the queue length");
  return aug;
}

/// Central-difference Jacobians of the fluid vector field at an equilibrium.
struct FdJacobian {
  Eigen::MatrixXd A;    ///< w.r.t. (x_i(t), b(t))
  Eigen::MatrixXd Ad;   ///< w.r.t. (x_i(t - tau_i^f), b(t)); b column is zero by construction
  Eigen::MatrixXd B;    ///< w.r.t. p_i(t - tau_i^b)
  Eigen::MatrixXd Artt; ///< w.r.t. x_i(t - tau_i0); vanishes at an equilibrium
};

/**
 * Each delayed argument of the vector field is an independent perturbation
 * direction. Perturbation size is h_step * max(|value|, 1).
 */
[[nodiscard]] inline FdJacobian fd_jacobian(const ValidatedConfig& vcfg, const Equilibrium& eq,
                                            double h_step) {
  if (!(h_step > 0.0)) throw ValidationError("finite-difference step must be positive");
  const auto& cfg = vcfg.config();
  const auto n = static_cast<Eigen::Index>(cfg.size());
  const FluidArgs base = FluidArgs::at_equilibrium(eq);

  auto diff = [&](auto&& poke) -> Eigen::VectorXd {
    FluidArgs plus = base;
    FluidArgs minus = base;
    const double delta = poke(plus, minus);
    return (fluid_rhs(cfg, plus) - fluid_rhs(cfg, minus)) / (2.0 * delta);
  };
  auto step_for = [&](double v) { return h_step * std::max(std::abs(v), 1.0); };

  FdJacobian J;
  J.A = Eigen::MatrixXd::Zero(n + 1, n + 1);
  J.Ad = Eigen::MatrixXd::Zero(n + 1, n + 1);
  J.B = Eigen::MatrixXd::Zero(n + 1, n);
  J.Artt = Eigen::MatrixXd::Zero(n + 1, n);

  for (Eigen::Index j = 0; j < n; ++j) {
    J.A.col(j) = diff([&](FluidArgs& p, FluidArgs& m) {
      const double d = step_for(base.rate[j]);
      p.rate[j] += d;
      m.rate[j] -= d;
      return d;
    });
    J.Ad.col(j) = diff([&](FluidArgs& p, FluidArgs& m) {
      const double d = step_for(base.rate_fwd[j]);
      p.rate_fwd[j] += d;
      m.rate_fwd[j] -= d;
      return d;
    });
    J.Artt.col(j) = diff([&](FluidArgs& p, FluidArgs& m) {
      const double d = step_for(base.rate_rtt[j]);
      p.rate_rtt[j] += d;
      m.rate_rtt[j] -= d;
      return d;
    });
    J.B.col(j) = diff([&](FluidArgs& p, FluidArgs& m) {
      const double d = step_for(base.drop_bwd[j]);
      p.drop_bwd[j] += d;
      m.drop_bwd[j] -= d;
      return d;
    });
  }
  J.A.col(n) = diff([&](FluidArgs& p, FluidArgs& m) {
    const double d = step_for(base.queue);
    p.queue += d;
    m.queue -= d;
    return d;
  });
  return J;
}

}  // namespace tcpobs
