#pragma once

/**
 * @file sdp.hpp
 * @brief Dense log-barrier solver for small block-diagonal LMIs.
 *
 * Solves   minimize c'z  subject to  F(z) = F0 + sum_k z_k F_k > 0,
 *          a'z = b  (at most one equality row),
 * from a strictly feasible start, with the classical barrier method:
 * Newton centering of s*c'z - log det F(z), then s <- mu*s. After each
 * centering the optimum is bracketed within (total dimension)/s.
 *
 * Problems in this library have at most a few hundred variables and
 * blocks of a few dozen rows, so everything is dense.
 */

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace tcpobs::sdp {

/// One variable's contribution to one block.
struct BlockEntry {
  std::size_t block = 0;
  Eigen::MatrixXd matrix;
};

/// Affine map z -> blockdiag(F0_b + sum_k z_k F_kb).
struct BlockLmi {
  std::vector<Eigen::Index> block_sizes;
  std::vector<std::string> block_names;
  std::vector<Eigen::MatrixXd> constant;           ///< F0 per block
  std::vector<std::vector<BlockEntry>> basis;      ///< basis[k] = blocks touched by z_k

  [[nodiscard]] std::size_t variables() const { return basis.size(); }
  [[nodiscard]] std::size_t blocks() const { return block_sizes.size(); }
  [[nodiscard]] Eigen::Index total_dim() const {
    Eigen::Index n = 0;
    for (auto s : block_sizes) n += s;
    return n;
  }

  [[nodiscard]] std::vector<Eigen::MatrixXd> evaluate(const Eigen::VectorXd& z) const {
    std::vector<Eigen::MatrixXd> out = constant;
    for (std::size_t k = 0; k < basis.size(); ++k) {
      if (z[static_cast<Eigen::Index>(k)] == 0.0) continue;
      for (const auto& e : basis[k]) out[e.block] += z[static_cast<Eigen::Index>(k)] * e.matrix;
    }
    return out;
  }

  /// Appends a variable that adds `scale * I` to every block.
  void add_identity_variable(double scale) {
    std::vector<BlockEntry> col;
    for (std::size_t b = 0; b < blocks(); ++b)
      col.push_back({b, scale * Eigen::MatrixXd::Identity(block_sizes[b], block_sizes[b])});
    basis.push_back(std::move(col));
  }
};

[[nodiscard]] inline double min_eigenvalue(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues()[0];
}

[[nodiscard]] inline double max_abs_eigenvalue(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  const auto& ev = es.eigenvalues();
  return std::max(std::abs(ev[0]), std::abs(ev[ev.size() - 1]));
}

struct BarrierOptions {
  double mu = 12.0;               ///< barrier parameter growth per outer iteration
  double gap_tol = 1e-11;         ///< stop when dim/s < gap_tol * objective scale
  double newton_tol = 1e-9;       ///< half squared Newton decrement
  int max_newton_per_center = 80;
  int max_outer = 40;
  /// Stop early once the objective's lower bound is above this value.
  std::optional<double> stop_if_lower_bound_above;
  /// Stop early once c'z falls below this value.
  std::optional<double> stop_if_objective_below;
};

enum class BarrierStatus { Converged, EarlyStop, IterationLimit, NumericalFailure };

[[nodiscard]] inline const char* to_string(BarrierStatus s) {
  switch (s) {
    case BarrierStatus::Converged: return "converged";
    case BarrierStatus::EarlyStop: return "early-stop";
    case BarrierStatus::IterationLimit: return "iteration-limit";
    case BarrierStatus::NumericalFailure: return "numerical-failure";
  }
  return "?";
}

struct BarrierResult {
  Eigen::VectorXd z;
  double objective = 0.0;    ///< c'z at the returned point
  double lower_bound = 0.0;  ///< objective - dim/s (valid after a completed centering)
  BarrierStatus status = BarrierStatus::NumericalFailure;
  int newton_steps = 0;
  int outer_iterations = 0;
  std::string message;
};

namespace detail {

/// Cholesky of every block; false if any is not positive definite.
inline bool factor_blocks(const std::vector<Eigen::MatrixXd>& F,
                          std::vector<Eigen::LLT<Eigen::MatrixXd>>& llt) {
  llt.resize(F.size());
  for (std::size_t b = 0; b < F.size(); ++b) {
    llt[b].compute(F[b]);
    if (llt[b].info() != Eigen::Success) return false;
    const auto& L = llt[b].matrixLLT();
    for (Eigen::Index i = 0; i < L.rows(); ++i)
      if (!(L(i, i) > 0.0) || !std::isfinite(L(i, i))) return false;
  }
  return true;
}

inline double log_det(const std::vector<Eigen::LLT<Eigen::MatrixXd>>& llt) {
  double s = 0.0;
  for (const auto& f : llt) {
    const auto& L = f.matrixLLT();
    for (Eigen::Index i = 0; i < L.rows(); ++i) s += 2.0 * std::log(L(i, i));
  }
  return s;
}

}  // namespace detail

/**
 * Barrier method from the strictly feasible point z0. `eq_row`/`eq_rhs`
 * describe an optional single equality constraint; z0 must satisfy it.
 */
[[nodiscard]] inline BarrierResult barrier_minimize(const BlockLmi& lmi, const Eigen::VectorXd& c,
                                                    const Eigen::VectorXd& z0,
                                                    const std::optional<Eigen::VectorXd>& eq_row,
                                                    double objective_scale,
                                                    const BarrierOptions& opt = {}) {
  const auto m = static_cast<Eigen::Index>(lmi.variables());
  const auto nb = lmi.blocks();
  const double dim = static_cast<double>(lmi.total_dim());

  BarrierResult res;
  res.z = z0;
  std::vector<Eigen::LLT<Eigen::MatrixXd>> llt;
  if (!detail::factor_blocks(lmi.evaluate(z0), llt)) {
    res.message = "starting point is not strictly feasible";
    return res;
  }

  const Eigen::Index kkt = eq_row ? m + 1 : m;
  Eigen::VectorXd z = z0;
  // Initial weight balances objective and barrier gradients.
  double s = dim / std::max(objective_scale, 1e-300);

  std::vector<Eigen::MatrixXd> G(nb);
  std::vector<std::vector<std::pair<Eigen::Index, Eigen::MatrixXd>>> W(nb);
  Eigen::MatrixXd H(m, m);
  Eigen::VectorXd grad(m);
  Eigen::MatrixXd K(kkt, kkt);
  Eigen::VectorXd rhs(kkt);

  auto barrier_value = [&](const Eigen::VectorXd& zz, double weight, bool& ok) {
    std::vector<Eigen::LLT<Eigen::MatrixXd>> f;
    ok = detail::factor_blocks(lmi.evaluate(zz), f);
    if (!ok) return std::numeric_limits<double>::infinity();
    return weight * c.dot(zz) - detail::log_det(f);
  };

  for (int outer = 0; outer < opt.max_outer; ++outer) {
    res.outer_iterations = outer + 1;
    for (int it = 0; it < opt.max_newton_per_center; ++it) {
      const auto Fz = lmi.evaluate(z);
      if (!detail::factor_blocks(Fz, llt)) {
        res.status = BarrierStatus::NumericalFailure;
        res.message = "lost strict feasibility";
        res.z = z;
        return res;
      }
      for (std::size_t b = 0; b < nb; ++b) {
        G[b] = llt[b].solve(Eigen::MatrixXd::Identity(lmi.block_sizes[b], lmi.block_sizes[b]));
        W[b].clear();
      }
      grad = s * c;
      for (Eigen::Index k = 0; k < m; ++k) {
        for (const auto& e : lmi.basis[static_cast<std::size_t>(k)]) {
          Eigen::MatrixXd Wk = G[e.block] * e.matrix;
          grad[k] -= Wk.trace();
          W[e.block].emplace_back(k, std::move(Wk));
        }
      }
      H.setZero();
      for (std::size_t b = 0; b < nb; ++b) {
        const auto& list = W[b];
        for (std::size_t p = 0; p < list.size(); ++p) {
          const Eigen::MatrixXd WpT = list[p].second.transpose();
          for (std::size_t q = p; q < list.size(); ++q) {
            const double v = WpT.cwiseProduct(list[q].second).sum();
            H(list[p].first, list[q].first) += v;
            if (q != p) H(list[q].first, list[p].first) += v;
          }
        }
      }

      K.setZero();
      K.topLeftCorner(m, m) = H;
      rhs.head(m) = -grad;
      if (eq_row) {
        K.block(m, 0, 1, m) = eq_row->transpose();
        K.block(0, m, m, 1) = *eq_row;
        rhs[m] = 0.0;
      }
      Eigen::VectorXd sol = K.fullPivLu().solve(rhs);
      Eigen::VectorXd dz = sol.head(m);
      if (!dz.allFinite()) {
        res.status = BarrierStatus::NumericalFailure;
        res.message = "singular Newton system";
        res.z = z;
        return res;
      }
      const double decrement = -grad.dot(dz);
      ++res.newton_steps;
      if (decrement / 2.0 <= opt.newton_tol) break;

      bool ok = false;
      const double f0 = barrier_value(z, s, ok);
      double alpha = 1.0;
      bool accepted = false;
      for (int ls = 0; ls < 60; ++ls) {
        const Eigen::VectorXd trial = z + alpha * dz;
        const double f1 = barrier_value(trial, s, ok);
        if (ok && f1 <= f0 - 0.25 * alpha * decrement) {
          z = trial;
          accepted = true;
          break;
        }
        alpha *= 0.5;
      }
      if (!accepted) break;  // no progress possible at this weight
    }

    res.z = z;
    res.objective = c.dot(z);
    res.lower_bound = res.objective - dim / s;
    if (opt.stop_if_lower_bound_above && res.lower_bound > *opt.stop_if_lower_bound_above) {
      res.status = BarrierStatus::EarlyStop;
      return res;
    }
    if (opt.stop_if_objective_below && res.objective < *opt.stop_if_objective_below) {
      res.status = BarrierStatus::EarlyStop;
      return res;
    }
    if (dim / s < opt.gap_tol * objective_scale) {
      res.status = BarrierStatus::Converged;
      return res;
    }
    s *= opt.mu;
  }
  res.status = BarrierStatus::IterationLimit;
  res.message = "outer iteration limit reached";
  return res;
}

struct MarginResult {
  Eigen::VectorXd z;        ///< decision variables (without the margin variable)
  double margin = 0.0;      ///< achieved min eigenvalue over all blocks, normalised
  double margin_upper = 0.0;///< certified upper bound on the optimal normalised margin
  BarrierStatus status = BarrierStatus::NumericalFailure;
  int newton_steps = 0;
  std::string message;
};

/**
 * For a homogeneous LMI (F0 = 0), maximise t subject to F(z) - t I >= 0
 * and normalisation'z = 1. A positive optimum means the strict LMI is
 * feasible; an upper bound below zero proves it infeasible.
 */
[[nodiscard]] inline MarginResult maximize_margin(const BlockLmi& lmi,
                                                  const Eigen::VectorXd& normalization,
                                                  const BarrierOptions& opt = {}) {
  const auto m = static_cast<Eigen::Index>(lmi.variables());
  BlockLmi ext = lmi;
  ext.add_identity_variable(-1.0);

  Eigen::VectorXd z0 = Eigen::VectorXd::Zero(m + 1);
  z0.head(m) = normalization / normalization.squaredNorm();
  double lam_min = std::numeric_limits<double>::infinity();
  double scale = 0.0;
  for (const auto& F : lmi.evaluate(z0.head(m))) {
    lam_min = std::min(lam_min, min_eigenvalue(F));
    scale = std::max(scale, max_abs_eigenvalue(F));
  }
  scale = std::max(scale, 1e-300);
  z0[m] = lam_min - 0.5 * (std::abs(lam_min) + scale);

  Eigen::VectorXd c = Eigen::VectorXd::Zero(m + 1);
  c[m] = -1.0;
  Eigen::VectorXd row = Eigen::VectorXd::Zero(m + 1);
  row.head(m) = normalization;

  BarrierOptions o = opt;
  // An upper bound below zero settles infeasibility: -t >= -(t_upper).
  o.stop_if_lower_bound_above = 0.0;
  const auto br = barrier_minimize(ext, c, z0, row, scale, o);

  MarginResult out;
  out.z = br.z.head(m);
  out.margin = br.z[m];
  out.margin_upper = -br.lower_bound;
  out.status = br.status;
  out.newton_steps = br.newton_steps;
  out.message = br.message;
  return out;
}

/**
 * SDPA sparse format of  sum_k z_k F_k - F0' >= 0 with a zero objective,
 * where F0' = margin * I - F0. Indices are 1-based, upper triangle only.
 */
inline void write_sdpa(std::ostream& os, const BlockLmi& lmi, double margin,
                       const std::string& comment = {}) {
  os.precision(17);
  if (!comment.empty()) os << "\"" << comment << "\n";
  os << lmi.variables() << " = mDIM\n";
  os << lmi.blocks() << " = nBLOCK\n";
  for (std::size_t b = 0; b < lmi.blocks(); ++b) os << (b ? " " : "") << lmi.block_sizes[b];
  os << " = bLOCKsTRUCT\n";
  for (std::size_t k = 0; k < lmi.variables(); ++k) os << (k ? " " : "") << 0;
  os << "\n";
  auto emit = [&](std::size_t mat, std::size_t blk, const Eigen::MatrixXd& M) {
    for (Eigen::Index i = 0; i < M.rows(); ++i)
      for (Eigen::Index j = i; j < M.cols(); ++j)
        if (M(i, j) != 0.0)
          os << mat << " " << blk + 1 << " " << i + 1 << " " << j + 1 << " " << M(i, j) << "\n";
  };
  for (std::size_t b = 0; b < lmi.blocks(); ++b) {
    Eigen::MatrixXd F0 = margin * Eigen::MatrixXd::Identity(lmi.block_sizes[b], lmi.block_sizes[b]);
    if (b < lmi.constant.size()) F0 -= lmi.constant[b];
    emit(0, b, F0);
  }
  for (std::size_t k = 0; k < lmi.variables(); ++k)
    for (const auto& e : lmi.basis[k]) emit(k + 1, e.block, e.matrix);
}

}  // namespace tcpobs::sdp
