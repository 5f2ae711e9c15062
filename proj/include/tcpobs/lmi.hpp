#pragma once

/**
 * @file lmi.hpp
 * @brief Delay-dependent observer synthesis for the anomaly-augmented model.
 *
 * With n = N + 2, the condition is the (2N+1)n square block matrix
 *
 *   [ Xi1 + Xi3   Y          ...  Y          ]
 *   [ Y'          S_1/tf_1^2      0          ]
 *   [ ...                    ...             ]  > 0,
 *   [ Y'          0          ...  S_N/tf_N^2 ]
 *
 *   Xi1 = [ Psi        -P Ad_1 ... -P Ad_N ]     Psi = -PA - A'P + XC + C'X' - sum Q_i
 *         [ -Ad_1'P     Q_1             0  ]     Xi3 = sum_i M_i (2P - S_i) M_i'
 *         [ ...                  ...       ]     Y   = [PA - XC, P Ad_1, ..., P Ad_N]'
 *         [ -Ad_N'P     0             Q_N  ]
 *
 * together with P, Q_i, S_i > 0. M_i = [-I; 0; ...; I (block i); ...; 0]
 * is never formed: Xi3 is added block-wise. A feasible point gives the
 * gain L = P^{-1} X.
 *
 * Strict inequalities are realised as a margin: the certificate is
 * normalised so its largest block eigenvalue is one, and it is accepted
 * when every block's smallest eigenvalue is at least epsilon.
 */

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "tcpobs/errors.hpp"
#include "tcpobs/linearizer.hpp"
#include "tcpobs/sdp.hpp"

namespace tcpobs {

/// Decision variables of the synthesis condition.
struct Certificate {
  Eigen::MatrixXd P;
  std::vector<Eigen::MatrixXd> Q;
  std::vector<Eigen::MatrixXd> S;
  Eigen::VectorXd X;

  [[nodiscard]] Certificate scaled(double a) const {
    Certificate c = *this;
    c.P *= a;
    for (auto& q : c.Q) q *= a;
    for (auto& s : c.S) s *= a;
    c.X *= a;
    return c;
  }
};

/**
 * Shifts the error dynamics so that asymptotic stability of the shifted
 * system means exponential decay at `rate` for the original one:
 * A -> A + rate I and Ad_i -> exp(rate * tf_i) Ad_i.
 */
[[nodiscard]] inline AugmentedModel with_decay_rate(const AugmentedModel& aug, double rate) {
  if (rate == 0.0) return aug;
  AugmentedModel out = aug;
  out.A += rate * Eigen::MatrixXd::Identity(aug.dim(), aug.dim());
  out.Ad.setZero();
  for (std::size_t i = 0; i < out.Adi.size(); ++i) {
    out.Adi[i] *= std::exp(rate * aug.fwd_delays[i]);
    out.Ad += out.Adi[i];
  }
  return out;
}

/// Numeric value of the main condition block for a given certificate.
[[nodiscard]] inline Eigen::MatrixXd condition_block(const AugmentedModel& aug, const Certificate& cert) {
  const auto N = static_cast<Eigen::Index>(aug.sources());
  const Eigen::Index n = aug.dim();
  const Eigen::Index top = (N + 1) * n;
  Eigen::MatrixXd F = Eigen::MatrixXd::Zero((2 * N + 1) * n, (2 * N + 1) * n);

  const Eigen::MatrixXd PA = cert.P * aug.A;
  const Eigen::MatrixXd XC = cert.X * aug.C;
  Eigen::MatrixXd Psi = -PA - PA.transpose() + XC + XC.transpose();
  for (const auto& q : cert.Q) Psi -= q;
  F.block(0, 0, n, n) = Psi;

  const Eigen::MatrixXd Y0 = (PA - XC).transpose();
  for (Eigen::Index i = 0; i < N; ++i) {
    const auto si = static_cast<std::size_t>(i);
    const Eigen::Index bi = (i + 1) * n;
    const Eigen::MatrixXd PAdi = cert.P * aug.Adi[si];

    // Xi1 off-diagonal and diagonal blocks.
    F.block(0, bi, n, n) -= PAdi;
    F.block(bi, 0, n, n) -= PAdi.transpose();
    F.block(bi, bi, n, n) += cert.Q[si];

    // Xi3 contribution of M_i (2P - S_i) M_i'.
    const Eigen::MatrixXd T = 2.0 * cert.P - cert.S[si];
    F.block(0, 0, n, n) += T;
    F.block(0, bi, n, n) -= T;
    F.block(bi, 0, n, n) -= T;
    F.block(bi, bi, n, n) += T;

    // Column of Y blocks and the S_i / tf_i^2 tail.
    const Eigen::Index ti = top + i * n;
    F.block(0, ti, n, n) = Y0;
    for (Eigen::Index j = 0; j < N; ++j)
      F.block((j + 1) * n, ti, n, n) = (cert.P * aug.Adi[static_cast<std::size_t>(j)]).transpose();
    const double tf = aug.fwd_delays[si];
    F.block(ti, ti, n, n) = cert.S[si] / (tf * tf);
  }
  F.bottomLeftCorner(N * n, top) = F.topRightCorner(top, N * n).transpose();
  return F;
}

/// All blocks of the condition: main block, then P, Q_1..Q_N, S_1..S_N.
[[nodiscard]] inline std::vector<Eigen::MatrixXd> condition_blocks(const AugmentedModel& aug,
                                                                   const Certificate& cert) {
  std::vector<Eigen::MatrixXd> out;
  out.push_back(condition_block(aug, cert));
  out.push_back(cert.P);
  for (const auto& q : cert.Q) out.push_back(q);
  for (const auto& s : cert.S) out.push_back(s);
  return out;
}

[[nodiscard]] inline std::vector<std::string> condition_block_names(std::size_t N) {
  std::vector<std::string> names{"LMI", "P"};
  for (std::size_t i = 1; i <= N; ++i) names.push_back("Q" + std::to_string(i));
  for (std::size_t i = 1; i <= N; ++i) names.push_back("S" + std::to_string(i));
  return names;
}

/**
 * The condition as a linear map from a variable vector. The vector holds
 * the upper triangles of P, Q_1..Q_N, S_1..S_N (row-major), followed by X
 * unless the gain is fixed, in which case X = P L.
 */
class LmiProblem {
 public:
  LmiProblem(AugmentedModel aug, std::optional<Eigen::VectorXd> fixed_gain = std::nullopt)
      : aug_(std::move(aug)), fixed_gain_(std::move(fixed_gain)) {
    for (std::size_t i = 0; i < aug_.fwd_delays.size(); ++i)
      if (!(aug_.fwd_delays[i] > 0.0))
        throw ValidationError("zero forward delay for source " + std::to_string(i + 1) +
                              ": the delay-dependent condition needs tau_f > 0");
    if (fixed_gain_ && fixed_gain_->size() != aug_.dim())
      throw ValidationError("gain has wrong dimension");
    if (fixed_gain_ && !fixed_gain_->allFinite()) throw ValidationError("gain is not finite");
    build();
  }

  [[nodiscard]] const AugmentedModel& model() const { return aug_; }
  [[nodiscard]] const sdp::BlockLmi& lmi() const { return lmi_; }
  [[nodiscard]] Eigen::Index dim() const { return aug_.dim(); }
  [[nodiscard]] std::size_t sources() const { return aug_.sources(); }
  [[nodiscard]] std::size_t variables() const { return lmi_.variables(); }
  [[nodiscard]] Eigen::Index block_dim() const {
    return (2 * static_cast<Eigen::Index>(sources()) + 1) * dim();
  }
  [[nodiscard]] const Eigen::VectorXd& normalization() const { return normalization_; }
  [[nodiscard]] bool gain_fixed() const { return fixed_gain_.has_value(); }

  [[nodiscard]] Certificate unpack(const Eigen::VectorXd& v) const {
    const Eigen::Index n = dim();
    const std::size_t N = sources();
    Eigen::Index k = 0;
    auto sym = [&]() {
      Eigen::MatrixXd M(n, n);
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i; j < n; ++j) M(i, j) = M(j, i) = v[k++];
      return M;
    };
    Certificate c;
    c.P = sym();
    for (std::size_t i = 0; i < N; ++i) c.Q.push_back(sym());
    for (std::size_t i = 0; i < N; ++i) c.S.push_back(sym());
    if (fixed_gain_) {
      c.X = c.P * *fixed_gain_;
    } else {
      c.X = v.segment(k, n);
    }
    return c;
  }

  [[nodiscard]] std::vector<Eigen::MatrixXd> evaluate(const Eigen::VectorXd& v) const {
    return condition_blocks(aug_, unpack(v));
  }

  void write_sdpa(std::ostream& os, double margin) const {
    sdp::write_sdpa(os, lmi_, margin,
                    "delay-dependent observer condition, N=" + std::to_string(sources()) +
                        (gain_fixed() ? ", fixed gain" : ", free gain"));
  }

 private:
  void build() {
    const Eigen::Index n = dim();
    const std::size_t N = sources();
    const auto sym_count = static_cast<std::size_t>(n * (n + 1) / 2);
    const std::size_t m = (2 * N + 1) * sym_count + (fixed_gain_ ? 0 : static_cast<std::size_t>(n));

    lmi_.block_sizes.push_back(block_dim());
    for (std::size_t b = 0; b < 2 * N + 1; ++b) lmi_.block_sizes.push_back(n);
    lmi_.block_names = condition_block_names(N);
    for (auto s : lmi_.block_sizes) lmi_.constant.push_back(Eigen::MatrixXd::Zero(s, s));

    normalization_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m));
    Eigen::VectorXd unit = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m));
    for (std::size_t k = 0; k < m; ++k) {
      unit.setZero();
      unit[static_cast<Eigen::Index>(k)] = 1.0;
      const auto blocks = evaluate(unit);
      std::vector<sdp::BlockEntry> col;
      for (std::size_t b = 0; b < blocks.size(); ++b)
        if (!blocks[b].isZero(0.0)) col.push_back({b, blocks[b]});
      lmi_.basis.push_back(std::move(col));
    }
    // Normalisation: trace(P) + sum trace(Q_i) + sum trace(S_i).
    Eigen::Index k = 0;
    for (std::size_t mat = 0; mat < 2 * N + 1; ++mat)
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i; j < n; ++j, ++k)
          if (i == j) normalization_[k] = 1.0;
  }

  AugmentedModel aug_;
  std::optional<Eigen::VectorXd> fixed_gain_;
  sdp::BlockLmi lmi_;
  Eigen::VectorXd normalization_;
};

[[nodiscard]] inline LmiProblem assemble_lmi(const AugmentedModel& aug) { return LmiProblem(aug); }

/// Diagonal similarity T balancing |A| + |Ad| (powers of two, so exact).
[[nodiscard]] inline Eigen::VectorXd balancing_scaling(const AugmentedModel& aug) {
  const Eigen::Index n = aug.dim();
  Eigen::MatrixXd M = aug.A.cwiseAbs() + aug.Ad.cwiseAbs();
  M.diagonal().setZero();
  Eigen::VectorXd t = Eigen::VectorXd::Ones(n);
  for (int sweep = 0; sweep < 50; ++sweep) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      double r = 0.0, c = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        r += M(i, j) * t[i] / t[j];
        c += M(j, i) * t[j] / t[i];
      }
      if (r == 0.0 || c == 0.0) continue;
      // Scale t_i by a power of two moving r and c toward each other.
      const double f = std::exp2(std::round(std::log2(std::sqrt(c / r)) ));
      if (f != 1.0) {
        t[i] *= f;
        changed = true;
      }
    }
    if (!changed) break;
  }
  return t;
}

/// x' = T x with T = diag(t).
[[nodiscard]] inline AugmentedModel scale_states(const AugmentedModel& aug, const Eigen::VectorXd& t) {
  AugmentedModel out = aug;
  const Eigen::VectorXd ti = t.cwiseInverse();
  auto sim = [&](const Eigen::MatrixXd& M) -> Eigen::MatrixXd {
    return t.asDiagonal() * M * ti.asDiagonal();
  };
  out.A = sim(aug.A);
  out.Ad = sim(aug.Ad);
  for (auto& m : out.Adi) m = sim(m);
  out.B = t.asDiagonal() * aug.B;
  out.C = aug.C * ti.asDiagonal();
  return out;
}

enum class Objective { Feasibility, MinTraceP };

struct SynthesisOptions {
  double epsilon = 1e-7;   ///< required normalised margin
  double decay_rate = 0.0; ///< certified exponential decay of the error
  bool scaling = false;    ///< solve in balanced coordinates
  Objective objective = Objective::Feasibility;
  sdp::BarrierOptions barrier{};
};

enum class SynthesisStatus { Feasible, Infeasible, Inconclusive, NumericalFailure };

[[nodiscard]] inline const char* to_string(SynthesisStatus s) {
  switch (s) {
    case SynthesisStatus::Feasible: return "feasible";
    case SynthesisStatus::Infeasible: return "infeasible";
    case SynthesisStatus::Inconclusive: return "inconclusive";
    case SynthesisStatus::NumericalFailure: return "numerical-failure";
  }
  return "?";
}

struct SynthesisResult {
  SynthesisStatus status = SynthesisStatus::NumericalFailure;
  Eigen::VectorXd L;
  Certificate certificate;
  double min_eig_block = 0.0;  ///< smallest eigenvalue of the main block, normalised
  double min_eig_all = 0.0;    ///< smallest eigenvalue over all blocks, normalised
  double margin_upper = 0.0;   ///< upper bound on the best achievable normalised margin
  double epsilon = 0.0;
  double decay_rate = 0.0;
  int newton_steps = 0;
  std::string solver_status;
  std::string message;

  [[nodiscard]] bool feasible() const { return status == SynthesisStatus::Feasible; }
};

namespace detail {

/// Scale a certificate so the largest eigenvalue over all blocks is one.
inline Certificate normalise(const AugmentedModel& aug, const Certificate& c) {
  double top = 0.0;
  for (const auto& b : condition_blocks(aug, c)) top = std::max(top, sdp::max_abs_eigenvalue(b));
  return top > 0.0 ? c.scaled(1.0 / top) : c;
}

inline void fill_margins(const AugmentedModel& aug, SynthesisResult& r) {
  const auto blocks = condition_blocks(aug, r.certificate);
  r.min_eig_block = sdp::min_eigenvalue(blocks.front());
  r.min_eig_all = r.min_eig_block;
  for (const auto& b : blocks) r.min_eig_all = std::min(r.min_eig_all, sdp::min_eigenvalue(b));
}

/// Map a certificate found for T-scaled states back: M = T M' T, X = T X'.
inline Certificate unscale(const Certificate& c, const Eigen::VectorXd& t) {
  Certificate out;
  auto back = [&](const Eigen::MatrixXd& M) -> Eigen::MatrixXd {
    return t.asDiagonal() * M * t.asDiagonal();
  };
  out.P = back(c.P);
  for (const auto& q : c.Q) out.Q.push_back(back(q));
  for (const auto& s : c.S) out.S.push_back(back(s));
  out.X = t.asDiagonal() * c.X;
  return out;
}

inline SynthesisResult solve(const AugmentedModel& aug_in, std::optional<Eigen::VectorXd> gain,
                             const SynthesisOptions& opt) {
  if (!(opt.epsilon > 0.0)) throw ValidationError("epsilon must be positive");
  if (!(opt.decay_rate >= 0.0)) throw ValidationError("decay rate must be non-negative");

  const AugmentedModel shifted = with_decay_rate(aug_in, opt.decay_rate);
  Eigen::VectorXd t = Eigen::VectorXd::Ones(shifted.dim());
  if (opt.scaling) t = balancing_scaling(shifted);
  const AugmentedModel work = opt.scaling ? scale_states(shifted, t) : shifted;
  std::optional<Eigen::VectorXd> work_gain = gain;
  if (gain && opt.scaling) work_gain = t.asDiagonal() * *gain;

  const LmiProblem problem(work, work_gain);
  const auto mr = sdp::maximize_margin(problem.lmi(), problem.normalization(), opt.barrier);

  SynthesisResult r;
  r.epsilon = opt.epsilon;
  r.decay_rate = opt.decay_rate;
  r.newton_steps = mr.newton_steps;
  r.solver_status = sdp::to_string(mr.status);
  r.message = mr.message;

  if (mr.status == sdp::BarrierStatus::NumericalFailure || !mr.z.allFinite()) {
    r.status = SynthesisStatus::NumericalFailure;
    return r;
  }

  Eigen::VectorXd v = mr.z;
  if (opt.objective == Objective::MinTraceP && mr.margin > 0.0) {
    // Minimise trace(P) subject to every block >= I, starting from the
    // margin-maximising point scaled to margin 2.
    sdp::BlockLmi shifted_lmi = problem.lmi();
    for (std::size_t b = 0; b < shifted_lmi.blocks(); ++b)
      shifted_lmi.constant[b] = -Eigen::MatrixXd::Identity(shifted_lmi.block_sizes[b],
                                                           shifted_lmi.block_sizes[b]);
    Eigen::VectorXd c = Eigen::VectorXd::Zero(v.size());
    const Eigen::Index n = problem.dim();
    for (Eigen::Index i = 0, k = 0; i < n; ++i) {
      c[k] = 1.0;
      k += n - i;
    }
    const Eigen::VectorXd start = v * (2.0 / mr.margin);
    const auto tr = sdp::barrier_minimize(shifted_lmi, c, start, std::nullopt,
                                          std::max(c.dot(start), 1.0), opt.barrier);
    if (tr.status != sdp::BarrierStatus::NumericalFailure && tr.z.allFinite()) v = tr.z;
  }

  Certificate cert = problem.unpack(v);
  if (opt.scaling) cert = unscale(cert, t);
  r.certificate = normalise(shifted, cert);
  fill_margins(shifted, r);
  r.margin_upper = mr.margin_upper;

  if (gain) {
    r.L = *gain;
  } else {
    r.L = r.certificate.P.ldlt().solve(r.certificate.X);
  }

  if (r.min_eig_all >= opt.epsilon) {
    r.status = SynthesisStatus::Feasible;
  } else if (mr.margin_upper < 0.0) {
    r.status = SynthesisStatus::Infeasible;
  } else {
    r.status = SynthesisStatus::Inconclusive;
    if (r.message.empty())
      r.message = "best margin " + std::to_string(r.min_eig_all) + " is below epsilon";
  }
  return r;
}

}  // namespace detail

/// Searches for (P, Q_i, S_i, X) and returns L = P^{-1} X on success.
[[nodiscard]] inline SynthesisResult synthesize_gain(const AugmentedModel& aug,
                                                     const SynthesisOptions& opt = {}) {
  return detail::solve(aug, std::nullopt, opt);
}

/**
 * Searches for (P, Q_i, S_i) certifying a given gain (X = P L). A
 * non-feasible outcome is inconclusive: the condition is only sufficient.
 */
[[nodiscard]] inline SynthesisResult verify_gain(const AugmentedModel& aug, const Eigen::VectorXd& L,
                                                 const SynthesisOptions& opt = {}) {
  if (L.size() != aug.dim()) throw ValidationError("gain has wrong dimension");
  if (!L.allFinite()) throw ValidationError("gain is not finite");
  return detail::solve(aug, L, opt);
}

struct CertificateReport {
  bool pass = false;
  double min_eig_block = 0.0;
  double min_eig_P = 0.0;
  std::vector<double> min_eig_Q;
  std::vector<double> min_eig_S;
  double gain_residual = 0.0;  ///< ||P L - X|| / ||X||
  std::string message;
};

/**
 * Recomputes every block from the certificate (with the decay-rate shift
 * recorded in the result) and checks all smallest eigenvalues against
 * epsilon / 2.
 */
[[nodiscard]] inline CertificateReport check_certificate(const AugmentedModel& aug,
                                                         const SynthesisResult& res) {
  CertificateReport rep;
  const auto& c = res.certificate;
  const std::size_t N = aug.sources();
  if (c.P.rows() != aug.dim() || c.Q.size() != N || c.S.size() != N || c.X.size() != aug.dim()) {
    rep.message = "certificate has wrong shape";
    return rep;
  }
  const AugmentedModel shifted = with_decay_rate(aug, res.decay_rate);
  const double floor = res.epsilon / 2.0;

  rep.min_eig_block = sdp::min_eigenvalue(condition_block(shifted, c));
  rep.min_eig_P = sdp::min_eigenvalue(c.P);
  for (const auto& q : c.Q) rep.min_eig_Q.push_back(sdp::min_eigenvalue(q));
  for (const auto& s : c.S) rep.min_eig_S.push_back(sdp::min_eigenvalue(s));
  const double xn = c.X.norm();
  rep.gain_residual = xn > 0.0 ? (c.P * res.L - c.X).norm() / xn : (c.P * res.L - c.X).norm();

  std::vector<std::string> fails;
  if (!(rep.min_eig_P >= floor)) fails.push_back("P not positive definite");
  for (std::size_t i = 0; i < N; ++i) {
    if (!(rep.min_eig_Q[i] >= floor)) fails.push_back("Q" + std::to_string(i + 1) + " not positive definite");
    if (!(rep.min_eig_S[i] >= floor)) fails.push_back("S" + std::to_string(i + 1) + " not positive definite");
  }
  if (!(rep.min_eig_block >= floor)) fails.push_back("condition block not positive definite");
  if (!(rep.gain_residual < 1e-8)) fails.push_back("L does not match P^-1 X");

  rep.pass = fails.empty();
  for (std::size_t i = 0; i < fails.size(); ++i) rep.message += (i ? "; " : "") + fails[i];
  if (rep.pass) rep.message = "ok";
  return rep;
}

}  // namespace tcpobs
