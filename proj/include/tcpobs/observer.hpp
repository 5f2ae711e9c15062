#pragma once

// Observer runtime: the augmented Luenberger observer run against queue
// measurements, plant/observer co-simulation, error dynamics, dwell-time
// anomaly alarms and estimation-error metrics.
//
// Observer state: (dx_1, ..., dx_N, db, d), deviations from equilibrium.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tcpobs/dde.hpp"
#include "tcpobs/errors.hpp"
#include "tcpobs/linearizer.hpp"
#include "tcpobs/plant.hpp"
#include "tcpobs/topology.hpp"

namespace tcpobs {

namespace detail {

inline std::vector<double> observer_delays(const AugmentedModel& aug) {
  std::vector<double> out;
  for (double d : aug.fwd_delays)
    if (d > 0.0) out.push_back(d);
  return out;
}

/**
 * dz = A z + sum_i Adi z_i(t - tau_i^f) + B u + L (y - C z) for the block
 * z = state.segment(off, N+2); delayed components read from `past` at the
 * same offset.
 */
inline void observer_field(const AugmentedModel& aug, const Eigen::VectorXd& L, double t,
                           const Eigen::VectorXd& state, Eigen::Index off, const GridSeries& past,
                           const Eigen::VectorXd& u, double y, Eigen::VectorXd& dx) {
  const Eigen::Index m = aug.dim();
  const auto n = static_cast<Eigen::Index>(aug.sources());
  const auto z = state.segment(off, m);
  Eigen::VectorXd zd = Eigen::VectorXd::Zero(m);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto c = static_cast<std::size_t>(off + i);
    zd[i] = delayed(past, c, t, aug.fwd_delays[static_cast<std::size_t>(i)], z[i]);
  }
  dx.segment(off, m) = aug.A * z + aug.Ad * zd + aug.B * u + L * (y - aug.C.dot(z));
}

inline void check_gain(const AugmentedModel& aug, const Eigen::VectorXd& L) {
  if (L.size() != aug.dim()) throw ValidationError("gain has wrong dimension");
  if (!L.allFinite()) throw ValidationError("gain is not finite");
}

}  // namespace detail

/// Queue measurement options.
struct Measurement {
  bool quantize = false;  ///< round b to whole packets before use
};

/**
 * Standalone observer over sampled inputs. `y` holds db(t_k) (1 column),
 * `u` holds dp_i(t_k) on the same grid; the observer reads u_i at
 * t - tau_i^b and interpolates y between samples.
 */
[[nodiscard]] inline GridSeries run_observer(const AugmentedModel& aug, const Eigen::VectorXd& L,
                                             const GridSeries& y, const GridSeries& u,
                                             double horizon, double h,
                                             const Eigen::VectorXd& xhat0 = {}) {
  detail::check_gain(aug, L);
  const Eigen::Index m = aug.dim();
  const auto n = static_cast<Eigen::Index>(aug.sources());
  const std::size_t steps = step_count(horizon, h);
  auto same = [h](const GridSeries& s) { return std::abs(s.step() - h) <= 1e-12 * h; };
  if (!same(y) || !same(u) || y.dim() != 1 || u.dim() != static_cast<std::size_t>(n))
    throw ValidationError("measurement series do not match the integration grid");
  if (y.samples() < steps + 1 || u.samples() < steps + 1)
    throw ValidationError("measurement series shorter than the horizon");
  const Eigen::VectorXd z0 = xhat0.size() ? xhat0 : Eigen::VectorXd::Zero(m);
  if (z0.size() != m) throw ValidationError("initial estimate has wrong dimension");

  DelaySystem sys;
  sys.dimension = static_cast<std::size_t>(m);
  sys.delays = detail::observer_delays(aug);
  sys.history = [z0](std::size_t c, double) { return z0[static_cast<Eigen::Index>(c)]; };
  Eigen::VectorXd uu(n);
  sys.rhs = [&](double t, const Eigen::VectorXd& x, const GridSeries& past, Eigen::VectorXd& dx) {
    for (Eigen::Index i = 0; i < n; ++i)
      uu[i] = u.at(static_cast<std::size_t>(i), t - aug.bwd_delays[static_cast<std::size_t>(i)]);
    detail::observer_field(aug, L, t, x, 0, past, uu, y.at(0, t), dx);
  };
  return integrate(std::move(sys), horizon, h);
}

/// Plant truth, estimates and drop probabilities on one grid.
struct CombinedTrace {
  GridSeries joint;             ///< (x_1..x_N, b, dx^_1..dx^_N, db^, d^)
  GridSeries drop;              ///< p_i
  std::vector<double> anomaly;  ///< true d(t_k)
  std::size_t sources = 0;

  [[nodiscard]] std::size_t samples() const { return joint.samples(); }
  [[nodiscard]] double time(std::size_t k) const { return joint.time(k); }
  [[nodiscard]] double rate(std::size_t k, std::size_t i) const { return joint(k, i); }
  [[nodiscard]] double queue(std::size_t k) const { return joint(k, sources); }
  [[nodiscard]] double rate_dev_hat(std::size_t k, std::size_t i) const {
    return joint(k, sources + 1 + i);
  }
  [[nodiscard]] double queue_dev_hat(std::size_t k) const { return joint(k, 2 * sources + 1); }
  [[nodiscard]] double anomaly_hat(std::size_t k) const { return joint(k, 2 * sources + 2); }
  [[nodiscard]] std::vector<double> anomaly_hat_series() const {
    return joint.component(2 * sources + 2);
  }
};

struct ClosedLoopOptions {
  PlantInitial initial;
  Eigen::VectorXd xhat0;  ///< initial estimate, empty means zero
  Measurement measurement;
};

/**
 * Plant and observer integrated as one delay system, so the observer sees
 * the plant queue at every Runge-Kutta stage. The AQM runs after each step
 * and its output is read by both (delayed by tau_i^b).
 */
[[nodiscard]] inline CombinedTrace closed_loop(const ValidatedConfig& vcfg, const Equilibrium& eq,
                                               const AugmentedModel& aug, const AqmPolicy& aqm,
                                               const Eigen::VectorXd& L, double horizon, double h,
                                               const ClosedLoopOptions& opt = {}) {
  detail::check_gain(aug, L);
  const NetworkConfig& cfg = vcfg.config();
  const auto n = static_cast<Eigen::Index>(eq.size());
  const Eigen::Index m = aug.dim();
  if (aug.sources() != eq.size()) throw ValidationError("model does not match the equilibrium");
  const Eigen::Index off = n + 1;

  Eigen::VectorXd s0(off + m);
  s0.head(off) = detail::plant_start(cfg, eq, opt.initial);
  if (opt.xhat0.size() != 0 && opt.xhat0.size() != m)
    throw ValidationError("initial estimate has wrong dimension");
  s0.tail(m) = opt.xhat0.size() ? opt.xhat0 : Eigen::VectorXd::Zero(m);

  DropSignal drop(eq, h);
  AqmState aq;
  drop.emit(aqm_step(aqm, drop.p0(), s0[n] - eq.queue, aq, 0.0));

  auto measure = [&](double b) {
    return (opt.measurement.quantize ? std::round(b) : b) - eq.queue;
  };

  DelaySystem sys;
  sys.dimension = static_cast<std::size_t>(off + m);
  sys.delays = detail::plant_delays(eq);
  sys.history = [s0](std::size_t c, double) { return s0[static_cast<Eigen::Index>(c)]; };
  sys.project = [&cfg, n](Eigen::VectorXd& x) { detail::project_plant(cfg, n, x); };
  Eigen::VectorXd u(n);
  sys.rhs = [&](double t, const Eigen::VectorXd& x, const GridSeries& past, Eigen::VectorXd& dx) {
    detail::plant_field(cfg, eq, t, x, past, drop.series(), dx);
    for (Eigen::Index i = 0; i < n; ++i)
      u[i] = drop.series().at(static_cast<std::size_t>(i),
                              t - eq.sources[static_cast<std::size_t>(i)].bwd_delay) -
             drop.p0();
    detail::observer_field(aug, L, t, x, off, past, u, measure(x[n]), dx);
  };

  DdeStepper stepper(std::move(sys), h);
  const std::size_t steps = step_count(horizon, h);
  std::vector<double> anomaly{cfg.anomaly(0.0)};
  anomaly.reserve(steps + 1);
  for (std::size_t k = 0; k < steps; ++k) {
    stepper.step();
    drop.emit(aqm_step(aqm, drop.p0(), stepper.state()[n] - eq.queue, aq, h));
    anomaly.push_back(cfg.anomaly(stepper.time()));
  }
  return {std::move(stepper).take_trace(), std::move(drop).take(), std::move(anomaly),
          static_cast<std::size_t>(n)};
}

/**
 * Linearized augmented plant z and observer z^ integrated jointly.
 * `u(t)` supplies the already delayed drop deviations dp_i(t - tau_i^b).
 * Returns (z, z^) stacked; z carries d as a constant state.
 */
[[nodiscard]] inline GridSeries linear_closed_loop(
    const AugmentedModel& aug, const Eigen::VectorXd& L,
    const std::function<Eigen::VectorXd(double)>& u, const Eigen::VectorXd& z0,
    const Eigen::VectorXd& zhat0, double horizon, double h) {
  detail::check_gain(aug, L);
  const Eigen::Index m = aug.dim();
  if (z0.size() != m || zhat0.size() != m) throw ValidationError("initial state has wrong dimension");
  Eigen::VectorXd s0(2 * m);
  s0 << z0, zhat0;

  DelaySystem sys;
  sys.dimension = static_cast<std::size_t>(2 * m);
  sys.delays = detail::observer_delays(aug);
  sys.history = [s0](std::size_t c, double) { return s0[static_cast<Eigen::Index>(c)]; };
  sys.rhs = [&](double t, const Eigen::VectorXd& x, const GridSeries& past, Eigen::VectorXd& dx) {
    const Eigen::VectorXd ut = u(t);
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(m);
    // plant: the observer field with zero gain
    detail::observer_field(aug, zero, t, x, 0, past, ut, 0.0, dx);
    detail::observer_field(aug, L, t, x, m, past, ut, aug.C.dot(x.head(m)), dx);
  };
  return integrate(std::move(sys), horizon, h);
}

/// e' = (A - L C) e + sum_i Adi e_i(t - tau_i^f), constant initial history e0.
[[nodiscard]] inline GridSeries simulate_error(const AugmentedModel& aug, const Eigen::VectorXd& L,
                                               const Eigen::VectorXd& e0, double horizon,
                                               double h) {
  detail::check_gain(aug, L);
  const Eigen::Index m = aug.dim();
  if (e0.size() != m) throw ValidationError("initial error has wrong dimension");
  DelaySystem sys;
  sys.dimension = static_cast<std::size_t>(m);
  sys.delays = detail::observer_delays(aug);
  sys.history = [e0](std::size_t c, double) { return e0[static_cast<Eigen::Index>(c)]; };
  const Eigen::VectorXd u = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(aug.sources()));
  sys.rhs = [&](double t, const Eigen::VectorXd& x, const GridSeries& past, Eigen::VectorXd& dx) {
    detail::observer_field(aug, L, t, x, 0, past, u, 0.0, dx);
  };
  return integrate(std::move(sys), horizon, h);
}

// ---------------------------------------------------------------- alarms

struct AlarmInterval {
  double onset = 0.0;  ///< start of the confirming excursion above threshold
  double clear = 0.0;  ///< start of the confirming quiet period
  double mean_estimate = 0.0;
  bool open = false;   ///< still active at the end of the series
};

struct AlarmReport {
  std::vector<AlarmInterval> intervals;
  double threshold = 0.0;
  double hold = 0.0;
};

/**
 * Dwell-time rule on |d^|: an alarm opens once |d^| > threshold has held for
 * `hold` seconds and closes once |d^| <= threshold has held for `hold`.
 * Reported onset/clear are the threshold crossings that started the
 * confirming runs, not the confirmation instants (which are `hold` later).
 */
[[nodiscard]] inline AlarmReport detect_anomalies(const std::vector<double>& dhat, double step,
                                                  double threshold, double hold) {
  if (!(threshold > 0.0)) throw ValidationError("threshold must be positive");
  if (!(hold >= 0.0)) throw ValidationError("hold must be non-negative");
  if (!(step > 0.0)) throw ValidationError("step must be positive");
  AlarmReport rep;
  rep.threshold = threshold;
  rep.hold = hold;
  const double slack = 1e-9 * step;

  bool active = false;
  std::size_t run_start = 0;  // first sample of the current run on the other side
  bool in_run = false;
  std::size_t onset_k = 0;

  auto close = [&](std::size_t end_k, bool open) {
    AlarmInterval iv;
    iv.onset = static_cast<double>(onset_k) * step;
    iv.clear = static_cast<double>(end_k) * step;
    iv.open = open;
    double sum = 0.0;
    std::size_t cnt = 0;
    for (std::size_t k = onset_k; k < std::max(end_k, onset_k + 1) && k < dhat.size(); ++k) {
      sum += dhat[k];
      ++cnt;
    }
    iv.mean_estimate = cnt ? sum / static_cast<double>(cnt) : 0.0;
    rep.intervals.push_back(iv);
  };

  for (std::size_t k = 0; k < dhat.size(); ++k) {
    const bool above = std::abs(dhat[k]) > threshold;
    if (above != active) {
      if (!in_run) {
        in_run = true;
        run_start = k;
      }
      if (static_cast<double>(k - run_start) * step + slack >= hold) {
        if (!active) {
          onset_k = run_start;
        } else {
          close(run_start, false);
        }
        active = !active;
        in_run = false;
      }
    } else {
      in_run = false;
    }
  }
  if (active && !dhat.empty()) close(dhat.size() - 1, true);
  return rep;
}

// --------------------------------------------------------------- metrics

struct ErrorMetrics {
  std::vector<double> rmse;  ///< per state
  std::vector<double> bias;  ///< mean of truth - estimate over the trailing window
  double convergence_time = 0.0;  ///< first t with ||e|| < 1% ||e(0)||, -1 if never
};

/// `tail_fraction` of the trace (by samples, at least one) defines the bias window.
[[nodiscard]] inline ErrorMetrics error_metrics(const GridSeries& truth, const GridSeries& estimate,
                                                double tail_fraction = 0.25) {
  if (truth.dim() != estimate.dim() || truth.samples() != estimate.samples() ||
      std::abs(truth.step() - estimate.step()) > 1e-12 * truth.step())
    throw ValidationError("traces are not aligned");
  const std::size_t K = truth.samples();
  const std::size_t d = truth.dim();
  ErrorMetrics m;
  m.rmse.assign(d, 0.0);
  m.bias.assign(d, 0.0);
  if (K == 0) return m;
  const std::size_t tail =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(tail_fraction * K)));
  m.convergence_time = -1.0;
  double e0 = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    double nrm = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double e = truth(k, c) - estimate(k, c);
      m.rmse[c] += e * e;
      if (k >= K - tail) m.bias[c] += e;
      nrm += e * e;
    }
    nrm = std::sqrt(nrm);
    if (k == 0) e0 = nrm;
    if (m.convergence_time < 0.0 && (nrm < 0.01 * e0 || (e0 == 0.0 && nrm == 0.0)))
      m.convergence_time = truth.time(k);
  }
  for (std::size_t c = 0; c < d; ++c) {
    m.rmse[c] = std::sqrt(m.rmse[c] / static_cast<double>(K));
    m.bias[c] /= static_cast<double>(tail);
  }
  return m;
}

/// Plant truth in observer coordinates: (x_i - x_i0, b - b0, d).
[[nodiscard]] inline GridSeries truth_deviation(const CombinedTrace& tr, const Equilibrium& eq) {
  const std::size_t n = tr.sources;
  GridSeries out(n + 2, tr.joint.step());
  Eigen::VectorXd v(static_cast<Eigen::Index>(n + 2));
  for (std::size_t k = 0; k < tr.samples(); ++k) {
    for (std::size_t i = 0; i < n; ++i)
      v[static_cast<Eigen::Index>(i)] = tr.rate(k, i) - eq.sources[i].rate;
    v[static_cast<Eigen::Index>(n)] = tr.queue(k) - eq.queue;
    v[static_cast<Eigen::Index>(n + 1)] = tr.anomaly[k];
    out.push_back(v);
  }
  return out;
}

[[nodiscard]] inline GridSeries estimate_series(const CombinedTrace& tr) {
  const std::size_t n = tr.sources;
  GridSeries out(n + 2, tr.joint.step());
  for (std::size_t k = 0; k < tr.samples(); ++k)
    out.push_back(tr.joint.sample(k).tail(static_cast<Eigen::Index>(n + 2)));
  return out;
}

}  // namespace tcpobs
