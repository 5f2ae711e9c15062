#pragma once

// Nonlinear rate-based TCP fluid plant with a finite FIFO buffer, a PI (or
// constant) AQM and a piecewise-constant non-responsive inflow d(t).
//
// State layout: (x_1, ..., x_N, b). Delayed arguments are frozen at their
// equilibrium values; the RTT coefficient inside the vector field follows
// the current queue.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "tcpobs/dde.hpp"
#include "tcpobs/errors.hpp"
#include "tcpobs/fluid_model.hpp"
#include "tcpobs/topology.hpp"

namespace tcpobs {

struct AqmPolicy {
  enum class Kind { PI, Constant };
  Kind kind = Kind::PI;
  double kp = 1e-4;  ///< 1/packet
  double ki = 1e-4;  ///< 1/(packet*second)

  static AqmPolicy constant() { return {Kind::Constant, 0.0, 0.0}; }
};

/// PI controller memory; one drop probability shared by all sources.
struct AqmState {
  double integral = 0.0;  ///< integral of the queue error [pkt*s]
  double drop = 0.0;      ///< last emitted probability
};

[[nodiscard]] inline double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

/**
 * One controller update with queue error `dq` = b - b0 over a step h.
 * The integral only advances while the unclamped output stays in [0, 1].
 */
inline double aqm_step(const AqmPolicy& policy, double p0, double dq, AqmState& st, double h) {
  if (policy.kind == AqmPolicy::Kind::Constant) {
    st.drop = clamp01(p0);
    return st.drop;
  }
  const double trial = st.integral + h * dq;
  const double raw = p0 + policy.kp * dq + policy.ki * trial;
  if (raw >= 0.0 && raw <= 1.0) {
    st.integral = trial;
    st.drop = raw;
  } else {
    st.drop = clamp01(p0 + policy.kp * dq + policy.ki * st.integral);
  }
  return st.drop;
}

/// Constant deviations from equilibrium used as initial history.
struct PlantInitial {
  Eigen::VectorXd rate_offset;  ///< per source, empty means zero
  double queue_offset = 0.0;
};

namespace detail {

[[nodiscard]] inline double delayed(const GridSeries& s, std::size_t c, double t, double tau,
                                    double now) {
  return tau > 0.0 ? s.at(c, t - tau) : now;
}

inline std::vector<double> plant_delays(const Equilibrium& eq) {
  std::vector<double> out;
  for (const auto& s : eq.sources)
    for (double d : {s.rtt, s.fwd_delay, s.bwd_delay})
      if (d > 0.0) out.push_back(d);
  return out;
}

inline Eigen::VectorXd plant_start(const NetworkConfig& cfg, const Equilibrium& eq,
                                   const PlantInitial& init) {
  const auto n = static_cast<Eigen::Index>(eq.size());
  if (init.rate_offset.size() != 0 && init.rate_offset.size() != n)
    throw ValidationError("initial rate offsets must have one entry per source");
  Eigen::VectorXd x0(n + 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double off = init.rate_offset.size() ? init.rate_offset[i] : 0.0;
    x0[i] = std::max(0.0, eq.sources[static_cast<std::size_t>(i)].rate + off);
  }
  x0[n] = std::clamp(eq.queue + init.queue_offset, 0.0, cfg.buffer_max);
  return x0;
}

/**
 * Fluid vector field on the plant block state[0..N] with delayed values read
 * from `past` (same component indices) and drop probabilities from `drop`.
 * Queue saturation projects db/dt at the buffer limits.
 */
inline void plant_field(const NetworkConfig& cfg, const Equilibrium& eq, double t,
                        const Eigen::VectorXd& state, const GridSeries& past,
                        const GridSeries& drop, Eigen::VectorXd& dx) {
  const auto n = static_cast<Eigen::Index>(eq.size());
  FluidArgs a;
  a.rate = state.head(n);
  a.rate_rtt.resize(n);
  a.rate_fwd.resize(n);
  a.drop_bwd.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto si = static_cast<std::size_t>(i);
    const auto& e = eq.sources[si];
    a.rate_rtt[i] = delayed(past, si, t, e.rtt, state[i]);
    a.rate_fwd[i] = delayed(past, si, t, e.fwd_delay, state[i]);
    a.drop_bwd[i] = drop.at(si, t - e.bwd_delay);
  }
  a.queue = std::clamp(state[n], 0.0, cfg.buffer_max);
  a.anomaly = cfg.anomaly(t);
  const Eigen::VectorXd f = fluid_rhs(cfg, a);
  dx.head(n + 1) = f;
  double& db = dx[n];
  if (state[n] <= 0.0 && db < 0.0) db = 0.0;
  if (state[n] >= cfg.buffer_max && db > 0.0) db = 0.0;
}

inline void project_plant(const NetworkConfig& cfg, Eigen::Index n, Eigen::VectorXd& x) {
  for (Eigen::Index i = 0; i < n; ++i) x[i] = std::max(x[i], 0.0);
  x[n] = std::clamp(x[n], 0.0, cfg.buffer_max);
}

}  // namespace detail

/// Drop probabilities emitted by the AQM on the integration grid.
class DropSignal {
 public:
  DropSignal(const Equilibrium& eq, double step)
      : p0_(eq.sources.front().drop_prob),
        series_(eq.size(), step, [p0 = eq.sources.front().drop_prob](std::size_t, double) {
          return p0;
        }) {}

  void emit(double p) {
    series_.push_back(Eigen::VectorXd::Constant(static_cast<Eigen::Index>(series_.dim()), p));
  }
  [[nodiscard]] double p0() const { return p0_; }
  [[nodiscard]] const GridSeries& series() const { return series_; }
  [[nodiscard]] GridSeries take() && { return std::move(series_); }

 private:
  double p0_;
  GridSeries series_;
};

struct PlantTrace {
  GridSeries state;          ///< (x_1..x_N, b)
  GridSeries drop;           ///< p_i on the grid
  std::vector<double> anomaly;  ///< d(t_k)

  [[nodiscard]] std::size_t samples() const { return state.samples(); }
};

/**
 * Integrates the plant alone. The AQM runs once per step on the freshly
 * computed queue; its output is held as a grid signal for delayed lookup.
 */
[[nodiscard]] inline PlantTrace simulate_plant(const ValidatedConfig& vcfg, const Equilibrium& eq,
                                               const AqmPolicy& aqm, double horizon, double h,
                                               const PlantInitial& init = {}) {
  const NetworkConfig& cfg = vcfg.config();
  const auto n = static_cast<Eigen::Index>(eq.size());
  const Eigen::VectorXd x0 = detail::plant_start(cfg, eq, init);

  DropSignal drop(eq, h);
  AqmState aq;
  drop.emit(aqm_step(aqm, drop.p0(), x0[n] - eq.queue, aq, 0.0));

  DelaySystem sys;
  sys.dimension = static_cast<std::size_t>(n + 1);
  sys.delays = detail::plant_delays(eq);
  sys.history = [x0](std::size_t c, double) { return x0[static_cast<Eigen::Index>(c)]; };
  sys.project = [&cfg, n](Eigen::VectorXd& x) { detail::project_plant(cfg, n, x); };
  sys.rhs = [&](double t, const Eigen::VectorXd& x, const GridSeries& past, Eigen::VectorXd& dx) {
    detail::plant_field(cfg, eq, t, x, past, drop.series(), dx);
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
  return {std::move(stepper).take_trace(), std::move(drop).take(), std::move(anomaly)};
}

}  // namespace tcpobs
