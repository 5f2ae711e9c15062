#pragma once

// Right-hand side of the rate-based TCP fluid model. Delay arguments are
// frozen at their equilibrium values; the RTT coefficient tau_i(t) =
// b(t)/c + T_p_i is evaluated at the current queue.

#include <algorithm>
#include <cstddef>

#include <Eigen/Dense>

#include "tcpobs/topology.hpp"

namespace tcpobs {

/// Arguments of the fluid vector field at one instant.
struct FluidArgs {
  Eigen::VectorXd rate;           ///< x_i(t)
  Eigen::VectorXd rate_rtt;       ///< x_i(t - tau_i0)
  Eigen::VectorXd rate_fwd;       ///< x_i(t - tau_i^f)
  double queue = 0.0;             ///< b(t)
  Eigen::VectorXd drop_bwd;       ///< p_i(t - tau_i^b)
  double anomaly = 0.0;           ///< d(t)

  static FluidArgs at_equilibrium(const Equilibrium& eq) {
    const auto n = static_cast<Eigen::Index>(eq.size());
    FluidArgs a;
    a.rate.resize(n);
    a.drop_bwd.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      a.rate[i] = eq.sources[static_cast<std::size_t>(i)].rate;
      a.drop_bwd[i] = eq.sources[static_cast<std::size_t>(i)].drop_prob;
    }
    a.rate_rtt = a.rate;
    a.rate_fwd = a.rate;
    a.queue = eq.queue;
    return a;
  }
};

/// Rates below this fraction of capacity are floored inside the 1/x term.
inline constexpr double kRateFloorFraction = 1e-12;

/**
 * d/dt of (x_1..x_N, b). Returns an (N+1)-vector; the last entry is
 * -c + d + sum_j eta_j x_j(t - tau_j^f).
 */
[[nodiscard]] inline Eigen::VectorXd fluid_rhs(const NetworkConfig& cfg, const FluidArgs& a) {
  const auto n = static_cast<Eigen::Index>(cfg.size());
  const double c = cfg.capacity;

  double inflow = 0.0;
  for (Eigen::Index j = 0; j < n; ++j)
    inflow += cfg.sources[static_cast<std::size_t>(j)].sessions * a.rate_fwd[j];

  Eigen::VectorXd out(n + 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double tau = a.queue / c + cfg.sources[static_cast<std::size_t>(i)].propagation();
    const double x = a.rate[i];
    const double xr = a.rate_rtt[i];
    const double p = a.drop_bwd[i];
    const double x_safe = std::max(x, kRateFloorFraction * c);
    out[i] = xr / (x_safe * tau * tau) * (1.0 - p) - xr * x * p / 2.0 + x / tau -
             x / (tau * c) * inflow;
  }
  out[n] = -c + a.anomaly + inflow;
  return out;
}

}  // namespace tcpobs
