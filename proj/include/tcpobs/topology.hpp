#pragma once

/**
 * @file topology.hpp
 * @brief Network configuration for a single bottleneck router and the
 *        TCP/AQM equilibrium it is regulated around.
 *
 * Units everywhere: rates in packets/second, delays in seconds, queue
 * lengths in packets. Conversions from link speeds (Mbps, packet size)
 * happen when a scenario is authored, never in here.
 */

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "tcpobs/errors.hpp"

namespace tcpobs {

/// One TCP source: `sessions` long-lived connections sharing a path.
struct SourceSpec {
  int sessions = 1;
  double fwd_prop = 0.0;  ///< source -> router propagation [s]
  double bwd_prop = 0.0;  ///< router -> receiver -> source propagation [s]
  std::string name;

  [[nodiscard]] double propagation() const { return fwd_prop + bwd_prop; }
};

struct AnomalyInterval {
  double start = 0.0;
  double end = 0.0;
  double rate = 0.0;  ///< extra non-responsive inflow [pkt/s]
};

/**
 * Piecewise-constant exogenous inflow d(t): `rate` on [start, end),
 * zero elsewhere. Intervals are sorted and pairwise disjoint.
 */
class AnomalySchedule {
 public:
  AnomalySchedule() = default;
  explicit AnomalySchedule(std::vector<AnomalyInterval> intervals)
      : intervals_(std::move(intervals)) {}

  [[nodiscard]] double operator()(double t) const {
    for (const auto& iv : intervals_) {
      if (t < iv.start) break;
      if (t < iv.end) return iv.rate;
    }
    return 0.0;
  }

  [[nodiscard]] const std::vector<AnomalyInterval>& intervals() const { return intervals_; }
  [[nodiscard]] bool empty() const { return intervals_.empty(); }

 private:
  std::vector<AnomalyInterval> intervals_;
};

struct NetworkConfig {
  double capacity = 0.0;      ///< c [pkt/s]
  double buffer_max = 0.0;    ///< B_max [pkt]
  double queue_target = 0.0;  ///< b0 [pkt]
  std::vector<SourceSpec> sources;
  AnomalySchedule anomaly;

  [[nodiscard]] std::size_t size() const { return sources.size(); }
};

/// A NetworkConfig that has passed validate_config. Only constructible there.
class ValidatedConfig {
 public:
  [[nodiscard]] const NetworkConfig& config() const { return cfg_; }
  [[nodiscard]] const NetworkConfig* operator->() const { return &cfg_; }
  [[nodiscard]] std::size_t size() const { return cfg_.sources.size(); }

 private:
  explicit ValidatedConfig(NetworkConfig cfg) : cfg_(std::move(cfg)) {}
  friend ValidatedConfig validate_config(NetworkConfig cfg);

  NetworkConfig cfg_;
};

/**
 * Check every NetworkConfig invariant and return the config with its
 * sources in canonical order (ascending forward delay, then backward
 * delay; stable, so ties keep file order).
 *
 * Throws ValidationError naming the first violated invariant.
 */
inline ValidatedConfig validate_config(NetworkConfig cfg) {
  auto finite = [](double v) { return std::isfinite(v); };
  if (cfg.sources.empty()) throw ValidationError("no sources");
  if (!finite(cfg.capacity) || cfg.capacity <= 0.0)
    throw ValidationError("capacity must be positive");
  if (!finite(cfg.buffer_max) || cfg.buffer_max <= 0.0)
    throw ValidationError("buffer max must be positive");
  if (!finite(cfg.queue_target) || cfg.queue_target <= 0.0)
    throw ValidationError("queue target must be positive");
  if (cfg.queue_target >= cfg.buffer_max)
    throw ValidationError("target not below buffer max");

  for (std::size_t i = 0; i < cfg.sources.size(); ++i) {
    auto& s = cfg.sources[i];
    const std::string tag = "source " + std::to_string(i);
    if (s.sessions < 1) throw ValidationError(tag + ": sessions must be >= 1");
    if (!finite(s.fwd_prop) || !finite(s.bwd_prop) || s.fwd_prop < 0.0 || s.bwd_prop < 0.0)
      throw ValidationError(tag + ": propagation delays must be finite and >= 0");
    if (s.propagation() <= 0.0)
      throw ValidationError(tag + ": total propagation delay must be positive");
    if (s.name.empty()) s.name = "s" + std::to_string(i + 1);
  }

  const auto& ivs = cfg.anomaly.intervals();
  for (std::size_t k = 0; k < ivs.size(); ++k) {
    const auto& iv = ivs[k];
    if (!finite(iv.start) || !finite(iv.end) || !finite(iv.rate))
      throw ValidationError("anomaly interval " + std::to_string(k) + " not finite");
    if (iv.end <= iv.start)
      throw ValidationError("anomaly interval " + std::to_string(k) + " is empty");
    if (iv.rate < 0.0)
      throw ValidationError("anomaly interval " + std::to_string(k) + " has negative rate");
    if (k > 0 && iv.start < ivs[k - 1].end)
      throw ValidationError("overlapping anomaly intervals");
  }

  std::stable_sort(cfg.sources.begin(), cfg.sources.end(),
                   [](const SourceSpec& a, const SourceSpec& b) {
                     if (a.fwd_prop != b.fwd_prop) return a.fwd_prop < b.fwd_prop;
                     return a.bwd_prop < b.bwd_prop;
                   });
  return ValidatedConfig(std::move(cfg));
}

/// Operating point of one source.
struct SourceEquilibrium {
  double rtt = 0.0;        ///< tau_i0
  double fwd_delay = 0.0;  ///< tau_i^f
  double bwd_delay = 0.0;  ///< tau_i^b
  double rate = 0.0;       ///< x_i0 [pkt/s], per connection
  double drop_prob = 0.0;  ///< p_i0
};

struct Equilibrium {
  std::vector<SourceEquilibrium> sources;
  double queue = 0.0;  ///< b0

  [[nodiscard]] std::size_t size() const { return sources.size(); }
};

/// Drop probability that stationarises the window of a source with window w.
[[nodiscard]] inline double stationary_drop_probability(double window) {
  return 2.0 / (2.0 + window * window);
}

/**
 * Equilibrium under a uniform router drop probability.
 *
 * A single FIFO drops with one probability, so every connection settles at
 * the same window w0 = x_i0 * tau_i0. Together with the rate balance
 * sum_i eta_i x_i0 = c this gives w0 = c / sum_i (eta_i / tau_i0).
 * Queueing delay is attributed to the backward path: tau_i^f is the pure
 * forward propagation time and tau_i^b = T_b + b0 / c.
 */
[[nodiscard]] inline Equilibrium compute_equilibrium(const ValidatedConfig& vcfg) {
  const auto& cfg = vcfg.config();
  const double queueing = cfg.queue_target / cfg.capacity;

  Equilibrium eq;
  eq.queue = cfg.queue_target;
  eq.sources.resize(cfg.size());

  double inverse_rtt_sum = 0.0;
  for (std::size_t i = 0; i < cfg.size(); ++i) {
    const auto& s = cfg.sources[i];
    auto& e = eq.sources[i];
    e.fwd_delay = s.fwd_prop;
    e.bwd_delay = s.bwd_prop + queueing;
    e.rtt = s.propagation() + queueing;
    inverse_rtt_sum += s.sessions / e.rtt;
  }
  const double window = cfg.capacity / inverse_rtt_sum;
  const double drop = stationary_drop_probability(window);
  for (auto& e : eq.sources) {
    e.rate = window / e.rtt;
    e.drop_prob = drop;
  }
  return eq;
}

/// Largest violation of the equilibrium identities, each in relative terms.
struct EquilibriumResidual {
  double rtt = 0.0;        ///< |tau_i0 - (T_p_i + b0/c)| / tau_i0
  double split = 0.0;      ///< |tau_i^f + tau_i^b - tau_i0| / tau_i0
  double rate_sum = 0.0;   ///< |sum eta_i x_i0 - c| / c
  double drop = 0.0;       ///< |p_i0 - 2/(2+(x_i0 tau_i0)^2)| / p_i0

  [[nodiscard]] double max() const { return std::max({rtt, split, rate_sum, drop}); }
};

[[nodiscard]] inline EquilibriumResidual equilibrium_residual(const Equilibrium& eq,
                                                              const ValidatedConfig& vcfg) {
  const auto& cfg = vcfg.config();
  EquilibriumResidual r;
  double sum = 0.0;
  for (std::size_t i = 0; i < eq.size(); ++i) {
    const auto& e = eq.sources[i];
    const auto& s = cfg.sources[i];
    r.rtt = std::max(r.rtt,
                     std::abs(e.rtt - (s.propagation() + eq.queue / cfg.capacity)) / e.rtt);
    r.split = std::max(r.split, std::abs(e.fwd_delay + e.bwd_delay - e.rtt) / e.rtt);
    const double p = stationary_drop_probability(e.rate * e.rtt);
    r.drop = std::max(r.drop, std::abs(e.drop_prob - p) / p);
    sum += s.sessions * e.rate;
  }
  r.rate_sum = std::abs(sum - cfg.capacity) / cfg.capacity;
  return r;
}

}  // namespace tcpobs
