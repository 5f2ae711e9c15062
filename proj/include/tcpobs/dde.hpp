#pragma once

/**
 * @file dde.hpp
 * @brief Fixed-step RK4 integration of systems with constant delays.
 *
 * Delayed arguments are served from the stored trajectory by linear
 * interpolation between grid points; before t = 0 they come from the
 * history function. The step must not exceed a tenth of the smallest
 * delay, which guarantees that every delayed lookup made by an RK stage
 * falls on an already computed grid interval.
 */

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "tcpobs/errors.hpp"

namespace tcpobs {

/**
 * Samples of a vector signal on the uniform grid t_k = k * step, k >= 0,
 * plus a pre-history for t < 0. Samples are appended in time order.
 */
class GridSeries {
 public:
  using History = std::function<double(std::size_t component, double t)>;

  GridSeries() = default;
  GridSeries(std::size_t dim, double step, History history = {})
      : dim_(dim), step_(step), history_(std::move(history)) {}

  /// Constant pre-history equal to `value`.
  static GridSeries with_constant_history(const Eigen::VectorXd& value, double step) {
    std::vector<double> v(value.data(), value.data() + value.size());
    return GridSeries(static_cast<std::size_t>(value.size()), step,
                      [v = std::move(v)](std::size_t c, double) { return v[c]; });
  }

  void push_back(const Eigen::VectorXd& x) {
    data_.insert(data_.end(), x.data(), x.data() + x.size());
  }

  [[nodiscard]] std::size_t dim() const { return dim_; }
  [[nodiscard]] double step() const { return step_; }
  [[nodiscard]] std::size_t samples() const { return dim_ == 0 ? 0 : data_.size() / dim_; }
  [[nodiscard]] bool empty() const { return data_.empty(); }
  [[nodiscard]] double time(std::size_t k) const { return static_cast<double>(k) * step_; }
  [[nodiscard]] double last_time() const { return time(samples() - 1); }

  [[nodiscard]] double operator()(std::size_t k, std::size_t c) const { return data_[k * dim_ + c]; }
  [[nodiscard]] Eigen::VectorXd sample(std::size_t k) const {
    return Eigen::Map<const Eigen::VectorXd>(data_.data() + k * dim_,
                                             static_cast<Eigen::Index>(dim_));
  }
  [[nodiscard]] std::vector<double> component(std::size_t c) const {
    std::vector<double> out(samples());
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = (*this)(k, c);
    return out;
  }

  /// Linearly interpolated value of component c at time t.
  [[nodiscard]] double at(std::size_t c, double t) const {
    if (t < 0.0 || empty()) {
      if (!history_) throw NumericalError("no history defined before t=0", t);
      return history_(c, std::min(t, 0.0));
    }
    const double pos = t / step_;
    auto k = static_cast<std::size_t>(pos);
    const std::size_t last = samples() - 1;
    if (k >= last) {
      // Allow a rounding-level overshoot of the last sample.
      if (pos - static_cast<double>(last) > 1e-9)
        throw NumericalError("lookup beyond the computed trajectory", t);
      return (*this)(last, c);
    }
    const double w = pos - static_cast<double>(k);
    return (1.0 - w) * (*this)(k, c) + w * (*this)(k + 1, c);
  }

 private:
  std::size_t dim_ = 0;
  double step_ = 0.0;
  History history_;
  std::vector<double> data_;
};

using Trace = GridSeries;

/// A system x'(t) = f(t, x(t), x(t - tau_1), ..., inputs) with constant delays.
struct DelaySystem {
  /// f(t, x, past, dx): `past` is the state trajectory so far (delayed lookups).
  using Rhs = std::function<void(double t, const Eigen::VectorXd& x, const GridSeries& past,
                                 Eigen::VectorXd& dx)>;

  std::size_t dimension = 0;
  std::vector<double> delays;
  Rhs rhs;
  GridSeries::History history;
  /// Optional projection applied to the state after every step.
  std::function<void(Eigen::VectorXd&)> project;
};

[[nodiscard]] inline double smallest_delay(const std::vector<double>& delays) {
  double m = std::numeric_limits<double>::infinity();
  for (double d : delays) m = std::min(m, d);
  return m;
}

/// Throws unless step is positive and at most a tenth of every delay.
inline void check_step(const std::vector<double>& delays, double step) {
  if (!(step > 0.0) || !std::isfinite(step)) throw ValidationError("step must be positive");
  for (double d : delays)
    if (!(d > 0.0)) throw ValidationError("delays must be strictly positive");
  const double tmin = smallest_delay(delays);
  if (std::isfinite(tmin) && step > tmin / 10.0 * (1.0 + 1e-12))
    throw ValidationError("step " + std::to_string(step) +
                          " exceeds a tenth of the smallest delay " + std::to_string(tmin));
}

/**
 * Advances a DelaySystem one step at a time, so several systems can be
 * co-simulated on a shared grid.
 */
class DdeStepper {
 public:
  DdeStepper(DelaySystem sys, double step)
      : sys_(std::move(sys)), h_(step), trace_(sys_.dimension, step, sys_.history) {
    check_step(sys_.delays, step);
    if (!sys_.rhs) throw ValidationError("delay system has no right-hand side");
    if (!sys_.history) throw ValidationError("delay system has no history");
    Eigen::VectorXd x0(static_cast<Eigen::Index>(sys_.dimension));
    for (std::size_t c = 0; c < sys_.dimension; ++c)
      x0[static_cast<Eigen::Index>(c)] = sys_.history(c, 0.0);
    if (sys_.project) sys_.project(x0);
    trace_.push_back(x0);
    x_ = std::move(x0);
    k1_.resize(x_.size());
    k2_.resize(x_.size());
    k3_.resize(x_.size());
    k4_.resize(x_.size());
  }

  [[nodiscard]] double time() const { return trace_.last_time(); }
  [[nodiscard]] std::size_t index() const { return trace_.samples() - 1; }
  [[nodiscard]] const Eigen::VectorXd& state() const { return x_; }
  [[nodiscard]] const GridSeries& trace() const { return trace_; }
  [[nodiscard]] GridSeries take_trace() && { return std::move(trace_); }
  [[nodiscard]] double step_size() const { return h_; }

  void step() {
    const double t = time();
    const double h = h_;
    sys_.rhs(t, x_, trace_, k1_);
    tmp_ = x_ + (h / 2.0) * k1_;
    sys_.rhs(t + h / 2.0, tmp_, trace_, k2_);
    tmp_ = x_ + (h / 2.0) * k2_;
    sys_.rhs(t + h / 2.0, tmp_, trace_, k3_);
    tmp_ = x_ + h * k3_;
    sys_.rhs(t + h, tmp_, trace_, k4_);
    x_ = x_ + (h / 6.0) * (k1_ + 2.0 * k2_ + 2.0 * k3_ + k4_);
    if (sys_.project) sys_.project(x_);
    if (!x_.allFinite()) throw NumericalError("non-finite state", t + h);
    trace_.push_back(x_);
  }

 private:
  DelaySystem sys_;
  double h_;
  GridSeries trace_;
  Eigen::VectorXd x_, k1_, k2_, k3_, k4_, tmp_;
};

[[nodiscard]] inline std::size_t step_count(double horizon, double step) {
  if (!(horizon > 0.0) || !std::isfinite(horizon)) throw ValidationError("horizon must be positive");
  return static_cast<std::size_t>(std::llround(horizon / step));
}

/// Integrates over [0, horizon]; the returned trace holds horizon/step + 1 samples.
[[nodiscard]] inline Trace integrate(DelaySystem sys, double horizon, double step) {
  DdeStepper stepper(std::move(sys), step);
  const std::size_t n = step_count(horizon, step);
  for (std::size_t k = 0; k < n; ++k) stepper.step();
  return std::move(stepper).take_trace();
}

}  // namespace tcpobs
