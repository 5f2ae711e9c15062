#pragma once

// Scenario pipeline: validate -> equilibrium -> linearize -> synthesize ->
// simulate -> detect -> report. Each stage writes its artifacts atomically.

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tcpobs/errors.hpp"
#include "tcpobs/io.hpp"
#include "tcpobs/linearizer.hpp"
#include "tcpobs/lmi.hpp"
#include "tcpobs/observer.hpp"
#include "tcpobs/plant.hpp"
#include "tcpobs/scenario.hpp"
#include "tcpobs/topology.hpp"

namespace tcpobs {

namespace fs = std::filesystem;

/// Thrown when the LMI stage cannot produce a certified gain.
class SynthesisFailure : public std::runtime_error {
 public:
  SynthesisFailure(const std::string& what, SynthesisStatus s)
      : std::runtime_error(what), status_(s) {}
  [[nodiscard]] SynthesisStatus status() const { return status_; }

 private:
  SynthesisStatus status_;
};

struct Prepared {
  ValidatedConfig cfg;
  Equilibrium eq;
};

[[nodiscard]] inline Prepared prepare(const Scenario& s) {
  ValidatedConfig v = validate_config(s.network);
  Equilibrium eq;
  if (s.operating_point) {
    // pinned points are given per source in file order; require canonical order
    for (std::size_t i = 0; i < s.network.size(); ++i)
      if (s.network.sources[i].fwd_prop != v->sources[i].fwd_prop ||
          s.network.sources[i].bwd_prop != v->sources[i].bwd_prop)
        throw ValidationError("operating_point requires sources sorted by forward delay");
    eq.sources = *s.operating_point;
    eq.queue = s.network.queue_target;
  } else {
    eq = compute_equilibrium(v);
  }
  return {std::move(v), std::move(eq)};
}

struct Models {
  LinearModel lin;
  AugmentedModel aug;
};

[[nodiscard]] inline Models build_models(const Prepared& p) {
  Models m{linearize(p.eq, p.cfg), {}};
  m.aug = augment(m.lin);
  return m;
}

[[nodiscard]] inline SynthesisOptions synthesis_options(const Scenario& s) {
  SynthesisOptions o;
  o.epsilon = s.observer.epsilon;
  o.decay_rate = s.observer.decay_rate;
  o.scaling = s.observer.scaling;
  o.objective = s.observer.objective;
  return o;
}

/// Synthesizes, or verifies the scenario's fixed gain. Does not throw on infeasibility.
[[nodiscard]] inline SynthesisResult obtain_gain(const Scenario& s, const AugmentedModel& aug) {
  const auto opt = synthesis_options(s);
  if (s.observer.gain) {
    if (s.observer.gain->size() != aug.dim())
      throw ValidationError("observer.gain must have " + std::to_string(aug.dim()) + " entries");
    return verify_gain(aug, *s.observer.gain, opt);
  }
  return synthesize_gain(aug, opt);
}

// ------------------------------------------------------------ artifacts

[[nodiscard]] inline std::string equilibrium_csv(const Prepared& p) {
  io::Csv csv({"source", "sessions", "rtt", "fwd_delay", "bwd_delay", "rate", "drop_prob",
               "queue"});
  for (std::size_t i = 0; i < p.eq.size(); ++i) {
    const auto& e = p.eq.sources[i];
    csv.row({p.cfg->sources[i].name},
            {static_cast<double>(p.cfg->sources[i].sessions), e.rtt, e.fwd_delay, e.bwd_delay,
             e.rate, e.drop_prob, p.eq.queue});
  }
  return csv.str();
}

inline void write_equilibrium(const Prepared& p, const fs::path& dir) {
  io::write_atomic(dir / "equilibrium.csv", equilibrium_csv(p));
}

inline void write_models(const Models& m, const fs::path& dir) {
  io::write_atomic(dir / "A.csv", io::matrix_csv(m.lin.A));
  io::write_atomic(dir / "Ad.csv", io::matrix_csv(m.lin.Ad));
  io::write_atomic(dir / "B.csv", io::matrix_csv(m.lin.B));
  io::write_atomic(dir / "C.csv", io::matrix_csv(m.lin.C));
  io::write_atomic(dir / "Abar.csv", io::matrix_csv(m.aug.A));
  io::write_atomic(dir / "Adbar.csv", io::matrix_csv(m.aug.Ad));
  io::write_atomic(dir / "Bbar.csv", io::matrix_csv(m.aug.B));
  io::write_atomic(dir / "Cbar.csv", io::matrix_csv(m.aug.C));
  for (std::size_t i = 0; i < m.aug.sources(); ++i)
    io::write_atomic(dir / ("Adbar_" + std::to_string(i + 1) + ".csv"),
                     io::matrix_csv(m.aug.Adi[i]));
  io::Csv d({"source", "fwd_delay", "bwd_delay", "a", "h", "f", "e"});
  for (std::size_t i = 0; i < m.lin.sources(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    d.row({static_cast<double>(i + 1), m.lin.fwd_delays[i], m.lin.bwd_delays[i],
           m.lin.coeffs.a[k], m.lin.coeffs.h[k], m.lin.coeffs.f[k], m.lin.coeffs.e[k]});
  }
  d.save(dir / "coefficients.csv");
}

[[nodiscard]] inline std::string synthesis_summary(const SynthesisResult& r,
                                                   const CertificateReport& rep, bool fixed) {
  std::ostringstream o;
  o << "mode: " << (fixed ? "verify" : "synthesize") << "\n"
    << "status: " << to_string(r.status) << "\n"
    << "solver_status: " << r.solver_status << "\n"
    << "epsilon: " << io::fmt(r.epsilon) << "\n"
    << "decay_rate: " << io::fmt(r.decay_rate) << "\n"
    << "min_eig_block: " << io::fmt(r.min_eig_block) << "\n"
    << "min_eig_all: " << io::fmt(r.min_eig_all) << "\n"
    << "margin_upper_bound: " << io::fmt(r.margin_upper) << "\n"
    << "newton_steps: " << r.newton_steps << "\n"
    << "certificate_check: " << (rep.pass ? "pass" : "fail") << "\n"
    << "gain_residual: " << io::fmt(rep.gain_residual) << "\n";
  if (!r.message.empty()) o << "message: " << r.message << "\n";
  if (!rep.message.empty()) o << "check_message: " << rep.message << "\n";
  return o.str();
}

inline void write_synthesis(const Models& m, const SynthesisResult& r, bool fixed,
                            const fs::path& dir) {
  const CertificateReport rep = check_certificate(m.aug, r);
  io::write_atomic(dir / "synthesis.txt", synthesis_summary(r, rep, fixed));
  if (r.L.size()) io::write_atomic(dir / "gain.csv", io::matrix_csv(r.L));
  const auto& c = r.certificate;
  if (c.P.size()) {
    io::write_atomic(dir / "P.csv", io::matrix_csv(c.P));
    io::write_atomic(dir / "X.csv", io::matrix_csv(c.X));
    for (std::size_t i = 0; i < c.Q.size(); ++i) {
      io::write_atomic(dir / ("Q_" + std::to_string(i + 1) + ".csv"), io::matrix_csv(c.Q[i]));
      io::write_atomic(dir / ("S_" + std::to_string(i + 1) + ".csv"), io::matrix_csv(c.S[i]));
    }
  }
}

[[nodiscard]] inline std::string alarms_csv(const AlarmReport& rep) {
  io::Csv csv({"onset", "clear", "mean_dhat", "open"});
  for (const auto& iv : rep.intervals)
    csv.row({iv.onset, iv.clear, iv.mean_estimate, iv.open ? 1.0 : 0.0});
  return csv.str();
}

[[nodiscard]] inline std::string alarms_text(const AlarmReport& rep) {
  std::ostringstream o;
  o << "threshold: " << io::fmt(rep.threshold) << "\nhold: " << io::fmt(rep.hold)
    << "\nalarms: " << rep.intervals.size() << "\n";
  for (std::size_t i = 0; i < rep.intervals.size(); ++i) {
    const auto& iv = rep.intervals[i];
    o << "  " << i + 1 << ": onset " << io::fmt(iv.onset) << " s, clear " << io::fmt(iv.clear)
      << " s" << (iv.open ? " (open)" : "") << ", mean dhat " << io::fmt(iv.mean_estimate)
      << " pkt/s\n";
  }
  return o.str();
}

struct RunResult {
  Prepared prep;
  Models models;
  SynthesisResult synthesis;
  CombinedTrace trace;
  AlarmReport alarms;
  ErrorMetrics metrics;
};

[[nodiscard]] inline bool in_alarm(const AlarmReport& rep, double t) {
  for (const auto& iv : rep.intervals)
    if (t >= iv.onset && t < iv.clear) return true;
  return false;
}

/// trace.csv keeps one row per 10 ms of simulated time (plus the last sample).
[[nodiscard]] inline std::size_t record_stride(double step) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.01 / step)));
}

inline void write_run(const RunResult& r, const fs::path& dir) {
  const auto& tr = r.trace;
  const auto& eq = r.prep.eq;
  const std::size_t n = tr.sources;
  std::vector<std::string> header{"t"};
  for (std::size_t i = 0; i < n; ++i) header.push_back("x" + std::to_string(i + 1));
  for (std::size_t i = 0; i < n; ++i) header.push_back("xhat" + std::to_string(i + 1));
  header.insert(header.end(), {"b", "bhat"});
  for (std::size_t i = 0; i < n; ++i) header.push_back("p" + std::to_string(i + 1));
  header.insert(header.end(), {"d", "dhat", "alarm"});
  io::Csv csv(header);

  const std::size_t stride = record_stride(tr.joint.step());
  std::vector<double> ts, b, bh, d, dh;
  std::vector<std::vector<double>> x(n), xh(n);
  std::vector<double> row;
  for (std::size_t k = 0; k < tr.samples(); ++k) {
    if (k % stride != 0 && k + 1 != tr.samples()) continue;
    const double t = tr.time(k);
    row.assign(1, t);
    for (std::size_t i = 0; i < n; ++i) row.push_back(tr.rate(k, i));
    for (std::size_t i = 0; i < n; ++i) row.push_back(eq.sources[i].rate + tr.rate_dev_hat(k, i));
    row.push_back(tr.queue(k));
    row.push_back(eq.queue + tr.queue_dev_hat(k));
    for (std::size_t i = 0; i < n; ++i) row.push_back(tr.drop(k, i));
    row.push_back(tr.anomaly[k]);
    row.push_back(tr.anomaly_hat(k));
    row.push_back(in_alarm(r.alarms, t) ? 1.0 : 0.0);
    csv.row(row);

    ts.push_back(t);
    for (std::size_t i = 0; i < n; ++i) {
      x[i].push_back(tr.rate(k, i));
      xh[i].push_back(eq.sources[i].rate + tr.rate_dev_hat(k, i));
    }
    b.push_back(tr.queue(k));
    bh.push_back(eq.queue + tr.queue_dev_hat(k));
    d.push_back(tr.anomaly[k]);
    dh.push_back(tr.anomaly_hat(k));
  }
  csv.save(dir / "trace.csv");
  io::write_atomic(dir / "alarms.csv", alarms_csv(r.alarms));
  io::write_atomic(dir / "alarms.txt", alarms_text(r.alarms));

  io::Csv mc({"state", "rmse", "bias"});
  for (std::size_t c = 0; c < r.metrics.rmse.size(); ++c) {
    const std::string name = c < n ? "x" + std::to_string(c + 1) : (c == n ? "b" : "d");
    mc.row({name}, {r.metrics.rmse[c], r.metrics.bias[c]});
  }
  mc.row({"convergence_time"}, {r.metrics.convergence_time, 0.0});
  mc.save(dir / "metrics.csv");

  std::vector<io::Shade> shades;
  for (const auto& iv : r.alarms.intervals) shades.push_back({iv.onset, iv.clear});
  io::Panel pq{"queue b [pkt]", {{"b", b, io::palette(0)}, {"b estimate", bh, io::palette(1), true}}};
  io::Panel px{"per-connection rate [pkt/s]", {}};
  for (std::size_t i = 0; i < n; ++i) {
    px.series.push_back({"x" + std::to_string(i + 1), x[i], io::palette(i)});
    px.series.push_back({"x" + std::to_string(i + 1) + " est", xh[i], io::palette(i), true});
  }
  io::Panel pd{"anomaly d [pkt/s]", {{"d", d, io::palette(3)}, {"d estimate", dh, io::palette(4), true}}};
  io::write_atomic(dir / "trace.svg", io::svg_chart(ts, {pq, px, pd}, shades));
}

/// Full pipeline for one scenario. Throws SynthesisFailure when no certified gain.
[[nodiscard]] inline RunResult run_scenario(const Scenario& s, const std::optional<fs::path>& out) {
  Prepared prep = prepare(s);
  Models models = build_models(prep);
  SynthesisResult syn = obtain_gain(s, models.aug);
  if (out) {
    write_equilibrium(prep, *out);
    write_models(models, *out);
    write_synthesis(models, syn, s.observer.gain.has_value(), *out);
  }
  if (syn.status == SynthesisStatus::NumericalFailure)
    throw NumericalError("LMI solver failed: " + syn.message);
  if (!syn.feasible())
    throw SynthesisFailure(std::string("no certified gain (") + to_string(syn.status) + ")",
                           syn.status);

  ClosedLoopOptions clo;
  clo.initial = s.initial;
  clo.xhat0 = s.estimate0;
  clo.measurement.quantize = s.observer.quantize;
  CombinedTrace tr =
      closed_loop(prep.cfg, prep.eq, models.aug, s.aqm, syn.L, s.horizon, s.step, clo);
  AlarmReport alarms =
      detect_anomalies(tr.anomaly_hat_series(), tr.joint.step(), s.threshold(), s.observer.hold);
  ErrorMetrics metrics = error_metrics(truth_deviation(tr, prep.eq), estimate_series(tr));
  RunResult r{std::move(prep), std::move(models), std::move(syn), std::move(tr),
              std::move(alarms), std::move(metrics)};
  if (out) write_run(r, *out);
  return r;
}

}  // namespace tcpobs
