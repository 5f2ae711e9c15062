#pragma once

// Scenario files (JSON). Schema version 1; see the top-level README for
// the field reference. Unknown keys are rejected so typos fail loudly.

#include <cmath>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "tcpobs/errors.hpp"
#include "tcpobs/io.hpp"
#include "tcpobs/lmi.hpp"
#include "tcpobs/plant.hpp"
#include "tcpobs/topology.hpp"

namespace tcpobs {

inline constexpr int kSchemaVersion = 1;

struct ObserverSettings {
  double epsilon = 1e-7;
  double decay_rate = 0.0;
  bool scaling = false;
  Objective objective = Objective::Feasibility;
  std::optional<double> threshold;  ///< default 5% of capacity
  double hold = 1.0;
  std::optional<Eigen::VectorXd> gain;  ///< fixed gain: verify instead of synthesize
  bool quantize = false;
};

struct Scenario {
  std::string name;
  NetworkConfig network;
  AqmPolicy aqm;
  double horizon = 100.0;
  double step = 1e-3;
  ObserverSettings observer;
  PlantInitial initial;
  Eigen::VectorXd estimate0;
  /// Pinned per-source operating point replacing the closure (source order as in the file).
  std::optional<std::vector<SourceEquilibrium>> operating_point;
  std::string output_dir;

  [[nodiscard]] double threshold() const {
    return observer.threshold.value_or(0.05 * network.capacity);
  }
};

namespace detail {

using nlohmann::json;

inline void only_keys(const json& j, const std::string& where, std::set<std::string> allowed) {
  if (!j.is_object()) throw ValidationError(where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) throw ValidationError(where + ": unknown key '" + it.key() + "'");
}

inline double num(const json& j, const std::string& key, const std::string& where) {
  if (!j.contains(key)) throw ValidationError(where + ": missing '" + key + "'");
  if (!j.at(key).is_number()) throw ValidationError(where + "." + key + " must be a number");
  return j.at(key).get<double>();
}

inline double num_or(const json& j, const std::string& key, double dflt, const std::string& where) {
  return j.contains(key) ? num(j, key, where) : dflt;
}

inline Eigen::VectorXd vec(const json& j, const std::string& where) {
  if (!j.is_array()) throw ValidationError(where + " must be an array of numbers");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ValidationError(where + " must be an array of numbers");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

}  // namespace detail

[[nodiscard]] inline Scenario parse_scenario(const std::string& text) {
  using detail::json;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("scenario is not valid JSON: ") + e.what());
  }
  detail::only_keys(j, "scenario",
                    {"schema_version", "name", "network", "aqm", "integration", "observer",
                     "initial", "operating_point", "output_dir"});
  if (!j.contains("schema_version") || !j["schema_version"].is_number_integer())
    throw ValidationError("scenario: missing integer 'schema_version'");
  if (j["schema_version"].get<int>() != kSchemaVersion)
    throw ValidationError("scenario: unsupported schema_version " +
                          std::to_string(j["schema_version"].get<int>()));

  Scenario s;
  s.name = j.value("name", std::string("scenario"));
  s.output_dir = j.value("output_dir", std::string());

  if (!j.contains("network")) throw ValidationError("scenario: missing 'network'");
  const json& n = j["network"];
  detail::only_keys(n, "network", {"capacity", "buffer_max", "queue_target", "sources", "anomaly"});
  s.network.capacity = detail::num(n, "capacity", "network");
  s.network.buffer_max = detail::num(n, "buffer_max", "network");
  s.network.queue_target = detail::num(n, "queue_target", "network");
  if (!n.contains("sources") || !n["sources"].is_array())
    throw ValidationError("network: 'sources' must be an array");
  for (const auto& src : n["sources"]) {
    detail::only_keys(src, "source", {"name", "sessions", "fwd_prop", "bwd_prop"});
    SourceSpec sp;
    sp.name = src.value("name", std::string());
    const double sess = detail::num(src, "sessions", "source");
    if (sess != std::floor(sess)) throw ValidationError("source.sessions must be an integer");
    sp.sessions = static_cast<int>(sess);
    sp.fwd_prop = detail::num(src, "fwd_prop", "source");
    sp.bwd_prop = detail::num(src, "bwd_prop", "source");
    s.network.sources.push_back(sp);
  }
  if (n.contains("anomaly")) {
    if (!n["anomaly"].is_array()) throw ValidationError("network.anomaly must be an array");
    std::vector<AnomalyInterval> ivs;
    for (const auto& a : n["anomaly"]) {
      detail::only_keys(a, "anomaly", {"start", "end", "rate"});
      ivs.push_back({detail::num(a, "start", "anomaly"), detail::num(a, "end", "anomaly"),
                     detail::num(a, "rate", "anomaly")});
    }
    s.network.anomaly = AnomalySchedule(std::move(ivs));
  }

  if (j.contains("aqm")) {
    const json& a = j["aqm"];
    detail::only_keys(a, "aqm", {"kind", "kp", "ki"});
    const std::string kind = a.value("kind", std::string("pi"));
    if (kind == "pi") {
      s.aqm.kind = AqmPolicy::Kind::PI;
      s.aqm.kp = detail::num_or(a, "kp", s.aqm.kp, "aqm");
      s.aqm.ki = detail::num_or(a, "ki", s.aqm.ki, "aqm");
    } else if (kind == "constant") {
      s.aqm = AqmPolicy::constant();
    } else {
      throw ValidationError("aqm.kind must be 'pi' or 'constant'");
    }
    if (!std::isfinite(s.aqm.kp) || !std::isfinite(s.aqm.ki))
      throw ValidationError("aqm gains must be finite");
  }

  if (j.contains("integration")) {
    const json& it = j["integration"];
    detail::only_keys(it, "integration", {"horizon", "step"});
    s.horizon = detail::num_or(it, "horizon", s.horizon, "integration");
    s.step = detail::num_or(it, "step", s.step, "integration");
  }
  if (!(s.horizon > 0.0) || !std::isfinite(s.horizon))
    throw ValidationError("integration.horizon must be positive");
  if (!(s.step > 0.0) || !std::isfinite(s.step))
    throw ValidationError("integration.step must be positive");

  if (j.contains("observer")) {
    const json& o = j["observer"];
    detail::only_keys(o, "observer", {"epsilon", "decay_rate", "scaling", "objective", "threshold",
                                      "hold", "gain", "quantize"});
    auto& ob = s.observer;
    ob.epsilon = detail::num_or(o, "epsilon", ob.epsilon, "observer");
    ob.decay_rate = detail::num_or(o, "decay_rate", ob.decay_rate, "observer");
    ob.hold = detail::num_or(o, "hold", ob.hold, "observer");
    if (o.contains("threshold")) ob.threshold = detail::num(o, "threshold", "observer");
    ob.scaling = o.value("scaling", false);
    ob.quantize = o.value("quantize", false);
    const std::string obj = o.value("objective", std::string("feasibility"));
    if (obj == "feasibility") ob.objective = Objective::Feasibility;
    else if (obj == "min_trace_p") ob.objective = Objective::MinTraceP;
    else throw ValidationError("observer.objective must be 'feasibility' or 'min_trace_p'");
    if (o.contains("gain")) ob.gain = detail::vec(o["gain"], "observer.gain");
    if (!(ob.epsilon > 0.0)) throw ValidationError("observer.epsilon must be positive");
    if (!(ob.decay_rate >= 0.0)) throw ValidationError("observer.decay_rate must be >= 0");
    if (!(ob.hold >= 0.0)) throw ValidationError("observer.hold must be >= 0");
    if (ob.threshold && !(*ob.threshold > 0.0))
      throw ValidationError("observer.threshold must be positive");
  }

  if (j.contains("initial")) {
    const json& in = j["initial"];
    detail::only_keys(in, "initial", {"rate_offset", "queue_offset", "estimate"});
    if (in.contains("rate_offset")) s.initial.rate_offset = detail::vec(in["rate_offset"], "initial.rate_offset");
    s.initial.queue_offset = detail::num_or(in, "queue_offset", 0.0, "initial");
    if (in.contains("estimate")) s.estimate0 = detail::vec(in["estimate"], "initial.estimate");
  }

  if (j.contains("operating_point")) {
    const json& op = j["operating_point"];
    if (!op.is_array()) throw ValidationError("operating_point must be an array");
    std::vector<SourceEquilibrium> v;
    for (const auto& e : op) {
      detail::only_keys(e, "operating_point", {"rtt", "fwd_delay", "bwd_delay", "rate", "drop_prob"});
      SourceEquilibrium se;
      se.rtt = detail::num(e, "rtt", "operating_point");
      se.fwd_delay = detail::num(e, "fwd_delay", "operating_point");
      se.bwd_delay = detail::num(e, "bwd_delay", "operating_point");
      se.rate = detail::num(e, "rate", "operating_point");
      se.drop_prob = detail::num(e, "drop_prob", "operating_point");
      if (!(se.rtt > 0.0 && se.rate > 0.0 && se.fwd_delay >= 0.0 && se.bwd_delay >= 0.0 &&
            se.drop_prob > 0.0 && se.drop_prob <= 1.0))
        throw ValidationError("operating_point entries out of range");
      v.push_back(se);
    }
    if (v.size() != s.network.sources.size())
      throw ValidationError("operating_point needs one entry per source");
    s.operating_point = std::move(v);
  }
  return s;
}

[[nodiscard]] inline Scenario load_scenario(const std::filesystem::path& path) {
  return parse_scenario(io::read_file(path));
}

}  // namespace tcpobs
