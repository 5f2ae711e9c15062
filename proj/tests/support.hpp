#pragma once

// Shared helpers for the unit and acceptance suites.

#include <random>
#include <string>

#include "tcpobs/pipeline.hpp"
#include "tcpobs/scenario.hpp"
#include "tcpobs/topology.hpp"

namespace tcpobs::testkit {

/// Random valid config; deterministic for a given generator state.
inline NetworkConfig random_config(std::mt19937_64& rng, int sources) {
  std::uniform_real_distribution<double> cap(500.0, 10000.0), fwd(0.005, 0.2), bwd(0.01, 0.4),
      frac(0.05, 0.8);
  std::uniform_int_distribution<int> sess(1, 30);
  NetworkConfig c;
  c.capacity = cap(rng);
  c.buffer_max = 100.0 + 900.0 * frac(rng);
  c.queue_target = frac(rng) * c.buffer_max;
  for (int i = 0; i < sources; ++i) c.sources.push_back({sess(rng), fwd(rng), bwd(rng), ""});
  return c;
}

inline Scenario scenario_file(const std::string& stem, const std::string& dir) {
  return load_scenario(dir + "/" + stem + ".json");
}

/// Linear models of the pinned three-source operating point.
inline Models fixture_models(const std::string& dir) {
  return build_models(prepare(scenario_file("fixture_3src", dir)));
}

}  // namespace tcpobs::testkit
