#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "support.hpp"
#include "tcpobs/io.hpp"
#include "tcpobs/pipeline.hpp"
#include "tcpobs/scenario.hpp"

using namespace tcpobs;
namespace fs = std::filesystem;

namespace {

const std::string kDir = TCPOBS_SCENARIO_DIR;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("tcpobs_unit_" + name);
  fs::remove_all(p);
  return p;
}

std::string minimal(const std::string& extra = {}) {
  return R"({"schema_version": 1, "network": {"capacity": 100, "buffer_max": 50, "queue_target": 10,
            "sources": [{"sessions": 2, "fwd_prop": 0.05, "bwd_prop": 0.1}]})" +
         extra + "}";
}

}  // namespace

TEST(Format, RoundTripsDoubles) {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 12345.678901234567, 1e22}) {
    EXPECT_EQ(std::strtod(io::fmt(v).c_str(), nullptr), v);
  }
  EXPECT_EQ(io::fmt(-0.0), "0");
}

TEST(AtomicWrite, ReplacesContentWithoutLeftovers) {
  const fs::path dir = scratch("atomic");
  io::write_atomic(dir / "a.csv", "one\n");
  io::write_atomic(dir / "a.csv", "two\n");
  EXPECT_EQ(io::read_file(dir / "a.csv"), "two\n");
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    (void)e;
    ++files;
  }
  EXPECT_EQ(files, 1u);
  fs::remove_all(dir);
}

TEST(CsvParse, RoundTripAndErrors) {
  io::Csv c({"t", "v"});
  c.row({0.0, 1.5}).row({0.1, -2.0});
  const auto t = io::parse_csv(c.str());
  EXPECT_EQ(t.column("v"), 1);
  EXPECT_EQ(t.column("nope"), -1);
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[1][1], -2.0);
  EXPECT_THROW((void)io::parse_csv("a,b\n1,x\n"), ValidationError);
  EXPECT_THROW((void)io::parse_csv("a,b\n1\n"), ValidationError);
}

TEST(Svg, ContainsOnePolylinePerSeries) {
  std::vector<double> t{0, 1, 2, 3};
  const std::string svg = io::svg_chart(
      t, {{"p", {{"a", {1, 2, 3, 4}, "#000"}, {"b", {4, 3, 2, 1}, "#f00", true}}}}, {{1, 2}});
  std::size_t count = 0;
  for (std::size_t pos = 0; (pos = svg.find("<polyline", pos)) != std::string::npos; ++pos) ++count;
  EXPECT_EQ(count, 2u);
  EXPECT_NE(svg.find("<rect"), std::string::npos);
  EXPECT_EQ(svg.rfind("</svg>\n"), svg.size() - 7);
}

TEST(ScenarioParse, MinimalDefaults) {
  const Scenario s = parse_scenario(minimal());
  EXPECT_EQ(s.network.sources.size(), 1u);
  EXPECT_DOUBLE_EQ(s.threshold(), 5.0);  // 5% of capacity
  EXPECT_DOUBLE_EQ(s.observer.hold, 1.0);
  EXPECT_EQ(s.aqm.kind, AqmPolicy::Kind::PI);
}

TEST(ScenarioParse, RejectsBadInput) {
  EXPECT_THROW((void)parse_scenario("{"), ValidationError);
  EXPECT_THROW((void)parse_scenario(R"({"network": {}})"), ValidationError);
  EXPECT_THROW((void)parse_scenario(minimal(R"(, "bogus": 1)")), ValidationError);
  EXPECT_THROW((void)parse_scenario(minimal(R"(, "aqm": {"kind": "red"})")), ValidationError);
  EXPECT_THROW((void)parse_scenario(minimal(R"(, "observer": {"epsilon": -1})")), ValidationError);
  std::string v2 = minimal();
  v2.replace(v2.find("1,"), 2, "2,");
  EXPECT_THROW((void)parse_scenario(v2), ValidationError);
}

TEST(ScenarioParse, ShippedScenariosLoad) {
  for (const char* stem : {"iv_anomaly", "iv_quiescent", "single_source", "zero_forward_delay",
                           "fixture_3src"})
    EXPECT_NO_THROW((void)testkit::scenario_file(stem, kDir)) << stem;
}

TEST(Pipeline, ZeroForwardDelayScenarioRejected) {
  const Scenario s = testkit::scenario_file("zero_forward_delay", kDir);
  const auto m = build_models(prepare(s));
  EXPECT_THROW((void)obtain_gain(s, m.aug), ValidationError);
}

TEST(Pipeline, FixedGainUsesVerification) {
  Scenario s = testkit::scenario_file("fixture_3src", kDir);
  Eigen::VectorXd L(5);
  L << 0.28, 0.46, 0.45, 1.76, 0.54;
  s.observer.gain = L;
  s.observer.decay_rate = 0.0;
  const auto r = obtain_gain(s, build_models(prepare(s)).aug);
  EXPECT_TRUE(r.feasible());
  EXPECT_EQ(r.L, L);
}

TEST(Pipeline, RunsAreByteIdentical) {
  Scenario s = testkit::scenario_file("single_source", kDir);
  s.horizon = 5.0;
  s.initial.queue_offset = 10.0;
  const fs::path a = scratch("det_a"), b = scratch("det_b");
  (void)run_scenario(s, a);
  (void)run_scenario(s, b);
  for (const char* f : {"trace.csv", "alarms.csv", "metrics.csv", "gain.csv", "equilibrium.csv"})
    EXPECT_EQ(io::read_file(a / f), io::read_file(b / f)) << f;
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Pipeline, SingleSourceEquilibriumRowIsCapacity) {
  const auto p = prepare(testkit::scenario_file("single_source", kDir));
  const std::string csv = equilibrium_csv(p);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "source,sessions,rtt,fwd_delay,bwd_delay,rate,drop_prob,queue");
  const std::string row = csv.substr(csv.find('\n') + 1);
  std::vector<std::string> cells;
  std::stringstream ss(row.substr(0, row.find('\n')));
  for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
  ASSERT_EQ(cells.size(), 8u);
  EXPECT_NEAR(std::stod(cells[5]), 2500.0, 1e-9);
}
