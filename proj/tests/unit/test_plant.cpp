#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"
#include "tcpobs/plant.hpp"

using namespace tcpobs;

namespace {

const std::string kDir = TCPOBS_SCENARIO_DIR;

}  // namespace

TEST(Aqm, ZeroErrorHoldsEquilibriumDrop) {
  AqmState st;
  const AqmPolicy pi;
  for (int k = 0; k < 1000; ++k) EXPECT_DOUBLE_EQ(aqm_step(pi, 0.01, 0.0, st, 1e-3), 0.01);
}

TEST(Aqm, ZeroGainsAreConstantDrop) {
  AqmState st;
  const AqmPolicy pi{AqmPolicy::Kind::PI, 0.0, 0.0};
  for (double dq : {-50.0, 0.0, 80.0}) EXPECT_DOUBLE_EQ(aqm_step(pi, 0.02, dq, st, 1e-3), 0.02);
  AqmState st2;
  EXPECT_DOUBLE_EQ(aqm_step(AqmPolicy::constant(), 0.03, 500.0, st2, 1e-3), 0.03);
}

TEST(Aqm, ClampsAndFreezesIntegral) {
  AqmState st;
  const AqmPolicy pi{AqmPolicy::Kind::PI, 1e-3, 1e-2};
  for (int k = 0; k < 1000; ++k) {
    const double p = aqm_step(pi, 0.01, -100.0, st, 1e-2);
    EXPECT_GE(p, 0.0);
    EXPECT_LE(p, 1.0);
  }
  // the output saturates at 0 almost immediately; the integral stops there
  EXPECT_DOUBLE_EQ(st.drop, 0.0);
  EXPECT_GT(st.integral, -1.0);
  // recovery is immediate once the error changes sign
  EXPECT_GT(aqm_step(pi, 0.01, 100.0, st, 1e-2), 0.0);
}

TEST(Aqm, IntegratesQueueError) {
  AqmState st;
  const AqmPolicy pi{AqmPolicy::Kind::PI, 0.0, 1e-3};
  for (int k = 0; k < 100; ++k) (void)aqm_step(pi, 0.1, 2.0, st, 0.01);
  EXPECT_NEAR(st.integral, 2.0, 1e-12);
  EXPECT_NEAR(st.drop, 0.1 + 2e-3, 1e-12);
}

TEST(Plant, EquilibriumIsFixedPoint) {
  Scenario s = testkit::scenario_file("iv_quiescent", kDir);
  const auto prep = prepare(s);
  const auto tr = simulate_plant(prep.cfg, prep.eq, AqmPolicy::constant(), 50.0, 1e-3);
  double dev = 0.0;
  for (std::size_t k = 0; k < tr.samples(); ++k) {
    for (std::size_t i = 0; i < 3; ++i)
      dev = std::max(dev, std::abs(tr.state(k, i) - prep.eq.sources[i].rate));
    dev = std::max(dev, std::abs(tr.state(k, 3) - prep.eq.queue));
  }
  EXPECT_LT(dev, 1e-6 * prep.cfg->capacity);
}

TEST(Plant, BurstStaysInsideBufferAndRegulates) {
  Scenario s = testkit::scenario_file("iv_anomaly", kDir);
  const auto prep = prepare(s);
  const auto tr = simulate_plant(prep.cfg, prep.eq, s.aqm, 230.0, 1e-3);
  double bmax = 0.0, bmin = 1e9;
  for (std::size_t k = 0; k < tr.samples(); ++k) {
    const double b = tr.state(k, 3);
    ASSERT_GE(b, 0.0);
    ASSERT_LE(b, 400.0);
    bmax = std::max(bmax, b);
    bmin = std::min(bmin, b);
    for (std::size_t i = 0; i < 3; ++i) {
      ASSERT_GE(tr.state(k, i), 0.0);
      ASSERT_GE(tr.drop(k, i), 0.0);
      ASSERT_LE(tr.drop(k, i), 1.0);
    }
  }
  EXPECT_GT(bmax, 150.0);  // the burst fills the queue
  // back near the target late in the burst and again well after it
  EXPECT_NEAR(tr.state(165000, 3), 100.0, 20.0);
  EXPECT_NEAR(tr.state(230000, 3), 100.0, 20.0);
  EXPECT_EQ(tr.anomaly[160000], 750.0);
  EXPECT_EQ(tr.anomaly[170000], 0.0);
}

TEST(Plant, PiRegulatesFromOffset) {
  Scenario s = testkit::scenario_file("iv_quiescent", kDir);
  const auto prep = prepare(s);
  const auto tr = simulate_plant(prep.cfg, prep.eq, s.aqm, 200.0, 1e-3, s.initial);
  double sum = 0.0;
  std::size_t cnt = 0;
  for (std::size_t k = 100000; k < tr.samples(); ++k, ++cnt) sum += tr.state(k, 3);
  EXPECT_NEAR(sum / static_cast<double>(cnt), 100.0, 20.0);
}

TEST(Plant, RejectsCoarseStep) {
  Scenario s = testkit::scenario_file("iv_quiescent", kDir);
  const auto prep = prepare(s);
  EXPECT_THROW((void)simulate_plant(prep.cfg, prep.eq, s.aqm, 1.0, 0.01), ValidationError);
}

TEST(Plant, InitialOffsetsNeedOneEntryPerSource) {
  Scenario s = testkit::scenario_file("iv_quiescent", kDir);
  const auto prep = prepare(s);
  PlantInitial bad;
  bad.rate_offset = Eigen::VectorXd::Ones(2);
  EXPECT_THROW((void)simulate_plant(prep.cfg, prep.eq, s.aqm, 1.0, 1e-3, bad), ValidationError);
}
