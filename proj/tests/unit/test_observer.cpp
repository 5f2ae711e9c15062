#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support.hpp"
#include "tcpobs/observer.hpp"

using namespace tcpobs;

namespace {

const std::string kDir = TCPOBS_SCENARIO_DIR;

class ObserverModel : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    aug_ = new AugmentedModel(testkit::fixture_models(kDir).aug);
    SynthesisOptions o;
    o.decay_rate = 0.2;
    L_ = new Eigen::VectorXd(synthesize_gain(*aug_, o).L);
  }
  static void TearDownTestSuite() {
    delete aug_;
    delete L_;
  }
  static AugmentedModel* aug_;
  static Eigen::VectorXd* L_;
};
AugmentedModel* ObserverModel::aug_ = nullptr;
Eigen::VectorXd* ObserverModel::L_ = nullptr;

/// Smooth drop-deviation signal, defined for all t.
double drop_signal(std::size_t i, double t) {
  return 1e-4 * std::sin(0.5 * t + static_cast<double>(i));
}

}  // namespace

TEST_F(ObserverModel, ZeroInputsStayAtZero) {
  const double h = 1e-3, T = 5.0;
  GridSeries y(1, h, [](std::size_t, double) { return 0.0; });
  GridSeries u(3, h, [](std::size_t, double) { return 0.0; });
  for (std::size_t k = 0; k <= 5000; ++k) {
    y.push_back(Eigen::VectorXd::Zero(1));
    u.push_back(Eigen::VectorXd::Zero(3));
  }
  const GridSeries xh = run_observer(*aug_, *L_, y, u, T, h);
  for (std::size_t k = 0; k < xh.samples(); ++k) ASSERT_EQ(xh.sample(k).cwiseAbs().maxCoeff(), 0.0);
}

TEST_F(ObserverModel, ReproducesLinearPlantFromSampledOutput) {
  const double T = 10.0;
  Eigen::VectorXd z0(5);
  z0 << 2.0, -1.0, 0.5, 3.0, 0.0;
  auto delayed_u = [&](double t) {
    Eigen::VectorXd u(3);
    for (std::size_t i = 0; i < 3; ++i) u[static_cast<Eigen::Index>(i)] = drop_signal(i, t - aug_->bwd_delays[i]);
    return u;
  };
  auto max_err = [&](double h) {
    // plant alone: the joint integrator with a zero gain observer slot
    const GridSeries joint = linear_closed_loop(*aug_, Eigen::VectorXd::Zero(5), delayed_u, z0, z0, T, h);
    GridSeries y(1, h, [&](std::size_t, double) { return z0[3]; });
    GridSeries u(3, h, drop_signal);
    Eigen::VectorXd yk(1), uk(3);
    for (std::size_t k = 0; k < joint.samples(); ++k) {
      yk[0] = joint(k, 3);
      for (std::size_t i = 0; i < 3; ++i) uk[static_cast<Eigen::Index>(i)] = drop_signal(i, joint.time(k));
      y.push_back(yk);
      u.push_back(uk);
    }
    const GridSeries xh = run_observer(*aug_, *L_, y, u, T, h, z0);
    double err = 0.0;
    for (std::size_t k = 0; k < xh.samples(); ++k)
      err = std::max(err, (xh.sample(k) - joint.sample(k).head(5)).cwiseAbs().maxCoeff());
    return err;
  };
  // only the linear interpolation of sampled y and u separates the two: O(h^2)
  const double coarse = max_err(1e-3), fine = max_err(5e-4);
  EXPECT_LT(coarse, 1e-4);
  EXPECT_GT(coarse / fine, 3.0) << coarse << " " << fine;
}

TEST_F(ObserverModel, JointLinearLoopMatchesErrorDynamics) {
  const double h = 1e-3, T = 20.0;
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> ud(-1.0, 1.0);
  Eigen::VectorXd z0(5), zh0 = Eigen::VectorXd::Zero(5);
  for (Eigen::Index i = 0; i < 5; ++i) z0[i] = ud(rng);
  auto delayed_u = [&](double t) {
    Eigen::VectorXd u(3);
    for (std::size_t i = 0; i < 3; ++i) u[static_cast<Eigen::Index>(i)] = drop_signal(i, t);
    return u;
  };
  const GridSeries joint = linear_closed_loop(*aug_, *L_, delayed_u, z0, zh0, T, h);
  const GridSeries err = simulate_error(*aug_, *L_, z0 - zh0, T, h);
  ASSERT_EQ(joint.samples(), err.samples());
  double d = 0.0;
  for (std::size_t k = 0; k < err.samples(); ++k) {
    const Eigen::VectorXd e = joint.sample(k).head(5) - joint.sample(k).tail(5);
    d = std::max(d, (e - err.sample(k)).cwiseAbs().maxCoeff());
  }
  EXPECT_LT(d, 1e-8);
}

TEST_F(ObserverModel, RejectsMismatchedGrid) {
  GridSeries y(1, 2e-3, [](std::size_t, double) { return 0.0; });
  GridSeries u(3, 1e-3, [](std::size_t, double) { return 0.0; });
  for (int k = 0; k < 10; ++k) {
    y.push_back(Eigen::VectorXd::Zero(1));
    u.push_back(Eigen::VectorXd::Zero(3));
  }
  EXPECT_THROW((void)run_observer(*aug_, *L_, y, u, 0.005, 1e-3), ValidationError);
}

TEST_F(ObserverModel, RejectsWrongGain) {
  EXPECT_THROW((void)simulate_error(*aug_, Eigen::VectorXd::Zero(4), Eigen::VectorXd::Zero(5), 1.0, 1e-3),
               ValidationError);
}

TEST(ClosedLoop, QuiescentEquilibriumGivesZeroEstimates) {
  Scenario s = testkit::scenario_file("iv_quiescent", kDir);
  s.initial = {};
  const auto prep = prepare(s);
  const auto models = build_models(prep);
  Eigen::VectorXd L(5);
  L << 0.28, 0.46, 0.45, 1.76, 0.54;
  const auto tr = closed_loop(prep.cfg, prep.eq, models.aug, s.aqm, L, 20.0, 1e-3);
  for (std::size_t k = 0; k < tr.samples(); ++k) {
    ASSERT_LT(std::abs(tr.anomaly_hat(k)), 1e-9);
    ASSERT_LT(std::abs(tr.queue_dev_hat(k)), 1e-9);
  }
}

TEST(ClosedLoop, QuantizedMeasurementStillRegulated) {
  Scenario s = testkit::scenario_file("iv_quiescent", kDir);
  const auto prep = prepare(s);
  const auto models = build_models(prep);
  Eigen::VectorXd L(5);
  L << 0.28, 0.46, 0.45, 1.76, 0.54;
  ClosedLoopOptions o;
  o.initial = s.initial;
  o.measurement.quantize = true;
  const auto tr = closed_loop(prep.cfg, prep.eq, models.aug, s.aqm, L, 20.0, 1e-3, o);
  for (std::size_t k = 0; k < tr.samples(); ++k) ASSERT_TRUE(tr.joint.sample(k).allFinite());
}

TEST(Alarms, QuiescentSeriesHasNoAlarm) {
  const std::vector<double> d(10000, 0.0);
  EXPECT_TRUE(detect_anomalies(d, 1e-3, 125.0, 1.0).intervals.empty());
}

TEST(Alarms, SyntheticStepGivesOneInterval) {
  const double h = 1e-3;
  std::vector<double> d(250001, 0.0);
  for (std::size_t k = 150000; k < 170000; ++k) d[k] = 750.0;
  const auto rep = detect_anomalies(d, h, 125.0, 1.0);
  ASSERT_EQ(rep.intervals.size(), 1u);
  const auto& iv = rep.intervals[0];
  EXPECT_GE(iv.onset, 150.0 - 1e-9);
  EXPECT_LE(iv.onset, 151.0);
  EXPECT_GE(iv.clear, 170.0 - 1e-9);
  EXPECT_LE(iv.clear, 171.0);
  EXPECT_GE(iv.clear - iv.onset, 1.0);
  EXPECT_NEAR(iv.mean_estimate, 750.0, 1e-9);
  EXPECT_FALSE(iv.open);
}

TEST(Alarms, ShortBlipsIgnoredAndNegativeExcursionsCount) {
  const double h = 0.01;
  std::vector<double> d(3000, 0.0);
  for (std::size_t k = 100; k < 150; ++k) d[k] = 500.0;  // 0.5 s, below hold
  for (std::size_t k = 1000; k < 1300; ++k) d[k] = -500.0;  // 3 s negative
  const auto rep = detect_anomalies(d, h, 125.0, 1.0);
  ASSERT_EQ(rep.intervals.size(), 1u);
  EXPECT_NEAR(rep.intervals[0].onset, 10.0, 1e-9);
}

TEST(Alarms, OpenAtEndOfSeries) {
  std::vector<double> d(500, 0.0);
  for (std::size_t k = 100; k < 500; ++k) d[k] = 300.0;
  const auto rep = detect_anomalies(d, 0.01, 125.0, 1.0);
  ASSERT_EQ(rep.intervals.size(), 1u);
  EXPECT_TRUE(rep.intervals[0].open);
}

TEST(Alarms, MonotoneInMagnitude) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.0, 250.0), bump(0.0, 100.0);
  const double h = 0.05;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> a(2000), b(2000);
    // slowly varying series so dwell runs exist
    double level = u(rng);
    for (std::size_t k = 0; k < a.size(); ++k) {
      if (k % 50 == 0) level = u(rng);
      a[k] = level;
      b[k] = level + bump(rng);
    }
    const auto ra = detect_anomalies(a, h, 125.0, 1.0);
    const auto rb = detect_anomalies(b, h, 125.0, 1.0);
    // every alarmed instant of a is alarmed in b
    for (const auto& iv : ra.intervals) {
      bool covered = false;
      for (const auto& jv : rb.intervals)
        if (jv.onset <= iv.onset + 1e-9 && jv.clear + 1e-9 >= iv.clear) covered = true;
      EXPECT_TRUE(covered) << "trial " << trial;
    }
  }
}

TEST(Alarms, RejectsBadParameters) {
  EXPECT_THROW((void)detect_anomalies({}, 1e-3, 0.0, 1.0), ValidationError);
  EXPECT_THROW((void)detect_anomalies({}, 1e-3, 1.0, -1.0), ValidationError);
}

TEST(Metrics, IdenticalAndOffsetTraces) {
  GridSeries a(2, 0.1), b(2, 0.1), c(2, 0.1);
  for (int k = 0; k < 100; ++k) {
    Eigen::Vector2d v(std::sin(k * 0.1), std::cos(k * 0.1));
    a.push_back(v);
    b.push_back(v);
    c.push_back(v - Eigen::Vector2d::Ones());
  }
  const auto same = error_metrics(a, b);
  EXPECT_EQ(same.rmse[0], 0.0);
  EXPECT_EQ(same.rmse[1], 0.0);
  const auto off = error_metrics(a, c);
  EXPECT_NEAR(off.rmse[0], 1.0, 1e-12);
  EXPECT_NEAR(off.bias[1], 1.0, 1e-12);
  EXPECT_LT(off.convergence_time, 0.0);  // never converges
}

TEST(Metrics, ConvergenceTimeAndGridCheck) {
  GridSeries truth(1, 0.5), est(1, 0.5), other(1, 0.25);
  for (int k = 0; k < 20; ++k) {
    truth.push_back(Eigen::VectorXd::Constant(1, std::pow(0.5, k)));
    est.push_back(Eigen::VectorXd::Zero(1));
    other.push_back(Eigen::VectorXd::Zero(1));
  }
  EXPECT_DOUBLE_EQ(error_metrics(truth, est).convergence_time, 3.5);  // 0.5^7 < 0.01
  EXPECT_THROW((void)error_metrics(truth, other), ValidationError);
}
