#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <random>
#include <vector>

#include "support.hpp"
#include "tcpobs/linearizer.hpp"

using namespace tcpobs;

namespace {

const std::string kDir = TCPOBS_SCENARIO_DIR;

/// One source at tau0 = 1, x0 = 1, p0 = 2/3 (window 1 gives p0 = 2/3).
Equilibrium toy_eq() {
  Equilibrium eq;
  eq.queue = 10;
  eq.sources.push_back({1.0, 0.3, 0.7, 1.0, 2.0 / 3.0});
  return eq;
}

ValidatedConfig toy_cfg() {
  // c = 1, b0/c = 0.5, T_p = 0.5: tau0 = 1, window 1, x0 = 1, p0 = 2/3
  NetworkConfig c;
  c.capacity = 1.0;
  c.queue_target = 0.5;
  c.buffer_max = 10;
  c.sources = {{1, 0.3, 0.2, ""}};
  return validate_config(c);
}

void expect_rel(const Eigen::MatrixXd& got, const Eigen::MatrixXd& want, double rel,
                const char* what) {
  ASSERT_EQ(got.rows(), want.rows());
  ASSERT_EQ(got.cols(), want.cols());
  const double floor = 1e-9 * std::max(1.0, want.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < want.rows(); ++i)
    for (Eigen::Index j = 0; j < want.cols(); ++j)
      EXPECT_LE(std::abs(got(i, j) - want(i, j)), rel * std::abs(want(i, j)) + floor)
          << what << "(" << i << "," << j << ") got " << got(i, j) << " want " << want(i, j);
}

}  // namespace

TEST(Coefficients, ToyValues) {
  const auto k = linear_coefficients(toy_eq(), 1.0);
  EXPECT_NEAR(k.a[0], -2.0 / 3.0, 1e-15);
  EXPECT_NEAR(k.e[0], -1.5, 1e-15);
  EXPECT_NEAR(k.h[0], -2.0 / 3.0, 1e-15);  // -2 (1/3) / (1 * 1)
  EXPECT_NEAR(k.f[0], -1.0, 1e-15);
}

TEST(Coefficients, ToyFiniteDifferenceAgreement) {
  // equilibrium of the toy config has tau0 = 1, x0 = 1, p0 = 2/3
  const auto v = toy_cfg();
  const auto eq = compute_equilibrium(v);
  ASSERT_NEAR(eq.sources[0].rtt, 1.0, 1e-15);
  ASSERT_NEAR(eq.sources[0].rate, 1.0, 1e-15);
  ASSERT_NEAR(eq.sources[0].drop_prob, 2.0 / 3.0, 1e-15);
  const auto lin = linearize(eq, v);
  const auto J = fd_jacobian(v, eq, 1e-6);
  EXPECT_NEAR(J.A(0, 0), lin.A(0, 0), 1e-6);
  EXPECT_NEAR(lin.A(0, 0), -2.0 / 3.0, 1e-15);
}

TEST(Linearize, StructureInvariants) {
  std::mt19937_64 rng(3);
  const auto v = validate_config(testkit::random_config(rng, 4));
  const auto eq = compute_equilibrium(v);
  const auto m = linearize(eq, v);
  const Eigen::Index N = 4;
  for (Eigen::Index i = 0; i < N; ++i) {
    for (Eigen::Index j = 0; j < N; ++j) {
      if (i != j) {
        EXPECT_EQ(m.A(i, j), 0.0);
      }
      EXPECT_DOUBLE_EQ(m.Ad(i, j), m.coeffs.f[i] * v->sources[static_cast<std::size_t>(j)].sessions);
    }
    EXPECT_EQ(m.A(i, i), m.coeffs.a[i]);
    EXPECT_EQ(m.A(i, N), m.coeffs.h[i]);
    EXPECT_EQ(m.A(N, i), 0.0);
    EXPECT_EQ(m.Ad(N, i), v->sources[static_cast<std::size_t>(i)].sessions);
    EXPECT_EQ(m.Ad(i, N), 0.0);
    EXPECT_EQ(m.B(i, i), m.coeffs.e[i]);
  }
  EXPECT_EQ(m.A(N, N), 0.0);
  EXPECT_EQ(m.B.row(N).cwiseAbs().sum(), 0.0);
  EXPECT_EQ(m.C.head(N).cwiseAbs().sum(), 0.0);
  EXPECT_EQ(m.C[N], 1.0);
}

TEST(Linearize, CoefficientsStrictlyNegative) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 30; ++t) {
    const auto v = validate_config(testkit::random_config(rng, 1 + t % 5));
    const auto k = linear_coefficients(compute_equilibrium(v), v->capacity);
    EXPECT_LT(k.a.maxCoeff(), 0.0);
    EXPECT_LT(k.h.maxCoeff(), 0.0);
    EXPECT_LT(k.f.maxCoeff(), 0.0);
    EXPECT_LT(k.e.maxCoeff(), 0.0);
  }
}

TEST(Linearize, MatchesFiniteDifferencesOnRandomConfigs) {
  std::mt19937_64 rng(2024);
  for (int n : {1, 2, 3, 5}) {
    for (int t = 0; t < 5; ++t) {
      const auto v = validate_config(testkit::random_config(rng, n));
      const auto eq = compute_equilibrium(v);
      const auto lin = linearize(eq, v);
      const auto J = fd_jacobian(v, eq, 1e-6);
      expect_rel(J.A, lin.A, 1e-5, "A");
      expect_rel(J.Ad, lin.Ad, 1e-5, "Ad");
      expect_rel(J.B, lin.B, 1e-5, "B");
      // x_i(t - tau_i) enters two terms that cancel at an equilibrium
      EXPECT_LT(J.Artt.cwiseAbs().maxCoeff(), 1e-6 * std::max(1.0, lin.A.cwiseAbs().maxCoeff()));
    }
  }
}

TEST(Linearize, FiniteDifferenceStepMustBePositive) {
  const auto v = toy_cfg();
  EXPECT_THROW((void)fd_jacobian(v, compute_equilibrium(v), 0.0), ValidationError);
}

TEST(Augment, StructureAndDecomposition) {
  std::mt19937_64 rng(9);
  const auto v = validate_config(testkit::random_config(rng, 3));
  const auto lin = linearize(compute_equilibrium(v), v);
  const auto aug = augment(lin);
  const Eigen::Index N = 3;
  ASSERT_EQ(aug.dim(), N + 2);
  EXPECT_EQ(aug.A.row(N).cwiseAbs().sum(), 1.0);
  EXPECT_EQ(aug.A(N, N + 1), 1.0);
  EXPECT_EQ(aug.A.row(N + 1).cwiseAbs().sum(), 0.0);
  EXPECT_EQ(aug.B.row(N + 1).cwiseAbs().sum(), 0.0);
  EXPECT_EQ(aug.C[N + 1], 0.0);
  EXPECT_EQ(aug.C[N], 1.0);

  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(N + 2, N + 2);
  for (Eigen::Index i = 0; i < N; ++i) {
    const auto& M = aug.Adi[static_cast<std::size_t>(i)];
    sum += M;
    for (Eigen::Index c = 0; c < N + 2; ++c)
      if (c != i) {
        EXPECT_EQ(M.col(c).cwiseAbs().sum(), 0.0);
      }
    const double eta = v->sources[static_cast<std::size_t>(i)].sessions;
    for (Eigen::Index r = 0; r < N; ++r) EXPECT_DOUBLE_EQ(M(r, i), eta * lin.coeffs.f[r]);
    EXPECT_EQ(M(N, i), eta);
    EXPECT_EQ(M(N + 1, i), 0.0);
  }
  EXPECT_EQ((sum - aug.Ad).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Augment, AppendsOneZeroEigenvalue) {
  std::mt19937_64 rng(13);
  const auto v = validate_config(testkit::random_config(rng, 3));
  const auto lin = linearize(compute_equilibrium(v), v);
  const auto aug = augment(lin);
  auto sorted = [](Eigen::VectorXcd e) {
    std::vector<std::complex<double>> s(e.data(), e.data() + e.size());
    std::sort(s.begin(), s.end(), [](auto a, auto b) {
      return a.real() != b.real() ? a.real() < b.real() : a.imag() < b.imag();
    });
    return s;
  };
  auto base = sorted(lin.A.eigenvalues());
  base.push_back(0.0);
  const auto got = sorted(aug.A.eigenvalues());
  const auto want = sorted(Eigen::Map<Eigen::VectorXcd>(base.data(), static_cast<Eigen::Index>(base.size())));
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_LT(std::abs(got[i] - want[i]), 1e-9);
}

TEST(Augment, RejectsUnobservableModel) {
  LinearModel lin;
  lin.A = Eigen::MatrixXd::Zero(2, 2);
  lin.A(0, 0) = -1.0;  // rate never reaches the queue
  lin.Ad = Eigen::MatrixXd::Zero(2, 2);
  lin.B = Eigen::MatrixXd::Zero(2, 1);
  lin.C = Eigen::RowVectorXd::Zero(2);
  lin.C[1] = 1.0;
  lin.fwd_delays = {0.1};
  lin.bwd_delays = {0.1};
  lin.sessions = {1};
  EXPECT_THROW((void)augment(lin), ValidationError);
}

TEST(Fixture, ReproducesReferenceMatrices) {
  const auto m = testkit::fixture_models(kDir);
  const double diagA[] = {-0.73, -0.22, -0.10};
  const double h[] = {-0.049, -0.008, -0.002};
  const double diagB[] = {-970, -959, -956};
  for (Eigen::Index i = 0; i < 3; ++i) {
    EXPECT_NEAR(m.aug.A(i, i), diagA[i], 0.005);
    EXPECT_NEAR(m.aug.A(i, 3), h[i], 0.005);
    EXPECT_NEAR(m.aug.B(i, i), diagB[i], 0.5);
    EXPECT_NEAR(m.aug.Ad(0, i), -1.34, 0.005);
    EXPECT_NEAR(m.aug.Ad(3, i), 20.0, 0.5);
  }
  EXPECT_NEAR(m.aug.Ad(1, 0), -0.74, 0.005);
  EXPECT_NEAR(m.aug.Ad(2, 0), -0.51, 0.005);
  EXPECT_EQ(m.aug.A(3, 4), 1.0);
  EXPECT_DOUBLE_EQ(m.aug.fwd_delays[0], 0.025);
  EXPECT_DOUBLE_EQ(m.aug.fwd_delays[1], 0.05);
  EXPECT_DOUBLE_EQ(m.aug.fwd_delays[2], 0.075);
}
