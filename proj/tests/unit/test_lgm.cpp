#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "oracles/joint_gaussian.hpp"
#include "oracles/random_models.hpp"
#include "sslgm/errors.hpp"
#include "sslgm/lgm.hpp"

using namespace sslgm;

namespace {

std::vector<StateDynamics> expand(const std::vector<StateDynamics>& dyn, const std::vector<int>& regime) {
  std::vector<StateDynamics> out;
  for (int r : regime) out.push_back(dyn[static_cast<std::size_t>(r)]);
  return out;
}

StateDynamics noiseless_identity() {
  StateDynamics d;
  d.A = Eigen::MatrixXd::Identity(1, 1);
  d.B_var = Eigen::VectorXd::Zero(1);
  d.C = Eigen::MatrixXd::Identity(1, 1);
  d.D_var = Eigen::VectorXd::Constant(1, 1e-12);
  d.Sigma0 = Eigen::MatrixXd::Identity(1, 1);
  return d;
}

}  // namespace

TEST_SUITE("lgm") {

TEST_CASE("noiseless identity emission: filtered and smoothed means equal y") {
  const std::vector<StateDynamics> dyn{noiseless_identity()};
  const std::vector<int> regime(5, 0);
  Eigen::MatrixXd Y(5, 1);
  Y << 0.3, 0.3, 0.3, 0.3, 0.3;  // A = 1 and B = 0: a constant path
  const RegimeSchedule s{dyn, regime};
  const KalmanResult kf = kalman_filter(s, Y);
  const SmootherResult sm = rts_smoother(s, kf);
  for (int t = 0; t < 5; ++t) {
    CHECK(std::abs(kf.filtered[static_cast<std::size_t>(t)].mean(0) - Y(t, 0)) < 1e-6);
    CHECK(std::abs(sm.smoothed[static_cast<std::size_t>(t)].mean(0) - Y(t, 0)) < 1e-6);
  }
}

TEST_CASE("T = 1 loglik is the closed-form marginal") {
  std::mt19937_64 rng(11);
  const std::vector<StateDynamics> dyn{oracle::random_dynamics(rng, 2, 3)};
  const std::vector<int> regime{0};
  Eigen::MatrixXd Y(1, 2);
  Y << 0.7, -1.2;
  const KalmanResult kf = kalman_filter({dyn, regime}, Y);
  const Eigen::MatrixXd S = dyn[0].C * dyn[0].Sigma0 * dyn[0].C.transpose() + Eigen::MatrixXd(dyn[0].D_var.asDiagonal());
  const Eigen::VectorXd y = Y.row(0).transpose();
  const double expect = -0.5 * (2 * std::log(2 * std::numbers::pi) + std::log(S.determinant()) + y.dot(S.inverse() * y));
  CHECK(kf.loglik == doctest::Approx(expect).epsilon(1e-12));
  const SmootherResult sm = rts_smoother({dyn, regime}, kf);
  CHECK(sm.smoothed[0].mean == kf.filtered[0].mean);
  CHECK(sm.smoothed[0].cov == kf.filtered[0].cov);
  CHECK(sm.cross_cov.empty());
}

TEST_CASE("random 2-state model, M = Mz = 2, T = 4 matches the joint Gaussian") {
  std::mt19937_64 rng(2024);
  for (int rep = 0; rep < 20; ++rep) {
    const std::vector<StateDynamics> dyn{oracle::random_dynamics(rng, 2, 2), oracle::random_dynamics(rng, 2, 2)};
    std::vector<int> regime(4);
    for (int& r : regime) r = static_cast<int>(rng() % 2);
    const RegimeSchedule s{dyn, regime};
    const Eigen::MatrixXd Y = sample_path(s, rng()).Y;
    const auto steps = expand(dyn, regime);
    const KalmanResult kf = kalman_filter(s, Y);
    CHECK(std::abs(kf.loglik - oracle::loglik(steps, Y)) < 1e-8);
    for (Eigen::Index t = 0; t < 4; ++t) {
      const Eigen::VectorXd m = oracle::conditional_mean(steps, Y, t + 1);
      CHECK((kf.filtered[static_cast<std::size_t>(t)].mean - m.segment(2 * t, 2)).cwiseAbs().maxCoeff() < 1e-8);
    }
    const SmootherResult sm = rts_smoother(s, kf);
    const Eigen::VectorXd ms = oracle::conditional_mean(steps, Y, 4);
    const Eigen::MatrixXd Ps = oracle::conditional_cov(steps, 4, 2);
    for (Eigen::Index t = 0; t < 4; ++t) {
      const auto& b = sm.smoothed[static_cast<std::size_t>(t)];
      CHECK((b.mean - ms.segment(2 * t, 2)).cwiseAbs().maxCoeff() < 1e-8);
      CHECK((b.cov - Ps.block(2 * t, 2 * t, 2, 2)).cwiseAbs().maxCoeff() < 1e-8);
      CHECK(b.cov.trace() <= kf.filtered[static_cast<std::size_t>(t)].cov.trace() + 1e-9);
      if (t > 0) {
        CHECK((sm.cross_cov[static_cast<std::size_t>(t - 1)] - Ps.block(2 * t, 2 * (t - 1), 2, 2)).cwiseAbs().maxCoeff() <
              1e-8);
      }
    }
    CHECK(sm.smoothed.back().mean == kf.filtered.back().mean);
  }
}

TEST_CASE("loglik is invariant under an orthogonal change of latent basis") {
  std::mt19937_64 rng(5);
  std::vector<StateDynamics> dyn{oracle::random_dynamics(rng, 3, 2), oracle::random_dynamics(rng, 3, 2)};
  for (auto& d : dyn) d.B_var.setConstant(0.4);  // isotropic noise keeps the rotated B diagonal
  for (auto& d : dyn) d.Sigma0 = Eigen::MatrixXd::Identity(2, 2) * 1.3;
  const std::vector<int> regime{0, 0, 1, 1, 0, 1};
  const Eigen::MatrixXd Y = sample_path({dyn, regime}, 9).Y;
  const double theta = 0.83;
  Eigen::MatrixXd R(2, 2);
  R << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
  std::vector<StateDynamics> rot = dyn;
  for (auto& d : rot) {
    d.A = R * d.A * R.transpose();
    d.C = d.C * R.transpose();
    d.Sigma0 = R * d.Sigma0 * R.transpose();
  }
  CHECK(std::abs(kalman_filter({dyn, regime}, Y).loglik - kalman_filter({rot, regime}, Y).loglik) < 1e-8);
}

TEST_CASE("sample_path with zero dynamics leaves only the first latent draw") {
  StateDynamics d;
  d.A = Eigen::MatrixXd::Zero(2, 2);
  d.B_var = Eigen::VectorXd::Zero(2);
  d.C = Eigen::MatrixXd::Identity(2, 2);
  d.D_var = Eigen::VectorXd::Zero(2);
  d.Sigma0 = Eigen::MatrixXd::Identity(2, 2);
  const std::vector<StateDynamics> dyn{d};
  const std::vector<int> regime(6, 0);
  const SampledPath p = sample_path({dyn, regime}, 3);
  CHECK(p.Y.row(0).norm() > 0.0);
  CHECK(p.Y.bottomRows(5).cwiseAbs().maxCoeff() == 0.0);
  CHECK(p.Z.bottomRows(5).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("sample_path is deterministic and Y_1 has mean zero") {
  std::mt19937_64 rng(1);
  const std::vector<StateDynamics> dyn{oracle::random_dynamics(rng, 2, 2)};
  const std::vector<int> regime(3, 0);
  const SampledPath a = sample_path({dyn, regime}, 77);
  const SampledPath b = sample_path({dyn, regime}, 77);
  CHECK(a.Y == b.Y);
  CHECK(a.Z == b.Z);

  const std::vector<int> one{0};
  const int n = 100000;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(2);
  Rng gen = make_rng(123);
  for (int k = 0; k < n; ++k) sum += sample_path({dyn, one}, gen).Y.row(0).transpose();
  const Eigen::MatrixXd var =
      dyn[0].C * dyn[0].Sigma0 * dyn[0].C.transpose() + Eigen::MatrixXd(dyn[0].D_var.asDiagonal());
  for (int c = 0; c < 2; ++c) CHECK(std::abs(sum(c) / n) < 3.0 * std::sqrt(var(c, c) / n));
}

TEST_CASE("errors: non-finite observation, dimension mismatch, length mismatch") {
  std::mt19937_64 rng(3);
  const std::vector<StateDynamics> dyn{oracle::random_dynamics(rng, 2, 2)};
  const std::vector<int> regime(3, 0);
  Eigen::MatrixXd Y = Eigen::MatrixXd::Zero(3, 2);
  Y(1, 1) = std::nan("");
  try {
    kalman_filter({dyn, regime}, Y);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(e.time() == 2);
    CHECK(e.channel() == 2);
  }
  CHECK_THROWS_AS(kalman_filter({dyn, regime}, Eigen::MatrixXd::Zero(3, 3)), ConfigError);
  const KalmanResult kf = kalman_filter({dyn, regime}, Eigen::MatrixXd::Zero(3, 2));
  const std::vector<int> shorter(2, 0);
  CHECK_THROWS_AS(rts_smoother({dyn, shorter}, kf), ContractError);
}

TEST_CASE("near-degenerate innovation covariance stays finite") {
  StateDynamics d = StateDynamics::identity(2, 2, 0.5);
  d.D_var.setZero();
  d.B_var.setZero();
  const std::vector<StateDynamics> dyn{d};
  const std::vector<int> regime(4, 0);
  Eigen::MatrixXd Y(4, 2);
  Y << 1, 2, 0.5, 1, 0.25, 0.5, 0.125, 0.25;
  const KalmanResult kf = kalman_filter({dyn, regime}, Y);
  CHECK(std::isfinite(kf.loglik));
  for (const auto& b : kf.filtered) CHECK((b.cov - b.cov.transpose()).norm() == 0.0);
}

TEST_CASE("validate rejects unstable A and bad variances") {
  StateDynamics d = StateDynamics::identity(2, 2);
  CHECK_NOTHROW(d.validate());
  d.A(0, 0) = 1.0;
  CHECK_THROWS_AS(d.validate(), ConfigError);
  d = StateDynamics::identity(2, 2);
  d.D_var(1) = -0.1;
  CHECK_THROWS_AS(d.validate(), ConfigError);
}

}
