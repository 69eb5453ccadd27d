#pragma once

#include <random>
#include <vector>

#include <Eigen/Dense>

#include "sslgm/lgm.hpp"
#include "sslgm/semi_markov.hpp"

namespace oracle {

inline Eigen::MatrixXd random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = n(rng);
  return m;
}

inline sslgm::StateDynamics random_dynamics(std::mt19937_64& rng, Eigen::Index m, Eigen::Index mz) {
  std::uniform_real_distribution<double> u(0.1, 1.0);
  sslgm::StateDynamics d;
  d.A = random_matrix(rng, mz, mz);
  const double rho = d.A.eigenvalues().cwiseAbs().maxCoeff();
  d.A *= u(rng) * 0.95 / std::max(rho, 1e-3);
  d.B_var = Eigen::VectorXd::NullaryExpr(mz, [&] { return u(rng); });
  d.C = random_matrix(rng, m, mz);
  d.D_var = Eigen::VectorXd::NullaryExpr(m, [&] { return u(rng); });
  const Eigen::MatrixXd S = random_matrix(rng, mz, mz, 0.7);
  d.Sigma0 = S * S.transpose() + 0.2 * Eigen::MatrixXd::Identity(mz, mz);
  return d;
}

/// Random birth-death chain with N states and random transient durations.
inline sslgm::ChainParams random_chain(std::mt19937_64& rng, int N) {
  std::uniform_real_distribution<double> u(0.05, 0.95);
  Eigen::VectorXd p0(N);
  for (int i = 0; i < N; ++i) p0(i) = u(rng);
  p0 /= p0.sum();
  std::vector<double> up;
  for (int i = 2; i < N; ++i) up.push_back(u(rng));
  std::vector<sslgm::NbDuration> dur(static_cast<std::size_t>(N));
  for (int i = 1; i < N - 1; ++i) dur[static_cast<std::size_t>(i)] = {0.5 + 3.0 * u(rng), u(rng)};
  return sslgm::ChainParams::birth_death(p0, up, dur);
}

}  // namespace oracle
