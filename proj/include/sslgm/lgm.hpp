#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "sslgm/util.hpp"

namespace sslgm {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Linear-Gaussian dynamics of one clinical state.
///
///   Z_t = A Z_{t-1} + e_t,   e_t ~ N(0, diag(B_var))
///   Y_t = C Z_t     + w_t,   w_t ~ N(0, diag(D_var))
///
/// Sigma0 is the covariance of Z_1 when the episode starts in this state.
struct StateDynamics {
  MatrixXd A;
  VectorXd B_var;
  MatrixXd C;  // M x M_z
  VectorXd D_var;
  MatrixXd Sigma0;

  Index latent_dim() const { return A.rows(); }
  Index obs_dim() const { return C.rows(); }

  /// Throws ConfigError when dimensions disagree, a variance is negative,
  /// Sigma0 is not symmetric PSD, or A is not stable (spectral radius >= 1).
  void validate() const;

  /// A default-initialised state: A = a*I, unit Sigma0, C = [I 0], unit noise.
  static StateDynamics identity(Index obs_dim, Index latent_dim, double a = 0.5);
};

struct GaussianBelief {
  VectorXd mean;
  MatrixXd cov;
};

/// Per-time-step choice of dynamics: step t uses dynamics[regime[t]].
struct RegimeSchedule {
  std::span<const StateDynamics> dynamics;
  std::span<const int> regime;

  Index length() const { return static_cast<Index>(regime.size()); }
  const StateDynamics& at(Index t) const { return dynamics[static_cast<std::size_t>(regime[static_cast<std::size_t>(t)])]; }
};

struct KalmanStep {
  GaussianBelief posterior;
  double log_likelihood = 0.0;  // log N(y; C m, S)
};

/// Time update Z_t | Y_{1..t-1} from Z_{t-1} | Y_{1..t-1}.
GaussianBelief kalman_predict(const GaussianBelief& prior, const StateDynamics& dyn);

/// Measurement update with Joseph-form covariance. `time` is only used to
/// label a DataError for non-finite observations.
KalmanStep kalman_update(const GaussianBelief& predicted, const StateDynamics& dyn,
                         const VectorXd& y, Index time = 0);

/// Prior belief N(0, Sigma0) for the first step of an episode.
GaussianBelief initial_belief(const StateDynamics& dyn);

struct KalmanResult {
  std::vector<GaussianBelief> predicted;
  std::vector<GaussianBelief> filtered;
  double loglik = 0.0;
};

/// Filters Y (T x M, one row per step) under the time-varying schedule.
KalmanResult kalman_filter(const RegimeSchedule& schedule, const MatrixXd& Y);

struct SmootherResult {
  std::vector<GaussianBelief> smoothed;
  /// cross_cov[t-1] = Cov(Z_t, Z_{t-1} | Y_{1..T}) for t = 1..T-1 (0-based t).
  std::vector<MatrixXd> cross_cov;
};

SmootherResult rts_smoother(const RegimeSchedule& schedule, const KalmanResult& filtered);

struct SampledPath {
  MatrixXd Z;  // T x M_z
  MatrixXd Y;  // T x M
};

SampledPath sample_path(const RegimeSchedule& schedule, std::uint64_t seed);
SampledPath sample_path(const RegimeSchedule& schedule, Rng& rng);

/// Log density of N(x; 0, cov) via Cholesky; -inf when cov is not PD.
double log_normal_density(const VectorXd& x, const MatrixXd& cov);

}  // namespace sslgm
