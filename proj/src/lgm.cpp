#include "sslgm/lgm.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include <Eigen/Eigenvalues>

#include "sslgm/errors.hpp"

namespace sslgm {
namespace {

constexpr double kConditionLimit = 1e12;
constexpr double kJitterScale = 1e-9;

void symmetrize(MatrixXd& P) { P = 0.5 * (P + P.transpose()).eval(); }

std::string dims(const MatrixXd& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

// Square root factor L with L L^T = P for a PSD matrix.
MatrixXd psd_factor(const MatrixXd& P) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(P);
  VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal();
}

}  // namespace

void StateDynamics::validate() const {
  const Index mz = A.rows();
  if (A.cols() != mz) throw ConfigError("A must be square, got " + dims(A));
  if (mz < 1) throw ConfigError("latent dimension must be >= 1");
  if (B_var.size() != mz) throw ConfigError("B_var must have " + std::to_string(mz) + " entries");
  if (C.cols() != mz || C.rows() < 1) throw ConfigError("C must be M x " + std::to_string(mz) + ", got " + dims(C));
  if (D_var.size() != C.rows()) throw ConfigError("D_var must have " + std::to_string(C.rows()) + " entries");
  if (Sigma0.rows() != mz || Sigma0.cols() != mz) throw ConfigError("Sigma0 must be " + dims(A) + ", got " + dims(Sigma0));
  if (!A.allFinite() || !C.allFinite() || !B_var.allFinite() || !D_var.allFinite() || !Sigma0.allFinite()) {
    throw ConfigError("dynamics contain non-finite entries");
  }
  if ((B_var.array() < 0.0).any() || (D_var.array() < 0.0).any()) {
    throw ConfigError("noise variances must be nonnegative");
  }
  if ((Sigma0 - Sigma0.transpose()).cwiseAbs().maxCoeff() > 1e-9 * (1.0 + Sigma0.cwiseAbs().maxCoeff())) {
    throw ConfigError("Sigma0 must be symmetric");
  }
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(Sigma0, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().minCoeff() < -1e-9) throw ConfigError("Sigma0 must be positive semidefinite");
  Eigen::EigenSolver<MatrixXd> ev(A, false);
  if (ev.eigenvalues().cwiseAbs().maxCoeff() >= 1.0) {
    throw ConfigError("A must be stable (spectral radius < 1)");
  }
}

StateDynamics StateDynamics::identity(Index obs_dim, Index latent_dim, double a) {
  StateDynamics d;
  d.A = a * MatrixXd::Identity(latent_dim, latent_dim);
  d.B_var = VectorXd::Constant(latent_dim, 1.0 - a * a);
  d.C = MatrixXd::Identity(obs_dim, latent_dim);
  d.D_var = VectorXd::Ones(obs_dim);
  d.Sigma0 = MatrixXd::Identity(latent_dim, latent_dim);
  return d;
}

GaussianBelief initial_belief(const StateDynamics& dyn) {
  return {VectorXd::Zero(dyn.latent_dim()), dyn.Sigma0};
}

GaussianBelief kalman_predict(const GaussianBelief& prior, const StateDynamics& dyn) {
  GaussianBelief out{dyn.A * prior.mean, dyn.A * prior.cov * dyn.A.transpose()};
  out.cov.diagonal() += dyn.B_var;
  symmetrize(out.cov);
  return out;
}

KalmanStep kalman_update(const GaussianBelief& predicted, const StateDynamics& dyn,
                         const VectorXd& y, Index time) {
  const Index m = dyn.obs_dim();
  if (y.size() != m) {
    throw ConfigError("observation has " + std::to_string(y.size()) + " channels, model expects " +
                      std::to_string(m));
  }
  for (Index c = 0; c < m; ++c) {
    if (!std::isfinite(y(c))) {
      throw DataError("non-finite observation at t=" + std::to_string(time + 1) + ", channel " +
                          std::to_string(c + 1),
                      std::nullopt, time + 1, c + 1);
    }
  }

  const MatrixXd& P = predicted.cov;
  const MatrixXd PCt = P * dyn.C.transpose();
  MatrixXd R = dyn.D_var.asDiagonal();
  MatrixXd S = dyn.C * PCt + R;
  symmetrize(S);

  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(S, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (lo <= 0.0 || hi / lo > kConditionLimit) {
    double lambda = kJitterScale * S.trace() / static_cast<double>(m);
    if (!(lambda > 0.0)) lambda = kJitterScale;
    S.diagonal().array() += lambda;
    R.diagonal().array() += lambda;
  }

  Eigen::LLT<MatrixXd> llt(S);
  const VectorXd innovation = y - dyn.C * predicted.mean;
  const MatrixXd K = llt.solve(PCt.transpose()).transpose();

  KalmanStep out;
  out.posterior.mean = predicted.mean + K * innovation;
  const MatrixXd IKC = MatrixXd::Identity(P.rows(), P.cols()) - K * dyn.C;
  out.posterior.cov = IKC * P * IKC.transpose() + K * R * K.transpose();
  symmetrize(out.posterior.cov);

  const MatrixXd L = llt.matrixL();
  const double logdet = 2.0 * L.diagonal().array().log().sum();
  const VectorXd whitened = llt.matrixL().solve(innovation);
  out.log_likelihood = -0.5 * (static_cast<double>(m) * std::log(2.0 * std::numbers::pi) + logdet +
                               whitened.squaredNorm());
  return out;
}

KalmanResult kalman_filter(const RegimeSchedule& schedule, const MatrixXd& Y) {
  const Index T = schedule.length();
  if (T < 1) throw ContractError("kalman_filter needs at least one time step");
  if (Y.rows() != T) {
    throw ConfigError("schedule covers " + std::to_string(T) + " steps but Y has " +
                      std::to_string(Y.rows()) + " rows");
  }
  const Index m = schedule.at(0).obs_dim();
  const Index mz = schedule.at(0).latent_dim();
  if (Y.cols() != m) {
    throw ConfigError("Y has " + std::to_string(Y.cols()) + " channels, model expects " + std::to_string(m));
  }
  for (Index t = 0; t < T; ++t) {
    if (schedule.at(t).obs_dim() != m || schedule.at(t).latent_dim() != mz) {
      throw ConfigError("inconsistent dynamics dimensions at t=" + std::to_string(t + 1));
    }
  }

  KalmanResult out;
  out.predicted.reserve(static_cast<std::size_t>(T));
  out.filtered.reserve(static_cast<std::size_t>(T));
  for (Index t = 0; t < T; ++t) {
    const StateDynamics& dyn = schedule.at(t);
    GaussianBelief pred = t == 0 ? initial_belief(dyn) : kalman_predict(out.filtered.back(), dyn);
    KalmanStep step = kalman_update(pred, dyn, Y.row(t).transpose(), t);
    out.loglik += step.log_likelihood;
    out.predicted.push_back(std::move(pred));
    out.filtered.push_back(std::move(step.posterior));
  }
  return out;
}

SmootherResult rts_smoother(const RegimeSchedule& schedule, const KalmanResult& filtered) {
  const std::size_t T = filtered.filtered.size();
  if (T == 0 || filtered.predicted.size() != T || static_cast<std::size_t>(schedule.length()) != T) {
    throw ContractError("rts_smoother: filter output does not match the schedule length");
  }
  SmootherResult out;
  out.smoothed.resize(T);
  out.cross_cov.resize(T - 1);
  out.smoothed[T - 1] = filtered.filtered[T - 1];
  for (std::size_t k = T - 1; k-- > 0;) {
    const GaussianBelief& f = filtered.filtered[k];
    const GaussianBelief& p = filtered.predicted[k + 1];
    const StateDynamics& next = schedule.at(static_cast<Index>(k + 1));
    // Gain G = P_f A^T P_pred^{-1}, solved as P_pred G^T = A P_f.
    const MatrixXd gain = p.cov.completeOrthogonalDecomposition().solve(next.A * f.cov).transpose();
    GaussianBelief s;
    s.mean = f.mean + gain * (out.smoothed[k + 1].mean - p.mean);
    s.cov = f.cov + gain * (out.smoothed[k + 1].cov - p.cov) * gain.transpose();
    symmetrize(s.cov);
    out.cross_cov[k] = out.smoothed[k + 1].cov * gain.transpose();
    out.smoothed[k] = std::move(s);
  }
  return out;
}

SampledPath sample_path(const RegimeSchedule& schedule, Rng& rng) {
  const Index T = schedule.length();
  if (T < 1) throw ContractError("sample_path needs T >= 1");
  const Index m = schedule.at(0).obs_dim();
  const Index mz = schedule.at(0).latent_dim();
  std::normal_distribution<double> normal;
  auto draw = [&](Index n) {
    VectorXd v(n);
    for (Index i = 0; i < n; ++i) v(i) = normal(rng);
    return v;
  };

  SampledPath out{MatrixXd(T, mz), MatrixXd(T, m)};
  VectorXd z;
  for (Index t = 0; t < T; ++t) {
    const StateDynamics& dyn = schedule.at(t);
    if (dyn.obs_dim() != m || dyn.latent_dim() != mz) {
      throw ConfigError("inconsistent dynamics dimensions at t=" + std::to_string(t + 1));
    }
    if (t == 0) {
      z = psd_factor(dyn.Sigma0) * draw(mz);
    } else {
      z = dyn.A * z + dyn.B_var.cwiseSqrt().cwiseProduct(draw(mz));
    }
    const VectorXd y = dyn.C * z + dyn.D_var.cwiseSqrt().cwiseProduct(draw(m));
    out.Z.row(t) = z.transpose();
    out.Y.row(t) = y.transpose();
  }
  return out;
}

SampledPath sample_path(const RegimeSchedule& schedule, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  return sample_path(schedule, rng);
}

double log_normal_density(const VectorXd& x, const MatrixXd& cov) {
  Eigen::LLT<MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
  const MatrixXd L = llt.matrixL();
  const double logdet = 2.0 * L.diagonal().array().log().sum();
  const VectorXd w = llt.matrixL().solve(x);
  return -0.5 * (static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi) + logdet + w.squaredNorm());
}

}  // namespace sslgm
