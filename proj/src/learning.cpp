#include "sslgm/learning.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include <Eigen/Eigenvalues>

#include "sslgm/errors.hpp"
#include "sslgm/util.hpp"

namespace sslgm {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

namespace {

constexpr double kVarianceFloor = 1e-10;
constexpr double kStableLimit = 0.999;

void symmetrize(MatrixXd& m) { m = 0.5 * (m + m.transpose()).eval(); }

double log_sum_exp(const VectorXd& v) {
  const double hi = v.maxCoeff();
  if (!std::isfinite(hi)) return hi;
  return hi + std::log((v.array() - hi).exp().sum());
}

// Weighted EM sufficient statistics of one state.
struct StateStats {
  double n_dyn = 0.0;
  MatrixXd prev;   // sum E[z_{t-1} z_{t-1}^T] over steps t >= 2 labeled s
  MatrixXd cross;  // sum E[z_t z_{t-1}^T]
  MatrixXd cur;    // sum E[z_t z_t^T]
  double n_obs = 0.0;
  MatrixXd yz;     // sum y_t E[z_t]^T
  MatrixXd zz;     // sum E[z_t z_t^T] over all steps labeled s
  MatrixXd yy;     // sum y_t y_t^T
  double n_init = 0.0;
  MatrixXd init;   // sum E[z_1 z_1^T] over episodes starting in s

  StateStats(Index m, Index mz)
      : prev(MatrixXd::Zero(mz, mz)), cross(MatrixXd::Zero(mz, mz)), cur(MatrixXd::Zero(mz, mz)),
        yz(MatrixXd::Zero(m, mz)), zz(MatrixXd::Zero(mz, mz)), yy(MatrixXd::Zero(m, m)),
        init(MatrixXd::Zero(mz, mz)) {}

  void add(const StateStats& o) {
    n_dyn += o.n_dyn;
    prev += o.prev;
    cross += o.cross;
    cur += o.cur;
    n_obs += o.n_obs;
    yz += o.yz;
    zz += o.zz;
    yy += o.yy;
    n_init += o.n_init;
    init += o.init;
  }
};

struct EStepResult {
  std::vector<StateStats> stats;
  double loglik = 0.0;
};

EStepResult e_step(std::span<const LabeledSequence> episodes, const std::vector<StateDynamics>& dyn, Index m,
                   Index mz) {
  const std::size_t N = dyn.size();
  const auto K = static_cast<long>(episodes.size());
  std::vector<std::vector<StateStats>> per_episode(episodes.size());
  std::vector<double> ll(episodes.size(), 0.0);

#pragma omp parallel for schedule(dynamic, 4)
  for (long k = 0; k < K; ++k) {
    const LabeledSequence& ep = episodes[static_cast<std::size_t>(k)];
    std::vector<StateStats>& st = per_episode[static_cast<std::size_t>(k)];
    st.assign(N, StateStats(m, mz));
    if (ep.weight <= 0.0) continue;
    std::vector<int> regime(ep.states.size());
    for (std::size_t t = 0; t < regime.size(); ++t) regime[t] = ep.states[t] - 1;
    const RegimeSchedule schedule{dyn, regime};
    const KalmanResult kf = kalman_filter(schedule, *ep.Y);
    const SmootherResult sm = rts_smoother(schedule, kf);
    const double w = ep.weight;
    ll[static_cast<std::size_t>(k)] = w * kf.loglik;

    const std::size_t T = regime.size();
    for (std::size_t t = 0; t < T; ++t) {
      StateStats& s = st[static_cast<std::size_t>(regime[t])];
      const GaussianBelief& b = sm.smoothed[t];
      const MatrixXd Ezz = b.cov + b.mean * b.mean.transpose();
      const VectorXd y = ep.Y->row(static_cast<Index>(t)).transpose();
      s.n_obs += w;
      s.yz += w * y * b.mean.transpose();
      s.zz += w * Ezz;
      s.yy += w * y * y.transpose();
      if (t == 0) {
        s.n_init += w;
        s.init += w * Ezz;
      } else {
        const GaussianBelief& p = sm.smoothed[t - 1];
        s.n_dyn += w;
        s.prev += w * (p.cov + p.mean * p.mean.transpose());
        s.cross += w * (sm.cross_cov[t - 1] + b.mean * p.mean.transpose());
        s.cur += w * Ezz;
      }
    }
  }

  EStepResult out;
  out.stats.assign(N, StateStats(m, mz));
  for (std::size_t k = 0; k < episodes.size(); ++k) {
    if (per_episode[k].empty()) continue;
    for (std::size_t s = 0; s < N; ++s) out.stats[s].add(per_episode[k][s]);
    out.loglik += ll[k];
  }
  return out;
}

// Solves X * M = B for X, ridging M when it is numerically singular.
MatrixXd right_solve(const MatrixXd& B, MatrixXd M, double ridge, bool& ridged) {
  symmetrize(M);
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(M, Eigen::EigenvaluesOnly);
  const double hi = eig.eigenvalues().maxCoeff();
  const double lo = eig.eigenvalues().minCoeff();
  if (!(lo > 1e-12 * std::max(hi, 1e-300))) {
    const double lambda = std::max(ridge * M.trace() / static_cast<double>(M.rows()), 1e-300);
    M.diagonal().array() += lambda;
    ridged = true;
  }
  return M.ldlt().solve(B.transpose()).transpose();
}

void m_step(const std::vector<StateStats>& stats, std::vector<StateDynamics>& dyn, const std::vector<bool>& frozen,
            double ridge, EmResult& result) {
  for (std::size_t s = 0; s < dyn.size(); ++s) {
    if (frozen[s]) continue;
    const StateStats& st = stats[s];
    StateDynamics& d = dyn[s];
    if (st.n_dyn > 0.0) {
      bool ridged = false;
      d.A = right_solve(st.cross, st.prev, ridge, ridged);
      Eigen::EigenSolver<MatrixXd> ev(d.A, false);
      const double rho = ev.eigenvalues().cwiseAbs().maxCoeff();
      if (rho >= 1.0) {
        d.A *= kStableLimit / rho;
        result.warnings.push_back("state " + std::to_string(s + 1) + ": A rescaled to spectral radius " +
                                  format_double(kStableLimit));
      }
      const MatrixXd Q = (st.cur - d.A * st.cross.transpose() - st.cross * d.A.transpose() +
                          d.A * st.prev * d.A.transpose()) /
                         st.n_dyn;
      d.B_var = Q.diagonal().cwiseMax(kVarianceFloor);
      if (ridged) {
        result.ridge_applied = true;
        result.warnings.push_back("state " + std::to_string(s + 1) + ": ridge applied to lagged moments");
      }
    }
    if (st.n_obs > 0.0) {
      bool ridged = false;
      d.C = right_solve(st.yz, st.zz, ridge, ridged);
      const MatrixXd R = (st.yy - d.C * st.yz.transpose() - st.yz * d.C.transpose() +
                          d.C * st.zz * d.C.transpose()) /
                         st.n_obs;
      d.D_var = R.diagonal().cwiseMax(kVarianceFloor);
      if (ridged) {
        result.ridge_applied = true;
        result.warnings.push_back("state " + std::to_string(s + 1) + ": ridge applied to latent moments");
      }
    }
    if (st.n_init > 0.0) {
      d.Sigma0 = st.init / st.n_init;
      symmetrize(d.Sigma0);
    }
  }
}

StateDynamics pca_dynamics(const MatrixXd& second_moment, const MatrixXd& reference_basis, Index mz) {
  const Index m = second_moment.rows();
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(second_moment);
  // Descending order.
  VectorXd lambda = eig.eigenvalues().reverse();
  MatrixXd U = eig.eigenvectors().rowwise().reverse();
  const Index k = std::min(m, mz);
  const double top = std::max(lambda(0), 1e-12);
  double residual = 0.0;
  if (m > k) {
    residual = lambda.tail(m - k).mean();
  } else {
    residual = 0.05 * std::max(lambda.mean(), 1e-12);
  }
  residual = std::max(residual, 1e-6 * top);

  StateDynamics d = StateDynamics::identity(m, mz);
  d.C.setZero();
  for (Index c = 0; c < k; ++c) {
    VectorXd u = U.col(c);
    if (reference_basis.cols() > c && u.dot(reference_basis.col(c)) < 0.0) u = -u;
    d.C.col(c) = u * std::sqrt(std::max(lambda(c) - residual, 1e-6 * top));
  }
  const VectorXd explained = (d.C * d.C.transpose()).diagonal();
  d.D_var = (second_moment.diagonal() - explained).cwiseMax(residual);
  return d;
}

json vec_json(const std::vector<double>& v) { return json(v); }

}  // namespace

TransitionEstimate estimate_transitions(std::span<const LabeledEpisode> episodes, int N,
                                        std::span<const double> weights, double beta) {
  if (N < 3) throw ConfigError("estimate_transitions needs N >= 3");
  if (!weights.empty() && weights.size() != episodes.size()) {
    throw ContractError("estimate_transitions: weights and episodes differ in length");
  }
  TransitionEstimate out;
  out.p0 = VectorXd::Zero(N);
  MatrixXd counts = MatrixXd::Zero(N, N);
  double total = 0.0;
  for (std::size_t k = 0; k < episodes.size(); ++k) {
    const LabeledEpisode& ep = episodes[k];
    if (ep.relabel_failed || ep.labels.empty()) continue;
    const double w = weights.empty() ? 1.0 : weights[k];
    if (w <= 0.0) continue;
    out.p0(ep.labels.front() - 1) += w;
    total += w;
    for (std::size_t n = 0; n + 1 < ep.labels.size(); ++n) counts(ep.labels[n] - 1, ep.labels[n + 1] - 1) += w;
  }
  if (total <= 0.0) throw DataError("estimate_transitions: no labeled episodes");
  out.p0 /= total;

  out.P = MatrixXd::Zero(N, N);
  out.P(0, 0) = 1.0;
  out.P(N - 1, N - 1) = 1.0;
  for (int i = 1; i < N - 1; ++i) {
    const double down = counts(i, i - 1);
    const double up = counts(i, i + 1);
    if (down + up <= 0.0) out.unvisited.push_back(i + 1);
    const double denom = down + up + 2.0 * beta;
    if (denom <= 0.0) {
      out.P(i, i - 1) = 0.5;
      out.P(i, i + 1) = 0.5;
    } else {
      out.P(i, i - 1) = (down + beta) / denom;
      out.P(i, i + 1) = (up + beta) / denom;
    }
  }
  return out;
}

std::vector<StateDynamics> initialize_dynamics(std::span<const LabeledSequence> episodes, int N, Index latent_dim) {
  Index m = 0;
  for (const LabeledSequence& ep : episodes) {
    if (ep.Y != nullptr) {
      m = ep.Y->cols();
      break;
    }
  }
  if (m == 0) throw DataError("initialize_dynamics: no observations");
  std::vector<MatrixXd> moment(static_cast<std::size_t>(N), MatrixXd::Zero(m, m));
  std::vector<double> count(static_cast<std::size_t>(N), 0.0);
  MatrixXd pooled = MatrixXd::Zero(m, m);
  double pooled_count = 0.0;
  for (const LabeledSequence& ep : episodes) {
    if (ep.weight <= 0.0) continue;
    for (std::size_t t = 0; t < ep.states.size(); ++t) {
      const VectorXd y = ep.Y->row(static_cast<Index>(t)).transpose();
      const MatrixXd outer = ep.weight * y * y.transpose();
      moment[static_cast<std::size_t>(ep.states[t] - 1)] += outer;
      count[static_cast<std::size_t>(ep.states[t] - 1)] += ep.weight;
      pooled += outer;
      pooled_count += ep.weight;
    }
  }
  if (pooled_count <= 0.0) throw DataError("initialize_dynamics: no positively weighted observations");
  pooled /= pooled_count;
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(pooled);
  const MatrixXd reference = eig.eigenvectors().rowwise().reverse();

  std::vector<StateDynamics> out;
  for (int s = 0; s < N; ++s) {
    const auto idx = static_cast<std::size_t>(s);
    const MatrixXd second = count[idx] >= 2.0 ? MatrixXd(moment[idx] / count[idx]) : pooled;
    out.push_back(pca_dynamics(second, reference, latent_dim));
  }
  return out;
}

EmResult em_fit_dynamics(std::span<const LabeledSequence> episodes, int N, Index latent_dim, const EmConfig& config,
                         std::optional<std::vector<StateDynamics>> init) {
  if (episodes.empty()) throw DataError("em_fit_dynamics: no episodes");
  if (latent_dim < 1) throw ConfigError("latent dimension must be >= 1");
  Index m = 0;
  for (const LabeledSequence& ep : episodes) {
    if (ep.Y == nullptr || static_cast<std::size_t>(ep.Y->rows()) != ep.states.size()) {
      throw ContractError("em_fit_dynamics: labels do not match observations");
    }
    for (int s : ep.states) {
      if (s < 1 || s > N) throw ContractError("em_fit_dynamics: label out of range");
    }
    if (m == 0) m = ep.Y->cols();
    if (ep.Y->cols() != m) throw DataError("episodes have inconsistent channel counts");
  }

  EmResult result;
  result.occupancy.assign(static_cast<std::size_t>(N), 0.0);
  for (const LabeledSequence& ep : episodes) {
    if (ep.weight <= 0.0) continue;
    for (int s : ep.states) result.occupancy[static_cast<std::size_t>(s - 1)] += ep.weight;
  }
  const double min_occ = static_cast<double>(config.min_occupancy_factor * latent_dim);
  std::vector<bool> frozen(static_cast<std::size_t>(N), false);
  for (int s = 0; s < N; ++s) {
    const double occ = result.occupancy[static_cast<std::size_t>(s)];
    if (occ >= min_occ) continue;
    const std::string msg = "state " + std::to_string(s + 1) + " has occupancy " + format_double(occ) +
                            " below the minimum " + format_double(min_occ);
    if (config.low_occupancy == LowOccupancy::error) throw DataError(msg);
    result.warnings.push_back(msg + "; keeping its initial dynamics");
    frozen[static_cast<std::size_t>(s)] = true;
  }

  std::vector<StateDynamics> start = init ? std::move(*init) : initialize_dynamics(episodes, N, latent_dim);
  if (start.size() != static_cast<std::size_t>(N)) throw ContractError("em_fit_dynamics: init has wrong state count");

  auto run = [&](std::vector<StateDynamics> dyn, EmResult& res) {
    for (int it = 0;; ++it) {
      EStepResult e = e_step(episodes, dyn, m, latent_dim);
      res.loglik_trace.push_back(e.loglik);
      if (it >= config.max_iters) break;
      if (it > 0) {
        const double prev = res.loglik_trace[static_cast<std::size_t>(it - 1)];
        if (e.loglik - prev < config.tol * std::abs(prev)) break;
      }
      m_step(e.stats, dyn, frozen, config.ridge, res);
    }
    res.dynamics = std::move(dyn);
  };

  run(start, result);
  if (config.restarts > 0 && config.max_iters > 0) {
    Rng rng = make_rng(config.seed);
    std::uniform_real_distribution<double> unif(0.2, 0.8);
    std::normal_distribution<double> normal(0.0, 0.3);
    for (int r = 0; r < config.restarts; ++r) {
      std::vector<StateDynamics> perturbed = start;
      for (std::size_t s = 0; s < perturbed.size(); ++s) {
        if (frozen[s]) continue;
        StateDynamics& d = perturbed[s];
        for (Index i = 0; i < d.A.rows(); ++i) d.A(i, i) = unif(rng);
        for (Index i = 0; i < d.C.size(); ++i) d.C.data()[i] *= 1.0 + normal(rng);
      }
      EmResult trial;
      trial.occupancy = result.occupancy;
      trial.warnings = result.warnings;
      run(perturbed, trial);
      if (trial.loglik_trace.back() > result.loglik_trace.back()) result = std::move(trial);
    }
  }
  return result;
}

double labeled_loglik(const SslgmParams& params, const LabeledEpisode& episode, const MatrixXd& Y) {
  const ChainParams& chain = params.chain;
  const std::vector<int>& S = episode.labels;
  double ll = std::log(chain.p0(S.front() - 1));
  for (std::size_t n = 0; n + 1 < S.size(); ++n) {
    ll += std::log(chain.P(S[n] - 1, S[n + 1] - 1));
    ll += nb_duration_log_pmf(episode.segments[n].length(), chain.duration[static_cast<std::size_t>(S[n] - 1)]);
  }
  std::vector<int> regime;
  for (int s : episode.step_labels()) regime.push_back(s - 1);
  return ll + kalman_filter(RegimeSchedule{params.dynamics, regime}, Y).loglik;
}

namespace {

struct ComponentFit {
  SslgmParams params;
  EmResult em;
  std::vector<std::string> warnings;
};

ComponentFit fit_component(const Dataset& data, std::span<const LabeledEpisode> labeled,
                           const std::vector<double>& weights, const LearningConfig& config,
                           const std::optional<SslgmParams>& previous, int em_iters) {
  const int N = config.N;
  ComponentFit out;
  const TransitionEstimate tr = estimate_transitions(labeled, N, weights, config.mixture.transition_beta);
  for (int s : tr.unvisited) {
    out.warnings.push_back("state " + std::to_string(s) + " has no observed transitions; row set to uniform");
  }

  std::vector<NbDuration> durations(static_cast<std::size_t>(N), NbDuration{1.0, 1.0});
  for (int s = 2; s < N; ++s) {
    std::vector<int> samples;
    std::vector<double> w;
    for (std::size_t k = 0; k < labeled.size(); ++k) {
      const LabeledEpisode& ep = labeled[k];
      if (ep.relabel_failed || weights[k] <= 0.0) continue;
      for (std::size_t n = 0; n + 1 < ep.labels.size(); ++n) {
        if (ep.labels[n] != s) continue;
        samples.push_back(ep.segments[n].length());
        w.push_back(weights[k]);
      }
    }
    NbDuration& d = durations[static_cast<std::size_t>(s - 1)];
    if (samples.size() < 2) {
      d = previous ? previous->chain.duration[static_cast<std::size_t>(s - 1)] : NbDuration{1.0, 0.5};
      out.warnings.push_back("state " + std::to_string(s) + " has fewer than 2 dwell samples; duration not fitted");
      continue;
    }
    const NbFit fit = fit_nb_mle(samples, w);
    d = fit.alpha;
    if (fit.boundary) {
      out.warnings.push_back("state " + std::to_string(s) + ": duration fit hit the parameter boundary");
    }
  }

  std::vector<LabeledSequence> seqs;
  for (std::size_t k = 0; k < labeled.size(); ++k) {
    const LabeledEpisode& ep = labeled[k];
    if (ep.relabel_failed) continue;
    seqs.push_back({&data.records[k].Y, ep.step_labels(), weights[k]});
  }
  EmConfig em = config.em;
  em.max_iters = em_iters;
  std::optional<std::vector<StateDynamics>> init;
  if (previous) init = previous->dynamics;
  out.em = em_fit_dynamics(seqs, N, config.latent_dim, em, std::move(init));
  for (const std::string& w : out.em.warnings) out.warnings.push_back(w);

  out.params.N = N;
  out.params.dynamics = out.em.dynamics;
  out.params.chain.N = N;
  out.params.chain.p0 = tr.p0;
  out.params.chain.P = tr.P;
  out.params.chain.duration = durations;
  return out;
}

// Responsibility-weighted multinomial logistic regression for the mixture
// weights, by Newton's method with an L2 ridge.
MatrixXd fit_weight_coeffs(const std::vector<VectorXd>& x, const MatrixXd& resp, double ridge, MatrixXd coeffs) {
  const Index G = resp.cols();
  const Index d = coeffs.cols();
  const Index n = G * d;
  for (int it = 0; it < 50; ++it) {
    VectorXd grad = VectorXd::Zero(n);
    MatrixXd hess = MatrixXd::Zero(n, n);
    for (std::size_t k = 0; k < x.size(); ++k) {
      VectorXd score = coeffs * x[k];
      score.array() -= score.maxCoeff();
      VectorXd p = score.array().exp();
      p /= p.sum();
      const MatrixXd xx = x[k] * x[k].transpose();
      for (Index g = 0; g < G; ++g) {
        grad.segment(g * d, d) += (resp(static_cast<Index>(k), g) - p(g)) * x[k];
        for (Index h = 0; h < G; ++h) {
          const double c = (g == h ? p(g) : 0.0) - p(g) * p(h);
          hess.block(g * d, h * d, d, d) -= c * xx;
        }
      }
    }
    grad -= ridge * Eigen::Map<const VectorXd>(MatrixXd(coeffs.transpose()).data(), n);
    hess.diagonal().array() -= ridge;
    const VectorXd step = hess.ldlt().solve(-grad);
    for (Index g = 0; g < G; ++g) coeffs.row(g) += step.segment(g * d, d).transpose();
    if (step.cwiseAbs().maxCoeff() < 1e-10) break;
  }
  return coeffs;
}

// Deterministic k-means over per-episode summaries (covariates and log
// second moments per channel) for the initial responsibilities.
MatrixXd initial_responsibilities(const Dataset& data, const std::vector<std::size_t>& valid, int G, std::uint64_t seed) {
  const std::size_t K = valid.size();
  const Index dq = data.covariate_dim;
  const Index m = data.obs_dim;
  MatrixXd F(static_cast<Index>(K), dq + m);
  for (std::size_t i = 0; i < K; ++i) {
    const PatientRecord& r = data.records[valid[i]];
    F.row(static_cast<Index>(i)).head(dq) = r.q.transpose();
    F.row(static_cast<Index>(i)).tail(m) =
        (r.Y.array().square().colwise().mean() + 1e-12).log().matrix();
  }
  const VectorXd mu = F.colwise().mean();
  VectorXd sd = ((F.rowwise() - mu.transpose()).array().square().colwise().mean()).sqrt().matrix();
  for (Index c = 0; c < sd.size(); ++c) {
    if (sd(c) < 1e-12) sd(c) = 1.0;
  }
  F = ((F.rowwise() - mu.transpose()).array().rowwise() / sd.transpose().array()).matrix();

  // k-means++ seeding.
  Rng rng = make_rng(seed, 0xC1);
  MatrixXd centers(G, F.cols());
  std::uniform_int_distribution<std::size_t> first(0, K - 1);
  centers.row(0) = F.row(static_cast<Index>(first(rng)));
  VectorXd dist(static_cast<Index>(K));
  for (int g = 1; g < G; ++g) {
    for (std::size_t i = 0; i < K; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (int h = 0; h < g; ++h) best = std::min(best, (F.row(static_cast<Index>(i)) - centers.row(h)).squaredNorm());
      dist(static_cast<Index>(i)) = best;
    }
    std::uniform_real_distribution<double> unif(0.0, dist.sum());
    double u = unif(rng);
    Index pick = static_cast<Index>(K) - 1;
    for (Index i = 0; i < dist.size(); ++i) {
      u -= dist(i);
      if (u < 0.0) {
        pick = i;
        break;
      }
    }
    centers.row(g) = F.row(pick);
  }
  std::vector<int> assign(K, 0);
  for (int it = 0; it < 100; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < K; ++i) {
      int best_g = 0;
      double best = std::numeric_limits<double>::infinity();
      for (int g = 0; g < G; ++g) {
        const double d = (F.row(static_cast<Index>(i)) - centers.row(g)).squaredNorm();
        if (d < best) {
          best = d;
          best_g = g;
        }
      }
      if (assign[i] != best_g) changed = true;
      assign[i] = best_g;
    }
    MatrixXd sums = MatrixXd::Zero(G, F.cols());
    VectorXd counts = VectorXd::Zero(G);
    for (std::size_t i = 0; i < K; ++i) {
      sums.row(assign[i]) += F.row(static_cast<Index>(i));
      counts(assign[i]) += 1.0;
    }
    for (int g = 0; g < G; ++g) {
      if (counts(g) > 0.0) centers.row(g) = sums.row(g) / counts(g);
    }
    if (!changed && it > 0) break;
  }
  MatrixXd resp = MatrixXd::Zero(static_cast<Index>(K), G);
  for (std::size_t i = 0; i < K; ++i) resp(static_cast<Index>(i), assign[i]) = 1.0;
  return resp;
}

}  // namespace

MixtureFit fit_mixture(const Dataset& data, std::span<const LabeledEpisode> labeled, const LearningConfig& config) {
  if (config.G < 1) throw ConfigError("number of components G must be >= 1");
  if (labeled.size() != data.records.size()) throw ContractError("fit_mixture: labels and records differ in length");
  std::vector<std::size_t> valid;
  for (std::size_t k = 0; k < labeled.size(); ++k) {
    if (!labeled[k].relabel_failed) valid.push_back(k);
  }
  if (valid.empty()) throw DataError("fit_mixture: no labeled episodes");
  const std::size_t K = labeled.size();
  const int dq = data.covariate_dim;

  MixtureFit out;
  LearningDiagnostics& diag = out.diagnostics;
  std::vector<VectorXd> x(K);
  for (std::size_t k = 0; k < K; ++k) {
    x[k].resize(dq + 1);
    x[k] << 1.0, data.records[k].q;
  }

  if (config.G == 1) {
    std::vector<double> w(K, 0.0);
    for (std::size_t k : valid) w[k] = 1.0;
    ComponentFit fit = fit_component(data, labeled, w, config, std::nullopt, config.em.max_iters);
    out.model = MixtureModel::single(std::move(fit.params), dq);
    out.responsibilities = MatrixXd::Ones(static_cast<Index>(K), 1);
    diag.occupancy.push_back(fit.em.occupancy);
    diag.em_traces.push_back(fit.em.loglik_trace);
    diag.warnings = fit.warnings;
    double ll = 0.0;
    for (std::size_t k : valid) ll += labeled_loglik(out.model.components[0], labeled[k], data.records[k].Y);
    diag.loglik_trace.push_back(ll);
    diag.final_loglik = ll;
    return out;
  }

  // Responsibilities over all K episodes; invalid rows stay zero.
  MatrixXd resp = MatrixXd::Zero(static_cast<Index>(K), config.G);
  {
    const MatrixXd init = initial_responsibilities(data, valid, config.G, config.em.seed);
    for (std::size_t i = 0; i < valid.size(); ++i) resp.row(static_cast<Index>(valid[i])) = init.row(static_cast<Index>(i));
  }
  std::vector<std::optional<SslgmParams>> params(static_cast<std::size_t>(config.G));
  MatrixXd coeffs = MatrixXd::Zero(config.G, dq + 1);
  std::vector<ComponentFit> fits;

  for (int outer = 0; outer < config.mixture.max_outer_iters; ++outer) {
    // Prune components that own no episode.
    std::vector<int> keep;
    for (int g = 0; g < resp.cols(); ++g) {
      if (resp.col(g).maxCoeff() >= config.mixture.prune_threshold) {
        keep.push_back(g);
      } else {
        diag.warnings.push_back("component " + std::to_string(g + 1) + " pruned at outer iteration " +
                                std::to_string(outer + 1));
        log().warn("{}", diag.warnings.back());
      }
    }
    if (keep.size() != static_cast<std::size_t>(resp.cols())) {
      MatrixXd r2(resp.rows(), static_cast<Index>(keep.size()));
      MatrixXd c2(static_cast<Index>(keep.size()), coeffs.cols());
      std::vector<std::optional<SslgmParams>> p2;
      for (std::size_t i = 0; i < keep.size(); ++i) {
        r2.col(static_cast<Index>(i)) = resp.col(keep[i]);
        c2.row(static_cast<Index>(i)) = coeffs.row(keep[i]);
        p2.push_back(params[static_cast<std::size_t>(keep[i])]);
      }
      resp = r2;
      coeffs = c2;
      params = p2;
      for (std::size_t k : valid) {
        const double s = resp.row(static_cast<Index>(k)).sum();
        if (s > 0.0) resp.row(static_cast<Index>(k)) /= s;
      }
    }
    const Index G = resp.cols();

    // M-step.
    fits.clear();
    for (Index g = 0; g < G; ++g) {
      std::vector<double> w(K);
      for (std::size_t k = 0; k < K; ++k) w[k] = resp(static_cast<Index>(k), g);
      fits.push_back(fit_component(data, labeled, w, config, params[static_cast<std::size_t>(g)],
                                   config.mixture.inner_em_iters));
      params[static_cast<std::size_t>(g)] = fits.back().params;
    }
    {
      std::vector<VectorXd> xv;
      MatrixXd rv(static_cast<Index>(valid.size()), G);
      for (std::size_t i = 0; i < valid.size(); ++i) {
        xv.push_back(x[valid[i]]);
        rv.row(static_cast<Index>(i)) = resp.row(static_cast<Index>(valid[i]));
      }
      coeffs = fit_weight_coeffs(xv, rv, config.mixture.weight_ridge, coeffs);
    }

    // E-step.
    MixtureModel model;
    for (Index g = 0; g < G; ++g) model.components.push_back(*params[static_cast<std::size_t>(g)]);
    model.weight_coeffs = coeffs;
    std::vector<double> row_ll(K, 0.0);
    MatrixXd new_resp = MatrixXd::Zero(static_cast<Index>(K), G);
    const auto n_valid = static_cast<long>(valid.size());
#pragma omp parallel for schedule(dynamic, 4)
    for (long i = 0; i < n_valid; ++i) {
      const std::size_t k = valid[static_cast<std::size_t>(i)];
      const VectorXd logw = model.weights(data.records[k].q).array().log().matrix();
      VectorXd lp(G);
      for (Index g = 0; g < G; ++g) {
        lp(g) = logw(g) + labeled_loglik(model.components[static_cast<std::size_t>(g)], labeled[k], data.records[k].Y);
      }
      const double lse = log_sum_exp(lp);
      row_ll[k] = lse;
      new_resp.row(static_cast<Index>(k)) = (lp.array() - lse).exp().matrix().transpose();
    }
    double ll = 0.0;
    for (std::size_t k : valid) ll += row_ll[k];
    resp = new_resp;
    diag.loglik_trace.push_back(ll);
    out.model = std::move(model);
    const std::size_t n = diag.loglik_trace.size();
    if (n > 1 && std::abs(ll - diag.loglik_trace[n - 2]) < config.mixture.outer_tol * std::abs(diag.loglik_trace[n - 2])) {
      break;
    }
  }

  out.responsibilities = resp;
  for (const ComponentFit& f : fits) {
    diag.occupancy.push_back(f.em.occupancy);
    diag.em_traces.push_back(f.em.loglik_trace);
    for (const std::string& w : f.warnings) diag.warnings.push_back(w);
  }
  diag.final_loglik = diag.loglik_trace.back();
  return out;
}

LearningResult backward_labeling_em(const Dataset& data, const LearningConfig& config) {
  if (config.N < 3) throw ConfigError("number of states N must be >= 3");
  if (config.G < 1) throw ConfigError("number of components G must be >= 1");
  if (config.latent_dim < 1) throw ConfigError("latent dimension must be >= 1");
  config.segmentation.validate();
  if (data.records.empty()) throw DataError("dataset has no episodes");

  const std::size_t K = data.records.size();
  std::vector<Segmentation> segs(K);
#pragma omp parallel for schedule(dynamic, 4)
  for (long k = 0; k < static_cast<long>(K); ++k) {
    SegmentationConfig sc = config.segmentation;
    sc.seed = config.segmentation.seed ^ (0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(k + 1));
    segs[static_cast<std::size_t>(k)] = segment_episode(data.records[static_cast<std::size_t>(k)].Y, sc);
  }

  std::vector<std::size_t> order(K);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return data.records[a].id < data.records[b].id; });

  LearningResult result;
  LearningDiagnostics& diag = result.diagnostics;
  result.labeled.resize(K);
  ExemplarPool pool(config.pool_capacity);
  std::size_t failed = 0;
  for (std::size_t k : order) {
    const PatientRecord& rec = data.records[k];
    diag.segment_count_histogram[static_cast<int>(segs[k].size())] += 1;
    const PartialLabels partial = label_absorbing(segs[k].size(), rec.F, config.N);
    LabeledEpisode ep = backward_label(rec.id, rec.Y, segs[k], partial, config.N, config.segmentation.zeta, pool);
    if (ep.relabel_failed) {
      ++failed;
      diag.relabel_failed_ids.push_back(rec.id);
    } else {
      for (std::size_t n = 0; n < ep.segments.size(); ++n) {
        pool.add(ep.labels[n], rec.Y.middleRows(ep.segments[n].start, ep.segments[n].length()));
      }
    }
    result.labeled[k] = std::move(ep);
  }
  diag.relabel_failed_rate = static_cast<double>(failed) / static_cast<double>(K);
  if (diag.relabel_failed_rate > config.max_relabel_failed_rate || failed == K) {
    throw DataError("backward labeling failed for " + std::to_string(failed) + " of " + std::to_string(K) +
                    " episodes; the segmentation is incompatible with N=" + std::to_string(config.N));
  }
  if (failed > 0) {
    log().info("{} of {} episodes excluded after relabel failure", failed, K);
  }

  MixtureFit fit = fit_mixture(data, result.labeled, config);
  result.model = std::move(fit.model);
  auto hist = std::move(diag.segment_count_histogram);
  auto ids = std::move(diag.relabel_failed_ids);
  const double rate = diag.relabel_failed_rate;
  diag = std::move(fit.diagnostics);
  diag.segment_count_histogram = std::move(hist);
  diag.relabel_failed_ids = std::move(ids);
  diag.relabel_failed_rate = rate;
  for (std::size_t s = 0; s < diag.occupancy.size(); ++s) {
    for (std::size_t i = 0; i < diag.occupancy[s].size(); ++i) {
      if (diag.occupancy[s][i] < static_cast<double>(config.em.min_occupancy_factor * config.latent_dim)) {
        log().warn("component {} state {} has low occupancy ({})", s + 1, i + 1, diag.occupancy[s][i]);
      }
    }
  }
  return result;
}

json LearningConfig::to_json() const {
  return json{{"states", N},
              {"components", G},
              {"latent_dim", latent_dim},
              {"segmentation",
               {{"zeta", segmentation.zeta},
                {"min_size", segmentation.min_size},
                {"n_permutations", segmentation.n_permutations},
                {"significance", segmentation.significance},
                {"max_changepoints", segmentation.max_changepoints},
                {"agglo_penalty", segmentation.agglo_penalty},
                {"seed", segmentation.seed}}},
              {"em",
               {{"max_iters", em.max_iters},
                {"tol", em.tol},
                {"min_occupancy_factor", em.min_occupancy_factor},
                {"ridge", em.ridge},
                {"low_occupancy", em.low_occupancy == LowOccupancy::error ? "error" : "keep_initial"},
                {"restarts", em.restarts},
                {"seed", em.seed}}},
              {"mixture",
               {{"max_outer_iters", mixture.max_outer_iters},
                {"outer_tol", mixture.outer_tol},
                {"inner_em_iters", mixture.inner_em_iters},
                {"weight_ridge", mixture.weight_ridge},
                {"prune_threshold", mixture.prune_threshold},
                {"transition_beta", mixture.transition_beta}}},
              {"pool_capacity", pool_capacity},
              {"max_relabel_failed_rate", max_relabel_failed_rate}};
}

json LearningDiagnostics::to_json() const {
  json hist = json::object();
  for (const auto& [count, n] : segment_count_histogram) hist[std::to_string(count)] = n;
  json occ = json::array();
  for (const auto& o : occupancy) occ.push_back(vec_json(o));
  json traces = json::array();
  for (const auto& t : em_traces) traces.push_back(vec_json(t));
  return json{{"segment_count_histogram", std::move(hist)},
              {"relabel_failed_rate", relabel_failed_rate},
              {"relabel_failed_ids", relabel_failed_ids},
              {"occupancy", std::move(occ)},
              {"loglik_trace", vec_json(loglik_trace)},
              {"em_loglik_traces", std::move(traces)},
              {"final_loglik", final_loglik},
              {"warnings", warnings}};
}

}  // namespace sslgm
