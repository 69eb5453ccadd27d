#include "sslgm/inference.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <string>

#include "sslgm/errors.hpp"
#include "sslgm/util.hpp"

namespace sslgm {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::vector<double> hazard_table(const ChainParams& chain, int d_max) {
  std::vector<double> hz(static_cast<std::size_t>(chain.N * d_max), 1.0);
  for (int s = 2; s < chain.N; ++s) {
    const NbDuration& a = chain.duration[static_cast<std::size_t>(s - 1)];
    double survival = 1.0;
    for (int d = 0; d < d_max; ++d) {
      double h = 1.0;
      if (d + 1 < d_max && survival > 1e-300) {
        const double p = nb_duration_pmf(d + 1, a);
        h = std::clamp(p / survival, 0.0, 1.0);
        survival = std::max(survival - p, 0.0);
      }
      hz[static_cast<std::size_t>((s - 1) * d_max + d)] = h;
    }
  }
  return hz;
}

struct ChainPrediction {
  MatrixXd alpha;  // N x d_max
  MatrixXd joint;  // joint(j, i) = P(X_{t-1} = j, X_t = i | Y_1..t-1)
};

ChainPrediction predict_chain(const ChainParams& chain, const std::vector<double>& hazard, const MatrixXd& alpha) {
  const int N = chain.N;
  const auto d_max = static_cast<int>(alpha.cols());
  ChainPrediction out{MatrixXd::Zero(N, d_max), MatrixXd::Zero(N, N)};
  for (int j = 0; j < N; ++j) {
    if (j == 0 || j == N - 1) {
      out.alpha(j, 0) += alpha(j, 0);
      out.joint(j, j) += alpha(j, 0);
      continue;
    }
    double ending = 0.0;
    for (int d = 0; d < d_max; ++d) {
      const double a = alpha(j, d);
      if (a == 0.0) continue;
      const double hz = hazard[static_cast<std::size_t>(j * d_max + d)];
      if (d + 1 < d_max) {
        out.alpha(j, d + 1) += a * (1.0 - hz);
        out.joint(j, j) += a * (1.0 - hz);
      }
      ending += a * hz;
    }
    for (int i : {j - 1, j + 1}) {
      const double m = ending * chain.P(j, i);
      out.alpha(i, 0) += m;
      out.joint(j, i) += m;
    }
  }
  return out;
}

GaussianBelief moment_match(const std::vector<const GaussianBelief*>& parts, const std::vector<double>& weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  GaussianBelief out{VectorXd::Zero(parts.front()->mean.size()),
                     MatrixXd::Zero(parts.front()->cov.rows(), parts.front()->cov.cols())};
  for (std::size_t k = 0; k < parts.size(); ++k) out.mean += (weights[k] / total) * parts[k]->mean;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const VectorXd diff = parts[k]->mean - out.mean;
    out.cov += (weights[k] / total) * (parts[k]->cov + diff * diff.transpose());
  }
  out.cov = 0.5 * (out.cov + out.cov.transpose()).eval();
  return out;
}

double log_sum_exp(const std::vector<double>& v) {
  double hi = kNegInf;
  for (double x : v) hi = std::max(hi, x);
  if (!std::isfinite(hi)) return hi;
  double s = 0.0;
  for (double x : v) s += std::exp(x - hi);
  return hi + std::log(s);
}

using ComponentState = ScoringSession::ComponentState;

ComponentState initial_component(const SslgmParams& params, int d_max) {
  ComponentState c;
  c.alpha = MatrixXd::Zero(params.N, d_max);
  c.alpha.col(0) = params.chain.p0;
  for (const StateDynamics& d : params.dynamics) c.beliefs.push_back(initial_belief(d));
  c.hazard = hazard_table(params.chain, d_max);
  c.absorption = absorption_probs(params.chain);
  c.log_lik = VectorXd::Zero(params.N);
  return c;
}

// One filtering step of one component. `first` marks the first observation,
// where alpha holds p0 and beliefs hold N(0, Sigma0).
ComponentState component_step(const SslgmParams& params, const ComponentState& prev, bool first, const VectorXd& y,
                              Index t, CollapseMode mode) {
  const int N = params.N;
  ComponentState next;
  next.hazard = prev.hazard;
  next.absorption = prev.absorption;
  next.beliefs.resize(static_cast<std::size_t>(N));
  next.log_lik = VectorXd::Zero(N);

  ChainPrediction pred;
  if (first) {
    pred.alpha = prev.alpha;
    pred.joint = MatrixXd::Zero(N, N);
    pred.joint.diagonal() = params.chain.p0;
  } else {
    pred = predict_chain(params.chain, prev.hazard, prev.alpha);
  }
  const VectorXd mass = pred.joint.colwise().sum().transpose();

  if (mode == CollapseMode::imm || first) {
    std::vector<double> terms;
    for (int i = 0; i < N; ++i) {
      const StateDynamics& dyn = params.dynamics[static_cast<std::size_t>(i)];
      GaussianBelief prior;
      if (first) {
        prior = prev.beliefs[static_cast<std::size_t>(i)];
      } else if (mass(i) > 0.0) {
        std::vector<const GaussianBelief*> parts;
        std::vector<double> w;
        for (int j = 0; j < N; ++j) {
          if (pred.joint(j, i) > 0.0) {
            parts.push_back(&prev.beliefs[static_cast<std::size_t>(j)]);
            w.push_back(pred.joint(j, i));
          }
        }
        prior = kalman_predict(moment_match(parts, w), dyn);
      } else {
        prior = kalman_predict(prev.beliefs[static_cast<std::size_t>(i)], dyn);
      }
      KalmanStep step = kalman_update(prior, dyn, y, t);
      next.log_lik(i) = step.log_likelihood;
      next.beliefs[static_cast<std::size_t>(i)] = std::move(step.posterior);
      if (mass(i) > 0.0) terms.push_back(std::log(mass(i)) + step.log_likelihood);
    }
    next.log_norm = log_sum_exp(terms);
    next.alpha = pred.alpha;
    for (int i = 0; i < N; ++i) next.alpha.row(i) *= std::exp(next.log_lik(i) - next.log_norm);
    return next;
  }

  // GPB2: one update per (predecessor, destination) pair.
  struct Pair {
    int from;
    KalmanStep step;
  };
  std::vector<std::vector<Pair>> pairs(static_cast<std::size_t>(N));
  std::vector<double> terms;
  for (int i = 0; i < N; ++i) {
    const StateDynamics& dyn = params.dynamics[static_cast<std::size_t>(i)];
    for (int j = 0; j < N; ++j) {
      if (!(pred.joint(j, i) > 0.0)) continue;
      KalmanStep step = kalman_update(kalman_predict(prev.beliefs[static_cast<std::size_t>(j)], dyn), dyn, y, t);
      terms.push_back(std::log(pred.joint(j, i)) + step.log_likelihood);
      pairs[static_cast<std::size_t>(i)].push_back({j, std::move(step)});
    }
  }
  next.log_norm = log_sum_exp(terms);
  next.alpha = MatrixXd::Zero(N, pred.alpha.cols());
  for (int i = 0; i < N; ++i) {
    const auto& list = pairs[static_cast<std::size_t>(i)];
    if (list.empty()) {
      KalmanStep step = kalman_update(kalman_predict(prev.beliefs[static_cast<std::size_t>(i)], params.dynamics[static_cast<std::size_t>(i)]),
                                      params.dynamics[static_cast<std::size_t>(i)], y, t);
      next.log_lik(i) = step.log_likelihood;
      next.beliefs[static_cast<std::size_t>(i)] = std::move(step.posterior);
      continue;
    }
    const bool absorbing = i == 0 || i == N - 1;
    std::vector<const GaussianBelief*> parts;
    std::vector<double> w;
    double scaled = 0.0;
    for (const Pair& p : list) {
      const double factor = std::exp(p.step.log_likelihood - next.log_norm);
      const double weight = pred.joint(p.from, i) * factor;
      parts.push_back(&p.step.posterior);
      w.push_back(weight);
      scaled += weight;
      if (p.from != i || absorbing) {
        next.alpha(i, 0) += weight;
      } else {
        next.alpha.row(i).tail(pred.alpha.cols() - 1) = pred.alpha.row(i).tail(pred.alpha.cols() - 1) * factor;
      }
    }
    next.log_lik(i) = scaled > 0.0 ? std::log(scaled) + next.log_norm - std::log(mass(i)) : kNegInf;
    next.beliefs[static_cast<std::size_t>(i)] = scaled > 0.0 ? moment_match(parts, w) : list.front().step.posterior;
  }
  return next;
}

void check_observation(const MixtureModel& model, const VectorXd& y, Index t) {
  if (y.size() != model.obs_dim()) {
    throw ConfigError("observation has " + std::to_string(y.size()) + " channels, model expects " +
                      std::to_string(model.obs_dim()));
  }
  for (Index c = 0; c < y.size(); ++c) {
    if (!std::isfinite(y(c))) {
      throw DataError("non-finite observation at t=" + std::to_string(t + 1) + ", channel " + std::to_string(c + 1),
                      std::nullopt, t + 1, c + 1);
    }
  }
}

VectorXd softmax(const VectorXd& logits) {
  VectorXd p = (logits.array() - logits.maxCoeff()).exp();
  return p / p.sum();
}

}  // namespace

VectorXd ScoringSession::state_posterior() const {
  VectorXd out = VectorXd::Zero(model_->N());
  for (std::size_t g = 0; g < components_.size(); ++g) {
    out += component_posterior_(static_cast<Index>(g)) * components_[g].alpha.rowwise().sum();
  }
  return out;
}

const MatrixXd& ScoringSession::duration_posterior(int component) const {
  return components_.at(static_cast<std::size_t>(component)).alpha;
}

const GaussianBelief& ScoringSession::latent_belief(int component, int state) const {
  return components_.at(static_cast<std::size_t>(component)).beliefs.at(static_cast<std::size_t>(state - 1));
}

double ScoringSession::current_risk() const {
  double r = 0.0;
  for (std::size_t g = 0; g < components_.size(); ++g) {
    const ComponentState& c = components_[g];
    const VectorXd p = c.alpha.rowwise().sum();
    double rg = 0.0;
    if (config_.risk == RiskMode::hard) {
      Index best = 0;
      p.maxCoeff(&best);
      rg = c.absorption(best);
    } else {
      rg = p.dot(c.absorption);
    }
    r += component_posterior_(static_cast<Index>(g)) * rg;
  }
  return std::clamp(r, 0.0, 1.0);
}

ScoringSession session_start(const MixtureModel& model, const VectorXd& q, InferenceConfig config) {
  if (config.d_max < 1) throw ConfigError("d_max must be >= 1");
  ScoringSession s;
  s.model_ = &model;
  s.config_ = config;
  s.component_posterior_ = model.weights(q);
  s.log_component_ = s.component_posterior_.array().log();
  for (const SslgmParams& p : model.components) s.components_.push_back(initial_component(p, config.d_max));
  s.history_.push_back(s.current_risk());
  return s;
}

double session_update(ScoringSession& session, const VectorXd& y) {
  const MixtureModel& model = *session.model_;
  check_observation(model, y, session.steps_);
  const bool first = session.steps_ == 0;
  std::vector<ComponentState> next;
  next.reserve(session.components_.size());
  VectorXd log_comp = session.log_component_;
  for (std::size_t g = 0; g < session.components_.size(); ++g) {
    next.push_back(component_step(model.components[g], session.components_[g], first, y, session.steps_,
                                  session.config_.collapse));
    log_comp(static_cast<Index>(g)) += next.back().log_norm;
  }
  session.components_ = std::move(next);
  // Keep the accumulator bounded; only differences matter.
  session.log_component_ = log_comp.array() - log_comp.maxCoeff();
  session.component_posterior_ = softmax(session.log_component_);
  ++session.steps_;
  session.history_.push_back(session.current_risk());
  return session.history_.back();
}

RiskTrajectory score_episode(const MixtureModel& model, const PatientRecord& record, InferenceConfig config) {
  RiskTrajectory traj;
  traj.id = record.id;
  ScoringSession s = session_start(model, record.q, config);
  auto snapshot = [&](int t) {
    RiskStep step;
    step.t = t;
    step.risk = s.risk();
    step.state_posterior = s.state_posterior();
    Index best = 0;
    step.state_posterior.maxCoeff(&best);
    step.argmax_state = static_cast<int>(best) + 1;
    step.component_posterior = s.component_posterior();
    traj.steps.push_back(std::move(step));
  };
  snapshot(0);
  for (Index t = 0; t < record.Y.rows(); ++t) {
    session_update(s, record.Y.row(t).transpose());
    snapshot(static_cast<int>(t) + 1);
  }
  return traj;
}

std::string trajectory_csv(const RiskTrajectory& trajectory) {
  std::ostringstream out;
  const Index N = trajectory.steps.empty() ? 0 : trajectory.steps.front().state_posterior.size();
  const Index G = trajectory.steps.empty() ? 0 : trajectory.steps.front().component_posterior.size();
  out << "t,R,argmax_state";
  for (Index i = 0; i < N; ++i) out << ",p_" << i + 1;
  for (Index g = 0; g < G; ++g) out << ",g_" << g + 1;
  out << '\n';
  for (const RiskStep& s : trajectory.steps) {
    out << s.t << ',' << format_double(s.risk) << ',' << s.argmax_state;
    for (Index i = 0; i < N; ++i) out << ',' << format_double(s.state_posterior(i));
    for (Index g = 0; g < G; ++g) out << ',' << format_double(s.component_posterior(g));
    out << '\n';
  }
  return out.str();
}

StateSmoothing smooth_states(const MixtureModel& model, const VectorXd& q, const MatrixXd& Y, InferenceConfig config) {
  const Index T = Y.rows();
  if (T < 1) throw ContractError("smooth_states needs a non-empty episode");
  if (config.d_max < 1) throw ConfigError("d_max must be >= 1");
  const int N = model.N();
  const int d_max = config.d_max;
  const int G = model.G();

  StateSmoothing out;
  out.posterior = MatrixXd::Zero(T, N);
  out.filtered = MatrixXd::Zero(T, N);
  VectorXd log_comp = model.weights(q).array().log();
  std::vector<MatrixXd> gamma(static_cast<std::size_t>(G), MatrixXd::Zero(T, N));
  MatrixXd comp_path(T, G);  // log predictive density per step
  std::vector<MatrixXd> filtered(static_cast<std::size_t>(G), MatrixXd::Zero(T, N));

  for (int g = 0; g < G; ++g) {
    const SslgmParams& params = model.components[static_cast<std::size_t>(g)];
    std::vector<ComponentState> fwd;
    fwd.reserve(static_cast<std::size_t>(T));
    ComponentState state = initial_component(params, d_max);
    for (Index t = 0; t < T; ++t) {
      const VectorXd y = Y.row(t).transpose();
      check_observation(model, y, t);
      state = component_step(params, state, t == 0, y, t, CollapseMode::imm);
      fwd.push_back(state);
    }

    MatrixXd beta = MatrixXd::Ones(N, d_max);
    const std::vector<double>& hz = fwd.front().hazard;
    for (Index t = T - 1; t >= 0; --t) {
      const MatrixXd post = fwd[static_cast<std::size_t>(t)].alpha.cwiseProduct(beta);
      const VectorXd marg = post.rowwise().sum();
      gamma[static_cast<std::size_t>(g)].row(t) = (marg / marg.sum()).transpose();
      if (t == 0) break;
      const ComponentState& nxt = fwd[static_cast<std::size_t>(t)];
      VectorXd scaled(N);
      for (int i = 0; i < N; ++i) scaled(i) = std::exp(nxt.log_lik(i) - nxt.log_norm);
      MatrixXd prev_beta = MatrixXd::Zero(N, d_max);
      for (int i = 0; i < N; ++i) {
        if (i == 0 || i == N - 1) {
          prev_beta(i, 0) = scaled(i) * beta(i, 0);
          continue;
        }
        double restart = 0.0;
        for (int j : {i - 1, i + 1}) restart += params.chain.P(i, j) * scaled(j) * beta(j, 0);
        for (int d = 0; d < d_max; ++d) {
          const double h = hz[static_cast<std::size_t>(i * d_max + d)];
          double v = h * restart;
          if (d + 1 < d_max) v += (1.0 - h) * scaled(i) * beta(i, d + 1);
          prev_beta(i, d) = v;
        }
      }
      beta = std::move(prev_beta);
    }

    for (Index t = 0; t < T; ++t) {
      comp_path(t, g) = fwd[static_cast<std::size_t>(t)].log_norm;
      filtered[static_cast<std::size_t>(g)].row(t) = fwd[static_cast<std::size_t>(t)].alpha.rowwise().sum().transpose();
    }
  }

  // Component posteriors along the path from cumulative predictive densities.
  MatrixXd comp_post(T, G);
  VectorXd acc = log_comp;
  for (Index t = 0; t < T; ++t) {
    acc += comp_path.row(t).transpose();
    comp_post.row(t) = softmax(acc).transpose();
  }
  for (int g = 0; g < G; ++g) {
    out.filtered += comp_post.col(g).asDiagonal() * filtered[static_cast<std::size_t>(g)];
  }
  const VectorXd final_post = comp_post.row(T - 1).transpose();
  for (int g = 0; g < G; ++g) out.posterior += final_post(g) * gamma[static_cast<std::size_t>(g)];

  out.states.resize(static_cast<std::size_t>(T));
  for (Index t = 0; t < T; ++t) {
    Index best = 0;
    out.posterior.row(t).maxCoeff(&best);
    out.states[static_cast<std::size_t>(t)] = static_cast<int>(best) + 1;
    const int s = static_cast<int>(best) + 1;
    if (out.superstates.states.empty() || out.superstates.states.back() != s) {
      out.superstates.states.push_back(s);
      out.superstates.durations.push_back(1);
    } else {
      ++out.superstates.durations.back();
    }
  }

  Index dominant = 0;
  final_post.maxCoeff(&dominant);
  const SslgmParams& params = model.components[static_cast<std::size_t>(dominant)];
  std::vector<int> regime;
  for (int s : out.states) regime.push_back(s - 1);
  const RegimeSchedule schedule{params.dynamics, regime};
  out.latent = rts_smoother(schedule, kalman_filter(schedule, Y)).smoothed;
  return out;
}

}  // namespace sslgm
