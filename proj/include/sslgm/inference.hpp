#pragma once

#include <vector>

#include <Eigen/Dense>

#include "sslgm/cohort.hpp"
#include "sslgm/lgm.hpp"
#include "sslgm/model.hpp"

namespace sslgm {

/// How per-state Gaussian beliefs are collapsed between steps.
enum class CollapseMode {
  imm,   // mix predecessor beliefs per destination state, then one Kalman step per state
  gpb2,  // one Kalman step per (predecessor, destination) pair, then moment-match per destination
};

/// How the state posterior becomes a risk score.
enum class RiskMode {
  soft,  // sum_i P(S_now = i | Y) h(i)
  hard,  // h(argmax_i P(S_now = i | Y))
};

struct InferenceConfig {
  int d_max = 200;  // dwell-time truncation; tail mass folds into the last bin
  CollapseMode collapse = CollapseMode::imm;
  RiskMode risk = RiskMode::soft;
};

/// Online risk scoring for one patient. Holds a pointer to the model, which
/// must outlive the session.
class ScoringSession {
 public:
  double risk() const { return history_.back(); }
  const std::vector<double>& history() const { return history_; }
  int steps() const { return steps_; }

  /// P(S_now = i | Y_1..t) marginalised over components (index i-1).
  Eigen::VectorXd state_posterior() const;
  const Eigen::VectorXd& component_posterior() const { return component_posterior_; }
  /// Posterior over (state, elapsed dwell) of one component; row i-1, column d-1.
  const Eigen::MatrixXd& duration_posterior(int component) const;
  /// Collapsed latent-factor belief of one component for state s.
  const GaussianBelief& latent_belief(int component, int state) const;

  struct ComponentState {
    Eigen::MatrixXd alpha;             // N x d_max
    std::vector<GaussianBelief> beliefs;
    std::vector<double> hazard;        // N * d_max, row-major by state
    Eigen::VectorXd absorption;        // h(i)
    Eigen::VectorXd log_lik;           // last per-state emission log-likelihoods
    double log_norm = 0.0;             // last log predictive density
  };

 private:
  friend ScoringSession session_start(const MixtureModel&, const Eigen::VectorXd&, InferenceConfig);
  friend double session_update(ScoringSession&, const Eigen::VectorXd&);

  double current_risk() const;

  const MixtureModel* model_ = nullptr;
  InferenceConfig config_;
  std::vector<ComponentState> components_;
  Eigen::VectorXd log_component_;
  Eigen::VectorXd component_posterior_;
  std::vector<double> history_;
  int steps_ = 0;
};

ScoringSession session_start(const MixtureModel& model, const Eigen::VectorXd& q, InferenceConfig config = {});

/// Consumes one observation and returns R(t). Throws DataError for a
/// non-finite observation and ConfigError for a wrong channel count; the
/// session is left unchanged in both cases.
double session_update(ScoringSession& session, const Eigen::VectorXd& y);

struct RiskStep {
  int t = 0;  // 0 is the admission prior before any observation
  double risk = 0.0;
  int argmax_state = 1;
  Eigen::VectorXd state_posterior;
  Eigen::VectorXd component_posterior;
};

struct RiskTrajectory {
  std::string id;
  std::vector<RiskStep> steps;  // t = 0..J
};

RiskTrajectory score_episode(const MixtureModel& model, const PatientRecord& record, InferenceConfig config = {});

/// CSV: t,R,argmax_state,p_1..p_N,g_1..g_G with a header row.
std::string trajectory_csv(const RiskTrajectory& trajectory);

struct StateSmoothing {
  std::vector<int> states;           // most probable state per step (1..N)
  Eigen::MatrixXd posterior;         // T x N smoothed state probabilities
  Eigen::MatrixXd filtered;          // T x N forward-only probabilities
  SuperStateSeq superstates;         // run-length encoding of `states`
  std::vector<GaussianBelief> latent;  // RTS-smoothed factor under `states`, dominant component
};

/// Retrospective forward-backward over (state, dwell) for a complete episode.
StateSmoothing smooth_states(const MixtureModel& model, const Eigen::VectorXd& q, const Eigen::MatrixXd& Y,
                             InferenceConfig config = {});

}  // namespace sslgm
