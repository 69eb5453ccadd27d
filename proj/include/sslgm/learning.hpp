#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "sslgm/changepoint.hpp"
#include "sslgm/cohort.hpp"
#include "sslgm/labeling.hpp"
#include "sslgm/model.hpp"

namespace sslgm {

/// Observations of one episode with fixed per-step state labels (1..N).
struct LabeledSequence {
  const Eigen::MatrixXd* Y = nullptr;
  std::vector<int> states;
  double weight = 1.0;
};

struct TransitionEstimate {
  Eigen::VectorXd p0;
  Eigen::MatrixXd P;
  std::vector<int> unvisited;  // transient states with no outgoing transitions
};

/// Counts initial states and transitions of labeled super-state sequences.
/// Transient rows get add-`beta` smoothing on their two legal neighbours.
TransitionEstimate estimate_transitions(std::span<const LabeledEpisode> episodes, int N,
                                        std::span<const double> weights = {}, double beta = 0.5);

enum class LowOccupancy { error, keep_initial };

struct EmConfig {
  int max_iters = 200;
  double tol = 1e-6;               // relative loglik improvement
  int min_occupancy_factor = 10;   // a state needs factor * M_z labeled steps
  double ridge = 1e-8;
  LowOccupancy low_occupancy = LowOccupancy::error;
  int restarts = 0;                // extra randomly perturbed initialisations
  std::uint64_t seed = 7;
};

struct EmResult {
  std::vector<StateDynamics> dynamics;
  std::vector<double> loglik_trace;  // loglik of the parameters entering each iteration, then the final one
  std::vector<double> occupancy;     // weighted labeled steps per state
  std::vector<std::string> warnings;
  bool ridge_applied = false;
};

/// Deterministic start: per-state PCA of the labeled observations.
std::vector<StateDynamics> initialize_dynamics(std::span<const LabeledSequence> episodes, int N,
                                               Eigen::Index latent_dim);

/// EM for the conditionally linear-Gaussian model given fixed labels.
EmResult em_fit_dynamics(std::span<const LabeledSequence> episodes, int N, Eigen::Index latent_dim,
                         const EmConfig& config,
                         std::optional<std::vector<StateDynamics>> init = std::nullopt);

struct MixtureConfig {
  int max_outer_iters = 30;
  double outer_tol = 1e-6;
  int inner_em_iters = 25;
  double weight_ridge = 1e-3;
  double prune_threshold = 1e-3;
  double transition_beta = 0.5;
};

struct LearningConfig {
  int N = 3;
  int G = 1;
  Eigen::Index latent_dim = 2;
  SegmentationConfig segmentation;
  EmConfig em{.low_occupancy = LowOccupancy::keep_initial};
  MixtureConfig mixture;
  Eigen::Index pool_capacity = 256;
  double max_relabel_failed_rate = 0.5;

  nlohmann::json to_json() const;
};

struct LearningDiagnostics {
  std::map<int, int> segment_count_histogram;
  double relabel_failed_rate = 0.0;
  std::vector<std::string> relabel_failed_ids;
  std::vector<std::vector<double>> occupancy;  // per component, per state
  std::vector<double> loglik_trace;            // outer (mixture) trace
  std::vector<std::vector<double>> em_traces;  // last inner EM trace per component
  std::vector<std::string> warnings;
  double final_loglik = 0.0;

  nlohmann::json to_json() const;
};

struct MixtureFit {
  MixtureModel model;
  Eigen::MatrixXd responsibilities;  // K x G
  LearningDiagnostics diagnostics;
};

/// Outer EM over mixture components given labeled episodes. Episodes with
/// relabel_failed are skipped. For G = 1 this is the single-model pipeline.
MixtureFit fit_mixture(const Dataset& data, std::span<const LabeledEpisode> labeled, const LearningConfig& config);

struct LearningResult {
  MixtureModel model;
  std::vector<LabeledEpisode> labeled;
  LearningDiagnostics diagnostics;
};

/// Segment every episode, label backward from the outcome, then fit the
/// mixture. Throws DataError when too many episodes cannot be labeled.
LearningResult backward_labeling_em(const Dataset& data, const LearningConfig& config);

/// Episode log-likelihood log p(Y, S | params) under fixed labels.
double labeled_loglik(const SslgmParams& params, const LabeledEpisode& episode, const Eigen::MatrixXd& Y);

}  // namespace sslgm
