#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "sslgm/model.hpp"

namespace sslgm {

inline constexpr const char* kDataFormat = "sslgm-data/1";
inline constexpr const char* kTruthFormat = "sslgm-truth/1";

/// One hospital episode: observations until an absorbing state materialised.
struct PatientRecord {
  std::string id;
  Eigen::VectorXd q;  // admission covariates
  Eigen::MatrixXd Y;  // J x M, one row per step
  int F = 0;          // 0 discharged (state 1), 1 transferred to ICU (state N)
  double step_hours = 4.0;

  int J() const { return static_cast<int>(Y.rows()); }
  bool operator==(const PatientRecord& o) const {
    return id == o.id && q == o.q && Y == o.Y && F == o.F && step_hours == o.step_hours;
  }
};

struct Dataset {
  int covariate_dim = 0;
  Eigen::Index obs_dim = 0;
  std::vector<PatientRecord> records;

  bool operator==(const Dataset&) const = default;
};

/// Generating labels of one synthetic episode. Never read by learning code.
struct GroundTruth {
  std::string id;
  std::vector<int> S;  // super-state labels 1..N
  std::vector<int> T;  // durations in steps
  int component = 0;   // 0-based mixture component
};

struct CovariateConfig {
  int continuous = 2;              // standard-normal entries
  std::vector<int> categorical;    // one-hot block sizes (uniform categories)

  int dim() const;
};

struct CohortSpec {
  int K = 1000;
  MixtureModel truth;
  CovariateConfig covariates;
  int max_stay = 500;  // steps; longer episodes are resampled
  std::uint64_t seed = 1;
  double step_hours = 4.0;
};

struct Cohort {
  Dataset data;
  std::vector<GroundTruth> truth;
  long resampled = 0;  // episodes discarded for exceeding max_stay
};

/// Draws K informatively censored episodes. Patient k uses its own
/// generator seeded from the pair (seed, k), so output does not depend on
/// the number of threads. A plain seed XOR k would make cohorts with nearby
/// seeds permutations of one another.
Cohort generate_cohort(const CohortSpec& spec);

/// Three-state reference model (p0 = 0.44/0.54/0.02, P(2->1) = 0.94,
/// state-2 dwell r = 1.4541, q = 0.839). Observation scale grows by a factor
/// (1 + separation) per state so neighbouring states differ by `separation`
/// standard deviations of the lower state.
SslgmParams reference_three_state_model(double separation = 2.0, Eigen::Index obs_dim = 2,
                                        Eigen::Index latent_dim = 2);

void write_dataset(const Dataset& data, const std::filesystem::path& path,
                   const nlohmann::json& provenance = nlohmann::json::object());
/// Validates every line; errors name the line number and field.
Dataset read_dataset(const std::filesystem::path& path);

void write_ground_truth(const std::vector<GroundTruth>& truth, const std::filesystem::path& path);
std::vector<GroundTruth> read_ground_truth(const std::filesystem::path& path);

}  // namespace sslgm
