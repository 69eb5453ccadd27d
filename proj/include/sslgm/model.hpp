#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "sslgm/lgm.hpp"
#include "sslgm/semi_markov.hpp"

namespace sslgm {

inline constexpr const char* kModelFormat = "sslgm-model/1";

/// One SSLGM instantiation: per-state linear-Gaussian dynamics plus the
/// super-state chain. dynamics[s-1] belongs to state s.
struct SslgmParams {
  int N = 3;
  std::vector<StateDynamics> dynamics;
  ChainParams chain;

  Eigen::Index obs_dim() const { return dynamics.front().obs_dim(); }
  Eigen::Index latent_dim() const { return dynamics.front().latent_dim(); }
  void validate() const;
};

/// G SSLGM components with softmax weights over affine scores of the
/// admission covariates: w_g(q) = softmax_g(coeffs.row(g) . [1, q]).
struct MixtureModel {
  std::vector<SslgmParams> components;
  Eigen::MatrixXd weight_coeffs;  // G x (covariate_dim + 1)

  int G() const { return static_cast<int>(components.size()); }
  int N() const { return components.front().N; }
  int covariate_dim() const { return static_cast<int>(weight_coeffs.cols()) - 1; }
  Eigen::Index obs_dim() const { return components.front().obs_dim(); }
  Eigen::Index latent_dim() const { return components.front().latent_dim(); }

  Eigen::VectorXd weights(const Eigen::VectorXd& q) const;
  void validate() const;

  static MixtureModel single(SslgmParams params, int covariate_dim);
};

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const nlohmann::json& j);
nlohmann::json vector_to_json(const Eigen::VectorXd& v);
Eigen::VectorXd vector_from_json(const nlohmann::json& j);

nlohmann::json model_to_json(const MixtureModel& model);
/// Throws DataError on schema violations.
MixtureModel model_from_json(const nlohmann::json& j);

/// Writes the model document. `provenance` (e.g. the resolved run config)
/// is stored alongside and ignored when reading.
void write_model(const MixtureModel& model, const std::filesystem::path& path,
                 const nlohmann::json& provenance = nlohmann::json::object());
MixtureModel read_model(const std::filesystem::path& path);

}  // namespace sslgm
