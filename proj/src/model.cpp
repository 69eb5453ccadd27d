#include "sslgm/model.hpp"

#include <cmath>
#include <fstream>
#include <string>

#include "sslgm/errors.hpp"

namespace sslgm {

using nlohmann::json;

void SslgmParams::validate() const {
  if (N < 3) throw ConfigError("model needs N >= 3 states");
  if (dynamics.size() != static_cast<std::size_t>(N)) {
    throw ConfigError("model has " + std::to_string(dynamics.size()) + " dynamics blocks for N=" + std::to_string(N));
  }
  if (chain.N != N) throw ConfigError("chain state count differs from model N");
  chain.validate();
  for (const StateDynamics& d : dynamics) {
    d.validate();
    if (d.obs_dim() != obs_dim() || d.latent_dim() != latent_dim()) {
      throw ConfigError("all states must share observation and latent dimensions");
    }
  }
}

Eigen::VectorXd MixtureModel::weights(const Eigen::VectorXd& q) const {
  if (q.size() != covariate_dim()) {
    throw ConfigError("covariate vector has " + std::to_string(q.size()) + " entries, model expects " +
                      std::to_string(covariate_dim()));
  }
  Eigen::VectorXd x(q.size() + 1);
  x << 1.0, q;
  Eigen::VectorXd score = weight_coeffs * x;
  score.array() -= score.maxCoeff();
  Eigen::VectorXd w = score.array().exp();
  return w / w.sum();
}

void MixtureModel::validate() const {
  if (components.empty()) throw ConfigError("mixture needs at least one component");
  if (weight_coeffs.rows() != G() || weight_coeffs.cols() < 1) {
    throw ConfigError("weight_coeffs must have G rows and covariate_dim+1 columns");
  }
  if (!weight_coeffs.allFinite()) throw ConfigError("weight_coeffs must be finite");
  for (const SslgmParams& c : components) {
    c.validate();
    if (c.N != N() || c.obs_dim() != obs_dim() || c.latent_dim() != latent_dim()) {
      throw ConfigError("mixture components must share N, M and M_z");
    }
  }
}

MixtureModel MixtureModel::single(SslgmParams params, int covariate_dim) {
  MixtureModel m;
  m.components.push_back(std::move(params));
  m.weight_coeffs = Eigen::MatrixXd::Zero(1, covariate_dim + 1);
  return m;
}

json matrix_to_json(const Eigen::MatrixXd& m) {
  json data = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
  }
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const json& data = j.at("data");
  if (rows < 0 || cols < 0 || !data.is_array() || data.size() != static_cast<std::size_t>(rows * cols)) {
    throw DataError("matrix data does not match its declared " + std::to_string(rows) + "x" + std::to_string(cols) +
                    " shape");
  }
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index k = 0; k < cols; ++k) m(i, k) = data.at(static_cast<std::size_t>(i * cols + k)).get<double>();
  }
  return m;
}

json vector_to_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

Eigen::VectorXd vector_from_json(const json& j) {
  if (!j.is_array()) throw DataError("expected a numeric array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  return v;
}

json model_to_json(const MixtureModel& model) {
  json components = json::array();
  for (const SslgmParams& c : model.components) {
    json states = json::array();
    for (const StateDynamics& d : c.dynamics) {
      states.push_back({{"A", matrix_to_json(d.A)},
                        {"B_var", vector_to_json(d.B_var)},
                        {"C", matrix_to_json(d.C)},
                        {"D_var", vector_to_json(d.D_var)},
                        {"Sigma0", matrix_to_json(d.Sigma0)}});
    }
    json durations = json::array();
    for (const NbDuration& a : c.chain.duration) durations.push_back({{"r", a.r}, {"q", a.q}});
    components.push_back({{"p0", vector_to_json(c.chain.p0)},
                          {"P", matrix_to_json(c.chain.P)},
                          {"durations", std::move(durations)},
                          {"states", std::move(states)}});
  }
  return json{{"format", kModelFormat},
              {"N", model.N()},
              {"G", model.G()},
              {"obs_dim", model.obs_dim()},
              {"latent_dim", model.latent_dim()},
              {"covariate_dim", model.covariate_dim()},
              {"weight_coeffs", matrix_to_json(model.weight_coeffs)},
              {"components", std::move(components)}};
}

MixtureModel model_from_json(const json& j) {
  try {
    if (j.at("format").get<std::string>() != kModelFormat) {
      throw DataError("unsupported model format '" + j.at("format").get<std::string>() + "'");
    }
    const int N = j.at("N").get<int>();
    MixtureModel model;
    model.weight_coeffs = matrix_from_json(j.at("weight_coeffs"));
    for (const json& cj : j.at("components")) {
      SslgmParams c;
      c.N = N;
      c.chain.N = N;
      c.chain.p0 = vector_from_json(cj.at("p0"));
      c.chain.P = matrix_from_json(cj.at("P"));
      for (const json& a : cj.at("durations")) c.chain.duration.push_back({a.at("r").get<double>(), a.at("q").get<double>()});
      for (const json& sj : cj.at("states")) {
        StateDynamics d;
        d.A = matrix_from_json(sj.at("A"));
        d.B_var = vector_from_json(sj.at("B_var"));
        d.C = matrix_from_json(sj.at("C"));
        d.D_var = vector_from_json(sj.at("D_var"));
        d.Sigma0 = matrix_from_json(sj.at("Sigma0"));
        c.dynamics.push_back(std::move(d));
      }
      model.components.push_back(std::move(c));
    }
    if (j.at("G").get<int>() != model.G()) throw DataError("declared G does not match the component list");
    model.validate();
    return model;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed model document: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("invalid model parameters: ") + e.what());
  }
}

void write_model(const MixtureModel& model, const std::filesystem::path& path, const json& provenance) {
  json doc = model_to_json(model);
  if (!provenance.empty()) doc["provenance"] = provenance;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write model file " + path.string());
  out << doc.dump(1) << '\n';
}

MixtureModel read_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open model file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("model file " + path.string() + " is not valid JSON: " + e.what());
  }
  return model_from_json(doc);
}

}  // namespace sslgm
