#include "sslgm/cohort.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "sslgm/errors.hpp"
#include "sslgm/util.hpp"

namespace sslgm {

using nlohmann::json;

namespace {

constexpr int kMaxAttemptsPerPatient = 10000;

std::string patient_id(int k) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "P%06d", k);
  return buf;
}

int draw_index(Rng& rng, const Eigen::VectorXd& w) {
  std::uniform_real_distribution<double> unif(0.0, w.sum());
  const double u = unif(rng);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    acc += w(i);
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(w.size()) - 1;
}

[[noreturn]] void fail(long line, const std::string& field, const std::string& what) {
  throw DataError("line " + std::to_string(line) + ": field '" + field + "': " + what, line);
}

const json& require(const json& obj, const char* field, long line) {
  if (!obj.is_object() || !obj.contains(field)) fail(line, field, "missing");
  return obj.at(field);
}

Eigen::VectorXd parse_numbers(const json& j, const char* field, long line) {
  if (!j.is_array()) fail(line, field, "expected an array of numbers");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) fail(line, field, "entry " + std::to_string(i) + " is not a number");
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
    if (!std::isfinite(v(static_cast<Eigen::Index>(i)))) fail(line, field, "entry " + std::to_string(i) + " is not finite");
  }
  return v;
}

json parse_line(const std::string& text, long line) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError("line " + std::to_string(line) + ": invalid JSON: " + e.what(), line);
  }
}

}  // namespace

int CovariateConfig::dim() const {
  int d = continuous;
  for (int b : categorical) d += b;
  return d;
}

SslgmParams reference_three_state_model(double separation, Eigen::Index obs_dim, Eigen::Index latent_dim) {
  SslgmParams p;
  p.N = 3;
  Eigen::VectorXd p0(3);
  p0 << 0.44, 0.54, 0.02;
  p.chain = ChainParams::birth_death(p0, {0.06}, {{1.0, 1.0}, {1.4541, 0.839}, {1.0, 1.0}});

  Eigen::MatrixXd base = Eigen::MatrixXd::Zero(obs_dim, latent_dim);
  for (Eigen::Index i = 0; i < obs_dim; ++i) {
    for (Eigen::Index j = 0; j < latent_dim; ++j) base(i, j) = i == j ? 1.0 : 0.3 / static_cast<double>(1 + std::abs(i - j));
  }
  double scale = 1.0;
  for (int s = 0; s < 3; ++s) {
    StateDynamics d;
    d.A = 0.5 * Eigen::MatrixXd::Identity(latent_dim, latent_dim);
    d.B_var = Eigen::VectorXd::Constant(latent_dim, 0.75);
    d.C = scale * base;
    d.D_var = Eigen::VectorXd::Constant(obs_dim, 0.09 * scale * scale);
    d.Sigma0 = Eigen::MatrixXd::Identity(latent_dim, latent_dim);
    p.dynamics.push_back(std::move(d));
    scale *= 1.0 + separation;
  }
  return p;
}

Cohort generate_cohort(const CohortSpec& spec) {
  if (spec.K < 1) throw ConfigError("cohort size K must be >= 1");
  if (spec.max_stay < 1) throw ConfigError("max_stay must be >= 1");
  if (!(spec.step_hours > 0.0)) throw ConfigError("step_hours must be positive");
  spec.truth.validate();
  if (spec.truth.covariate_dim() != spec.covariates.dim()) {
    throw ConfigError("covariate sampler produces " + std::to_string(spec.covariates.dim()) +
                      " entries but the model expects " + std::to_string(spec.truth.covariate_dim()));
  }

  const int N = spec.truth.N();
  Cohort out;
  out.data.covariate_dim = spec.covariates.dim();
  out.data.obs_dim = spec.truth.obs_dim();
  out.data.records.resize(static_cast<std::size_t>(spec.K));
  out.truth.resize(static_cast<std::size_t>(spec.K));
  std::vector<long> rejected(static_cast<std::size_t>(spec.K), 0);
  std::vector<std::string> failures(static_cast<std::size_t>(spec.K));

#pragma omp parallel for schedule(dynamic, 8)
  for (int k = 0; k < spec.K; ++k) {
    const auto idx = static_cast<std::size_t>(k);
    Rng rng = make_rng(spec.seed, static_cast<std::uint64_t>(k));
    std::normal_distribution<double> normal;

    Eigen::VectorXd q = Eigen::VectorXd::Zero(spec.covariates.dim());
    Eigen::Index pos = 0;
    for (int c = 0; c < spec.covariates.continuous; ++c) q(pos++) = normal(rng);
    for (int block : spec.covariates.categorical) {
      std::uniform_int_distribution<int> pick(0, block - 1);
      q(pos + pick(rng)) = 1.0;
      pos += block;
    }
    const int g = draw_index(rng, spec.truth.weights(q));
    const SslgmParams& comp = spec.truth.components[static_cast<std::size_t>(g)];

    SuperStatePath path;
    int attempts = 0;
    do {
      path = sample_superstate_path(comp.chain, rng, spec.max_stay);
      if (path.censored) ++rejected[idx];
    } while (path.censored && ++attempts < kMaxAttemptsPerPatient);
    if (path.censored) {
      failures[idx] = "patient " + std::to_string(k) + " never absorbed within max_stay";
      continue;
    }

    std::vector<int> regime;
    for (std::size_t n = 0; n < path.seq.states.size(); ++n) {
      regime.insert(regime.end(), static_cast<std::size_t>(path.seq.durations[n]), path.seq.states[n] - 1);
    }
    const SampledPath sample = sample_path(RegimeSchedule{comp.dynamics, regime}, rng);

    PatientRecord& rec = out.data.records[idx];
    rec.id = patient_id(k);
    rec.q = std::move(q);
    rec.Y = sample.Y;
    rec.F = path.seq.states.back() == N ? 1 : 0;
    rec.step_hours = spec.step_hours;
    out.truth[idx] = GroundTruth{rec.id, path.seq.states, path.seq.durations, g};
  }

  for (const std::string& f : failures) {
    if (!f.empty()) throw ConfigError(f + "; chain absorbs too slowly for max_stay");
  }
  for (long r : rejected) out.resampled += r;
  const double rate = static_cast<double>(out.resampled) / static_cast<double>(out.resampled + spec.K);
  if (rate > 0.2) {
    log().warn("{:.1f}% of sampled episodes exceeded max_stay={} and were resampled", 100.0 * rate, spec.max_stay);
  }
  return out;
}

void write_dataset(const Dataset& data, const std::filesystem::path& path, const json& provenance) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write dataset " + path.string());
  json header{{"format", kDataFormat},
              {"covariate_dim", data.covariate_dim},
              {"obs_dim", data.obs_dim},
              {"count", data.records.size()}};
  if (!provenance.empty()) header["provenance"] = provenance;
  out << header.dump() << '\n';
  for (const PatientRecord& r : data.records) {
    json rows = json::array();
    for (Eigen::Index t = 0; t < r.Y.rows(); ++t) {
      json row = json::array();
      for (Eigen::Index c = 0; c < r.Y.cols(); ++c) row.push_back(r.Y(t, c));
      rows.push_back(std::move(row));
    }
    json q = json::array();
    for (Eigen::Index i = 0; i < r.q.size(); ++i) q.push_back(r.q(i));
    json line{{"id", r.id}, {"q", std::move(q)}, {"J", r.J()}, {"Y", std::move(rows)}, {"F", r.F},
              {"step_hours", r.step_hours}};
    out << line.dump() << '\n';
  }
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset " + path.string());
  std::string text;
  long line = 0;
  Dataset data;
  std::size_t declared = 0;
  bool have_header = false;
  while (std::getline(in, text)) {
    ++line;
    if (text.empty() || text == "\r") continue;
    const json j = parse_line(text, line);
    if (!have_header) {
      const json& fmt = require(j, "format", line);
      if (!fmt.is_string() || fmt.get<std::string>() != kDataFormat) {
        fail(line, "format", std::string("expected \"") + kDataFormat + "\"");
      }
      const json& cd = require(j, "covariate_dim", line);
      const json& od = require(j, "obs_dim", line);
      if (!cd.is_number_integer() || cd.get<long>() < 0) fail(line, "covariate_dim", "must be a nonnegative integer");
      if (!od.is_number_integer() || od.get<long>() < 1) fail(line, "obs_dim", "must be a positive integer");
      data.covariate_dim = cd.get<int>();
      data.obs_dim = od.get<Eigen::Index>();
      if (j.contains("count")) declared = j.at("count").get<std::size_t>();
      have_header = true;
      continue;
    }

    PatientRecord r;
    const json& id = require(j, "id", line);
    if (!id.is_string() || id.get<std::string>().empty()) fail(line, "id", "must be a non-empty string");
    r.id = id.get<std::string>();

    r.q = parse_numbers(require(j, "q", line), "q", line);
    if (r.q.size() != data.covariate_dim) {
      fail(line, "q", "has " + std::to_string(r.q.size()) + " entries, header declares " +
                          std::to_string(data.covariate_dim));
    }

    const json& Y = require(j, "Y", line);
    if (!Y.is_array() || Y.empty()) fail(line, "Y", "must be a non-empty array of rows");
    r.Y.resize(static_cast<Eigen::Index>(Y.size()), data.obs_dim);
    for (std::size_t t = 0; t < Y.size(); ++t) {
      const Eigen::VectorXd row = parse_numbers(Y[t], "Y", line);
      if (row.size() != data.obs_dim) {
        fail(line, "Y", "row " + std::to_string(t + 1) + " has " + std::to_string(row.size()) +
                            " channels, header declares " + std::to_string(data.obs_dim));
      }
      r.Y.row(static_cast<Eigen::Index>(t)) = row.transpose();
    }
    if (j.contains("J")) {
      const json& J = j.at("J");
      if (!J.is_number_integer() || J.get<long>() != r.J()) {
        fail(line, "J", "declares " + J.dump() + " steps but Y has " + std::to_string(r.J()) + " rows");
      }
    }

    const json& F = require(j, "F", line);
    if (!F.is_number_integer() || (F.get<long>() != 0 && F.get<long>() != 1)) {
      fail(line, "F", "must be 0 or 1, got " + F.dump());
    }
    r.F = F.get<int>();

    if (j.contains("step_hours")) {
      const json& h = j.at("step_hours");
      if (!h.is_number() || !(h.get<double>() > 0.0)) fail(line, "step_hours", "must be a positive number");
      r.step_hours = h.get<double>();
    }
    data.records.push_back(std::move(r));
  }
  if (!have_header) throw DataError("dataset " + path.string() + " has no header line", 1);
  if (declared != 0 && declared != data.records.size()) {
    throw DataError("header declares " + std::to_string(declared) + " records but the file holds " +
                        std::to_string(data.records.size()),
                    1);
  }
  return data;
}

void write_ground_truth(const std::vector<GroundTruth>& truth, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write ground truth " + path.string());
  out << json{{"format", kTruthFormat}, {"count", truth.size()}}.dump() << '\n';
  for (const GroundTruth& g : truth) {
    out << json{{"id", g.id}, {"S", g.S}, {"T", g.T}, {"component", g.component}}.dump() << '\n';
  }
}

std::vector<GroundTruth> read_ground_truth(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open ground truth " + path.string());
  std::vector<GroundTruth> out;
  std::string text;
  long line = 0;
  bool have_header = false;
  while (std::getline(in, text)) {
    ++line;
    if (text.empty()) continue;
    const json j = parse_line(text, line);
    if (!have_header) {
      const json& fmt = require(j, "format", line);
      if (!fmt.is_string() || fmt.get<std::string>() != kTruthFormat) {
        fail(line, "format", std::string("expected \"") + kTruthFormat + "\"");
      }
      have_header = true;
      continue;
    }
    try {
      out.push_back({j.at("id").get<std::string>(), j.at("S").get<std::vector<int>>(),
                     j.at("T").get<std::vector<int>>(), j.at("component").get<int>()});
    } catch (const json::exception& e) {
      throw DataError("line " + std::to_string(line) + ": " + e.what(), line);
    }
  }
  return out;
}

}  // namespace sslgm
