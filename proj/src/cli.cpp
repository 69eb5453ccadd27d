#include "sslgm/cli.hpp"

#include <omp.h>

#include <CLI11.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <functional>
#include <optional>

#include "sslgm/cohort.hpp"
#include "sslgm/errors.hpp"
#include "sslgm/evaluation.hpp"
#include "sslgm/inference.hpp"
#include "sslgm/learning.hpp"
#include "sslgm/model.hpp"
#include "sslgm/util.hpp"

namespace sslgm::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kScoresFormat = "sslgm-scores/1";

json merge(const json& base, const json& patch, const std::string& where) {
  if (!patch.is_object()) throw ConfigError("config " + (where.empty() ? "root" : "'" + where + "'") + " must be an object");
  json out = base;
  for (const auto& [key, value] : patch.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    const json& def = base.at(key);
    if (def.is_object()) {
      out[key] = merge(def, value, path);
      continue;
    }
    const bool ok = (def.is_number_float() && value.is_number()) ||
                    (def.is_number_integer() && value.is_number_integer()) ||
                    (def.is_string() && value.is_string()) || (def.is_boolean() && value.is_boolean()) ||
                    (def.is_array() && value.is_array());
    if (!ok) throw ConfigError("config key '" + path + "' has the wrong type");
    if (def.is_number_unsigned() && value.is_number_integer() && value.get<long long>() < 0) {
      throw ConfigError("config key '" + path + "' must be non-negative");
    }
    out[key] = value;
  }
  return out;
}

const json& need(const json& c, const char* key) { return c.at(key); }

fs::path required_path(const json& c, const char* key, const char* flag) {
  const std::string p = need(c, key).get<std::string>();
  if (p.empty()) throw ConfigError(std::string("missing ") + flag);
  return p;
}

void set_threads(const json& c) {
  const int n = need(c, "threads").get<int>();
  if (n < 0) throw ConfigError("threads must be >= 0");
  if (n > 0) omp_set_num_threads(n);
}

void write_json(const fs::path& path, const json& doc) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << doc.dump(1) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": invalid JSON: " + e.what());
  }
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create directory " + dir.string() + ": " + ec.message());
}

LearningConfig learning_from_json(const json& j) {
  LearningConfig c;
  c.N = j.at("states").get<int>();
  c.G = j.at("components").get<int>();
  c.latent_dim = j.at("latent_dim").get<Eigen::Index>();
  const json& s = j.at("segmentation");
  c.segmentation.zeta = s.at("zeta").get<double>();
  c.segmentation.min_size = s.at("min_size").get<int>();
  c.segmentation.n_permutations = s.at("n_permutations").get<int>();
  c.segmentation.significance = s.at("significance").get<double>();
  c.segmentation.max_changepoints = s.at("max_changepoints").get<int>();
  c.segmentation.agglo_penalty = s.at("agglo_penalty").get<double>();
  c.segmentation.seed = s.at("seed").get<std::uint64_t>();
  const json& e = j.at("em");
  c.em.max_iters = e.at("max_iters").get<int>();
  c.em.tol = e.at("tol").get<double>();
  c.em.min_occupancy_factor = e.at("min_occupancy_factor").get<int>();
  c.em.ridge = e.at("ridge").get<double>();
  const std::string lo = e.at("low_occupancy").get<std::string>();
  if (lo == "error") {
    c.em.low_occupancy = LowOccupancy::error;
  } else if (lo == "keep_initial") {
    c.em.low_occupancy = LowOccupancy::keep_initial;
  } else {
    throw ConfigError("em.low_occupancy must be 'error' or 'keep_initial'");
  }
  c.em.restarts = e.at("restarts").get<int>();
  c.em.seed = e.at("seed").get<std::uint64_t>();
  const json& m = j.at("mixture");
  c.mixture.max_outer_iters = m.at("max_outer_iters").get<int>();
  c.mixture.outer_tol = m.at("outer_tol").get<double>();
  c.mixture.inner_em_iters = m.at("inner_em_iters").get<int>();
  c.mixture.weight_ridge = m.at("weight_ridge").get<double>();
  c.mixture.prune_threshold = m.at("prune_threshold").get<double>();
  c.mixture.transition_beta = m.at("transition_beta").get<double>();
  c.pool_capacity = j.at("pool_capacity").get<Eigen::Index>();
  c.max_relabel_failed_rate = j.at("max_relabel_failed_rate").get<double>();

  if (c.N < 3) throw ConfigError("states must be >= 3");
  if (c.G < 1) throw ConfigError("components must be >= 1");
  if (c.latent_dim < 1) throw ConfigError("latent_dim must be >= 1");
  c.segmentation.validate();
  if (c.em.max_iters < 0) throw ConfigError("em.max_iters must be >= 0");
  if (!(c.em.tol >= 0.0)) throw ConfigError("em.tol must be >= 0");
  if (c.em.min_occupancy_factor < 0) throw ConfigError("em.min_occupancy_factor must be >= 0");
  if (!(c.em.ridge >= 0.0)) throw ConfigError("em.ridge must be >= 0");
  if (c.em.restarts < 0) throw ConfigError("em.restarts must be >= 0");
  if (c.mixture.max_outer_iters < 0 || c.mixture.inner_em_iters < 0) throw ConfigError("mixture iteration counts must be >= 0");
  if (!(c.mixture.weight_ridge >= 0.0)) throw ConfigError("mixture.weight_ridge must be >= 0");
  if (!(c.mixture.prune_threshold >= 0.0 && c.mixture.prune_threshold < 1.0)) {
    throw ConfigError("mixture.prune_threshold must be in [0, 1)");
  }
  if (!(c.mixture.transition_beta >= 0.0)) throw ConfigError("mixture.transition_beta must be >= 0");
  if (c.pool_capacity < 1) throw ConfigError("pool_capacity must be >= 1");
  if (!(c.max_relabel_failed_rate >= 0.0 && c.max_relabel_failed_rate <= 1.0)) {
    throw ConfigError("max_relabel_failed_rate must be in [0, 1]");
  }
  return c;
}

InferenceConfig inference_from_json(const json& c) {
  InferenceConfig ic;
  ic.d_max = c.at("d_max").get<int>();
  if (ic.d_max < 1) throw ConfigError("d_max must be >= 1");
  const std::string collapse = c.at("collapse").get<std::string>();
  if (collapse == "imm") {
    ic.collapse = CollapseMode::imm;
  } else if (collapse == "gpb2") {
    ic.collapse = CollapseMode::gpb2;
  } else {
    throw ConfigError("collapse must be 'imm' or 'gpb2'");
  }
  const std::string risk = c.at("risk").get<std::string>();
  if (risk == "soft") {
    ic.risk = RiskMode::soft;
  } else if (risk == "hard") {
    ic.risk = RiskMode::hard;
  } else {
    throw ConfigError("risk must be 'soft' or 'hard'");
  }
  return ic;
}

// PR-AUC or an "undefined" marker for single-class cohorts.
json metric_or_undefined(const std::function<double()>& f) {
  try {
    return f();
  } catch (const UndefinedMetric& e) {
    return json{{"undefined", e.what()}};
  }
}

}  // namespace

json default_config(const std::string& command) {
  if (command == "generate") {
    return json{{"K", 1000},
                {"seed", std::uint64_t{1}},
                {"out", ""},
                {"max_stay", 500},
                {"step_hours", 4.0},
                {"truth_model", ""},
                {"separation", 2.0},
                {"obs_dim", 2},
                {"latent_dim", 2},
                {"covariates", {{"continuous", 2}, {"categorical", json::array()}}},
                {"threads", 0}};
  }
  if (command == "fit") {
    return json{{"data", ""}, {"out", ""}, {"threads", 0}, {"learning", LearningConfig{}.to_json()}};
  }
  if (command == "score") {
    return json{{"data", ""}, {"model", ""}, {"out", ""}, {"threads", 0},
                {"d_max", 200}, {"collapse", "imm"}, {"risk", "soft"}};
  }
  if (command == "eval") {
    return json{{"scores", ""},
                {"out", ""},
                {"summary", "max"},
                {"horizon", 0},
                {"operating_points", json::array({json{{"target", "tpr"}, {"value", 0.5}}})},
                {"baseline", {{"train_data", ""}, {"test_data", ""}, {"ridge", 1e-3}}}};
  }
  throw ConfigError("unknown command '" + command + "'");
}

json resolve_config(const std::string& command, const json& file, const json& flags) {
  json c = merge(default_config(command), file.is_null() ? json::object() : file, "");
  return merge(c, flags, "");
}

void cmd_generate(const json& c) {
  set_threads(c);
  const fs::path out = required_path(c, "out", "--out");
  CohortSpec spec;
  spec.K = need(c, "K").get<int>();
  spec.seed = need(c, "seed").get<std::uint64_t>();
  spec.max_stay = need(c, "max_stay").get<int>();
  spec.step_hours = need(c, "step_hours").get<double>();
  spec.covariates.continuous = c.at("covariates").at("continuous").get<int>();
  spec.covariates.categorical = c.at("covariates").at("categorical").get<std::vector<int>>();
  if (spec.covariates.continuous < 0) throw ConfigError("covariates.continuous must be >= 0");
  for (int b : spec.covariates.categorical) {
    if (b < 1) throw ConfigError("categorical block sizes must be >= 1");
  }
  const std::string truth = need(c, "truth_model").get<std::string>();
  if (truth.empty()) {
    const double sep = need(c, "separation").get<double>();
    const int M = need(c, "obs_dim").get<int>();
    const int Mz = need(c, "latent_dim").get<int>();
    if (!(sep >= 0.0)) throw ConfigError("separation must be >= 0");
    if (M < 1 || Mz < 1) throw ConfigError("obs_dim and latent_dim must be >= 1");
    spec.truth = MixtureModel::single(reference_three_state_model(sep, M, Mz), spec.covariates.dim());
  } else {
    try {
      spec.truth = read_model(truth);
    } catch (const DataError& e) {
      throw ConfigError(std::string("truth model: ") + e.what());
    }
  }
  if (spec.K < 1) throw ConfigError("K must be >= 1");

  const Cohort cohort = generate_cohort(spec);
  make_dir(out);
  const json provenance{{"command", "generate"}, {"config", c}};
  write_dataset(cohort.data, out / "data.jsonl", provenance);
  write_ground_truth(cohort.truth, out / "truth.jsonl");
  write_json(out / "generate.json", json{{"config", c},
                                         {"resampled", cohort.resampled},
                                         {"records", cohort.data.records.size()}});
}

void cmd_fit(const json& c) {
  set_threads(c);
  const LearningConfig lc = learning_from_json(c.at("learning"));
  const fs::path data_path = required_path(c, "data", "--data");
  const fs::path out = required_path(c, "out", "--out");
  const Dataset data = read_dataset(data_path);
  const LearningResult result = backward_labeling_em(data, lc);
  make_dir(out);
  write_model(result.model, out / "model.json", json{{"command", "fit"}, {"config", c}});
  write_json(out / "diagnostics.json", json{{"config", c}, {"diagnostics", result.diagnostics.to_json()}});
}

void cmd_score(const json& c) {
  set_threads(c);
  const InferenceConfig ic = inference_from_json(c);
  const fs::path data_path = required_path(c, "data", "--data");
  const fs::path model_path = required_path(c, "model", "--model");
  const fs::path out = required_path(c, "out", "--out");
  const MixtureModel model = read_model(model_path);
  const Dataset data = read_dataset(data_path);
  if (!data.records.empty()) {
    if (data.obs_dim != model.obs_dim()) {
      throw DataError("dataset has " + std::to_string(data.obs_dim) + " channels but the model expects " +
                      std::to_string(model.obs_dim()));
    }
    if (data.covariate_dim != model.covariate_dim()) {
      throw DataError("dataset has " + std::to_string(data.covariate_dim) + " covariates but the model expects " +
                      std::to_string(model.covariate_dim()));
    }
  }
  for (const PatientRecord& r : data.records) {
    if (r.id.empty() || r.id.find_first_of("/\\") != std::string::npos || r.id == "." || r.id == "..") {
      throw DataError("patient id '" + r.id + "' cannot be used as a file name");
    }
  }

  const auto K = static_cast<long>(data.records.size());
  std::vector<RiskTrajectory> traj(static_cast<std::size_t>(K));
  std::vector<std::string> failure(static_cast<std::size_t>(K));
#pragma omp parallel for schedule(dynamic)
  for (long k = 0; k < K; ++k) {
    try {
      traj[static_cast<std::size_t>(k)] = score_episode(model, data.records[static_cast<std::size_t>(k)], ic);
    } catch (const std::exception& e) {
      failure[static_cast<std::size_t>(k)] = e.what();
    }
  }
  for (long k = 0; k < K; ++k) {
    if (!failure[static_cast<std::size_t>(k)].empty()) {
      throw DataError("patient " + data.records[static_cast<std::size_t>(k)].id + ": " + failure[static_cast<std::size_t>(k)]);
    }
  }

  make_dir(out / "trajectories");
  json patients = json::array();
  for (long k = 0; k < K; ++k) {
    const PatientRecord& r = data.records[static_cast<std::size_t>(k)];
    const RiskTrajectory& t = traj[static_cast<std::size_t>(k)];
    std::ofstream csv(out / "trajectories" / (r.id + ".csv"));
    if (!csv) throw Error("cannot write trajectory for " + r.id);
    csv << trajectory_csv(t);
    std::vector<double> risk;
    for (const RiskStep& s : t.steps) risk.push_back(s.risk);
    patients.push_back(json{{"id", r.id}, {"F", r.F}, {"J", r.J()}, {"step_hours", r.step_hours},
                            {"max_R", summarize(risk, Summary::max)}, {"last_R", risk.back()},
                            {"risk", risk}});
  }
  write_json(out / "scores.json", json{{"format", kScoresFormat}, {"config", c}, {"patients", std::move(patients)}});
}

void cmd_eval(const json& c) {
  const fs::path scores_path = required_path(c, "scores", "--scores");
  const fs::path out = required_path(c, "out", "--out");
  const std::string summary_name = c.at("summary").get<std::string>();
  Summary summary = Summary::max;
  if (summary_name == "last") {
    summary = Summary::last;
  } else if (summary_name == "horizon") {
    summary = Summary::horizon;
  } else if (summary_name != "max") {
    throw ConfigError("summary must be 'max', 'last' or 'horizon'");
  }
  const int horizon = c.at("horizon").get<int>();
  if (horizon < 0) throw ConfigError("horizon must be >= 0");
  struct Target {
    TargetMetric metric;
    double value;
  };
  std::vector<Target> targets;
  for (const json& op : c.at("operating_points")) {
    if (!op.is_object() || !op.contains("target") || !op.contains("value") || op.size() != 2 ||
        !op.at("target").is_string() || !op.at("value").is_number()) {
      throw ConfigError("operating_points entries must be {\"target\": \"tpr\"|\"ppv\", \"value\": number}");
    }
    const std::string t = op.at("target").get<std::string>();
    if (t != "tpr" && t != "ppv") throw ConfigError("operating point target must be 'tpr' or 'ppv'");
    const double v = op.at("value").get<double>();
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("operating point value must be in [0, 1]");
    targets.push_back({t == "tpr" ? TargetMetric::tpr : TargetMetric::ppv, v});
  }
  const json& bl = c.at("baseline");
  const std::string train = bl.at("train_data").get<std::string>();
  const std::string test = bl.at("test_data").get<std::string>();
  if (train.empty() != test.empty()) throw ConfigError("baseline needs both train_data and test_data");

  const json doc = read_json(scores_path);
  if (!doc.is_object() || doc.value("format", "") != kScoresFormat || !doc.contains("patients") ||
      !doc.at("patients").is_array()) {
    throw DataError(scores_path.string() + ": not a " + kScoresFormat + " document");
  }
  std::vector<std::vector<double>> series;
  std::vector<double> scores;
  std::vector<int> labels, events;
  double step_hours = 4.0;
  try {
    for (const json& p : doc.at("patients")) {
      series.push_back(p.at("risk").get<std::vector<double>>());
      labels.push_back(p.at("F").get<int>());
      events.push_back(p.at("J").get<int>());
      step_hours = p.at("step_hours").get<double>();
      if (series.back().empty()) throw DataError("empty risk series");
      scores.push_back(summarize(series.back(), summary, horizon));
    }
  } catch (const json::exception& e) {
    throw DataError(scores_path.string() + ": " + e.what());
  }

  json report{{"config", c}, {"patients", scores.size()},
              {"positives", std::count(labels.begin(), labels.end(), 1)}};
  report["pr_auc_icu"] = metric_or_undefined([&] { return pr_auc(scores, labels); });
  report["pr_auc_icu_discharge"] = metric_or_undefined([&] { return pr_auc_icu_discharge(scores, labels); });
  json ops = json::array();
  for (const Target& t : targets) {
    json entry{{"target", t.metric == TargetMetric::tpr ? "tpr" : "ppv"}, {"value", t.value}};
    try {
      const double threshold = operating_point(scores, labels, t.metric, t.value);
      entry["threshold"] = threshold;
      entry["timeliness"] = timeliness(series, threshold, events, labels, step_hours).to_json();
    } catch (const Error& e) {
      entry["undefined"] = e.what();
    }
    ops.push_back(std::move(entry));
  }
  report["operating_points"] = std::move(ops);

  if (!train.empty()) {
    const Dataset train_data = read_dataset(train);
    const Dataset test_data = read_dataset(test);
    const std::vector<double> lr = lr_baseline_scores(train_data, test_data, bl.at("ridge").get<double>());
    std::vector<int> lr_labels;
    for (const PatientRecord& r : test_data.records) lr_labels.push_back(r.F);
    report["baseline"] = json{{"method", "logistic_regression"},
                              {"pr_auc_icu", metric_or_undefined([&] { return pr_auc(lr, lr_labels); })},
                              {"pr_auc_icu_discharge",
                               metric_or_undefined([&] { return pr_auc_icu_discharge(lr, lr_labels); })}};
  } else {
    report["baseline"] = nullptr;
  }
  make_dir(out);
  write_json(out / "metrics.json", report);
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"sslgm: synthetic cohorts, model fitting, risk scoring and evaluation", "sslgm"};
  app.require_subcommand(1);

  struct Flags {
    std::string config;
    json patch = json::object();
  };
  Flags flags;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", flags.config, "JSON config file; flags override it");
  };
  auto add_path = [&](CLI::App* sub, const std::string& name, const std::string& pointer, const std::string& help) {
    sub->add_option_function<std::string>(
        name, [&flags, pointer](const std::string& v) { flags.patch[json::json_pointer(pointer)] = v; }, help);
  };
  auto add_int = [&](CLI::App* sub, const std::string& name, const std::vector<std::string>& pointers,
                     const std::string& help) {
    sub->add_option_function<long long>(
        name,
        [&flags, pointers](long long v) {
          for (const auto& p : pointers) flags.patch[json::json_pointer(p)] = v;
        },
        help);
  };
  auto add_u64 = [&](CLI::App* sub, const std::string& name, const std::vector<std::string>& pointers,
                     const std::string& help) {
    sub->add_option_function<std::uint64_t>(
        name,
        [&flags, pointers](std::uint64_t v) {
          for (const auto& p : pointers) flags.patch[json::json_pointer(p)] = v;
        },
        help);
  };

  CLI::App* gen = app.add_subcommand("generate", "Generate a synthetic censored cohort");
  add_common(gen);
  add_u64(gen, "--seed", {"/seed"}, "cohort seed");
  add_int(gen, "--K", {"/K"}, "number of episodes");
  add_path(gen, "--model", "/truth_model", "generating model file (default: reference 3-state model)");
  add_path(gen, "--out", "/out", "output directory");
  add_int(gen, "--threads", {"/threads"}, "OpenMP threads (0 = default)");

  CLI::App* fit = app.add_subcommand("fit", "Learn a model by backward labeling and EM");
  add_common(fit);
  add_path(fit, "--data", "/data", "dataset file");
  add_path(fit, "--out", "/out", "output directory");
  add_u64(fit, "--seed", {"/learning/segmentation/seed", "/learning/em/seed"}, "segmentation and EM seed");
  add_int(fit, "--states", {"/learning/states"}, "number of states N");
  add_int(fit, "--components", {"/learning/components"}, "number of mixture components G");
  add_int(fit, "--threads", {"/threads"}, "OpenMP threads (0 = default)");

  CLI::App* score = app.add_subcommand("score", "Score every episode of a dataset");
  add_common(score);
  add_path(score, "--data", "/data", "dataset file");
  add_path(score, "--model", "/model", "model file");
  add_path(score, "--out", "/out", "output directory");
  add_int(score, "--threads", {"/threads"}, "OpenMP threads (0 = default)");

  CLI::App* eval = app.add_subcommand("eval", "Compute PR-AUC, operating points and timeliness");
  add_common(eval);
  add_path(eval, "--scores", "/scores", "scores.json written by 'score'");
  add_path(eval, "--out", "/out", "output directory");
  add_path(eval, "--train-data", "/baseline/train_data", "training dataset for the logistic baseline");
  add_path(eval, "--data", "/baseline/test_data", "test dataset for the logistic baseline");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kValidation;
  }

  CLI::App* chosen = app.get_subcommands().front();
  const std::string command = chosen->get_name();
  try {
    json file = json::object();
    if (!flags.config.empty()) {
      std::ifstream in(flags.config);
      if (!in) throw ConfigError("cannot open config " + flags.config);
      try {
        file = json::parse(in);
      } catch (const json::exception& e) {
        throw ConfigError("config " + flags.config + ": " + e.what());
      }
    }
    const json config = resolve_config(command, file, flags.patch);
    if (command == "generate") {
      cmd_generate(config);
    } else if (command == "fit") {
      cmd_fit(config);
    } else if (command == "score") {
      cmd_score(config);
    } else {
      cmd_eval(config);
    }
    return kOk;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntime;
  }
}

}  // namespace sslgm::cli
