#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "oracles/random_models.hpp"
#include "sslgm/cohort.hpp"
#include "sslgm/errors.hpp"
#include "sslgm/inference.hpp"
#include "sslgm/learning.hpp"

using namespace sslgm;

namespace {

LabeledEpisode episode_with_labels(std::vector<int> labels) {
  LabeledEpisode e;
  e.labels = std::move(labels);
  int t = 0;
  for (std::size_t n = 0; n < e.labels.size(); ++n, t += 2) e.segments.push_back({t, t + 2});
  return e;
}

struct Generated {
  std::vector<Eigen::MatrixXd> Y;
  std::vector<std::vector<int>> states;
};

Generated generate_blocks(const std::vector<StateDynamics>& dyn, const std::vector<int>& block_states, int block_len,
                          int K, std::uint64_t seed) {
  Generated g;
  for (int k = 0; k < K; ++k) {
    std::vector<int> regime;
    for (int s : block_states) regime.insert(regime.end(), static_cast<std::size_t>(block_len), s - 1);
    g.Y.push_back(sample_path({dyn, regime}, seed * 1000 + static_cast<std::uint64_t>(k)).Y);
    std::vector<int> labels;
    for (int r : regime) labels.push_back(r + 1);
    g.states.push_back(labels);
  }
  return g;
}

std::vector<LabeledSequence> sequences(const Generated& g) {
  std::vector<LabeledSequence> out;
  for (std::size_t k = 0; k < g.Y.size(); ++k) out.push_back({&g.Y[k], g.states[k], 1.0});
  return out;
}

double max_principal_angle(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  const Eigen::MatrixXd Qa = Eigen::HouseholderQR<Eigen::MatrixXd>(A).householderQ() *
                             Eigen::MatrixXd::Identity(A.rows(), A.cols());
  const Eigen::MatrixXd Qb = Eigen::HouseholderQR<Eigen::MatrixXd>(B).householderQ() *
                             Eigen::MatrixXd::Identity(B.rows(), B.cols());
  const Eigen::VectorXd cosines = Eigen::JacobiSVD<Eigen::MatrixXd>(Qa.transpose() * Qb).singularValues();
  return std::acos(std::clamp(cosines.minCoeff(), -1.0, 1.0));
}

std::string file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_SUITE("learning") {

TEST_CASE("estimate_transitions: smoothed counts") {
  std::vector<LabeledEpisode> eps;
  for (int k = 0; k < 94; ++k) eps.push_back(episode_with_labels({2, 1}));
  for (int k = 0; k < 6; ++k) eps.push_back(episode_with_labels({2, 3}));
  const TransitionEstimate t = estimate_transitions(eps, 3);
  CHECK(t.P(1, 0) == doctest::Approx(94.5 / 101).epsilon(1e-14));
  CHECK(t.P(1, 2) == doctest::Approx(6.5 / 101).epsilon(1e-14));
  CHECK(t.P(0, 0) == 1.0);
  CHECK(t.P(2, 2) == 1.0);
  CHECK(t.p0(1) == 1.0);
  ChainParams c{3, t.p0, t.P, std::vector<NbDuration>(3)};
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("estimate_transitions: start state and unvisited rows") {
  std::vector<LabeledEpisode> eps(5, episode_with_labels({1}));
  const TransitionEstimate t = estimate_transitions(eps, 4);
  CHECK(t.p0(0) == 1.0);
  CHECK(t.p0.tail(3).sum() == 0.0);
  CHECK(t.unvisited == std::vector<int>{2, 3});
  CHECK(t.P(1, 0) == 0.5);
  CHECK(t.P(2, 3) == 0.5);
}

TEST_CASE("EM: max_iters = 0 returns the initialisation") {
  std::mt19937_64 rng(1);
  const std::vector<StateDynamics> dyn{oracle::random_dynamics(rng, 2, 2), oracle::random_dynamics(rng, 2, 2),
                                       oracle::random_dynamics(rng, 2, 2)};
  const Generated g = generate_blocks(dyn, {2, 3, 1}, 10, 5, 1);
  EmConfig cfg;
  cfg.max_iters = 0;
  const EmResult r = em_fit_dynamics(sequences(g), 3, 2, cfg, dyn);
  for (int s = 0; s < 3; ++s) {
    CHECK(r.dynamics[static_cast<std::size_t>(s)].A == dyn[static_cast<std::size_t>(s)].A);
    CHECK(r.dynamics[static_cast<std::size_t>(s)].C == dyn[static_cast<std::size_t>(s)].C);
  }
  CHECK(r.loglik_trace.size() == 1);
}

TEST_CASE("EM: loglik trace is non-decreasing and C is recovered up to rotation") {
  std::mt19937_64 rng(2);
  std::vector<StateDynamics> dyn;
  for (int s = 0; s < 3; ++s) {
    StateDynamics d = oracle::random_dynamics(rng, 3, 2);
    d.D_var.setConstant(1e-6);
    dyn.push_back(d);
  }
  const Generated g = generate_blocks(dyn, {2, 3, 1}, 20, 40, 2);
  EmConfig cfg;
  cfg.max_iters = 40;
  const EmResult r = em_fit_dynamics(sequences(g), 3, 2, cfg);
  for (std::size_t i = 1; i < r.loglik_trace.size(); ++i) CHECK(r.loglik_trace[i] >= r.loglik_trace[i - 1] - 1e-8);
  for (int s = 0; s < 3; ++s) {
    CHECK(max_principal_angle(r.dynamics[static_cast<std::size_t>(s)].C, dyn[static_cast<std::size_t>(s)].C) < 0.05);
  }
}

TEST_CASE("EM: one iteration on a scalar single-regime model matches the lag-1 moment ratio") {
  StateDynamics d;
  d.A = Eigen::MatrixXd::Constant(1, 1, 0.7);
  d.B_var = Eigen::VectorXd::Constant(1, 0.5);
  d.C = Eigen::MatrixXd::Constant(1, 1, 1.0);
  d.D_var = Eigen::VectorXd::Constant(1, 0.3);
  d.Sigma0 = Eigen::MatrixXd::Constant(1, 1, 1.0);
  const std::vector<StateDynamics> dyn{d, d, d};
  const Generated g = generate_blocks(dyn, {2}, 50, 20, 3);

  StateDynamics init = d;
  init.A(0, 0) = 0.3;
  const std::vector<StateDynamics> start{init, init, init};
  EmConfig cfg;
  cfg.max_iters = 1;
  cfg.low_occupancy = LowOccupancy::keep_initial;
  const EmResult r = em_fit_dynamics(sequences(g), 3, 1, cfg, start);

  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < g.Y.size(); ++k) {
    std::vector<int> regime(50, 1);
    const RegimeSchedule s{start, regime};
    const KalmanResult kf = kalman_filter(s, g.Y[k]);
    const SmootherResult sm = rts_smoother(s, kf);
    for (std::size_t t = 1; t < 50; ++t) {
      const double mt = sm.smoothed[t].mean(0), mp = sm.smoothed[t - 1].mean(0);
      num += sm.cross_cov[t - 1](0, 0) + mt * mp;
      den += sm.smoothed[t - 1].cov(0, 0) + mp * mp;
    }
  }
  CHECK(std::abs(r.dynamics[1].A(0, 0) - num / den) < 1e-10);
  CHECK(r.dynamics[0].A == init.A);  // unoccupied states keep their start
  CHECK_FALSE(r.warnings.empty());
}

TEST_CASE("EM: low occupancy is an error by default") {
  std::mt19937_64 rng(4);
  const std::vector<StateDynamics> dyn{oracle::random_dynamics(rng, 2, 2), oracle::random_dynamics(rng, 2, 2),
                                       oracle::random_dynamics(rng, 2, 2)};
  const Generated g = generate_blocks(dyn, {2, 1}, 10, 3, 4);
  CHECK_THROWS_AS(em_fit_dynamics(sequences(g), 3, 2, EmConfig{}), DataError);
}

TEST_CASE("fit_mixture with G = 1 equals the direct single-model pipeline") {
  CohortSpec spec;
  spec.K = 150;
  spec.seed = 21;
  spec.truth = MixtureModel::single(reference_three_state_model(), 2);
  const Cohort cohort = generate_cohort(spec);
  std::vector<LabeledEpisode> labeled;
  for (std::size_t k = 0; k < cohort.truth.size(); ++k) {
    const GroundTruth& gt = cohort.truth[k];
    LabeledEpisode e;
    e.id = gt.id;
    e.labels = gt.S;
    int t = 0;
    for (int d : gt.T) {
      e.segments.push_back({t, t + d});
      t += d;
    }
    labeled.push_back(e);
  }
  LearningConfig cfg;
  cfg.em.max_iters = 15;
  const MixtureFit fit = fit_mixture(cohort.data, labeled, cfg);
  CHECK(fit.model.G() == 1);
  CHECK(fit.model.weights(Eigen::VectorXd::Constant(2, 3.0))(0) == 1.0);

  const TransitionEstimate tr = estimate_transitions(labeled, 3);
  std::vector<int> dwell;
  for (const auto& e : labeled) {
    for (std::size_t n = 0; n + 1 < e.labels.size(); ++n) {
      if (e.labels[n] == 2) dwell.push_back(e.segments[n].length());
    }
  }
  const NbFit nb = fit_nb_mle(dwell);
  std::vector<LabeledSequence> seqs;
  for (std::size_t k = 0; k < labeled.size(); ++k) seqs.push_back({&cohort.data.records[k].Y, labeled[k].step_labels(), 1.0});
  const EmResult em = em_fit_dynamics(seqs, 3, 2, cfg.em);

  const SslgmParams& p = fit.model.components[0];
  CHECK(p.chain.p0 == tr.p0);
  CHECK(p.chain.P == tr.P);
  CHECK(p.chain.duration[1].r == nb.alpha.r);
  CHECK(p.chain.duration[1].q == nb.alpha.q);
  for (int s = 0; s < 3; ++s) {
    CHECK(p.dynamics[static_cast<std::size_t>(s)].A == em.dynamics[static_cast<std::size_t>(s)].A);
    CHECK(p.dynamics[static_cast<std::size_t>(s)].C == em.dynamics[static_cast<std::size_t>(s)].C);
    CHECK(p.dynamics[static_cast<std::size_t>(s)].D_var == em.dynamics[static_cast<std::size_t>(s)].D_var);
  }

  SUBCASE("episode order does not change the fitted loglik") {
    Dataset shuffled = cohort.data;
    std::vector<LabeledEpisode> relabeled = labeled;
    std::reverse(shuffled.records.begin(), shuffled.records.end());
    std::reverse(relabeled.begin(), relabeled.end());
    const MixtureFit again = fit_mixture(shuffled, relabeled, cfg);
    CHECK(std::abs(again.diagnostics.final_loglik - fit.diagnostics.final_loglik) < 1e-6);
  }
}

TEST_CASE("backward_labeling_em: one episode, determinism, abort on failed labels") {
  CohortSpec spec;
  spec.K = 1;
  spec.seed = 3;
  spec.truth = MixtureModel::single(reference_three_state_model(), 2);
  Cohort one = generate_cohort(spec);
  const LearningResult r1 = backward_labeling_em(one.data, LearningConfig{});
  CHECK_NOTHROW(r1.model.validate());
  CHECK_FALSE(r1.diagnostics.warnings.empty());

  spec.K = 120;
  const Cohort c = generate_cohort(spec);
  const auto dir = std::filesystem::temp_directory_path() / "sslgm_learning_test";
  std::filesystem::create_directories(dir);
  write_model(backward_labeling_em(c.data, LearningConfig{}).model, dir / "a.json");
  write_model(backward_labeling_em(c.data, LearningConfig{}).model, dir / "b.json");
  CHECK(file_bytes(dir / "a.json") == file_bytes(dir / "b.json"));
  std::filesystem::remove_all(dir);

  // Discharged episodes with three transient-free segments cannot be labeled.
  Dataset bad;
  bad.covariate_dim = 0;
  bad.obs_dim = 1;
  for (int k = 0; k < 4; ++k) {
    PatientRecord r;
    r.id = "B" + std::to_string(k);
    r.q = Eigen::VectorXd(0);
    r.Y.resize(25, 1);
    for (int t = 0; t < 25; ++t) r.Y(t, 0) = t < 12 ? 0.0 + 0.01 * (t % 3) : 50.0 + 0.01 * (t % 3);
    r.F = 0;
    bad.records.push_back(r);
  }
  LearningConfig cfg;
  cfg.max_relabel_failed_rate = 0.5;
  CHECK_THROWS_AS(backward_labeling_em(bad, cfg), DataError);
}

TEST_CASE("mixture: two components told apart by covariate sign") {
  SslgmParams a = reference_three_state_model(2.0);
  SslgmParams b = a;
  for (auto& d : b.dynamics) {
    d.C *= 4.0;
    d.D_var *= 16.0;
  }
  MixtureModel truth;
  truth.components = {a, b};
  truth.weight_coeffs = Eigen::MatrixXd::Zero(2, 3);
  truth.weight_coeffs(1, 1) = 8.0;
  CohortSpec spec;
  spec.K = 1000;
  spec.seed = 99;
  spec.truth = truth;
  const Cohort train = generate_cohort(spec);
  LearningConfig cfg;
  cfg.G = 2;
  const LearningResult fit = backward_labeling_em(train.data, cfg);
  REQUIRE(fit.model.G() == 2);

  spec.K = 300;
  spec.seed = 100;
  const Cohort test = generate_cohort(spec);
  int agree = 0;
  for (std::size_t k = 0; k < test.data.records.size(); ++k) {
    const RiskTrajectory tr = score_episode(fit.model, test.data.records[k]);
    Eigen::Index g = 0;
    tr.steps.back().component_posterior.maxCoeff(&g);
    agree += static_cast<int>(g) == test.truth[k].component;
  }
  const double acc = std::max(agree, 300 - agree) / 300.0;
  CHECK(acc >= 0.9);
}

}
