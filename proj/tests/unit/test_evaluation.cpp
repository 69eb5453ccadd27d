#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "oracles/brute_ap.hpp"
#include "sslgm/cohort.hpp"
#include "sslgm/evaluation.hpp"
#include "sslgm/inference.hpp"

using namespace sslgm;

namespace {

double ap(const std::vector<double>& s, const std::vector<int>& l) { return pr_auc(s, l); }

}  // namespace

TEST_SUITE("evaluation") {

TEST_CASE("pr_auc hand cases") {
  CHECK(ap({0.9, 0.8, 0.1, 0.05}, {1, 1, 0, 0}) == 1.0);
  CHECK(ap({0.5, 0.5, 0.5, 0.5, 0.5}, {1, 0, 0, 1, 0}) == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(ap({0.9, 0.8, 0.1}, {1, 0, 1}) == doctest::Approx(0.5 * (1.0 + 2.0 / 3.0)).epsilon(1e-15));
  CHECK(ap({0.1, 0.2}, {1, 0}) == 0.5);
}

TEST_CASE("pr_auc equals the brute-force sweep") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 49);
    std::vector<double> s(n);
    std::vector<int> l(n);
    // coarse grid so ties are common
    const int levels = 1 + static_cast<int>(rng() % 12);
    for (int k = 0; k < n; ++k) {
      s[k] = static_cast<double>(rng() % levels) / levels;
      l[k] = static_cast<int>(rng() % 2);
    }
    l[0] = 1;
    l[1] = 0;
    CHECK(ap(s, l) == oracle::brute_ap(s, l));
  }
}

TEST_CASE("pr_auc is a rank statistic") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> z;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> s(40), t(40);
    std::vector<int> l(40);
    for (int k = 0; k < 40; ++k) {
      s[k] = std::round(z(rng) * 4.0) / 4.0;
      t[k] = std::exp(3.0 * s[k]) + 7.0;
      l[k] = k % 3 == 0;
    }
    CHECK(ap(s, l) == ap(t, l));
  }
}

TEST_CASE("single class is undefined") {
  CHECK_THROWS_AS(ap({0.1, 0.2}, {1, 1}), UndefinedMetric);
  CHECK_THROWS_AS(ap({0.1, 0.2}, {0, 0}), UndefinedMetric);
  CHECK_THROWS_AS(pr_auc_icu_discharge(std::vector<double>{0.3}, std::vector<int>{0}), UndefinedMetric);
}

TEST_CASE("icu/discharge macro average") {
  const std::vector<double> s{0.9, 0.8, 0.1};
  const std::vector<int> l{1, 0, 1};
  const std::vector<double> flipped{0.1, 0.2, 0.9};
  const std::vector<int> neg{0, 1, 0};
  CHECK(pr_auc_icu_discharge(s, l) == doctest::Approx(0.5 * (pr_auc(s, l) + pr_auc(flipped, neg))).epsilon(1e-15));
}

TEST_CASE("timeliness extremes") {
  const std::vector<std::vector<double>> risk{{0.1, 0.2, 0.6, 0.9}, {0.1, 0.05, 0.1}, {0.3, 0.4}};
  const std::vector<int> events{3, 2, 1};
  const std::vector<int> labels{1, 0, 1};

  const Timeliness all = timeliness(risk, 0.0, events, labels, 4.0);
  CHECK(all.alerts == 3);
  CHECK(all.true_positives == 2);
  CHECK(all.tpr == 1.0);
  CHECK(all.ppv == doctest::Approx(2.0 / 3.0));
  // alerts at t=1: (3-1)*4 and (1-1)*4 hours
  CHECK(all.mean_hours == doctest::Approx(4.0));

  const Timeliness none = timeliness(risk, 1.0 + 1e-12, events, labels, 4.0);
  CHECK(none.alerts == 0);
  CHECK(none.tpr == 0.0);
  CHECK(std::isnan(none.ppv));
  CHECK(std::isnan(none.mean_hours));
  CHECK(none.to_json()["ppv"].is_null());

  const Timeliness mid = timeliness(risk, 0.5, events, labels, 4.0);
  CHECK(mid.alerts == 1);
  CHECK(mid.mean_hours == doctest::Approx(4.0));  // alert at t=2, event at 3
}

TEST_CASE("operating points") {
  const std::vector<double> s{0.9, 0.7, 0.3, 0.1};
  const std::vector<int> l{1, 1, 0, 0};
  CHECK(operating_point(s, l, TargetMetric::tpr, 0.5) == 0.9);
  CHECK(operating_point(s, l, TargetMetric::tpr, 1.0) == 0.7);
  CHECK(operating_point(s, l, TargetMetric::ppv, 1.0) == 0.9);

  const std::vector<double> s2{0.8, 0.6, 0.5, 0.2, 0.4};
  const std::vector<int> l2{0, 1, 0, 1, 0};
  CHECK(operating_point(s2, l2, TargetMetric::tpr, 1.0) == 0.2);

  const std::vector<double> tied{0.4, 0.4, 0.4};
  const std::vector<int> lt{1, 0, 0};
  CHECK(operating_point(tied, lt, TargetMetric::ppv, 1.0 / 3.0) == 0.4);
  CHECK_THROWS_AS(operating_point(tied, lt, TargetMetric::ppv, 0.5), ConfigError);
  CHECK_THROWS_AS(operating_point(s, l, TargetMetric::tpr, 1.5), ConfigError);
}

TEST_CASE("summaries") {
  const std::vector<double> r{0.5, 0.1, 0.3, 0.2};
  CHECK(summarize(r, Summary::max) == 0.3);  // R(0) is the prior, not an observation
  CHECK(summarize(r, Summary::last) == 0.2);
  CHECK(summarize(r, Summary::horizon, 1) == 0.1);
  CHECK(summarize(std::vector<double>{0.05}, Summary::max) == 0.05);
}

TEST_CASE("logistic baseline separates separable data") {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> z;
  Dataset train, test;
  for (Dataset* d : {&train, &test}) {
    d->obs_dim = 2;
    for (int k = 0; k < 200; ++k) {
      PatientRecord r;
      r.id = "p" + std::to_string(k);
      r.F = k % 4 == 0;
      const int J = 2 + static_cast<int>(rng() % 6);
      r.Y.resize(J, 2);
      for (int t = 0; t < J; ++t) {
        r.Y(t, 0) = z(rng) + (r.F ? 3.0 : 0.0);
        r.Y(t, 1) = z(rng);
      }
      d->records.push_back(std::move(r));
    }
  }
  const std::vector<double> scores = lr_baseline_scores(train, test);
  std::vector<int> labels;
  for (const PatientRecord& r : test.records) labels.push_back(r.F);
  for (double s : scores) CHECK((s >= 0.0 && s <= 1.0));
  CHECK(pr_auc(scores, labels) >= 0.95);
}

TEST_CASE("deteriorating cohort gets warned ahead of transfer") {
  // Four states; the pre-ICU state 3 is sticky, high-risk, and looks like the
  // ICU state itself, so risk climbs while the patient is still on the ward.
  SslgmParams p;
  p.N = 4;
  Eigen::VectorXd p0(4);
  p0 << 0.3, 0.6, 0.1, 0.0;
  p.chain = ChainParams::birth_death(p0, {0.5, 0.9}, {{1.0, 1.0}, {2.0, 0.5}, {2.0, 0.3}, {1.0, 1.0}});
  for (double scale : {1.0, 3.0, 9.0, 9.0}) {
    StateDynamics d;
    d.A = 0.5 * Eigen::MatrixXd::Identity(2, 2);
    d.B_var = Eigen::VectorXd::Constant(2, 0.75);
    d.C = scale * Eigen::MatrixXd::Identity(2, 2);
    d.D_var = Eigen::VectorXd::Constant(2, 0.09 * scale * scale);
    d.Sigma0 = Eigen::MatrixXd::Identity(2, 2);
    p.dynamics.push_back(d);
  }
  CohortSpec spec;
  spec.K = 400;
  spec.seed = 77;
  spec.covariates.continuous = 0;
  spec.truth = MixtureModel::single(p, 0);
  const Cohort c = generate_cohort(spec);

  std::vector<std::vector<double>> risk;
  std::vector<double> summary;
  std::vector<int> labels, events;
  for (const PatientRecord& r : c.data.records) {
    const RiskTrajectory tr = score_episode(spec.truth, r);
    std::vector<double> series;
    for (const RiskStep& s : tr.steps) series.push_back(s.risk);
    summary.push_back(summarize(series, Summary::max));
    risk.push_back(std::move(series));
    labels.push_back(r.F);
    events.push_back(r.J());
  }
  const double th = operating_point(summary, labels, TargetMetric::tpr, 0.5);
  const Timeliness tl = timeliness(risk, th, events, labels, 4.0);
  CHECK(tl.tpr >= 0.5);
  CHECK(tl.mean_hours > 0.0);
}

}  // TEST_SUITE
