#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "sslgm/cohort.hpp"
#include "sslgm/errors.hpp"

namespace sslgm {

/// A metric that is not defined for the given labels (e.g. one class only).
class UndefinedMetric : public DataError {
 public:
  using DataError::DataError;
};

/// Area under the precision-recall curve, average-precision convention:
/// sum over distinct thresholds (descending) of recall increment times
/// precision, tied scores entering together.
double pr_auc(std::span<const double> scores, std::span<const int> labels);

/// Mean of the ICU-positive task on `scores` and the discharge-positive task
/// on 1 - scores.
double pr_auc_icu_discharge(std::span<const double> scores, std::span<const int> labels);

struct Timeliness {
  double mean_hours = 0.0;  // NaN when there are no alerted positives
  double tpr = 0.0;         // NaN without positives
  double ppv = 0.0;         // NaN without alerts
  int alerts = 0;
  int true_positives = 0;

  nlohmann::json to_json() const;
};

/// risk[k] is R(0..J_k) for patient k. A patient alerts at the first t >= 1
/// (and t <= event step) with R(t) >= threshold.
Timeliness timeliness(const std::vector<std::vector<double>>& risk, double threshold,
                      std::span<const int> event_steps, std::span<const int> labels, double step_hours = 4.0);

enum class TargetMetric { tpr, ppv };

/// Largest threshold among the scores whose TPR (or PPV) reaches `value`.
/// Throws ConfigError naming the achievable range otherwise.
double operating_point(std::span<const double> scores, std::span<const int> labels, TargetMetric target,
                       double value);

enum class Summary { max, last, horizon };

/// Reduces R(0..J) to one episode score. `horizon` is in steps.
double summarize(std::span<const double> series, Summary summary, int horizon = 0);

/// Per channel: mean, last value, least-squares slope over steps.
Eigen::VectorXd summary_features(const Eigen::MatrixXd& Y);

/// Ridge-penalised logistic regression on standardised features.
struct LogisticModel {
  Eigen::VectorXd center;
  Eigen::VectorXd scale;
  Eigen::VectorXd coef;  // intercept first

  double predict(const Eigen::VectorXd& x) const;
};

LogisticModel fit_logistic(const Eigen::MatrixXd& X, std::span<const int> labels, double ridge = 1e-3,
                           int max_iters = 100);

/// Trains on `train`, returns one score per record of `test`.
std::vector<double> lr_baseline_scores(const Dataset& train, const Dataset& test, double ridge = 1e-3);

}  // namespace sslgm
