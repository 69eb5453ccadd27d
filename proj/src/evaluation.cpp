#include "sslgm/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "sslgm/util.hpp"

namespace sslgm {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_scored(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ContractError("scores and labels differ in length");
  for (std::size_t k = 0; k < scores.size(); ++k) {
    if (!std::isfinite(scores[k])) throw DataError("non-finite score at index " + std::to_string(k));
    if (labels[k] != 0 && labels[k] != 1) throw DataError("label at index " + std::to_string(k) + " is not 0/1");
  }
}

std::vector<std::size_t> descending(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

// (threshold, tp, fp) after each tie group, thresholds descending.
struct Cut {
  double threshold;
  long tp;
  long fp;
};

std::vector<Cut> sweep(std::span<const double> scores, std::span<const int> labels) {
  const auto order = descending(scores);
  std::vector<Cut> cuts;
  long tp = 0, fp = 0;
  for (std::size_t k = 0; k < order.size();) {
    const double s = scores[order[k]];
    while (k < order.size() && scores[order[k]] == s) {
      (labels[order[k]] == 1 ? tp : fp) += 1;
      ++k;
    }
    cuts.push_back({s, tp, fp});
  }
  return cuts;
}

VectorXd sigmoid(const VectorXd& z) { return (1.0 + (-z.array()).exp()).inverse(); }

}  // namespace

double pr_auc(std::span<const double> scores, std::span<const int> labels) {
  check_scored(scores, labels);
  const long positives = std::count(labels.begin(), labels.end(), 1);
  const long negatives = static_cast<long>(labels.size()) - positives;
  if (positives == 0 || negatives == 0) throw UndefinedMetric("PR-AUC needs both classes among the labels");
  double ap = 0.0;
  long prev_tp = 0;
  for (const Cut& c : sweep(scores, labels)) {
    if (c.tp != prev_tp) {
      ap += static_cast<double>(c.tp - prev_tp) / static_cast<double>(positives) *
            (static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp));
    }
    prev_tp = c.tp;
  }
  return ap;
}

double pr_auc_icu_discharge(std::span<const double> scores, std::span<const int> labels) {
  std::vector<double> flipped(scores.size());
  std::vector<int> discharged(labels.size());
  for (std::size_t k = 0; k < scores.size(); ++k) {
    flipped[k] = 1.0 - scores[k];
    discharged[k] = 1 - labels[k];
  }
  return 0.5 * (pr_auc(scores, labels) + pr_auc(flipped, discharged));
}

nlohmann::json Timeliness::to_json() const {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  return {{"mean_hours", num(mean_hours)}, {"tpr", num(tpr)}, {"ppv", num(ppv)},
          {"alerts", alerts}, {"true_positives", true_positives}};
}

Timeliness timeliness(const std::vector<std::vector<double>>& risk, double threshold,
                      std::span<const int> event_steps, std::span<const int> labels, double step_hours) {
  if (risk.size() != labels.size() || event_steps.size() != labels.size()) {
    throw ContractError("timeliness: inputs differ in length");
  }
  Timeliness out;
  long positives = 0;
  double hours = 0.0;
  for (std::size_t k = 0; k < risk.size(); ++k) {
    positives += labels[k] == 1;
    const auto last = std::min<std::size_t>(risk[k].size(), static_cast<std::size_t>(event_steps[k]) + 1);
    for (std::size_t t = 1; t < last; ++t) {
      if (risk[k][t] >= threshold) {
        ++out.alerts;
        if (labels[k] == 1) {
          ++out.true_positives;
          hours += static_cast<double>(event_steps[k] - static_cast<int>(t)) * step_hours;
        }
        break;
      }
    }
  }
  out.mean_hours = out.true_positives > 0 ? hours / out.true_positives : kNaN;
  out.tpr = positives > 0 ? static_cast<double>(out.true_positives) / static_cast<double>(positives) : kNaN;
  out.ppv = out.alerts > 0 ? static_cast<double>(out.true_positives) / out.alerts : kNaN;
  return out;
}

double operating_point(std::span<const double> scores, std::span<const int> labels, TargetMetric target,
                       double value) {
  check_scored(scores, labels);
  const long positives = std::count(labels.begin(), labels.end(), 1);
  if (positives == 0) throw UndefinedMetric("operating point needs at least one positive label");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const Cut& c : sweep(scores, labels)) {
    const double m = target == TargetMetric::tpr ? static_cast<double>(c.tp) / static_cast<double>(positives)
                                                 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
    if (m >= value) return c.threshold;
    lo = std::min(lo, m);
    hi = std::max(hi, m);
  }
  throw ConfigError(std::string("target ") + (target == TargetMetric::tpr ? "tpr" : "ppv") + "=" +
                    format_double(value) + " is not achievable; achievable range is [" + format_double(lo) + ", " +
                    format_double(hi) + "]");
}

double summarize(std::span<const double> series, Summary summary, int horizon) {
  if (series.empty()) throw ContractError("summarize: empty series");
  switch (summary) {
    case Summary::last:
      return series.back();
    case Summary::horizon: {
      if (horizon < 0) throw ConfigError("horizon must be >= 0");
      return series[std::min<std::size_t>(static_cast<std::size_t>(horizon), series.size() - 1)];
    }
    case Summary::max:
    default:
      // R(0) only counts when nothing was observed.
      return series.size() == 1 ? series.front() : *std::max_element(series.begin() + 1, series.end());
  }
}

VectorXd summary_features(const MatrixXd& Y) {
  const Index J = Y.rows();
  const Index M = Y.cols();
  if (J < 1) throw ContractError("summary_features: empty episode");
  VectorXd f(3 * M);
  const double tbar = 0.5 * static_cast<double>(J - 1);
  double stt = 0.0;
  for (Index t = 0; t < J; ++t) stt += (t - tbar) * (t - tbar);
  for (Index c = 0; c < M; ++c) {
    const double mean = Y.col(c).mean();
    double sty = 0.0;
    for (Index t = 0; t < J; ++t) sty += (t - tbar) * (Y(t, c) - mean);
    f(3 * c) = mean;
    f(3 * c + 1) = Y(J - 1, c);
    f(3 * c + 2) = stt > 0.0 ? sty / stt : 0.0;
  }
  return f;
}

double LogisticModel::predict(const VectorXd& x) const {
  const VectorXd z = (x - center).cwiseQuotient(scale);
  const double s = coef(0) + coef.tail(z.size()).dot(z);
  return 1.0 / (1.0 + std::exp(-s));
}

LogisticModel fit_logistic(const MatrixXd& X, std::span<const int> labels, double ridge, int max_iters) {
  const Index n = X.rows();
  const Index d = X.cols();
  if (n == 0 || static_cast<std::size_t>(n) != labels.size()) throw ContractError("fit_logistic: bad input sizes");
  LogisticModel m;
  m.center = X.colwise().mean().transpose();
  m.scale = ((X.rowwise() - m.center.transpose()).array().square().colwise().mean().sqrt()).transpose();
  for (Index j = 0; j < d; ++j) {
    if (!(m.scale(j) > 1e-12)) m.scale(j) = 1.0;
  }
  MatrixXd Z(n, d + 1);
  Z.col(0).setOnes();
  Z.rightCols(d) = (X.rowwise() - m.center.transpose()).array().rowwise() / m.scale.transpose().array();
  VectorXd y(n);
  for (Index k = 0; k < n; ++k) y(k) = labels[static_cast<std::size_t>(k)];

  VectorXd beta = VectorXd::Zero(d + 1);
  VectorXd penalty = VectorXd::Constant(d + 1, ridge);
  penalty(0) = 0.0;
  for (int it = 0; it < max_iters; ++it) {
    const VectorXd p = sigmoid(Z * beta);
    const VectorXd grad = Z.transpose() * (y - p) - penalty.cwiseProduct(beta);
    const VectorXd w = (p.array() * (1.0 - p.array())).max(1e-12);
    MatrixXd H = Z.transpose() * w.asDiagonal() * Z;
    H.diagonal() += penalty + VectorXd::Constant(d + 1, 1e-10);
    const VectorXd step = H.ldlt().solve(grad);
    beta += step;
    if (step.cwiseAbs().maxCoeff() < 1e-10) break;
  }
  m.coef = beta;
  return m;
}

std::vector<double> lr_baseline_scores(const Dataset& train, const Dataset& test, double ridge) {
  if (train.records.empty()) throw DataError("baseline training set is empty");
  if (train.obs_dim != test.obs_dim) throw DataError("baseline train/test channel counts differ");
  const Index d = 3 * train.obs_dim;
  MatrixXd X(static_cast<Index>(train.records.size()), d);
  std::vector<int> labels;
  for (std::size_t k = 0; k < train.records.size(); ++k) {
    X.row(static_cast<Index>(k)) = summary_features(train.records[k].Y).transpose();
    labels.push_back(train.records[k].F);
  }
  const LogisticModel model = fit_logistic(X, labels, ridge);
  std::vector<double> out;
  out.reserve(test.records.size());
  for (const PatientRecord& r : test.records) out.push_back(model.predict(summary_features(r.Y)));
  return out;
}

}  // namespace sslgm
