#include "sslgm/changepoint.hpp"

#include <algorithm>
#include <string>

#include "kernels_common.hpp"
#include "sslgm/errors.hpp"
#include "sslgm/kernels.hpp"
#include "sslgm/util.hpp"

namespace sslgm {
namespace {

void check_zeta(double zeta) {
  if (!(zeta > 0.0 && zeta < 2.0)) {
    throw ConfigError("zeta must lie in (0, 2), got " + format_double(zeta));
  }
}

// Rectangle sums of a symmetric matrix via a 2-D prefix table.
class BlockSums {
 public:
  explicit BlockSums(const Eigen::MatrixXd& D) : prefix_(Eigen::MatrixXd::Zero(D.rows() + 1, D.cols() + 1)) {
    for (Eigen::Index i = 0; i < D.rows(); ++i) {
      for (Eigen::Index j = 0; j < D.cols(); ++j) {
        prefix_(i + 1, j + 1) = D(i, j) + prefix_(i, j + 1) + prefix_(i + 1, j) - prefix_(i, j);
      }
    }
  }

  double block(const Segment& rows, const Segment& cols) const {
    return prefix_(rows.end, cols.end) - prefix_(rows.start, cols.end) - prefix_(rows.end, cols.start) +
           prefix_(rows.start, cols.start);
  }

  double within(const Segment& s) const { return 0.5 * block(s, s); }

  double statistic(const Segment& a, const Segment& b) const {
    return kernels::detail::scaled_statistic(block(a, b), within(a), within(b), a.length(), b.length());
  }

 private:
  Eigen::MatrixXd prefix_;
};

double goodness_of_fit(const BlockSums& sums, const Segmentation& segs, double penalty) {
  double total = 0.0;
  for (std::size_t k = 0; k + 1 < segs.size(); ++k) total += sums.statistic(segs[k], segs[k + 1]);
  return total - penalty * static_cast<double>(segs.size() - 1);
}

}  // namespace

void SegmentationConfig::validate() const {
  check_zeta(zeta);
  if (min_size < 2) throw ConfigError("min_size must be >= 2");
  if (n_permutations < 1) throw ConfigError("n_permutations must be >= 1");
  if (!(significance > 0.0 && significance < 1.0)) throw ConfigError("significance must lie in (0, 1)");
  if (max_changepoints < 0) throw ConfigError("max_changepoints must be >= 0");
  if (agglo_penalty < 0.0) throw ConfigError("agglo_penalty must be >= 0");
}

namespace {

bool goes_first(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows()) return a.rows() < b.rows();
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index c = 0; c < a.cols(); ++c) {
      if (a(i, c) != b(i, c)) return a(i, c) < b(i, c);
    }
  }
  return false;
}

}  // namespace

double energy_divergence(const Eigen::MatrixXd& X1, const Eigen::MatrixXd& X2, double zeta) {
  check_zeta(zeta);
  if (X1.rows() < 1 || X2.rows() < 1) throw ConfigError("energy_divergence needs non-empty segments");
  if (X1.cols() != X2.cols()) throw ConfigError("segments have different channel counts");
  // Fixed argument order so that swapping the segments gives the same bits.
  if (goes_first(X2, X1)) return kernels::omp::energy_divergence(X2, X1, zeta);
  return kernels::omp::energy_divergence(X1, X2, zeta);
}

Segmentation segments_from_change_points(int length, const std::vector<int>& change_points) {
  Segmentation out;
  int start = 0;
  for (int cp : change_points) {
    out.push_back({start, cp});
    start = cp;
  }
  out.push_back({start, length});
  return out;
}

DivisiveResult e_divisive(const Eigen::MatrixXd& Y, const SegmentationConfig& config) {
  config.validate();
  DivisiveResult out;
  const int T = static_cast<int>(Y.rows());
  if (T < 2 * config.min_size) {
    out.too_short = true;
    log().debug("e_divisive: series of length {} is shorter than 2*min_size", T);
    return out;
  }
  const Eigen::MatrixXd D = kernels::omp::distance_power_matrix(Y, config.zeta);

  struct Candidate {
    Segment segment;
    kernels::SplitScan scan;
  };
  auto scan = [&](const Segment& s) {
    std::vector<int> order(static_cast<std::size_t>(s.length()));
    for (int i = 0; i < s.length(); ++i) order[static_cast<std::size_t>(i)] = s.start + i;
    return Candidate{s, kernels::serial::best_split(D, order, config.min_size, s.start)};
  };

  std::vector<Candidate> candidates{scan({0, T})};
  for (int round = 0; round < config.max_changepoints; ++round) {
    auto best = candidates.end();
    for (auto it = candidates.begin(); it != candidates.end(); ++it) {
      if (it->scan.split < 0) continue;
      if (best == candidates.end() || it->scan.statistic > best->scan.statistic) best = it;
    }
    if (best == candidates.end()) break;

    Rng round_rng = make_rng(config.seed, static_cast<std::uint64_t>(round));
    const std::vector<double> null = kernels::omp::permutation_null(
        D, best->segment.start, best->segment.end, config.min_size, config.n_permutations, round_rng());
    const auto exceed = std::count_if(null.begin(), null.end(),
                                      [&](double v) { return v >= best->scan.statistic; });
    const double p_value = static_cast<double>(exceed + 1) / static_cast<double>(null.size() + 1);
    if (p_value > config.significance) break;

    const Segment parent = best->segment;
    const int split = best->scan.split;
    out.change_points.push_back(split);
    out.p_values.push_back(p_value);
    candidates.erase(best);
    candidates.push_back(scan({parent.start, split}));
    candidates.push_back(scan({split, parent.end}));
    std::sort(candidates.begin(), candidates.end(),
              [](const Candidate& a, const Candidate& b) { return a.segment.start < b.segment.start; });
  }
  std::sort(out.change_points.begin(), out.change_points.end());
  return out;
}

Segmentation e_agglo(const Eigen::MatrixXd& Y, const Segmentation& initial, const SegmentationConfig& config) {
  config.validate();
  if (initial.size() < 2) return initial;
  for (std::size_t k = 0; k < initial.size(); ++k) {
    if (initial[k].length() < 1 || (k > 0 && initial[k].start != initial[k - 1].end)) {
      throw ConfigError("e_agglo: initial segments must be contiguous and non-empty");
    }
  }
  if (initial.front().start != 0 || initial.back().end != Y.rows()) {
    throw ConfigError("e_agglo: initial segments must cover the series");
  }

  const BlockSums sums(kernels::omp::distance_power_matrix(Y, config.zeta));
  Segmentation current = initial;
  Segmentation best = current;
  double best_fit = goodness_of_fit(sums, current, config.agglo_penalty);
  while (current.size() > 1) {
    double merge_fit = 0.0;
    std::size_t merge_at = current.size();
    for (std::size_t k = 0; k + 1 < current.size(); ++k) {
      Segmentation trial = current;
      trial[k].end = trial[k + 1].end;
      trial.erase(trial.begin() + static_cast<std::ptrdiff_t>(k) + 1);
      const double fit = goodness_of_fit(sums, trial, config.agglo_penalty);
      if (merge_at == current.size() || fit > merge_fit) {
        merge_fit = fit;
        merge_at = k;
      }
    }
    current[merge_at].end = current[merge_at + 1].end;
    current.erase(current.begin() + static_cast<std::ptrdiff_t>(merge_at) + 1);
    if (merge_fit >= best_fit) {
      best_fit = merge_fit;
      best = current;
    }
  }
  return best;
}

Segmentation segment_series(const Eigen::MatrixXd& Y, const SegmentationConfig& config) {
  const int T = static_cast<int>(Y.rows());
  if (T < 1) return {};
  const DivisiveResult divisive = e_divisive(Y, config);
  Segmentation segs = segments_from_change_points(T, divisive.change_points);
  if (segs.size() > 1) segs = e_agglo(Y, segs, config);
  return segs;
}

}  // namespace sslgm
