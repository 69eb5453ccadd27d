#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace sslgm {

struct SegmentationConfig {
  double zeta = 1.0;           // distance exponent, in (0, 2)
  int min_size = 4;            // minimum segment length
  int n_permutations = 199;
  double significance = 0.05;
  int max_changepoints = 32;
  double agglo_penalty = 0.0;  // subtracted once per change point in E-Agglo
  std::uint64_t seed = 0x5eed;

  void validate() const;
};

/// Half-open time range [start, end) of one segment (0-based steps).
struct Segment {
  int start = 0;
  int end = 0;

  int length() const { return end - start; }
  bool operator==(const Segment&) const = default;
};

using Segmentation = std::vector<Segment>;

/// Two-sample energy divergence between the rows of X1 and X2. The
/// within-sample term of a one-point segment is zero.
double energy_divergence(const Eigen::MatrixXd& X1, const Eigen::MatrixXd& X2, double zeta);

struct DivisiveResult {
  std::vector<int> change_points;  // sorted; each is the first step of a new segment
  std::vector<double> p_values;    // permutation p-value of each accepted split, in acceptance order
  bool too_short = false;          // series shorter than 2 * min_size
};

/// Recursive bisection with a permutation test at every round.
DivisiveResult e_divisive(const Eigen::MatrixXd& Y, const SegmentationConfig& config);

/// Greedy adjacent merging; returns the segmentation with the best
/// goodness-of-fit along the merge trajectory.
Segmentation e_agglo(const Eigen::MatrixXd& Y, const Segmentation& initial, const SegmentationConfig& config);

Segmentation segments_from_change_points(int length, const std::vector<int>& change_points);

/// E-divisive proposal refined by E-Agglo. Series too short to split come
/// back as one segment.
Segmentation segment_series(const Eigen::MatrixXd& Y, const SegmentationConfig& config);

}  // namespace sslgm
