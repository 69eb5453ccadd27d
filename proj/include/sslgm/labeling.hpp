#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sslgm/changepoint.hpp"

namespace sslgm {

enum class LabelProvenance { forced, conflict_resolved };

/// A segmented episode with one super-state label (1..N) per segment.
struct LabeledEpisode {
  std::string id;
  Segmentation segments;
  std::vector<int> labels;
  std::vector<LabelProvenance> provenance;
  bool relabel_failed = false;
  std::string diagnostic;

  /// Per-step state labels (1..N) expanded from the segments.
  std::vector<int> step_labels() const;
};

/// Labels known so far, indexed by segment position; empty = unresolved.
using PartialLabels = std::vector<std::optional<int>>;

/// Observations already assigned to each label in earlier episodes. Each
/// label keeps at most `capacity` rows (first come, first kept).
class ExemplarPool {
 public:
  explicit ExemplarPool(Eigen::Index capacity = 256) : capacity_(capacity) {}

  void add(int label, const Eigen::MatrixXd& rows);
  const Eigen::MatrixXd* find(int label) const;

 private:
  Eigen::Index capacity_;
  std::map<int, Eigen::MatrixXd> rows_;
};

/// Labels the terminal segment from the discharge/ICU outcome and
/// propagates backward every label that adjacency alone determines.
PartialLabels label_absorbing(std::size_t n_segments, int F, int N);

/// Completes the labeling walking backward from the terminal segment.
/// Conflict groups are resolved by the smallest energy divergence between
/// the segment and the nearest later segment carrying the candidate label,
/// falling back to the pool, then to the lower-severity candidate.
LabeledEpisode backward_label(const std::string& id, const Eigen::MatrixXd& Y, const Segmentation& segments,
                              const PartialLabels& partial, int N, double zeta, const ExemplarPool& pool);

/// Segmentation of an informatively censored episode: the final step is the
/// absorbing super-state, the steps before it are segmented with E-divisive
/// and E-Agglo.
Segmentation segment_episode(const Eigen::MatrixXd& Y, const SegmentationConfig& config);

}  // namespace sslgm
