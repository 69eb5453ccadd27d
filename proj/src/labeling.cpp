#include "sslgm/labeling.hpp"

#include <limits>
#include <string>

#include "sslgm/errors.hpp"
#include "sslgm/util.hpp"

namespace sslgm {
namespace {

bool is_transient(int s, int N) { return s > 1 && s < N; }

// A transient label can sit at position p only if positions 0..p-1 can still
// be filled with transient labels moving by +-1.
bool viable(int candidate, std::size_t position, int N) {
  if (!is_transient(candidate, N)) return false;
  if (position == 0) return true;
  return is_transient(candidate - 1, N) || is_transient(candidate + 1, N);
}

std::vector<int> candidates_before(int next_label, std::size_t position, int N) {
  std::vector<int> out;
  for (int c : {next_label - 1, next_label + 1}) {
    if (viable(c, position, N)) out.push_back(c);
  }
  return out;
}

Eigen::MatrixXd rows_of(const Eigen::MatrixXd& Y, const Segment& s) {
  return Y.middleRows(s.start, s.length());
}

}  // namespace

std::vector<int> LabeledEpisode::step_labels() const {
  std::vector<int> out;
  for (std::size_t n = 0; n < segments.size() && n < labels.size(); ++n) {
    out.insert(out.end(), static_cast<std::size_t>(segments[n].length()), labels[n]);
  }
  return out;
}

void ExemplarPool::add(int label, const Eigen::MatrixXd& rows) {
  Eigen::MatrixXd& store = rows_[label];
  const Eigen::Index room = capacity_ - store.rows();
  if (room <= 0 || rows.rows() == 0) return;
  const Eigen::Index take = std::min(room, rows.rows());
  Eigen::MatrixXd grown(store.rows() + take, rows.cols());
  if (store.rows() > 0) grown.topRows(store.rows()) = store;
  grown.bottomRows(take) = rows.topRows(take);
  store = std::move(grown);
}

const Eigen::MatrixXd* ExemplarPool::find(int label) const {
  auto it = rows_.find(label);
  if (it == rows_.end() || it->second.rows() == 0) return nullptr;
  return &it->second;
}

PartialLabels label_absorbing(std::size_t n_segments, int F, int N) {
  if (n_segments == 0) throw ContractError("label_absorbing needs at least one segment");
  if (F != 0 && F != 1) throw ConfigError("censoring label F must be 0 or 1");
  PartialLabels labels(n_segments);
  labels.back() = F == 1 ? N : 1;
  for (std::size_t p = n_segments - 1; p-- > 0;) {
    const std::vector<int> cands = candidates_before(*labels[p + 1], p, N);
    if (cands.size() != 1) break;
    labels[p] = cands.front();
  }
  return labels;
}

LabeledEpisode backward_label(const std::string& id, const Eigen::MatrixXd& Y, const Segmentation& segments,
                              const PartialLabels& partial, int N, double zeta, const ExemplarPool& pool) {
  if (N < 3) throw ConfigError("backward labeling needs N >= 3");
  if (segments.empty() || partial.size() != segments.size() || !partial.back()) {
    throw ContractError("backward_label: the terminal segment must be labeled");
  }
  if (segments.back().end != Y.rows()) throw ContractError("backward_label: segments do not cover the episode");

  LabeledEpisode out;
  out.id = id;
  out.segments = segments;
  const std::size_t n = segments.size();
  out.labels.assign(n, 0);
  out.provenance.assign(n, LabelProvenance::forced);

  std::size_t p = n;
  while (p > 0 && partial[p - 1]) {
    --p;
    out.labels[p] = *partial[p];
  }

  while (p > 0) {
    --p;
    const int next = out.labels[p + 1];
    const std::vector<int> cands = candidates_before(next, p, N);
    if (cands.empty()) {
      out.relabel_failed = true;
      out.diagnostic = "no legal label for segment " + std::to_string(p + 1) + " of " + std::to_string(n) +
                       " preceding state " + std::to_string(next);
      log().debug("episode {}: {}", id, out.diagnostic);
      out.labels.clear();
      out.provenance.clear();
      return out;
    }
    if (cands.size() == 1) {
      out.labels[p] = cands.front();
      continue;
    }

    const Eigen::MatrixXd segment = rows_of(Y, segments[p]);
    double best = std::numeric_limits<double>::infinity();
    int choice = cands.front();  // lower severity
    bool comparable = true;
    std::vector<double> scores;
    for (int c : cands) {
      std::optional<double> score;
      for (std::size_t k = p + 1; k < n; ++k) {
        if (out.labels[k] == c) {
          score = energy_divergence(segment, rows_of(Y, segments[k]), zeta);
          break;
        }
      }
      if (!score) {
        if (const Eigen::MatrixXd* ex = pool.find(c)) score = energy_divergence(segment, *ex, zeta);
      }
      if (!score) {
        comparable = false;
        break;
      }
      scores.push_back(*score);
    }
    if (comparable) {
      for (std::size_t i = 0; i < cands.size(); ++i) {
        if (scores[i] < best) {
          best = scores[i];
          choice = cands[i];
        }
      }
    }
    out.labels[p] = choice;
    out.provenance[p] = LabelProvenance::conflict_resolved;
  }
  return out;
}

Segmentation segment_episode(const Eigen::MatrixXd& Y, const SegmentationConfig& config) {
  const int J = static_cast<int>(Y.rows());
  if (J < 1) throw ContractError("segment_episode: empty episode");
  Segmentation segs;
  if (J > 1) segs = segment_series(Y.topRows(J - 1), config);
  segs.push_back({J - 1, J});
  return segs;
}

}  // namespace sslgm
