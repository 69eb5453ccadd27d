#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "sslgm/util.hpp"

namespace sslgm {

/// Negative-binomial dwell time: T = 1 + K with
/// P(K = k) = Gamma(k + r) / (k! Gamma(r)) * q^r * (1 - q)^k,  k = 0, 1, ...
/// r = 1 is the geometric special case.
struct NbDuration {
  double r = 1.0;
  double q = 0.5;

  double mean() const { return 1.0 + r * (1.0 - q) / q; }
};

/// Super-state chain with birth-death ("gambler's ruin") transitions.
/// States are labelled 1..N; 1 (stable) and N (deterioration) are absorbing.
struct ChainParams {
  int N = 3;
  Eigen::VectorXd p0;                 // initial super-state probabilities
  Eigen::MatrixXd P;                  // P(i-1, j-1) = P(S_{n+1} = j | S_n = i)
  std::vector<NbDuration> duration;   // per state; unused for absorbing states

  bool is_absorbing(int state) const { return state == 1 || state == N; }
  void validate() const;

  /// Builds a chain from per-transient-state "up" probabilities
  /// (P(i -> i+1) = up[i-2], P(i -> i-1) = 1 - up[i-2]).
  static ChainParams birth_death(const Eigen::VectorXd& p0, const std::vector<double>& up,
                                 std::vector<NbDuration> duration);
};

/// One realised super-state path. States use the 1..N labels.
struct SuperStateSeq {
  std::vector<int> states;
  std::vector<int> durations;

  int total_steps() const;
  /// True when the sequence is a legal absorbed path of a chain with N states.
  bool is_valid(int N) const;
};

double nb_duration_log_pmf(int duration, const NbDuration& alpha);
/// Throws ConfigError for duration < 1.
double nb_duration_pmf(int duration, const NbDuration& alpha);

struct NbFit {
  NbDuration alpha;
  bool boundary = false;  // degenerate input; geometric or Poisson-limit fallback
  int iterations = 0;
  double loglik = 0.0;
  double grad_r = 0.0;  // d loglik / d r at the returned point
  double grad_q = 0.0;  // d loglik / d q at the returned point
};

/// Weighted maximum likelihood fit of the shifted negative binomial.
/// `weights` may be empty (all ones).
NbFit fit_nb_mle(std::span<const int> durations, std::span<const double> weights = {});

/// Probability of eventual absorption in state N from each state (index s-1).
Eigen::VectorXd absorption_probs(const ChainParams& chain);
double absorption_prob(const ChainParams& chain, int state);

int sample_nb_duration(Rng& rng, const NbDuration& alpha);

struct SuperStatePath {
  SuperStateSeq seq;
  bool censored = false;
};

/// Samples until absorption (absorbing states occupy one step) or until the
/// cumulative duration exceeds max_total_steps (censored).
SuperStatePath sample_superstate_path(const ChainParams& chain, Rng& rng, int max_total_steps);
SuperStatePath sample_superstate_path(const ChainParams& chain, std::uint64_t seed, int max_total_steps);

}  // namespace sslgm
