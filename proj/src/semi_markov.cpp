#include "sslgm/semi_markov.hpp"

#include <cmath>
#include <map>
#include <numeric>
#include <string>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include "sslgm/errors.hpp"

namespace sslgm {
namespace {

constexpr double kProbTol = 1e-9;

int sample_categorical(Rng& rng, const Eigen::VectorXd& weights) {
  std::uniform_real_distribution<double> unif(0.0, weights.sum());
  const double u = unif(rng);
  double acc = 0.0;
  int last_positive = 0;
  for (Eigen::Index i = 0; i < weights.size(); ++i) {
    if (weights(i) <= 0.0) continue;
    last_positive = static_cast<int>(i);
    acc += weights(i);
    if (u < acc) return static_cast<int>(i);
  }
  return last_positive;
}

}  // namespace

void ChainParams::validate() const {
  if (N < 3) throw ConfigError("chain needs N >= 3 states, got " + std::to_string(N));
  if (p0.size() != N || P.rows() != N || P.cols() != N) {
    throw ConfigError("chain arrays must be sized to N=" + std::to_string(N));
  }
  if (duration.size() != static_cast<std::size_t>(N)) {
    throw ConfigError("chain needs one duration parameter per state");
  }
  if (!p0.allFinite() || (p0.array() < 0.0).any() || (p0.array() > 1.0).any() ||
      std::abs(p0.sum() - 1.0) > kProbTol) {
    throw ConfigError("p0 must be a probability vector");
  }
  for (int i = 0; i < N; ++i) {
    if (std::abs(P.row(i).sum() - 1.0) > kProbTol) {
      throw ConfigError("transition row " + std::to_string(i + 1) + " does not sum to 1");
    }
    for (int j = 0; j < N; ++j) {
      const double p = P(i, j);
      if (!std::isfinite(p) || p < 0.0 || p > 1.0) throw ConfigError("transition entries must lie in [0,1]");
      if (std::abs(i - j) > 1 && p != 0.0) {
        throw ConfigError("transition " + std::to_string(i + 1) + "->" + std::to_string(j + 1) +
                          " violates the birth-death structure");
      }
    }
    const bool absorbing = i == 0 || i == N - 1;
    if (absorbing && std::abs(P(i, i) - 1.0) > kProbTol) {
      throw ConfigError("state " + std::to_string(i + 1) + " must be absorbing");
    }
    if (!absorbing) {
      if (P(i, i) != 0.0) throw ConfigError("transient state " + std::to_string(i + 1) + " has a self-transition");
      const NbDuration& d = duration[static_cast<std::size_t>(i)];
      if (!(d.r > 0.0) || !std::isfinite(d.r) || !(d.q > 0.0) || !(d.q <= 1.0)) {
        throw ConfigError("duration parameters of state " + std::to_string(i + 1) + " out of range");
      }
    }
  }
}

ChainParams ChainParams::birth_death(const Eigen::VectorXd& p0, const std::vector<double>& up,
                                     std::vector<NbDuration> duration) {
  ChainParams c;
  c.N = static_cast<int>(p0.size());
  c.p0 = p0;
  c.P = Eigen::MatrixXd::Zero(c.N, c.N);
  c.P(0, 0) = 1.0;
  c.P(c.N - 1, c.N - 1) = 1.0;
  if (up.size() != static_cast<std::size_t>(c.N - 2)) {
    throw ConfigError("birth_death needs N-2 up-probabilities");
  }
  for (int i = 1; i < c.N - 1; ++i) {
    c.P(i, i + 1) = up[static_cast<std::size_t>(i - 1)];
    c.P(i, i - 1) = 1.0 - up[static_cast<std::size_t>(i - 1)];
  }
  c.duration = std::move(duration);
  return c;
}

int SuperStateSeq::total_steps() const { return std::accumulate(durations.begin(), durations.end(), 0); }

bool SuperStateSeq::is_valid(int N) const {
  if (states.empty() || states.size() != durations.size()) return false;
  for (std::size_t n = 0; n < states.size(); ++n) {
    const int s = states[n];
    if (s < 1 || s > N || durations[n] < 1) return false;
    const bool last = n + 1 == states.size();
    const bool absorbing = s == 1 || s == N;
    if (last != absorbing) return false;
    if (!last && std::abs(states[n + 1] - s) != 1) return false;
  }
  return true;
}

double nb_duration_log_pmf(int duration, const NbDuration& alpha) {
  if (duration < 1) throw ConfigError("duration must be >= 1, got " + std::to_string(duration));
  const double k = static_cast<double>(duration - 1);
  const double r = alpha.r;
  const double q = alpha.q;
  double tail = 0.0;
  if (k > 0.0) {
    if (q >= 1.0) return -std::numeric_limits<double>::infinity();
    tail = k * std::log1p(-q);
  }
  return std::lgamma(k + r) - std::lgamma(k + 1.0) - std::lgamma(r) + r * std::log(q) + tail;
}

double nb_duration_pmf(int duration, const NbDuration& alpha) {
  return std::exp(nb_duration_log_pmf(duration, alpha));
}

NbFit fit_nb_mle(std::span<const int> durations, std::span<const double> weights) {
  if (!weights.empty() && weights.size() != durations.size()) {
    throw ContractError("fit_nb_mle: weights and durations differ in length");
  }
  // Collapse to weighted counts per excess K = duration - 1.
  std::map<int, double> counts;
  double W = 0.0;
  double sum_k = 0.0;
  for (std::size_t i = 0; i < durations.size(); ++i) {
    if (durations[i] < 1) throw ConfigError("durations must be >= 1");
    const double w = weights.empty() ? 1.0 : weights[i];
    if (w <= 0.0) continue;
    counts[durations[i] - 1] += w;
    W += w;
    sum_k += w * (durations[i] - 1);
  }
  if (W <= 0.0) throw ConfigError("fit_nb_mle needs at least one positively weighted sample");
  const double mean = sum_k / W;
  double var = 0.0;
  for (const auto& [k, w] : counts) var += w * (k - mean) * (k - mean);
  var /= W;

  auto loglik = [&](double r, double q) {
    double ll = 0.0;
    for (const auto& [k, w] : counts) {
      ll += w * nb_duration_log_pmf(k + 1, NbDuration{r, q});
    }
    return ll;
  };
  auto gradients = [&](NbFit& fit) {
    const double r = fit.alpha.r;
    const double q = fit.alpha.q;
    double gr = 0.0;
    for (const auto& [k, w] : counts) gr += w * boost::math::digamma(k + r);
    gr += W * (-boost::math::digamma(r) + std::log(q));
    fit.grad_r = gr;
    fit.grad_q = q < 1.0 ? W * r / q - sum_k / (1.0 - q) : 0.0;
    fit.loglik = loglik(r, q);
  };

  NbFit fit;
  if (mean == 0.0) {
    // Every dwell lasted one step; the likelihood is maximised on the boundary.
    fit.alpha = {1.0, 1.0};
    fit.boundary = true;
    gradients(fit);
    return fit;
  }

  // Profile score in u = log r with q = r / (r + mean).
  auto score = [&](double r) {
    double g = 0.0;
    for (const auto& [k, w] : counts) g += w * boost::math::digamma(k + r);
    return g - W * boost::math::digamma(r) + W * std::log(r / (r + mean));
  };
  auto score_deriv = [&](double r) {
    double h = 0.0;
    for (const auto& [k, w] : counts) h += w * boost::math::trigamma(k + r);
    return h - W * boost::math::trigamma(r) + W * mean / (r * (r + mean));
  };

  constexpr double kLogRMin = -18.0;
  constexpr double kLogRMax = 13.815510557964274;  // log(1e6)
  double lo = kLogRMin;
  double hi = kLogRMax;
  if (score(std::exp(hi)) > 0.0) {
    // Under-dispersed sample: the profile likelihood increases toward the
    // Poisson limit. Report the capped value.
    const double r = std::exp(hi);
    fit.alpha = {r, r / (r + mean)};
    fit.boundary = true;
    gradients(fit);
    return fit;
  }
  double u = var > mean ? std::log(mean * mean / (var - mean)) : 0.0;
  u = std::clamp(u, lo + 1e-3, hi - 1e-3);
  int it = 0;
  for (; it < 100; ++it) {
    const double r = std::exp(u);
    const double g = score(r);
    if (g > 0.0) lo = u; else hi = u;
    const double slope = r * score_deriv(r);
    double next = slope < 0.0 ? u - g / slope : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    const double step = std::abs(next - u);
    u = next;
    if (step < 1e-13 || hi - lo < 1e-13) break;
  }
  const double r = std::exp(u);
  fit.alpha = {r, r / (r + mean)};
  fit.iterations = it + 1;
  gradients(fit);
  return fit;
}

Eigen::VectorXd absorption_probs(const ChainParams& chain) {
  const int N = chain.N;
  Eigen::VectorXd h = Eigen::VectorXd::Zero(N);
  h(N - 1) = 1.0;
  // Transient rows: -P(i,i-1) h(i-1) + (1 - P(i,i)) h(i) - P(i,i+1) h(i+1) = 0.
  const int n = N - 2;
  std::vector<double> c_prime(static_cast<std::size_t>(n), 0.0);
  std::vector<double> d_prime(static_cast<std::size_t>(n), 0.0);
  for (int k = 0; k < n; ++k) {
    const int i = k + 1;
    const double a = -chain.P(i, i - 1);
    const double b = 1.0 - chain.P(i, i);
    const double c = -chain.P(i, i + 1);
    double d = 0.0;
    if (i + 1 == N - 1) d -= c * 1.0;  // known h(N) = 1
    const double a_eff = k == 0 ? 0.0 : a;  // h(1) = 0 contributes nothing
    const double c_eff = i + 1 == N - 1 ? 0.0 : c;
    const double denom = b - (k == 0 ? 0.0 : a_eff * c_prime[static_cast<std::size_t>(k - 1)]);
    if (std::abs(denom) < 1e-300) {
      throw ConfigError("chain has transient states that never reach an absorbing state");
    }
    c_prime[static_cast<std::size_t>(k)] = c_eff / denom;
    d_prime[static_cast<std::size_t>(k)] =
        (d - (k == 0 ? 0.0 : a_eff * d_prime[static_cast<std::size_t>(k - 1)])) / denom;
  }
  for (int k = n - 1; k >= 0; --k) {
    double v = d_prime[static_cast<std::size_t>(k)];
    if (k + 1 < n) v -= c_prime[static_cast<std::size_t>(k)] * h(k + 2);
    h(k + 1) = v;
  }
  return h;
}

double absorption_prob(const ChainParams& chain, int state) {
  if (state < 1 || state > chain.N) throw ConfigError("state out of range: " + std::to_string(state));
  return absorption_probs(chain)(state - 1);
}

int sample_nb_duration(Rng& rng, const NbDuration& alpha) {
  if (alpha.q >= 1.0) return 1;
  std::gamma_distribution<double> gamma(alpha.r, (1.0 - alpha.q) / alpha.q);
  const double rate = gamma(rng);
  if (rate <= 0.0) return 1;
  std::poisson_distribution<long> poisson(rate);
  return 1 + static_cast<int>(poisson(rng));
}

SuperStatePath sample_superstate_path(const ChainParams& chain, Rng& rng, int max_total_steps) {
  if (max_total_steps < 1) throw ConfigError("max_total_steps must be >= 1");
  SuperStatePath out;
  int state = sample_categorical(rng, chain.p0) + 1;
  int total = 0;
  while (true) {
    if (chain.is_absorbing(state)) {
      out.seq.states.push_back(state);
      out.seq.durations.push_back(1);
      total += 1;
      out.censored = total > max_total_steps;
      return out;
    }
    const int d = sample_nb_duration(rng, chain.duration[static_cast<std::size_t>(state - 1)]);
    out.seq.states.push_back(state);
    out.seq.durations.push_back(d);
    total += d;
    if (total > max_total_steps) {
      out.censored = true;
      return out;
    }
    state = sample_categorical(rng, chain.P.row(state - 1).transpose()) + 1;
  }
}

SuperStatePath sample_superstate_path(const ChainParams& chain, std::uint64_t seed, int max_total_steps) {
  Rng rng = make_rng(seed);
  return sample_superstate_path(chain, rng, max_total_steps);
}

}  // namespace sslgm
