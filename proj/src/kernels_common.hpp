#pragma once

// Scalar building blocks shared by the serial and OpenMP kernels. Keeping
// them in one place is what makes the two variants bit-identical.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "sslgm/kernels.hpp"
#include "sslgm/util.hpp"

namespace sslgm::kernels::detail {

inline double power_distance(const MatrixXd& A, Eigen::Index i, const MatrixXd& B, Eigen::Index j,
                             double zeta) {
  double sq = 0.0;
  for (Eigen::Index c = 0; c < A.cols(); ++c) {
    const double diff = A(i, c) - B(j, c);
    sq += diff * diff;
  }
  const double d = std::sqrt(sq);
  return zeta == 1.0 ? d : std::pow(d, zeta);
}

// Sum over all points of B of the distance to A_i.
inline double cross_row(const MatrixXd& A, Eigen::Index i, const MatrixXd& B, double zeta) {
  double s = 0.0;
  for (Eigen::Index j = 0; j < B.rows(); ++j) s += power_distance(A, i, B, j, zeta);
  return s;
}

// Sum over k > i of the distance between A_i and A_k.
inline double within_row(const MatrixXd& A, Eigen::Index i, double zeta) {
  double s = 0.0;
  for (Eigen::Index k = i + 1; k < A.rows(); ++k) s += power_distance(A, i, A, k, zeta);
  return s;
}

inline double ordered_sum(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

inline double pair_count(Eigen::Index u) { return 0.5 * static_cast<double>(u) * static_cast<double>(u - 1); }

inline double energy_from_sums(double cross, double within1, double within2, Eigen::Index u1, Eigen::Index u2) {
  double e = 2.0 * cross / (static_cast<double>(u1) * static_cast<double>(u2));
  if (u1 >= 2) e -= within1 / pair_count(u1);
  if (u2 >= 2) e -= within2 / pair_count(u2);
  return e;
}

inline double combine_energy(const std::vector<double>& cross, const std::vector<double>& within1,
                             const std::vector<double>& within2, Eigen::Index u1, Eigen::Index u2) {
  return energy_from_sums(ordered_sum(cross), ordered_sum(within1), ordered_sum(within2), u1, u2);
}

inline double scaled_statistic(double cross, double within1, double within2, Eigen::Index u1, Eigen::Index u2) {
  const double scale = static_cast<double>(u1) * static_cast<double>(u2) / static_cast<double>(u1 + u2);
  return scale * energy_from_sums(cross, within1, within2, u1, u2);
}

inline SplitScan scan_splits(const MatrixXd& D, std::span<const int> order, int min_size, int offset) {
  const int U = static_cast<int>(order.size());
  SplitScan best;
  if (U < 2 * min_size) return best;
  std::vector<double> before(static_cast<std::size_t>(U), 0.0);  // sum_{a<c} d(a,c)
  std::vector<double> after(static_cast<std::size_t>(U), 0.0);   // sum_{b>c} d(c,b)
  for (int a = 0; a < U; ++a) {
    for (int b = a + 1; b < U; ++b) {
      const double d = D(order[static_cast<std::size_t>(a)], order[static_cast<std::size_t>(b)]);
      before[static_cast<std::size_t>(b)] += d;
      after[static_cast<std::size_t>(a)] += d;
    }
  }
  std::vector<double> right(static_cast<std::size_t>(U) + 1, 0.0);  // within sum of [tau, U)
  for (int c = U - 1; c >= 0; --c) right[static_cast<std::size_t>(c)] = right[static_cast<std::size_t>(c) + 1] + after[static_cast<std::size_t>(c)];
  double left = 0.0;
  double cross = 0.0;
  for (int tau = 0; tau < U - min_size; ++tau) {
    left += before[static_cast<std::size_t>(tau)];
    cross += after[static_cast<std::size_t>(tau)] - before[static_cast<std::size_t>(tau)];
    const int u1 = tau + 1;
    if (u1 < min_size) continue;
    const double q = scaled_statistic(cross, left, right[static_cast<std::size_t>(u1)], u1, U - u1);
    if (q > best.statistic || best.split < 0) {
      best.statistic = q;
      best.split = offset + u1;
    }
  }
  return best;
}

inline double permuted_statistic(const MatrixXd& D, int start, int end, int min_size, std::uint64_t seed,
                                 int replicate) {
  std::vector<int> order(static_cast<std::size_t>(end - start));
  std::iota(order.begin(), order.end(), start);
  Rng rng = make_rng(seed, static_cast<std::uint64_t>(replicate));
  std::shuffle(order.begin(), order.end(), rng);
  return scan_splits(D, order, min_size, start).statistic;
}

}  // namespace sslgm::kernels::detail
