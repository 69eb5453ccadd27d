#pragma once

// Energy-statistic kernels behind change-point detection.
//
// Every kernel has a serial reference in `kernels::serial` and an OpenMP
// version in `kernels::omp`. Both produce bit-identical results: parallel
// loops write into per-index slots and all reductions run serially in a
// fixed order. Tests compare the two; bench/ measures the speed-up.

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace sslgm::kernels {

using Eigen::MatrixXd;

/// Best bisection of one segment under the scaled energy statistic.
struct SplitScan {
  int split = -1;                // absolute index of the first point of the right half
  double statistic = -1.0;       // (U1 U2 / (U1 + U2)) * E-hat at that split
};

namespace serial {

/// D(i, j) = ||Y_i - Y_j||^zeta for the rows of Y.
MatrixXd distance_power_matrix(const MatrixXd& Y, double zeta);

/// E-hat(X1, X2; zeta) evaluated directly from the points.
double energy_divergence(const MatrixXd& X1, const MatrixXd& X2, double zeta);

/// Scans every admissible split of the points `order[0..U)` (indices into D)
/// with both halves at least min_size long. `offset` is added to the
/// returned split position.
SplitScan best_split(const MatrixXd& D, std::span<const int> order, int min_size, int offset);

/// Maximal scaled statistic of `n_permutations` random reorderings of the
/// segment [start, end). Replicate r uses a generator seeded from (seed, r).
std::vector<double> permutation_null(const MatrixXd& D, int start, int end, int min_size,
                                     int n_permutations, std::uint64_t seed);

}  // namespace serial

namespace omp {

MatrixXd distance_power_matrix(const MatrixXd& Y, double zeta);
double energy_divergence(const MatrixXd& X1, const MatrixXd& X2, double zeta);
std::vector<double> permutation_null(const MatrixXd& D, int start, int end, int min_size,
                                     int n_permutations, std::uint64_t seed);

}  // namespace omp

}  // namespace sslgm::kernels
