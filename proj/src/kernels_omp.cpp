#include <omp.h>

#include "kernels_common.hpp"
#include "sslgm/kernels.hpp"

namespace sslgm::kernels::omp {

MatrixXd distance_power_matrix(const MatrixXd& Y, double zeta) {
  const Eigen::Index n = Y.rows();
  MatrixXd D = MatrixXd::Zero(n, n);
#pragma omp parallel for schedule(dynamic, 16)
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double d = detail::power_distance(Y, i, Y, j, zeta);
      D(i, j) = d;
      D(j, i) = d;
    }
  }
  return D;
}

double energy_divergence(const MatrixXd& X1, const MatrixXd& X2, double zeta) {
  const Eigen::Index u1 = X1.rows();
  const Eigen::Index u2 = X2.rows();
  std::vector<double> cross(static_cast<std::size_t>(u1));
  std::vector<double> within1(static_cast<std::size_t>(u1));
  std::vector<double> within2(static_cast<std::size_t>(u2));
#pragma omp parallel
  {
#pragma omp for schedule(static) nowait
    for (Eigen::Index i = 0; i < u1; ++i) {
      cross[static_cast<std::size_t>(i)] = detail::cross_row(X1, i, X2, zeta);
      within1[static_cast<std::size_t>(i)] = detail::within_row(X1, i, zeta);
    }
#pragma omp for schedule(static)
    for (Eigen::Index i = 0; i < u2; ++i) {
      within2[static_cast<std::size_t>(i)] = detail::within_row(X2, i, zeta);
    }
  }
  return detail::combine_energy(cross, within1, within2, u1, u2);
}

std::vector<double> permutation_null(const MatrixXd& D, int start, int end, int min_size,
                                     int n_permutations, std::uint64_t seed) {
  std::vector<double> out(static_cast<std::size_t>(std::max(n_permutations, 0)));
#pragma omp parallel for schedule(dynamic, 4)
  for (int r = 0; r < n_permutations; ++r) {
    out[static_cast<std::size_t>(r)] = detail::permuted_statistic(D, start, end, min_size, seed, r);
  }
  return out;
}

}  // namespace sslgm::kernels::omp
