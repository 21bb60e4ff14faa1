#pragma once

#include <random>

#include "spectral/diagnostics.hpp"
#include "spectral/householder.hpp"
#include "spectral/svd_param.hpp"

namespace spectral::testing {

inline Eigen::VectorXd random_vector(int n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> gauss(0.0, scale);
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = gauss(rng);
  return v;
}

inline Eigen::MatrixXd random_matrix(int rows, int cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> gauss(0.0, scale);
  Eigen::MatrixXd m(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) m(i, j) = gauss(rng);
  return m;
}

// Independent dense oracle for a padded reflector: I - 2 u_hat u_hat^T / ||u_hat||^2.
// Built directly from the definition, sharing nothing with hprod.
inline Eigen::MatrixXd dense_reflector(int n, const Eigen::VectorXd& u) {
  const int k = static_cast<int>(u.size());
  Eigen::VectorXd padded = Eigen::VectorXd::Zero(n);
  padded.tail(k) = u;
  const double nsq = padded.squaredNorm();
  if (nsq == 0.0) return Eigen::MatrixXd::Identity(n, n);
  return Eigen::MatrixXd::Identity(n, n) - (2.0 / nsq) * (padded * padded.transpose());
}

inline Eigen::MatrixXd dense_stack_product(const ReflectorStack& s) {
  Eigen::MatrixXd q = Eigen::MatrixXd::Identity(s.n, s.n);
  for (int k = s.n; k >= s.k_min; --k) q *= dense_reflector(s.n, s.at(k).u);
  return q;
}

inline Eigen::MatrixXd random_orthogonal(int n, std::mt19937_64& rng) {
  return dense_stack_product(ReflectorStack::random(n, 1, rng));
}

}  // namespace spectral::testing
