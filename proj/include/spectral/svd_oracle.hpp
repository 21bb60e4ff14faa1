#pragma once

#include <Eigen/Core>
#include <Eigen/SVD>

#include <stdexcept>

namespace spectral {

struct SvdResult {
  Eigen::MatrixXd u;      // m x m orthogonal
  Eigen::VectorXd sigma;  // min(m,n), sorted descending, nonnegative
  Eigen::MatrixXd v;      // n x n orthogonal
};

// Full Jacobi SVD, A = U diag(sigma) V^T with square U and V. Backed by
// Eigen's two-sided Jacobi, which is independent of the reflector kernels it
// serves as an oracle for. Singular values come out sorted descending.
inline SvdResult jacobi_svd(const Eigen::MatrixXd& a) {
  if (!a.allFinite()) throw std::invalid_argument("jacobi_svd: non-finite entries");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
  SvdResult r;
  r.u = svd.matrixU();
  r.sigma = svd.singularValues();
  r.v = svd.matrixV();
  return r;
}

inline double spectral_norm(const Eigen::MatrixXd& a) {
  if (a.size() == 0) return 0.0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  return svd.singularValues()[0];
}

}  // namespace spectral
