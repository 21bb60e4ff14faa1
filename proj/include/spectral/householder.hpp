#pragma once

#include <Eigen/Core>

#include <cmath>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

#include "spectral/flops.hpp"

namespace spectral {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// A vector u below this squared norm is treated as the identity reflector.
// Keeps the identity branch at denormal scale without dividing by ~0.
inline constexpr double kZeroNormSq = 1e-24;

// Householder reflector H_k^n(u): identity on the first n-k coordinates,
// I_k - 2 u u^T / ||u||^2 on the last k. Stored as the raw vector u; the
// operator is invariant to the norm of u, so u is never normalized.
struct HouseholderVector {
  int k = 0;
  VectorXd u;

  HouseholderVector() = default;
  HouseholderVector(int k_, VectorXd u_) : k(k_), u(std::move(u_)) {
    if (u.size() != k) throw std::invalid_argument("HouseholderVector: len(u) != k");
    if (k < 1) throw std::invalid_argument("HouseholderVector: k < 1");
  }

  bool is_identity() const { return u.squaredNorm() <= kZeroNormSq; }

  static HouseholderVector zero(int k) { return HouseholderVector(k, VectorXd::Zero(k)); }

  static HouseholderVector random(int k, std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    VectorXd u(k);
    for (int i = 0; i < k; ++i) u[i] = gauss(rng);
    return HouseholderVector(k, std::move(u));
  }

  // Dense n x n operator; test/oracle support, not used in training paths.
  MatrixXd materialize(int n) const {
    if (k > n) throw std::invalid_argument("HouseholderVector: k > n");
    MatrixXd h = MatrixXd::Identity(n, n);
    const double nsq = u.squaredNorm();
    if (nsq <= kZeroNormSq) return h;
    h.bottomRightCorner(k, k) -= (2.0 / nsq) * (u * u.transpose());
    return h;
  }
};

namespace detail {

// Applies H(u) to the last k coordinates of h in place, given the cached
// squared norm. Returns the pre-reflection inner product u^T h_tail (0 on the
// identity branch). 4k flops: dot 2k-1, coefficient 1, axpy 2k.
inline double reflect_inplace(Eigen::Ref<VectorXd> h, const VectorXd& u, double norm_sq,
                              FlopCounter* fc = nullptr, Kernel scope = Kernel::Hprod) {
  const int k = static_cast<int>(u.size());
  if (norm_sq <= kZeroNormSq) return 0.0;
  const double dot = u.dot(h.tail(k));
  const double c = 2.0 * dot / norm_sq;
  h.tail(k) -= c * u;
  count_flops(fc, scope, 4 * static_cast<std::uint64_t>(k));
  return dot;
}

// Backward step through one reflector. On entry g = dL/d(output); on exit
// g = dL/d(input) and du holds dL/du (k components). alpha_ref is the cached
// inner product u^T h_ref where h_ref is the reflection output when
// ref_is_output, else the input. Uses the involution identity
// u^T h_in = -u^T h_out, so both conventions cost the same 7k flops.
template <bool Accumulate>
inline void backward_reflect(Eigen::Ref<VectorXd> g, const VectorXd& u, double norm_sq,
                             const VectorXd& h_ref, bool ref_is_output, double alpha_ref,
                             Eigen::Ref<VectorXd> du, FlopCounter* fc = nullptr,
                             Kernel scope = Kernel::Hgrad) {
  const int k = static_cast<int>(u.size());
  if (norm_sq <= kZeroNormSq) {
    if (!Accumulate) du.setZero();
    return;
  }
  const double beta = u.dot(g.tail(k));
  const double a = 2.0 * alpha_ref / norm_sq;
  const double b = 2.0 * beta / norm_sq;
  if (ref_is_output) {
    // dL/du = (2/N)(alpha g - beta h_out), with g before the Eq.-5 update.
    if (Accumulate)
      du += a * g.tail(k) - b * h_ref.tail(k);
    else
      du = a * g.tail(k) - b * h_ref.tail(k);
    g.tail(k) -= b * u;
  } else {
    // Equivalent input-side form: update g first, then
    // dL/du = -(2/N)(alpha g_new + beta h_in); identical to Eq. 6 exactly.
    g.tail(k) -= b * u;
    if (Accumulate)
      du += -a * g.tail(k) - b * h_ref.tail(k);
    else
      du = -a * g.tail(k) - b * h_ref.tail(k);
  }
  count_flops(fc, scope, 7 * static_cast<std::uint64_t>(k) + 1 + (Accumulate ? k : 0));
}

}  // namespace detail

// H_k^n(u) * h.
inline VectorXd hprod(const VectorXd& h, const HouseholderVector& hv, FlopCounter* fc = nullptr) {
  const int n = static_cast<int>(h.size());
  if (hv.k > n) throw std::invalid_argument("hprod: reflector size exceeds vector size");
  VectorXd out = h;
  const double nsq = hv.u.squaredNorm();
  count_flops(fc, Kernel::Norms, 2 * static_cast<std::uint64_t>(hv.k) - 1);
  detail::reflect_inplace(out, hv.u, nsq, fc, Kernel::Hprod);
  return out;
}

struct HgradResult {
  VectorXd dl_dh;  // H(u)^T g, length n
  VectorXd dl_du;  // Eq.-6 gradient restricted to the last k coordinates
};

// Gradient through one reflector. h_ref is the reflection input when
// ref_is_output is false (the direct Eq. 5/6 form) or the cached output
// (the form produced by the local forward pass). Both agree to rounding.
inline HgradResult hgrad(const VectorXd& h_ref, const HouseholderVector& hv, const VectorXd& g,
                         bool ref_is_output, FlopCounter* fc = nullptr) {
  const int n = static_cast<int>(h_ref.size());
  if (hv.k > n) throw std::invalid_argument("hgrad: reflector size exceeds vector size");
  if (g.size() != n) throw std::invalid_argument("hgrad: gradient size mismatch");
  HgradResult r;
  r.dl_dh = g;
  r.dl_du.resize(hv.k);
  const double nsq = hv.u.squaredNorm();
  const double alpha = hv.u.dot(h_ref.tail(hv.k));
  count_flops(fc, Kernel::Hgrad, 4 * static_cast<std::uint64_t>(hv.k) - 2);  // norm + alpha
  detail::backward_reflect<false>(r.dl_dh, hv.u, nsq, h_ref, ref_is_output, alpha, r.dl_du, fc,
                                  Kernel::Hgrad);
  return r;
}

// Ordered product H_n(u_n) ... H_{k_min}(u_{k_min}) of Householder reflectors.
// Invariant: slot i holds the reflector with k = k_min + i. An empty stack
// (k_min = n + 1) is the identity.
struct ReflectorStack {
  int n = 0;
  int k_min = 1;
  std::vector<HouseholderVector> vectors;

  ReflectorStack() = default;
  ReflectorStack(int n_, int k_min_, std::vector<HouseholderVector> vecs)
      : n(n_), k_min(k_min_), vectors(std::move(vecs)) {
    validate();
  }

  int count() const { return n - k_min + 1; }

  const HouseholderVector& at(int k) const { return vectors[static_cast<size_t>(k - k_min)]; }
  HouseholderVector& at(int k) { return vectors[static_cast<size_t>(k - k_min)]; }

  void validate() const {
    if (n < 1) throw std::invalid_argument("ReflectorStack: n < 1");
    if (k_min < 1 || k_min > n + 1) throw std::invalid_argument("ReflectorStack: k_min out of range");
    if (static_cast<int>(vectors.size()) != count())
      throw std::invalid_argument("ReflectorStack: wrong number of vectors");
    for (int k = k_min; k <= n; ++k)
      if (vectors[static_cast<size_t>(k - k_min)].k != k)
        throw std::invalid_argument("ReflectorStack: vector length does not match its slot");
  }

  long scalar_count() const {
    long c = 0;
    for (const auto& v : vectors) c += v.k;
    return c;
  }

  // Cached squared norms, one per reflector, in slot order.
  VectorXd squared_norms(FlopCounter* fc = nullptr) const {
    VectorXd nsq(vectors.size());
    std::uint64_t flops = 0;
    for (size_t i = 0; i < vectors.size(); ++i) {
      nsq[static_cast<Eigen::Index>(i)] = vectors[i].u.squaredNorm();
      flops += 2 * static_cast<std::uint64_t>(vectors[i].k) - 1;
    }
    count_flops(fc, Kernel::Norms, flops);
    return nsq;
  }

  static ReflectorStack identity(int n, int k_min) {
    std::vector<HouseholderVector> vecs;
    for (int k = k_min; k <= n; ++k) vecs.push_back(HouseholderVector::zero(k));
    return ReflectorStack(n, k_min, std::move(vecs));
  }

  static ReflectorStack random(int n, int k_min, std::mt19937_64& rng) {
    std::vector<HouseholderVector> vecs;
    for (int k = k_min; k <= n; ++k) vecs.push_back(HouseholderVector::random(k, rng));
    return ReflectorStack(n, k_min, std::move(vecs));
  }
};

// Applies the stack product (or its transpose) without materializing it.
inline VectorXd stack_apply(const ReflectorStack& s, const VectorXd& h, bool transpose,
                            FlopCounter* fc = nullptr) {
  if (h.size() != s.n) throw std::invalid_argument("stack_apply: dimension mismatch");
  VectorXd out = h;
  const VectorXd nsq = s.squared_norms(fc);
  if (!transpose) {
    // (H_n ... H_{k_min}) h: rightmost factor acts first.
    for (int k = s.k_min; k <= s.n; ++k)
      detail::reflect_inplace(out, s.at(k).u, nsq[k - s.k_min], fc, Kernel::Hprod);
  } else {
    for (int k = s.n; k >= s.k_min; --k)
      detail::reflect_inplace(out, s.at(k).u, nsq[k - s.k_min], fc, Kernel::Hprod);
  }
  return out;
}

// Dense orthogonal matrix represented by the stack; columns are the stack
// applied to basis vectors. Test and decomposition support.
inline MatrixXd stack_materialize(const ReflectorStack& s, FlopCounter* fc = nullptr) {
  MatrixXd q(s.n, s.n);
  for (int j = 0; j < s.n; ++j)
    q.col(j) = stack_apply(s, VectorXd::Unit(s.n, j), /*transpose=*/false, fc);
  return q;
}

struct QrResult {
  ReflectorStack stack;  // k_min = 1
  MatrixXd r;            // upper triangular, strictly positive diagonal
};

class FactorizationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Householder QR with the sign convention that keeps diag(R) > 0, so that
// QR of an orthogonal matrix returns R = I. Column j is eliminated by the
// reflector in slot k = n - j acting on the trailing k coordinates.
inline QrResult householder_qr(const MatrixXd& b) {
  if (b.rows() != b.cols()) throw std::invalid_argument("householder_qr: matrix must be square");
  const int n = static_cast<int>(b.rows());
  const double scale = b.norm();
  MatrixXd a = b;
  std::vector<HouseholderVector> vecs(static_cast<size_t>(n));
  for (int j = 0; j < n; ++j) {
    const int k = n - j;
    VectorXd x = a.col(j).tail(k);
    const double nx = x.norm();
    if (nx <= 1e-14 * scale || nx == 0.0)
      throw FactorizationError("householder_qr: singular or degenerate column " + std::to_string(j));
    VectorXd u = x;
    if (x[0] > 0.0) {
      // Stable form of x_1 - ||x||; avoids cancellation when x ~ ||x|| e_1.
      u[0] = -x.tail(k - 1).squaredNorm() / (x[0] + nx);
    } else {
      u[0] = x[0] - nx;
    }
    const double unsq = u.squaredNorm();
    if (unsq <= kZeroNormSq) {
      u.setZero();  // column already aligned with +e_1
    } else {
      for (int c = j + 1; c < n; ++c) detail::reflect_inplace(a.col(c), u, unsq);
    }
    a(j, j) = nx;
    a.col(j).tail(k - 1).setZero();
    vecs[static_cast<size_t>(k - 1)] = HouseholderVector(k, std::move(u));
  }
  QrResult res;
  res.stack = ReflectorStack(n, 1, std::move(vecs));
  res.r = a.triangularView<Eigen::Upper>();
  return res;
}

}  // namespace spectral
