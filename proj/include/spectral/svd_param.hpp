#pragma once

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "spectral/householder.hpp"
#include "spectral/svd_oracle.hpp"

namespace spectral {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Reparameterized singular values: sigma_i = 2r(f(sigma_hat_i) - 0.5) + sigma_star,
// confining every sigma_i to (sigma_star - r, sigma_star + r).
struct SigmaParam {
  VectorXd sigma_hat;
  double radius = 0.0;
  double sigma_star = 1.0;

  SigmaParam() = default;
  SigmaParam(VectorXd hat, double r, double star)
      : sigma_hat(std::move(hat)), radius(r), sigma_star(star) {
    if (radius < 0.0) throw std::invalid_argument("SigmaParam: radius must be nonnegative");
  }
};

inline VectorXd sigma_from_hat(const SigmaParam& p) {
  VectorXd s(p.sigma_hat.size());
  for (Eigen::Index i = 0; i < s.size(); ++i)
    s[i] = 2.0 * p.radius * (sigmoid(p.sigma_hat[i]) - 0.5) + p.sigma_star;
  return s;
}

// Chain rule through the sigmoid squashing: dL/dsigma_hat_i = dL/dsigma_i * 2r f'(sigma_hat_i).
inline VectorXd sigma_hat_grad(const SigmaParam& p, const VectorXd& dl_dsigma) {
  if (dl_dsigma.size() != p.sigma_hat.size())
    throw std::invalid_argument("sigma_hat_grad: length mismatch");
  VectorXd g(p.sigma_hat.size());
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    const double f = sigmoid(p.sigma_hat[i]);
    g[i] = dl_dsigma[i] * 2.0 * p.radius * f * (1.0 - f);
  }
  return g;
}

// Weight matrix held in SVD-parameterized form: W = U Sigma_hat V^T where U and
// V are reflector stacks over the output/input dimensions and Sigma_hat is the
// rectangular diagonal of Eq.-4-derived singular values.
struct SpectralMatrix {
  int rows = 0;  // m
  int cols = 0;  // n
  ReflectorStack u_stack;  // over dim rows, k_min = rows - m1 + 1
  ReflectorStack v_stack;  // over dim cols, k_min = cols - m2 + 1
  SigmaParam sigma;        // length min(rows, cols)

  SpectralMatrix() = default;
  SpectralMatrix(int m, int n, ReflectorStack us, ReflectorStack vs, SigmaParam sg)
      : rows(m), cols(n), u_stack(std::move(us)), v_stack(std::move(vs)), sigma(std::move(sg)) {
    validate();
  }

  int min_dim() const { return std::min(rows, cols); }
  int m1() const { return rows - u_stack.k_min + 1; }
  int m2() const { return cols - v_stack.k_min + 1; }

  void validate() const {
    if (rows < 1 || cols < 1) throw std::invalid_argument("SpectralMatrix: bad dimensions");
    if (u_stack.n != rows || v_stack.n != cols)
      throw std::invalid_argument("SpectralMatrix: stack dimensions do not match matrix");
    if (m1() > rows) throw std::invalid_argument("SpectralMatrix: m1 > rows");
    if (m2() > (rows == cols ? cols : min_dim()))
      throw std::invalid_argument("SpectralMatrix: m2 exceeds its Lemma-1 limit");
    if (sigma.sigma_hat.size() != min_dim())
      throw std::invalid_argument("SpectralMatrix: sigma length != min(rows, cols)");
    u_stack.validate();
    v_stack.validate();
  }

  long trainable_scalar_count() const {
    return u_stack.scalar_count() + v_stack.scalar_count() + min_dim();
  }

  VectorXd singular_values() const { return sigma_from_hat(sigma); }

  // Gaussian reflector entries, sigma_hat = 0 so every singular value starts
  // at sigma_star exactly.
  static SpectralMatrix create(int m, int n, int m1, int m2, double radius, double sigma_star,
                               std::mt19937_64& rng) {
    ReflectorStack us = ReflectorStack::random(m, m - m1 + 1, rng);
    ReflectorStack vs = ReflectorStack::random(n, n - m2 + 1, rng);
    SigmaParam sg(VectorXd::Zero(std::min(m, n)), radius, sigma_star);
    return SpectralMatrix(m, n, std::move(us), std::move(vs), std::move(sg));
  }
};

// y = Sigma_hat x: scale the first min(m,n) components, pad or truncate to m.
inline VectorXd sigma_apply(const VectorXd& sigma_vals, const VectorXd& x, int m_out,
                            FlopCounter* fc = nullptr) {
  const int mn = static_cast<int>(sigma_vals.size());
  VectorXd y = VectorXd::Zero(m_out);
  y.head(mn) = sigma_vals.cwiseProduct(x.head(mn));
  count_flops(fc, Kernel::SpectralFp, static_cast<std::uint64_t>(mn));
  return y;
}

// Dense m x n matrix, computed reflector by reflector on basis vectors.
inline MatrixXd materialize(const SpectralMatrix& w, FlopCounter* fc = nullptr) {
  const VectorXd sv = sigma_from_hat(w.sigma);
  MatrixXd out(w.rows, w.cols);
  for (int j = 0; j < w.cols; ++j) {
    VectorXd x = stack_apply(w.v_stack, VectorXd::Unit(w.cols, j), /*transpose=*/true, fc);
    VectorXd y = sigma_apply(sv, x, w.rows, fc);
    out.col(j) = stack_apply(w.u_stack, y, /*transpose=*/false, fc);
  }
  return out;
}

inline double spectral_margin(const SpectralMatrix& w) {
  const VectorXd sv = sigma_from_hat(w.sigma);
  return (sv.array() - 1.0).abs().maxCoeff();
}

namespace detail {

inline double logit(double p) { return std::log(p / (1.0 - p)); }

// Inverts Eq. 4 for one singular value; boundary values clamp to +-30.
inline double invert_sigma(double s, double radius, double sigma_star) {
  if (radius == 0.0) {
    if (std::abs(s - sigma_star) > 1e-12)
      throw std::range_error("sigma inversion: r = 0 but sigma != sigma_star");
    return 0.0;
  }
  const double p = (s - sigma_star + radius) / (2.0 * radius);
  if (p < 0.0 || p > 1.0)
    throw std::range_error("sigma inversion: singular value outside (sigma_star - r, sigma_star + r)");
  if (p <= 0.0 || p >= 1.0) return p <= 0.0 ? -30.0 : 30.0;
  return std::clamp(logit(p), -30.0, 30.0);
}

// Drops the reflectors below k_keep_min; by the padding argument behind
// Lemma 1 this leaves the first (n - k_keep_min + 1) columns of the
// materialized product untouched.
inline ReflectorStack truncate_stack(const ReflectorStack& s, int k_keep_min) {
  std::vector<HouseholderVector> vecs;
  for (int k = std::max(k_keep_min, s.k_min); k <= s.n; ++k) vecs.push_back(s.at(k));
  return ReflectorStack(s.n, std::max(k_keep_min, s.k_min), std::move(vecs));
}

}  // namespace detail

// Constructive inverse of the parameterization for an arbitrary dense matrix:
// oracle SVD, then Householder QR of each orthogonal factor. Keeps
// min(m, n) reflectors per side, which is sufficient for exact coverage.
// Throws std::range_error if some singular value falls outside
// (sigma_star - r, sigma_star + r).
inline SpectralMatrix decompose(const MatrixXd& w, double radius, double sigma_star) {
  const int m = static_cast<int>(w.rows());
  const int n = static_cast<int>(w.cols());
  const int mn = std::min(m, n);
  SvdResult svd = jacobi_svd(w);
  VectorXd hat(mn);
  for (int i = 0; i < mn; ++i) hat[i] = detail::invert_sigma(svd.sigma[i], radius, sigma_star);
  ReflectorStack us = detail::truncate_stack(householder_qr(svd.u).stack, m - mn + 1);
  ReflectorStack vs = detail::truncate_stack(householder_qr(svd.v).stack, n - mn + 1);
  return SpectralMatrix(m, n, std::move(us), std::move(vs), SigmaParam(std::move(hat), radius, sigma_star));
}

// Square full-expressivity case (m1 = m2 = n).
inline SpectralMatrix decompose_square(const MatrixXd& w, double radius, double sigma_star) {
  if (w.rows() != w.cols()) throw std::invalid_argument("decompose_square: matrix must be square");
  return decompose(w, radius, sigma_star);
}

// Re-expresses an orthogonal matrix A, given as a full reflector stack
// (k_min = 1), inside the (k1, k2) parameterization with sigma fixed at 1.
// Requires k1 + k2 <= n + 2. When k2 >= k1 - 1 the leading reflectors of A
// move to the V side, padded into higher slots; otherwise the same assignment
// runs on the stack of A^T with the roles of U and V swapped.
inline SpectralMatrix embed_orthogonal(const ReflectorStack& a_stack, int k1, int k2) {
  if (a_stack.k_min != 1)
    throw std::invalid_argument("embed_orthogonal: need the full stack of A (k_min = 1)");
  const int n = a_stack.n;
  if (k1 < 1 || k2 < 1 || k1 > n + 1 || k2 > n + 1)
    throw std::invalid_argument("embed_orthogonal: k1, k2 out of range");
  if (k1 + k2 > n + 2)
    throw std::invalid_argument("embed_orthogonal: unsupported configuration, k1 + k2 > n + 2");

  // pad a length-i vector into a length-j slot; the implied operator is unchanged
  auto pad = [](const HouseholderVector& hv, int j) {
    VectorXd u = VectorXd::Zero(j);
    u.tail(hv.k) = hv.u;
    return HouseholderVector(j, std::move(u));
  };

  auto assign = [&](const ReflectorStack& src, int ka, int kb) {
    // "major" side keeps src reflectors ka..n; "minor" side receives
    // src reflectors ka-1 .. 1 in slots kb .. ka+kb-2, zeros above.
    std::vector<HouseholderVector> major, minor;
    for (int k = ka; k <= n; ++k) major.push_back(src.at(k));
    for (int j = kb; j <= n; ++j) {
      const int i = ka + kb - 1 - j;
      minor.push_back(i >= 1 ? pad(src.at(i), j) : HouseholderVector::zero(j));
    }
    return std::make_pair(ReflectorStack(n, ka, std::move(major)),
                          ReflectorStack(n, kb, std::move(minor)));
  };

  SigmaParam ones(VectorXd::Zero(n), 0.0, 1.0);
  if (k2 >= k1 - 1) {
    auto [us, vs] = assign(a_stack, k1, k2);
    return SpectralMatrix(n, n, std::move(us), std::move(vs), std::move(ones));
  }
  // Transpose branch: A^T is orthogonal with its own stack; then
  // A = H_1(b_1) ... H_n(b_n), whose tail is the V side directly.
  QrResult qr = householder_qr(stack_materialize(a_stack).transpose());
  auto [vs, us] = assign(qr.stack, k2, k1);
  return SpectralMatrix(n, n, std::move(us), std::move(vs), std::move(ones));
}

// --- plain-text serialization -------------------------------------------------
//
//   spectral-matrix-v1
//   dims <rows> <cols> <m1> <m2>
//   sigma_star <v>
//   radius <v>
//   sigma_hat <min(rows,cols) values>
//   u <k> <k values>            (one line per reflector, ascending k)
//   v <k> <k values>
//   end

inline void save_spectral_matrix(std::ostream& os, const SpectralMatrix& w) {
  os.precision(17);
  os << "spectral-matrix-v1\n";
  os << "dims " << w.rows << ' ' << w.cols << ' ' << w.m1() << ' ' << w.m2() << '\n';
  os << "sigma_star " << w.sigma.sigma_star << '\n';
  os << "radius " << w.sigma.radius << '\n';
  os << "sigma_hat";
  for (Eigen::Index i = 0; i < w.sigma.sigma_hat.size(); ++i) os << ' ' << w.sigma.sigma_hat[i];
  os << '\n';
  for (const auto& hv : w.u_stack.vectors) {
    os << "u " << hv.k;
    for (int i = 0; i < hv.k; ++i) os << ' ' << hv.u[i];
    os << '\n';
  }
  for (const auto& hv : w.v_stack.vectors) {
    os << "v " << hv.k;
    for (int i = 0; i < hv.k; ++i) os << ' ' << hv.u[i];
    os << '\n';
  }
  os << "end\n";
}

inline SpectralMatrix load_spectral_matrix(std::istream& is) {
  auto fail = [](const std::string& what) -> void {
    throw std::runtime_error("load_spectral_matrix: " + what);
  };
  std::string line, tok;
  if (!std::getline(is, line) || line != "spectral-matrix-v1") fail("bad magic");
  int rows = 0, cols = 0, m1 = 0, m2 = 0;
  double star = 1.0, radius = 0.0;
  {
    std::getline(is, line);
    std::istringstream ls(line);
    ls >> tok >> rows >> cols >> m1 >> m2;
    if (tok != "dims" || !ls) fail("bad dims line");
  }
  {
    std::getline(is, line);
    std::istringstream ls(line);
    ls >> tok >> star;
    if (tok != "sigma_star" || !ls) fail("bad sigma_star line");
  }
  {
    std::getline(is, line);
    std::istringstream ls(line);
    ls >> tok >> radius;
    if (tok != "radius" || !ls) fail("bad radius line");
  }
  const int mn = std::min(rows, cols);
  VectorXd hat(mn);
  {
    std::getline(is, line);
    std::istringstream ls(line);
    ls >> tok;
    if (tok != "sigma_hat") fail("bad sigma_hat line");
    for (int i = 0; i < mn; ++i)
      if (!(ls >> hat[i])) fail("short sigma_hat line");
  }
  std::vector<HouseholderVector> us, vs;
  for (int i = 0; i < m1 + m2; ++i) {
    std::getline(is, line);
    std::istringstream ls(line);
    int k = 0;
    ls >> tok >> k;
    if (!ls || (tok != "u" && tok != "v")) fail("bad reflector line");
    VectorXd u(k);
    for (int c = 0; c < k; ++c)
      if (!(ls >> u[c])) fail("short reflector line");
    (tok == "u" ? us : vs).emplace_back(k, std::move(u));
  }
  if (!std::getline(is, line) || line != "end") fail("missing end marker");
  if (static_cast<int>(us.size()) != m1 || static_cast<int>(vs.size()) != m2)
    fail("reflector count does not match dims");
  return SpectralMatrix(rows, cols, ReflectorStack(rows, rows - m1 + 1, std::move(us)),
                        ReflectorStack(cols, cols - m2 + 1, std::move(vs)),
                        SigmaParam(std::move(hat), radius, star));
}

}  // namespace spectral
