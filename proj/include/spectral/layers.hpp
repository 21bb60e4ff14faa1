#pragma once

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "spectral/svd_param.hpp"

namespace spectral {

enum class Activation { Identity, Relu, LeakyRelu, Sigmoid, Tanh };

inline Activation activation_from_name(const std::string& name) {
  if (name == "identity") return Activation::Identity;
  if (name == "relu") return Activation::Relu;
  if (name == "leaky_relu") return Activation::LeakyRelu;
  if (name == "sigmoid") return Activation::Sigmoid;
  if (name == "tanh") return Activation::Tanh;
  throw std::invalid_argument("unknown activation: " + name);
}

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Relu: return "relu";
    case Activation::LeakyRelu: return "leaky_relu";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Tanh: return "tanh";
  }
  return "identity";
}

// Elementwise activation. ReLU-family derivatives at exactly 0 take the
// positive-side value.
inline VectorXd activation(Activation a, double leak, const VectorXd& x, FlopCounter* fc = nullptr) {
  count_flops(fc, Kernel::Dense, a == Activation::Identity ? 0 : static_cast<std::uint64_t>(x.size()));
  switch (a) {
    case Activation::Identity: return x;
    case Activation::Relu: return x.cwiseMax(0.0);
    case Activation::LeakyRelu:
      return (x.array() >= 0.0).select(x.array(), leak * x.array()).matrix();
    case Activation::Sigmoid: return x.unaryExpr([](double v) { return sigmoid(v); });
    case Activation::Tanh: return x.array().tanh().matrix();
  }
  return x;
}

inline VectorXd activation_grad(Activation a, double leak, const VectorXd& x_pre, const VectorXd& g,
                                FlopCounter* fc = nullptr) {
  if (x_pre.size() != g.size()) throw std::invalid_argument("activation_grad: size mismatch");
  count_flops(fc, Kernel::Dense, a == Activation::Identity ? 0 : 2 * static_cast<std::uint64_t>(g.size()));
  switch (a) {
    case Activation::Identity: return g;
    case Activation::Relu:
      return (x_pre.array() >= 0.0).select(g.array(), 0.0).matrix();
    case Activation::LeakyRelu:
      return (x_pre.array() >= 0.0).select(g.array(), leak * g.array()).matrix();
    case Activation::Sigmoid:
      return g.binaryExpr(x_pre, [](double gv, double xv) {
        const double f = sigmoid(xv);
        return gv * f * (1.0 - f);
      });
    case Activation::Tanh:
      return g.binaryExpr(x_pre, [](double gv, double xv) {
        const double t = std::tanh(xv);
        return gv * (1.0 - t * t);
      });
  }
  return g;
}

// Per-iteration coefficients derived from the parameters: squared reflector
// norms (computed once and reused by forward and backward), the Eq.-4 singular
// values and their sigma_hat derivative factor.
struct SpectralCoeffs {
  VectorXd norms_u, norms_v;  // ascending slot order
  VectorXd sigma;             // derived singular values
  VectorXd dsigma_dhat;       // 2r f'(sigma_hat)
};

inline SpectralCoeffs spectral_coeffs(const SpectralMatrix& w, FlopCounter* fc = nullptr) {
  SpectralCoeffs c;
  c.norms_u = w.u_stack.squared_norms(fc);
  c.norms_v = w.v_stack.squared_norms(fc);
  c.sigma = sigma_from_hat(w.sigma);
  c.dsigma_dhat.resize(w.min_dim());
  for (int i = 0; i < w.min_dim(); ++i) {
    const double f = sigmoid(w.sigma.sigma_hat[i]);
    c.dsigma_dhat[i] = 2.0 * w.sigma.radius * f * (1.0 - f);
  }
  count_flops(fc, Kernel::Norms, 4 * static_cast<std::uint64_t>(w.min_dim()));
  return c;
}

// Intermediates of one local forward pass, consumed by the backward pass.
// hv[j] is the hidden vector after j reflectors of the V side (hv[0] is the
// input); hu[i] likewise on the U side (hu[0] = Sigma_hat V^T h). alpha_* hold
// the forward inner products u^T h_in, reused by the backward pass through the
// involution identity.
struct SpectralTape {
  std::vector<VectorXd> hv;  // m2 + 1 entries of length cols
  std::vector<VectorXd> hu;  // m1 + 1 entries of length rows
  VectorXd alpha_v;          // slot order (ascending k)
  VectorXd alpha_u;

  const VectorXd& output() const { return hu.back(); }
};

// C = W h, evaluated reflector by reflector; fills the tape.
inline VectorXd spectral_apply(const SpectralMatrix& w, const VectorXd& h, SpectralTape& tape,
                               const SpectralCoeffs& coeffs, FlopCounter* fc = nullptr) {
  if (h.size() != w.cols) throw std::invalid_argument("spectral_apply: dimension mismatch");
  const int m1 = w.m1(), m2 = w.m2();
  tape.hv.resize(static_cast<size_t>(m2) + 1);
  tape.hu.resize(static_cast<size_t>(m1) + 1);
  tape.alpha_v.resize(m2);
  tape.alpha_u.resize(m1);
  tape.hv[0] = h;
  for (int j = 1; j <= m2; ++j) {
    const int slot = m2 - j;  // reflector k = cols - j + 1
    tape.hv[static_cast<size_t>(j)] = tape.hv[static_cast<size_t>(j) - 1];
    tape.alpha_v[slot] = detail::reflect_inplace(tape.hv[static_cast<size_t>(j)],
                                                 w.v_stack.vectors[static_cast<size_t>(slot)].u,
                                                 coeffs.norms_v[slot], fc, Kernel::SpectralFp);
  }
  tape.hu[0] = sigma_apply(coeffs.sigma, tape.hv[static_cast<size_t>(m2)], w.rows, fc);
  for (int i = 1; i <= m1; ++i) {
    const int slot = i - 1;  // reflector k = k1 + i - 1
    tape.hu[static_cast<size_t>(i)] = tape.hu[static_cast<size_t>(i) - 1];
    tape.alpha_u[slot] = detail::reflect_inplace(tape.hu[static_cast<size_t>(i)],
                                                 w.u_stack.vectors[static_cast<size_t>(slot)].u,
                                                 coeffs.norms_u[slot], fc, Kernel::SpectralFp);
  }
  return tape.hu.back();
}

inline VectorXd spectral_apply(const SpectralMatrix& w, const VectorXd& h, SpectralTape& tape,
                               FlopCounter* fc = nullptr) {
  return spectral_apply(w, h, tape, spectral_coeffs(w, fc), fc);
}

// Gradients of one local pass, mirrored on the parameter layout.
struct SpectralGrad {
  std::vector<VectorXd> du, dv;  // ascending slot order
  VectorXd d_sigma_hat;

  void init(const SpectralMatrix& w) {
    du.resize(static_cast<size_t>(w.m1()));
    dv.resize(static_cast<size_t>(w.m2()));
    for (int s = 0; s < w.m1(); ++s) du[static_cast<size_t>(s)] = VectorXd::Zero(w.u_stack.k_min + s);
    for (int s = 0; s < w.m2(); ++s) dv[static_cast<size_t>(s)] = VectorXd::Zero(w.v_stack.k_min + s);
    d_sigma_hat = VectorXd::Zero(w.min_dim());
  }

  void set_zero() {
    for (auto& v : du) v.setZero();
    for (auto& v : dv) v.setZero();
    d_sigma_hat.setZero();
  }
};

namespace detail {

inline void check_tape(const SpectralMatrix& w, const SpectralTape& tape, const VectorXd& g) {
  if (g.size() != w.rows) throw std::invalid_argument("spectral_backward: gradient size mismatch");
  if (static_cast<int>(tape.hv.size()) != w.m2() + 1 ||
      static_cast<int>(tape.hu.size()) != w.m1() + 1 || tape.hv[0].size() != w.cols ||
      tape.hu[0].size() != w.rows)
    throw std::invalid_argument("spectral_backward: stale tape");
}

// Backward half of the local pass. The U side walks its chain in reverse with
// post-reflection vectors; the V side with pre-reflection vectors, exactly as
// the forward tape cached them.
template <bool Accumulate>
inline VectorXd spectral_backward_impl(const SpectralMatrix& w, const SpectralTape& tape,
                                       const VectorXd& g, const SpectralCoeffs& coeffs,
                                       SpectralGrad& grad, FlopCounter* fc) {
  check_tape(w, tape, g);
  const int m1 = w.m1(), m2 = w.m2(), mn = w.min_dim();
  VectorXd gu = g;
  for (int s = m1 - 1; s >= 0; --s) {
    backward_reflect<Accumulate>(gu, w.u_stack.vectors[static_cast<size_t>(s)].u, coeffs.norms_u[s],
                                 tape.hu[static_cast<size_t>(s) + 1], /*ref_is_output=*/true,
                                 -tape.alpha_u[s], grad.du[static_cast<size_t>(s)], fc,
                                 Kernel::SpectralBp);
  }
  // Sigma stage: dL/dsigma = gu o (V^T h), chained through Eq. 4; then
  // gv = Sigma_hat^T gu.
  const VectorXd& vth = tape.hv[static_cast<size_t>(m2)];
  VectorXd gv = VectorXd::Zero(w.cols);
  for (int i = 0; i < mn; ++i) {
    const double dsig = gu[i] * vth[i];
    if (Accumulate)
      grad.d_sigma_hat[i] += dsig * coeffs.dsigma_dhat[i];
    else
      grad.d_sigma_hat[i] = dsig * coeffs.dsigma_dhat[i];
    gv[i] = coeffs.sigma[i] * gu[i];
  }
  count_flops(fc, Kernel::SpectralBp, (Accumulate ? 4 : 3) * static_cast<std::uint64_t>(mn));
  for (int s = 0; s < m2; ++s) {
    backward_reflect<Accumulate>(gv, w.v_stack.vectors[static_cast<size_t>(s)].u, coeffs.norms_v[s],
                                 tape.hv[static_cast<size_t>(m2 - s) - 1], /*ref_is_output=*/false,
                                 tape.alpha_v[s], grad.dv[static_cast<size_t>(s)], fc,
                                 Kernel::SpectralBp);
  }
  return gv;
}

}  // namespace detail

struct SpectralBackwardResult {
  SpectralGrad grad;
  VectorXd dl_dh;
};

inline SpectralBackwardResult spectral_backward(const SpectralMatrix& w, const SpectralTape& tape,
                                                const VectorXd& g, const SpectralCoeffs& coeffs,
                                                FlopCounter* fc = nullptr) {
  SpectralBackwardResult r;
  r.grad.init(w);
  r.dl_dh = detail::spectral_backward_impl<false>(w, tape, g, coeffs, r.grad, fc);
  return r;
}

inline SpectralBackwardResult spectral_backward(const SpectralMatrix& w, const SpectralTape& tape,
                                                const VectorXd& g, FlopCounter* fc = nullptr) {
  return spectral_backward(w, tape, g, spectral_coeffs(w, fc), fc);
}

// Accumulating form used by backpropagation through time; returns dL/dh.
inline VectorXd spectral_backward_accum(const SpectralMatrix& w, const SpectralTape& tape,
                                        const VectorXd& g, const SpectralCoeffs& coeffs,
                                        SpectralGrad& grad, FlopCounter* fc = nullptr) {
  return detail::spectral_backward_impl<true>(w, tape, g, coeffs, grad, fc);
}

// --- recurrent cell -----------------------------------------------------------

// h^(t) = act(W h^(t-1) + M x^(t-1) + b), y^(t) = Y h^(t), with W in SVD form.
struct SpectralRnnCell {
  SpectralMatrix W;  // n x n
  MatrixXd M;        // n x n_in
  MatrixXd Y;        // n_out x n
  VectorXd b;        // n
  Activation act = Activation::LeakyRelu;
  double leak = 0.01;

  int hidden_dim() const { return W.rows; }
  int input_dim() const { return static_cast<int>(M.cols()); }
  int output_dim() const { return static_cast<int>(Y.rows()); }

  long trainable_scalar_count() const {
    return W.trainable_scalar_count() + M.size() + Y.size() + b.size();
  }

  void validate() const {
    W.validate();
    if (W.rows != W.cols) throw std::invalid_argument("SpectralRnnCell: W must be square");
    if (M.rows() != W.rows || Y.cols() != W.rows || b.size() != W.rows)
      throw std::invalid_argument("SpectralRnnCell: inconsistent dimensions");
  }

  static SpectralRnnCell create(int n, int n_in, int n_out, int m1, int m2, double radius,
                                double sigma_star, Activation act, double leak,
                                std::mt19937_64& rng) {
    SpectralRnnCell cell;
    cell.W = SpectralMatrix::create(n, n, m1, m2, radius, sigma_star, rng);
    std::normal_distribution<double> gauss(0.0, 1.0);
    cell.M.resize(n, n_in);
    for (int j = 0; j < n_in; ++j)
      for (int i = 0; i < n; ++i) cell.M(i, j) = gauss(rng) / std::sqrt(static_cast<double>(n_in));
    cell.Y.resize(n_out, n);
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n_out; ++i) cell.Y(i, j) = gauss(rng) / std::sqrt(static_cast<double>(n));
    cell.b = VectorXd::Zero(n);
    cell.act = act;
    cell.leak = leak;
    return cell;
  }
};

struct CellTape {
  SpectralTape w;
  VectorXd x;       // input consumed at this step
  VectorXd preact;  // W h + M x + b
  VectorXd h;       // activated hidden state
};

// One recurrent step; returns y_hat = Y h^(t) and leaves h^(t) in tape.h.
inline VectorXd rnn_step(const SpectralRnnCell& cell, const VectorXd& h_prev, const VectorXd& x,
                         CellTape& tape, const SpectralCoeffs& coeffs, FlopCounter* fc = nullptr) {
  if (x.size() != cell.input_dim()) throw std::invalid_argument("rnn_step: input size mismatch");
  tape.x = x;
  VectorXd c = spectral_apply(cell.W, h_prev, tape.w, coeffs, fc);
  tape.preact = c + cell.M * x + cell.b;
  tape.h = activation(cell.act, cell.leak, tape.preact, fc);
  count_flops(fc, Kernel::Dense,
              2 * static_cast<std::uint64_t>(cell.M.size()) + 2 * static_cast<std::uint64_t>(cell.b.size()));
  VectorXd y = cell.Y * tape.h;
  count_flops(fc, Kernel::Dense, 2 * static_cast<std::uint64_t>(cell.Y.size()));
  return y;
}

inline VectorXd rnn_step(const SpectralRnnCell& cell, const VectorXd& h_prev, const VectorXd& x,
                         CellTape& tape, FlopCounter* fc = nullptr) {
  return rnn_step(cell, h_prev, x, tape, spectral_coeffs(cell.W, fc), fc);
}

struct CellGrad {
  SpectralGrad w;
  MatrixXd dM, dY;
  VectorXd db;

  void init(const SpectralRnnCell& cell) {
    w.init(cell.W);
    dM = MatrixXd::Zero(cell.M.rows(), cell.M.cols());
    dY = MatrixXd::Zero(cell.Y.rows(), cell.Y.cols());
    db = VectorXd::Zero(cell.b.size());
  }

  void set_zero() {
    w.set_zero();
    dM.setZero();
    dY.setZero();
    db.setZero();
  }
};

// Unrolled backward pass over a rollout. tapes[t] is the step that consumed
// h^(t) and produced h^(t+1); dys[t] is dL/dy_hat^(t+1) (size 0 when the step
// carries no loss). Parameter gradients are summed across steps into grad.
// h_grad_norms (when non-null) receives ||dL/dh^(t)|| for t = 0..T.
inline void rnn_backward_through_time(const SpectralRnnCell& cell, const SpectralCoeffs& coeffs,
                                      const std::vector<CellTape>& tapes,
                                      const std::vector<VectorXd>& dys, CellGrad& grad,
                                      std::vector<double>* h_grad_norms = nullptr,
                                      FlopCounter* fc = nullptr) {
  const int steps = static_cast<int>(tapes.size());
  if (static_cast<int>(dys.size()) != steps)
    throw std::invalid_argument("rnn_backward_through_time: tapes/loss_grads length mismatch");
  if (h_grad_norms) h_grad_norms->assign(static_cast<size_t>(steps) + 1, 0.0);
  VectorXd g_h = VectorXd::Zero(cell.hidden_dim());
  for (int t = steps - 1; t >= 0; --t) {
    const CellTape& tape = tapes[static_cast<size_t>(t)];
    const VectorXd& dy = dys[static_cast<size_t>(t)];
    if (dy.size() != 0) {
      if (dy.size() != cell.output_dim())
        throw std::invalid_argument("rnn_backward_through_time: loss grad size mismatch");
      g_h.noalias() += cell.Y.transpose() * dy;
      grad.dY.noalias() += dy * tape.h.transpose();
      count_flops(fc, Kernel::Dense, 4 * static_cast<std::uint64_t>(cell.Y.size()));
    }
    if (h_grad_norms) (*h_grad_norms)[static_cast<size_t>(t) + 1] = g_h.norm();
    VectorXd g_a = activation_grad(cell.act, cell.leak, tape.preact, g_h, fc);
    grad.db += g_a;
    grad.dM.noalias() += g_a * tape.x.transpose();
    count_flops(fc, Kernel::Dense,
                static_cast<std::uint64_t>(g_a.size()) + 2 * static_cast<std::uint64_t>(cell.M.size()));
    g_h = spectral_backward_accum(cell.W, tape.w, g_a, coeffs, grad.w, fc);
  }
  if (h_grad_norms) (*h_grad_norms)[0] = g_h.norm();
}

// --- feedforward layer (rectangular W) ----------------------------------------

struct SpectralDenseLayer {
  SpectralMatrix W;  // m x n
  VectorXd b;        // m
  Activation act = Activation::LeakyRelu;
  double leak = 0.01;

  void validate() const {
    W.validate();
    if (b.size() != W.rows) throw std::invalid_argument("SpectralDenseLayer: bias size mismatch");
  }

  static SpectralDenseLayer create(int m, int n, int m1, int m2, double radius, double sigma_star,
                                   Activation act, double leak, std::mt19937_64& rng) {
    SpectralDenseLayer layer;
    layer.W = SpectralMatrix::create(m, n, m1, m2, radius, sigma_star, rng);
    layer.b = VectorXd::Zero(m);
    layer.act = act;
    layer.leak = leak;
    return layer;
  }
};

struct DenseLayerTape {
  SpectralTape w;
  VectorXd preact;
};

inline VectorXd dense_layer_step(const SpectralDenseLayer& layer, const VectorXd& h,
                                 DenseLayerTape& tape, const SpectralCoeffs& coeffs,
                                 FlopCounter* fc = nullptr) {
  tape.preact = spectral_apply(layer.W, h, tape.w, coeffs, fc) + layer.b;
  count_flops(fc, Kernel::Dense, static_cast<std::uint64_t>(layer.b.size()));
  return activation(layer.act, layer.leak, tape.preact, fc);
}

inline VectorXd dense_layer_step(const SpectralDenseLayer& layer, const VectorXd& h,
                                 DenseLayerTape& tape, FlopCounter* fc = nullptr) {
  return dense_layer_step(layer, h, tape, spectral_coeffs(layer.W, fc), fc);
}

struct DenseLayerGrad {
  SpectralGrad w;
  VectorXd db;

  void init(const SpectralDenseLayer& layer) {
    w.init(layer.W);
    db = VectorXd::Zero(layer.b.size());
  }
};

// Returns dL/dh for the layer input; parameter gradients land in grad.
inline VectorXd dense_layer_backward(const SpectralDenseLayer& layer, const DenseLayerTape& tape,
                                     const VectorXd& g, const SpectralCoeffs& coeffs,
                                     DenseLayerGrad& grad, FlopCounter* fc = nullptr) {
  VectorXd g_a = activation_grad(layer.act, layer.leak, tape.preact, g, fc);
  grad.db += g_a;
  count_flops(fc, Kernel::Dense, static_cast<std::uint64_t>(g_a.size()));
  return spectral_backward_accum(layer.W, tape.w, g_a, coeffs, grad.w, fc);
}

}  // namespace spectral
