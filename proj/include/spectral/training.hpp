#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <istream>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "spectral/diagnostics.hpp"
#include "spectral/layers.hpp"
#include "spectral/tasks.hpp"

namespace spectral {

// --- losses ---------------------------------------------------------------------

struct LossResult {
  double value = 0.0;
  MatrixXd grad;  // same shape as the prediction
};

// Mean over batch columns of the squared error; grad = 2 (pred - target) / B.
inline LossResult mse_loss(const MatrixXd& pred, const MatrixXd& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw std::invalid_argument("mse_loss: shape mismatch");
  const double inv_b = 1.0 / static_cast<double>(pred.cols());
  LossResult r;
  MatrixXd diff = pred - target;
  r.value = diff.squaredNorm() * inv_b;
  r.grad = 2.0 * inv_b * diff;
  return r;
}

inline VectorXd softmax(const VectorXd& logits) {
  VectorXd z = (logits.array() - logits.maxCoeff()).exp();
  return z / z.sum();
}

// Mean over batch columns of -log softmax(logits)[target].
inline LossResult cross_entropy_loss(const MatrixXd& logits, const std::vector<int>& targets) {
  if (static_cast<int>(targets.size()) != logits.cols())
    throw std::invalid_argument("cross_entropy_loss: target count mismatch");
  const double inv_b = 1.0 / static_cast<double>(logits.cols());
  LossResult r;
  r.grad.resize(logits.rows(), logits.cols());
  r.value = 0.0;
  for (Eigen::Index b = 0; b < logits.cols(); ++b) {
    const int cls = targets[static_cast<size_t>(b)];
    if (cls < 0 || cls >= logits.rows())
      throw std::invalid_argument("cross_entropy_loss: class index out of range");
    VectorXd p = softmax(logits.col(b));
    r.value -= std::log(std::max(p[cls], 1e-300)) * inv_b;
    r.grad.col(b) = p * inv_b;
    r.grad(cls, b) -= inv_b;
  }
  return r;
}

// --- Adam -----------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamSlot {
  VectorXd m, v;
};

// Bias-corrected Adam update; t is the 1-based step count.
inline void adam_step(AdamSlot& slot, Eigen::Ref<VectorXd> params,
                      const Eigen::Ref<const VectorXd>& grads, long t, double lr, double beta1,
                      double beta2, double eps) {
  if (slot.m.size() != params.size()) {
    slot.m = VectorXd::Zero(params.size());
    slot.v = VectorXd::Zero(params.size());
  }
  if (grads.size() != params.size()) throw std::invalid_argument("adam_step: size mismatch");
  slot.m = beta1 * slot.m + (1.0 - beta1) * grads;
  slot.v = beta2 * slot.v + (1.0 - beta2) * grads.cwiseProduct(grads);
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  params.array() -=
      lr * (slot.m.array() / c1) / ((slot.v.array() / c2).sqrt() + eps);
}

// A flat view of one trainable tensor and its gradient accumulator.
struct ParamView {
  double* param = nullptr;
  double* grad = nullptr;
  long size = 0;
};

class AdamOptimizer {
 public:
  explicit AdamOptimizer(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(std::vector<ParamView>& views, double lr) {
    ++t_;
    slots_.resize(views.size());
    for (size_t i = 0; i < views.size(); ++i) {
      Eigen::Map<VectorXd> p(views[i].param, views[i].size);
      Eigen::Map<const VectorXd> g(views[i].grad, views[i].size);
      adam_step(slots_[i], p, g, t_, lr, cfg_.beta1, cfg_.beta2, cfg_.eps);
    }
  }

  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::vector<AdamSlot> slots_;
};

// --- vanilla RNN comparator -------------------------------------------------------

struct VanillaRnnCell {
  MatrixXd W, M, Y;
  VectorXd b;
  Activation act = Activation::LeakyRelu;
  double leak = 0.01;

  int hidden_dim() const { return static_cast<int>(W.rows()); }
  int input_dim() const { return static_cast<int>(M.cols()); }
  int output_dim() const { return static_cast<int>(Y.rows()); }

  long trainable_scalar_count() const { return W.size() + M.size() + Y.size() + b.size(); }

  static VanillaRnnCell create(int n, int n_in, int n_out, Activation act, double leak,
                               std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    VanillaRnnCell cell;
    auto fill = [&](MatrixXd& mat, int r, int c) {
      mat.resize(r, c);
      for (int j = 0; j < c; ++j)
        for (int i = 0; i < r; ++i) mat(i, j) = gauss(rng) / std::sqrt(static_cast<double>(c));
    };
    fill(cell.W, n, n);
    fill(cell.M, n, n_in);
    fill(cell.Y, n_out, n);
    cell.b = VectorXd::Zero(n);
    cell.act = act;
    cell.leak = leak;
    return cell;
  }
};

struct VanillaTape {
  VectorXd x, h_prev, preact, h;
};

inline VectorXd vanilla_step(const VanillaRnnCell& cell, const VectorXd& h_prev, const VectorXd& x,
                             VanillaTape& tape, FlopCounter* fc = nullptr) {
  tape.x = x;
  tape.h_prev = h_prev;
  tape.preact = cell.W * h_prev + cell.M * x + cell.b;
  tape.h = activation(cell.act, cell.leak, tape.preact, fc);
  count_flops(fc, Kernel::Dense,
              2 * static_cast<std::uint64_t>(cell.W.size() + cell.M.size() + cell.Y.size()) +
                  2 * static_cast<std::uint64_t>(cell.b.size()));
  return cell.Y * tape.h;
}

struct VanillaGrad {
  MatrixXd dW, dM, dY;
  VectorXd db;

  void init(const VanillaRnnCell& cell) {
    dW = MatrixXd::Zero(cell.W.rows(), cell.W.cols());
    dM = MatrixXd::Zero(cell.M.rows(), cell.M.cols());
    dY = MatrixXd::Zero(cell.Y.rows(), cell.Y.cols());
    db = VectorXd::Zero(cell.b.size());
  }

  void set_zero() {
    dW.setZero();
    dM.setZero();
    dY.setZero();
    db.setZero();
  }
};

inline void vanilla_backward_through_time(const VanillaRnnCell& cell,
                                          const std::vector<VanillaTape>& tapes,
                                          const std::vector<VectorXd>& dys, VanillaGrad& grad,
                                          std::vector<double>* h_grad_norms = nullptr,
                                          FlopCounter* fc = nullptr) {
  const int steps = static_cast<int>(tapes.size());
  if (static_cast<int>(dys.size()) != steps)
    throw std::invalid_argument("vanilla_backward_through_time: length mismatch");
  if (h_grad_norms) h_grad_norms->assign(static_cast<size_t>(steps) + 1, 0.0);
  VectorXd g_h = VectorXd::Zero(cell.hidden_dim());
  for (int t = steps - 1; t >= 0; --t) {
    const VanillaTape& tape = tapes[static_cast<size_t>(t)];
    const VectorXd& dy = dys[static_cast<size_t>(t)];
    if (dy.size() != 0) {
      g_h.noalias() += cell.Y.transpose() * dy;
      grad.dY.noalias() += dy * tape.h.transpose();
      count_flops(fc, Kernel::Dense, 4 * static_cast<std::uint64_t>(cell.Y.size()));
    }
    if (h_grad_norms) (*h_grad_norms)[static_cast<size_t>(t) + 1] = g_h.norm();
    VectorXd g_a = activation_grad(cell.act, cell.leak, tape.preact, g_h, fc);
    grad.db += g_a;
    grad.dM.noalias() += g_a * tape.x.transpose();
    grad.dW.noalias() += g_a * tape.h_prev.transpose();
    g_h.noalias() = cell.W.transpose() * g_a;
    count_flops(fc, Kernel::Dense, 4 * static_cast<std::uint64_t>(cell.W.size()) +
                                       2 * static_cast<std::uint64_t>(cell.M.size()) +
                                       static_cast<std::uint64_t>(g_a.size()));
  }
  if (h_grad_norms) (*h_grad_norms)[0] = g_h.norm();
}

// --- parameter views ---------------------------------------------------------------

// Enumeration order is fixed (u slots, v slots, sigma_hat, M, Y, b) so that
// optimizer state and gradient packing stay aligned across iterations.
inline std::vector<ParamView> collect_params(SpectralRnnCell& cell, CellGrad& grad) {
  std::vector<ParamView> views;
  for (size_t s = 0; s < cell.W.u_stack.vectors.size(); ++s)
    views.push_back({cell.W.u_stack.vectors[s].u.data(), grad.w.du[s].data(),
                     cell.W.u_stack.vectors[s].u.size()});
  for (size_t s = 0; s < cell.W.v_stack.vectors.size(); ++s)
    views.push_back({cell.W.v_stack.vectors[s].u.data(), grad.w.dv[s].data(),
                     cell.W.v_stack.vectors[s].u.size()});
  views.push_back({cell.W.sigma.sigma_hat.data(), grad.w.d_sigma_hat.data(),
                   cell.W.sigma.sigma_hat.size()});
  views.push_back({cell.M.data(), grad.dM.data(), cell.M.size()});
  views.push_back({cell.Y.data(), grad.dY.data(), cell.Y.size()});
  views.push_back({cell.b.data(), grad.db.data(), cell.b.size()});
  return views;
}

inline std::vector<ParamView> collect_params(VanillaRnnCell& cell, VanillaGrad& grad) {
  return {{cell.W.data(), grad.dW.data(), cell.W.size()},
          {cell.M.data(), grad.dM.data(), cell.M.size()},
          {cell.Y.data(), grad.dY.data(), cell.Y.size()},
          {cell.b.data(), grad.db.data(), cell.b.size()}};
}

inline double grad_global_norm(const std::vector<ParamView>& views) {
  double sq = 0.0;
  for (const auto& v : views) sq += Eigen::Map<const VectorXd>(v.grad, v.size).squaredNorm();
  return std::sqrt(sq);
}

inline void scale_grads(std::vector<ParamView>& views, double factor) {
  for (auto& v : views) Eigen::Map<VectorXd>(v.grad, v.size) *= factor;
}

// --- training loop ---------------------------------------------------------------

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  std::string task = "addition";  // addition | copy
  int seq_len = 30;               // addition sequence length L
  int lag = 50;                   // copy time lag T
  int hidden = 32;
  int m1 = 8, m2 = 8;
  double radius = 0.01;
  double sigma_star = 1.0;
  Activation act = Activation::LeakyRelu;
  double leak = 0.01;
  double lr = 1e-3;
  double decay = 1.0;  // learning-rate factor applied per epoch
  int epoch_iters = 1000;
  int batch = 64;
  long iters = 3000;
  std::uint64_t seed = 1;
  ModelKind model = ModelKind::SpectralRnn;
  int record_every = 25;
  int eval_batch = 256;
  double clip = 0.0;             // global-norm gradient clip, 0 = off
  double early_stop_eval = 0.0;  // stop once eval metric <= this, 0 = off
  double sigma_penalty = 0.0;    // coefficient on ||sigma - 1||^2

  int input_dim() const { return task == "addition" ? 2 : kCopyAlphabet; }
  int output_dim() const { return task == "addition" ? 1 : kCopyAlphabet; }
  int steps() const { return task == "addition" ? seq_len : lag + 20; }

  void validate() const {
    if (task != "addition" && task != "copy")
      throw std::invalid_argument("TrainConfig: unknown task " + task);
    if (hidden < 1 || batch < 1 || iters < 0 || record_every < 1 || eval_batch < 1 ||
        epoch_iters < 1)
      throw std::invalid_argument("TrainConfig: sizes must be positive");
    if (m1 < 0 || m1 > hidden || m2 < 0 || m2 > hidden)
      throw std::invalid_argument("TrainConfig: m1, m2 must lie in [0, hidden]");
    if (radius < 0.0) throw std::invalid_argument("TrainConfig: radius must be nonnegative");
    if (task == "addition" && seq_len < 2)
      throw std::invalid_argument("TrainConfig: addition needs seq_len >= 2");
    if (task == "copy" && lag < 1) throw std::invalid_argument("TrainConfig: copy needs lag >= 1");
  }
};

struct MetricRecord {
  long iter = 0;
  double loss = 0.0;
  double eval_metric = 0.0;
  double grad_norm_h0 = 0.0;
  double grad_norm_hT = 0.0;  // diagnostic companion to grad_norm_h0, not in the CSV
  double spectral_margin = 0.0;
  double flops = 0.0;
  double seconds = 0.0;
};

inline void write_metrics_csv_header(std::ostream& os) {
  os << "iter,loss,eval_metric,grad_norm_h0,spectral_margin,flops,seconds\n";
}

inline void write_metrics_csv_row(std::ostream& os, const MetricRecord& r) {
  os.precision(17);
  os << r.iter << ',' << r.loss << ',' << r.eval_metric << ',' << r.grad_norm_h0 << ','
     << r.spectral_margin << ',' << r.flops << ',' << r.seconds << '\n';
}

struct TrainResult {
  std::vector<MetricRecord> records;
  ModelKind kind = ModelKind::SpectralRnn;
  SpectralRnnCell spectral;
  VanillaRnnCell vanilla;
};

struct TrainHooks {
  // Called after each metric record with whichever model is active.
  std::function<void(const MetricRecord&, const SpectralRnnCell*, const VanillaRnnCell*)> on_record;
};

namespace detail {

// Per-sample rollout + backward for either model, sharing the task plumbing
// through a couple of lambdas.
template <typename Cell, typename Tape, typename Grad, typename StepFn, typename BpttFn>
struct BatchRunner {
  const TrainConfig& cfg;
  Cell& cell;
  Grad& grad;
  StepFn step;
  BpttFn bptt;
  std::vector<Tape> tapes;
  std::vector<VectorXd> dys;
  std::vector<double> h_norms;
  VectorXd xbuf;

  BatchRunner(const TrainConfig& cfg_, Cell& cell_, Grad& grad_, StepFn step_, BpttFn bptt_)
      : cfg(cfg_), cell(cell_), grad(grad_), step(step_), bptt(bptt_) {
    tapes.resize(static_cast<size_t>(cfg.steps()));
    dys.resize(static_cast<size_t>(cfg.steps()));
    xbuf.resize(cfg.input_dim());
  }

  // Returns the batch-mean loss; accumulates parameter gradients and the
  // squared column norms of dL/dh^(0), dL/dh^(T).
  double run_addition(const AdditionBatch& batch, double* h0_sq, double* hT_sq, FlopCounter* fc) {
    const int steps = cfg.steps();
    const double inv_b = 1.0 / static_cast<double>(batch.batch);
    double loss = 0.0;
    for (auto& dy : dys) dy.resize(0);
    for (int b = 0; b < batch.batch; ++b) {
      VectorXd h = VectorXd::Zero(cfg.hidden);
      VectorXd y;
      for (int t = 0; t < steps; ++t) {
        xbuf[0] = batch.values(t, b);
        xbuf[1] = batch.markers(t, b);
        y = step(h, xbuf, tapes[static_cast<size_t>(t)], fc);
        h = tapes[static_cast<size_t>(t)].h;
      }
      const double err = y[0] - batch.targets[b];
      loss += err * err * inv_b;
      dys.back() = VectorXd::Constant(1, 2.0 * err * inv_b);
      bptt(tapes, dys, grad, &h_norms, fc);
      if (h0_sq) *h0_sq += h_norms.front() * h_norms.front();
      if (hT_sq) *hT_sq += h_norms.back() * h_norms.back();
    }
    return loss;
  }

  double run_copy(const CopyBatch& batch, double* h0_sq, double* hT_sq, FlopCounter* fc) {
    const int steps = cfg.steps();
    const double scale = 1.0 / (static_cast<double>(batch.batch) * static_cast<double>(steps));
    double loss = 0.0;
    for (int b = 0; b < batch.batch; ++b) {
      VectorXd h = VectorXd::Zero(cfg.hidden);
      for (int t = 0; t < steps; ++t) {
        xbuf.setZero();
        xbuf[batch.inputs(t, b)] = 1.0;
        VectorXd y = step(h, xbuf, tapes[static_cast<size_t>(t)], fc);
        h = tapes[static_cast<size_t>(t)].h;
        VectorXd p = softmax(y);
        const int cls = batch.targets(t, b);
        loss -= std::log(std::max(p[cls], 1e-300)) * scale;
        dys[static_cast<size_t>(t)] = p * scale;
        dys[static_cast<size_t>(t)][cls] -= scale;
        count_flops(fc, Kernel::Loss, 4 * static_cast<std::uint64_t>(p.size()));
      }
      bptt(tapes, dys, grad, &h_norms, fc);
      if (h0_sq) *h0_sq += h_norms.front() * h_norms.front();
      if (hT_sq) *hT_sq += h_norms.back() * h_norms.back();
    }
    return loss;
  }
};

}  // namespace detail

// Forward-only evaluation on a fresh batch; MSE for addition, mean
// per-position cross-entropy for copy.
template <typename StepFn>
inline double evaluate_model(const TrainConfig& cfg, StepFn step, std::mt19937_64& eval_rng) {
  VectorXd xbuf(cfg.input_dim());
  if (cfg.task == "addition") {
    AdditionBatch batch = gen_addition(cfg.seq_len, cfg.eval_batch, eval_rng);
    double mse = 0.0;
    for (int b = 0; b < batch.batch; ++b) {
      VectorXd h = VectorXd::Zero(cfg.hidden);
      VectorXd y;
      for (int t = 0; t < cfg.steps(); ++t) {
        xbuf[0] = batch.values(t, b);
        xbuf[1] = batch.markers(t, b);
        y = step(h, xbuf);
      }
      const double err = y[0] - batch.targets[b];
      mse += err * err / static_cast<double>(batch.batch);
    }
    return mse;
  }
  CopyBatch batch = gen_copy(cfg.lag, cfg.eval_batch, eval_rng);
  double ce = 0.0;
  const double scale = 1.0 / (static_cast<double>(batch.batch) * static_cast<double>(cfg.steps()));
  for (int b = 0; b < batch.batch; ++b) {
    VectorXd h = VectorXd::Zero(cfg.hidden);
    for (int t = 0; t < cfg.steps(); ++t) {
      xbuf.setZero();
      xbuf[batch.inputs(t, b)] = 1.0;
      VectorXd y = step(h, xbuf);
      ce -= std::log(std::max(softmax(y)[batch.targets(t, b)], 1e-300)) * scale;
    }
  }
  return ce;
}

// Seeded training loop. Deterministic given the config: the metric stream is
// reproducible bit for bit on the same platform. Throws DivergenceError when
// the loss stops being finite.
inline TrainResult train(const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  cfg.validate();
  std::mt19937_64 init_rng(cfg.seed);
  std::mt19937_64 data_rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);
  std::mt19937_64 eval_rng(cfg.seed ^ 0xC2B2AE3D27D4EB4FULL);

  TrainResult result;
  result.kind = cfg.model;
  FlopCounter fc;
  const auto t_start = std::chrono::steady_clock::now();
  const auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  };

  const bool is_spectral = cfg.model == ModelKind::SpectralRnn;
  SpectralRnnCell scell;
  VanillaRnnCell vcell;
  CellGrad sgrad;
  VanillaGrad vgrad;
  SpectralCoeffs coeffs;
  if (is_spectral) {
    scell = SpectralRnnCell::create(cfg.hidden, cfg.input_dim(), cfg.output_dim(), cfg.m1, cfg.m2,
                                    cfg.radius, cfg.sigma_star, cfg.act, cfg.leak, init_rng);
    sgrad.init(scell);
  } else {
    vcell = VanillaRnnCell::create(cfg.hidden, cfg.input_dim(), cfg.output_dim(), cfg.act, cfg.leak,
                                   init_rng);
    vgrad.init(vcell);
  }
  std::vector<ParamView> views =
      is_spectral ? collect_params(scell, sgrad) : collect_params(vcell, vgrad);

  auto spectral_step = [&](const VectorXd& h, const VectorXd& x, CellTape& tape, FlopCounter* f) {
    return rnn_step(scell, h, x, tape, coeffs, f);
  };
  auto spectral_bptt = [&](const std::vector<CellTape>& tapes, const std::vector<VectorXd>& dys,
                           CellGrad& g, std::vector<double>* norms, FlopCounter* f) {
    rnn_backward_through_time(scell, coeffs, tapes, dys, g, norms, f);
  };
  auto vanilla_fwd = [&](const VectorXd& h, const VectorXd& x, VanillaTape& tape, FlopCounter* f) {
    return vanilla_step(vcell, h, x, tape, f);
  };
  auto vanilla_bptt = [&](const std::vector<VanillaTape>& tapes, const std::vector<VectorXd>& dys,
                          VanillaGrad& g, std::vector<double>* norms, FlopCounter* f) {
    vanilla_backward_through_time(vcell, tapes, dys, g, norms, f);
  };
  detail::BatchRunner<SpectralRnnCell, CellTape, CellGrad, decltype(spectral_step),
                      decltype(spectral_bptt)>
      srunner(cfg, scell, sgrad, spectral_step, spectral_bptt);
  detail::BatchRunner<VanillaRnnCell, VanillaTape, VanillaGrad, decltype(vanilla_fwd),
                      decltype(vanilla_bptt)>
      vrunner(cfg, vcell, vgrad, vanilla_fwd, vanilla_bptt);

  auto run_iteration = [&](double* h0_sq, double* hT_sq) -> double {
    if (is_spectral) coeffs = spectral_coeffs(scell.W, &fc);
    if (is_spectral)
      sgrad.set_zero();
    else
      vgrad.set_zero();
    if (cfg.task == "addition") {
      AdditionBatch batch = gen_addition(cfg.seq_len, cfg.batch, data_rng);
      return is_spectral ? srunner.run_addition(batch, h0_sq, hT_sq, &fc)
                         : vrunner.run_addition(batch, h0_sq, hT_sq, &fc);
    }
    CopyBatch batch = gen_copy(cfg.lag, cfg.batch, data_rng);
    return is_spectral ? srunner.run_copy(batch, h0_sq, hT_sq, &fc)
                       : vrunner.run_copy(batch, h0_sq, hT_sq, &fc);
  };

  auto eval_once = [&]() -> double {
    if (is_spectral) {
      SpectralCoeffs ec = spectral_coeffs(scell.W);
      CellTape tape;
      return evaluate_model(cfg, [&](VectorXd& h, const VectorXd& x) {
        VectorXd y = rnn_step(scell, h, x, tape, ec, nullptr);
        h = tape.h;
        return y;
      }, eval_rng);
    }
    VanillaTape tape;
    return evaluate_model(cfg, [&](VectorXd& h, const VectorXd& x) {
      VectorXd y = vanilla_step(vcell, h, x, tape, nullptr);
      h = tape.h;
      return y;
    }, eval_rng);
  };

  auto current_margin = [&]() -> double {
    if (is_spectral) return spectral_margin(scell.W);
    const VectorXd sv = jacobi_svd(vcell.W).sigma;
    return (sv.array() - 1.0).abs().maxCoeff();
  };

  auto emit_record = [&](long iter, double loss, double h0_sq, double hT_sq) {
    MetricRecord rec;
    rec.iter = iter;
    rec.loss = loss;
    rec.eval_metric = eval_once();
    rec.grad_norm_h0 = std::sqrt(h0_sq);
    rec.grad_norm_hT = std::sqrt(hT_sq);
    rec.spectral_margin = current_margin();
    rec.flops = static_cast<double>(fc.total());
    rec.seconds = elapsed();
    result.records.push_back(rec);
    if (hooks.on_record)
      hooks.on_record(rec, is_spectral ? &scell : nullptr, is_spectral ? nullptr : &vcell);
  };

  // Iteration 0: probe the initial model (no update) so a zero-iteration
  // budget still yields one record.
  {
    double h0_sq = 0.0, hT_sq = 0.0;
    const double loss = run_iteration(&h0_sq, &hT_sq);
    if (!std::isfinite(loss)) throw DivergenceError("train: non-finite loss at iteration 0");
    emit_record(0, loss, h0_sq, hT_sq);
  }

  AdamOptimizer adam({cfg.lr, 0.9, 0.999, 1e-8});
  bool stop = false;
  for (long iter = 1; iter <= cfg.iters && !stop; ++iter) {
    double h0_sq = 0.0, hT_sq = 0.0;
    const double loss = run_iteration(&h0_sq, &hT_sq);
    if (!std::isfinite(loss))
      throw DivergenceError("train: non-finite loss at iteration " + std::to_string(iter));
    if (is_spectral && cfg.sigma_penalty > 0.0) {
      // d/d sigma_hat of c * ||sigma - 1||^2, chained through Eq. 4.
      for (int i = 0; i < scell.W.min_dim(); ++i)
        sgrad.w.d_sigma_hat[i] +=
            2.0 * cfg.sigma_penalty * (coeffs.sigma[i] - 1.0) * coeffs.dsigma_dhat[i];
    }
    if (cfg.clip > 0.0) {
      const double norm = grad_global_norm(views);
      if (norm > cfg.clip) scale_grads(views, cfg.clip / norm);
    }
    const long epoch = (iter - 1) / cfg.epoch_iters;
    adam.step(views, cfg.lr * std::pow(cfg.decay, static_cast<double>(epoch)));
    if (iter % cfg.record_every == 0 || iter == cfg.iters) {
      emit_record(iter, loss, h0_sq, hT_sq);
      if (cfg.early_stop_eval > 0.0 && result.records.back().eval_metric <= cfg.early_stop_eval)
        stop = true;
    }
  }

  result.spectral = std::move(scell);
  result.vanilla = std::move(vcell);
  return result;
}

// --- checkpoints -------------------------------------------------------------------

inline void save_dense_block(std::ostream& os, const char* name, const MatrixXd& m) {
  os << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
  os.precision(17);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) os << m(i, j) << (j + 1 == m.cols() ? '\n' : ' ');
  }
}

inline MatrixXd load_dense_block(std::istream& is, const std::string& expect) {
  std::string name;
  long rows = 0, cols = 0;
  is >> name >> rows >> cols;
  if (!is || name != expect) throw std::runtime_error("checkpoint: expected block " + expect);
  MatrixXd m(rows, cols);
  for (long i = 0; i < rows; ++i)
    for (long j = 0; j < cols; ++j)
      if (!(is >> m(i, j))) throw std::runtime_error("checkpoint: short block " + expect);
  is.ignore();  // trailing newline
  return m;
}

inline void save_checkpoint(std::ostream& os, const SpectralRnnCell& cell) {
  os << "spectral-rnn-checkpoint-v1\n";
  os << "activation " << activation_name(cell.act) << ' ' << cell.leak << '\n';
  save_spectral_matrix(os, cell.W);
  save_dense_block(os, "M", cell.M);
  save_dense_block(os, "Y", cell.Y);
  save_dense_block(os, "b", cell.b);
}

inline SpectralRnnCell load_spectral_checkpoint(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "spectral-rnn-checkpoint-v1")
    throw std::runtime_error("checkpoint: bad magic");
  SpectralRnnCell cell;
  std::string tok, act_name;
  is >> tok >> act_name >> cell.leak;
  if (tok != "activation") throw std::runtime_error("checkpoint: missing activation");
  cell.act = activation_from_name(act_name);
  is.ignore();
  cell.W = load_spectral_matrix(is);
  cell.M = load_dense_block(is, "M");
  cell.Y = load_dense_block(is, "Y");
  cell.b = load_dense_block(is, "b");
  cell.validate();
  return cell;
}

inline void save_checkpoint(std::ostream& os, const VanillaRnnCell& cell) {
  os << "vanilla-rnn-checkpoint-v1\n";
  os << "activation " << activation_name(cell.act) << ' ' << cell.leak << '\n';
  save_dense_block(os, "W", cell.W);
  save_dense_block(os, "M", cell.M);
  save_dense_block(os, "Y", cell.Y);
  save_dense_block(os, "b", cell.b);
}

inline VanillaRnnCell load_vanilla_checkpoint(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "vanilla-rnn-checkpoint-v1")
    throw std::runtime_error("checkpoint: bad magic");
  VanillaRnnCell cell;
  std::string tok, act_name;
  is >> tok >> act_name >> cell.leak;
  if (tok != "activation") throw std::runtime_error("checkpoint: missing activation");
  cell.act = activation_from_name(act_name);
  is.ignore();
  cell.W = load_dense_block(is, "W");
  cell.M = load_dense_block(is, "M");
  cell.Y = load_dense_block(is, "Y");
  cell.b = load_dense_block(is, "b");
  return cell;
}

}  // namespace spectral
