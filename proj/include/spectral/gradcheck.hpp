#pragma once

#include <random>
#include <vector>

#include "spectral/diagnostics.hpp"
#include "spectral/training.hpp"

namespace spectral {

// Flat parameter vector of a cell, in the optimizer's enumeration order
// (u slots, v slots, sigma_hat, M, Y, b).
inline VectorXd flatten_params(const SpectralRnnCell& cell) {
  SpectralRnnCell& mut = const_cast<SpectralRnnCell&>(cell);
  CellGrad scratch;
  scratch.init(cell);
  VectorXd theta(cell.trainable_scalar_count());
  long off = 0;
  for (const auto& v : collect_params(mut, scratch)) {
    theta.segment(off, v.size) = Eigen::Map<const VectorXd>(v.param, v.size);
    off += v.size;
  }
  return theta;
}

inline void unflatten_params(SpectralRnnCell& cell, const VectorXd& theta) {
  CellGrad scratch;
  scratch.init(cell);
  long off = 0;
  for (auto& v : collect_params(cell, scratch)) {
    Eigen::Map<VectorXd>(v.param, v.size) = theta.segment(off, v.size);
    off += v.size;
  }
}

inline VectorXd flatten_grads(const SpectralRnnCell& cell, const CellGrad& grad) {
  SpectralRnnCell& mut = const_cast<SpectralRnnCell&>(cell);
  CellGrad& gmut = const_cast<CellGrad&>(grad);
  VectorXd g(cell.trainable_scalar_count());
  long off = 0;
  for (const auto& v : collect_params(mut, gmut)) {
    g.segment(off, v.size) = Eigen::Map<const VectorXd>(v.grad, v.size);
    off += v.size;
  }
  return g;
}

// A frozen rollout scenario for whole-model gradient checking: fixed inputs
// and per-step targets, loss = mean squared error over all steps and samples.
struct GradCheckScenario {
  SpectralRnnCell cell;
  std::vector<std::vector<VectorXd>> xs;       // [sample][step]
  std::vector<std::vector<VectorXd>> targets;  // [sample][step]

  double loss(const SpectralRnnCell& c) const {
    SpectralCoeffs coeffs = spectral_coeffs(c.W);
    CellTape tape;
    double total = 0.0;
    const double scale =
        1.0 / (static_cast<double>(xs.size()) * static_cast<double>(xs.front().size()));
    for (size_t s = 0; s < xs.size(); ++s) {
      VectorXd h = VectorXd::Zero(c.hidden_dim());
      for (size_t t = 0; t < xs[s].size(); ++t) {
        VectorXd y = rnn_step(c, h, xs[s][t], tape, coeffs);
        h = tape.h;
        total += (y - targets[s][t]).squaredNorm() * scale;
      }
    }
    return total;
  }

  CellGrad analytic_grad() const {
    SpectralCoeffs coeffs = spectral_coeffs(cell.W);
    CellGrad grad;
    grad.init(cell);
    const int steps = static_cast<int>(xs.front().size());
    std::vector<CellTape> tapes(static_cast<size_t>(steps));
    std::vector<VectorXd> dys(static_cast<size_t>(steps));
    const double scale = 1.0 / (static_cast<double>(xs.size()) * static_cast<double>(steps));
    for (size_t s = 0; s < xs.size(); ++s) {
      VectorXd h = VectorXd::Zero(cell.hidden_dim());
      for (int t = 0; t < steps; ++t) {
        VectorXd y = rnn_step(cell, h, xs[s][t], tapes[static_cast<size_t>(t)], coeffs);
        h = tapes[static_cast<size_t>(t)].h;
        dys[static_cast<size_t>(t)] = 2.0 * scale * (y - targets[s][static_cast<size_t>(t)]);
      }
      rnn_backward_through_time(cell, coeffs, tapes, dys, grad);
    }
    return grad;
  }

  // Full central-difference sweep over every trainable scalar. When
  // break_gradient is set, one analytic coordinate is doubled so the checker
  // itself can be validated.
  GradCheckResult run(double step = 1e-5, bool break_gradient = false) const {
    VectorXd theta = flatten_params(cell);
    VectorXd analytic = flatten_grads(cell, analytic_grad());
    if (break_gradient && analytic.size() > 0) {
      Eigen::Index worst = 0;
      analytic.cwiseAbs().maxCoeff(&worst);
      analytic[worst] *= 2.0;
    }
    SpectralRnnCell scratch = cell;
    auto f = [&](const VectorXd& t) {
      unflatten_params(scratch, t);
      return loss(scratch);
    };
    return finite_diff_check(f, theta, analytic, step);
  }
};

inline GradCheckScenario make_gradcheck_scenario(int n, int n_in, int n_out, int m1, int m2,
                                                 int steps, int samples, double radius,
                                                 double sigma_star, Activation act,
                                                 std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  GradCheckScenario sc;
  sc.cell =
      SpectralRnnCell::create(n, n_in, n_out, m1, m2, radius, sigma_star, act, /*leak=*/0.01, rng);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto draw = [&](int dim) {
    VectorXd v(dim);
    for (int i = 0; i < dim; ++i) v[i] = gauss(rng);
    return v;
  };
  // Bias moved off zero so its gradient is exercised from a generic point.
  sc.cell.b = 0.1 * draw(n);
  sc.xs.resize(static_cast<size_t>(samples));
  sc.targets.resize(static_cast<size_t>(samples));
  for (int s = 0; s < samples; ++s) {
    for (int t = 0; t < steps; ++t) {
      sc.xs[static_cast<size_t>(s)].push_back(draw(n_in));
      sc.targets[static_cast<size_t>(s)].push_back(draw(n_out));
    }
  }
  return sc;
}

}  // namespace spectral
