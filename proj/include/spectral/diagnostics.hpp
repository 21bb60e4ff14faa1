#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "spectral/layers.hpp"
#include "spectral/svd_oracle.hpp"

namespace spectral {

// --- finite-difference gradient checking ---------------------------------------

struct GradCheckEntry {
  int index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

struct GradCheckResult {
  double max_rel_err = 0.0;
  GradCheckEntry worst;
  std::vector<GradCheckEntry> entries;  // one per coordinate
};

// Central differences against an analytic gradient. Relative error uses
// max(|analytic|, |numeric|, 1e-8) as denominator.
inline GradCheckResult finite_diff_check(const std::function<double(const VectorXd&)>& f,
                                         const VectorXd& params, const VectorXd& analytic,
                                         double step = 1e-5) {
  if (params.size() != analytic.size())
    throw std::invalid_argument("finite_diff_check: analytic gradient size mismatch");
  GradCheckResult res;
  res.entries.reserve(static_cast<size_t>(params.size()));
  VectorXd theta = params;
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const double saved = theta[i];
    theta[i] = saved + step;
    const double fp = f(theta);
    theta[i] = saved - step;
    const double fm = f(theta);
    theta[i] = saved;
    GradCheckEntry e;
    e.index = static_cast<int>(i);
    e.numeric = (fp - fm) / (2.0 * step);
    e.analytic = analytic[i];
    const double denom = std::max({std::abs(e.analytic), std::abs(e.numeric), 1e-8});
    e.rel_err = std::abs(e.analytic - e.numeric) / denom;
    if (e.rel_err >= res.max_rel_err) {
      res.max_rel_err = e.rel_err;
      res.worst = e;
    }
    res.entries.push_back(e);
  }
  return res;
}

// Plain-text report: coordinate, analytic, numeric, rel-err. Rows are the
// worst offenders, largest first.
inline void write_gradcheck_report(std::ostream& os, const GradCheckResult& res, size_t max_rows = 10) {
  std::vector<GradCheckEntry> sorted = res.entries;
  std::sort(sorted.begin(), sorted.end(),
            [](const GradCheckEntry& a, const GradCheckEntry& b) { return a.rel_err > b.rel_err; });
  os << std::left << std::setw(12) << "coordinate" << std::setw(24) << "analytic" << std::setw(24)
     << "numeric" << "rel-err\n";
  os.precision(12);
  for (size_t i = 0; i < std::min(max_rows, sorted.size()); ++i) {
    const auto& e = sorted[i];
    os << std::left << std::setw(12) << e.index << std::setw(24) << e.analytic << std::setw(24)
       << e.numeric << e.rel_err << '\n';
  }
  os << "max relative error: " << res.max_rel_err << " at coordinate " << res.worst.index << '\n';
}

// --- parameter and flop counting ------------------------------------------------

enum class ModelKind { SpectralRnn, VanillaRnn };

inline ModelKind model_kind_from_name(const std::string& name) {
  if (name == "spectral_rnn" || name == "spectral") return ModelKind::SpectralRnn;
  if (name == "vanilla_rnn" || name == "vanilla") return ModelKind::VanillaRnn;
  throw std::invalid_argument("unknown model kind: " + name);
}

inline const char* model_kind_name(ModelKind k) {
  return k == ModelKind::SpectralRnn ? "spectral_rnn" : "vanilla_rnn";
}

// Closed-form trainable-scalar counts for one recurrent cell.
inline long param_count(int n, int n_in, int n_out, int m1, int m2, ModelKind kind) {
  if (n < 1 || n_in < 1 || n_out < 1) throw std::invalid_argument("param_count: bad dimensions");
  const long nl = n, nil = n_in, nyl = n_out, m1l = m1, m2l = m2;
  if (kind == ModelKind::VanillaRnn) return (nyl + nil + nl + 1) * nl;
  return (nyl + nil + m1l + m2l + 2) * nl - (m1l * m1l + m2l * m2l - m1l - m2l) / 2;
}

// Closed forms from the kernel complexity table. The quadratic corrections
// come from reflector lengths shrinking below n.
inline double predicted_hprod_flops(int k) { return 4.0 * k; }

inline double predicted_hgrad_flops(int n, int k) { return 3.0 * n + 6.0 * k; }

inline double predicted_spectral_fp_flops(int n, int m1, int m2) {
  return 4.0 * n * (m1 + m2) - 2.0 * m1 * m1 - 2.0 * m2 * m2;
}

inline double predicted_spectral_bp_flops(int n, int m1, int m2) {
  return 6.0 * n * (m1 + m2) - 1.5 * m1 * m1 - 1.5 * m2 * m2;
}

// --- generalization bound -------------------------------------------------------

// Norm data for the bound: spectral and Frobenius norms of the three weight
// matrices, the input bound B, depth t, width n and classification margin.
struct BoundInputs {
  double w_spec = 0.0, m_spec = 0.0, y_spec = 0.0;
  double w_frob = 0.0, m_frob = 0.0, y_frob = 0.0;
  double input_bound = 0.0;
  long depth = 1;
  long width = 1;
  double margin = 1.0;

  void validate() const {
    if (w_spec < 0 || m_spec < 0 || y_spec < 0 || w_frob < 0 || m_frob < 0 || y_frob < 0 ||
        input_bound < 0)
      throw std::invalid_argument("BoundInputs: norms must be nonnegative");
    if (margin <= 0) throw std::invalid_argument("BoundInputs: margin must be positive");
    if (depth < 1 || width < 1) throw std::invalid_argument("BoundInputs: depth, width >= 1");
  }

  static BoundInputs from_cell(const SpectralRnnCell& cell, double input_bound, long depth,
                               double margin) {
    BoundInputs b;
    const MatrixXd w = materialize(cell.W);
    b.w_spec = spectral_norm(w);
    b.m_spec = spectral_norm(cell.M);
    b.y_spec = spectral_norm(cell.Y);
    b.w_frob = w.norm();
    b.m_frob = cell.M.norm();
    b.y_frob = cell.Y.norm();
    b.input_bound = input_bound;
    b.depth = depth;
    b.width = cell.hidden_dim();
    b.margin = margin;
    return b;
  }
};

// B(w) = B^2 t^2 n ln(n) max(||W||^{2t-2}, 1) ||M||^2 ||Y||^2
//        * (t^2 ||W||_F^2 + ||M||_F^2/||M||^2 + ||Y||_F^2/||Y||^2) / margin^2.
// Degenerate at n = 1 where ln(n) = 0; returns 0 there.
inline double generalization_bound(const BoundInputs& in) {
  in.validate();
  if (in.width == 1) return 0.0;
  const double t = static_cast<double>(in.depth);
  const double n = static_cast<double>(in.width);
  const double wmax = std::max(std::pow(in.w_spec, 2.0 * t - 2.0), 1.0);
  const double paren = t * t * in.w_frob * in.w_frob +
                       (in.m_frob * in.m_frob) / (in.m_spec * in.m_spec) +
                       (in.y_frob * in.y_frob) / (in.y_spec * in.y_spec);
  return in.input_bound * in.input_bound * t * t * n * std::log(n) * wmax * in.m_spec * in.m_spec *
         in.y_spec * in.y_spec * paren / (in.margin * in.margin);
}

// Specialization with the transition norm replaced by its structural cap
// 1 + r: B^2 t^4 n^2 ln(n) (1+r)^{2t} ||M||^2 ||Y||^2 / margin^2.
inline double corollary1_bound(double input_bound, long depth, long width, double radius,
                               double m_spec, double y_spec, double margin) {
  if (margin <= 0) throw std::invalid_argument("corollary1_bound: margin must be positive");
  if (width == 1) return 0.0;
  const double t = static_cast<double>(depth);
  const double n = static_cast<double>(width);
  return input_bound * input_bound * t * t * t * t * n * n * std::log(n) *
         std::pow(1.0 + radius, 2.0 * t) * m_spec * m_spec * y_spec * y_spec / (margin * margin);
}

// --- hidden-state norm bound ----------------------------------------------------

struct Lemma4Result {
  bool ok = true;
  double max_ratio = 0.0;
};

// Checks ||h^(i)|| <= B ||M|| i max(||W||^{i-1}, 1) along a rollout with zero
// initial state and zero bias (the bound's setting). Activation must be
// 1-Lipschitz and fix 0 (relu / leaky-relu with slope <= 1).
inline Lemma4Result lemma4_check(const SpectralRnnCell& cell, const std::vector<VectorXd>& inputs,
                                 double input_bound) {
  if (cell.act != Activation::Relu && cell.act != Activation::LeakyRelu)
    throw std::invalid_argument("lemma4_check: activation must be relu or leaky_relu");
  if (cell.act == Activation::LeakyRelu && cell.leak > 1.0)
    throw std::invalid_argument("lemma4_check: leak slope must be <= 1");
  if (cell.b.norm() != 0.0)
    throw std::invalid_argument("lemma4_check: the bound assumes zero bias");
  const double w_spec = spectral_norm(materialize(cell.W));
  const double m_spec = spectral_norm(cell.M);
  Lemma4Result res;
  SpectralCoeffs coeffs = spectral_coeffs(cell.W);
  CellTape tape;
  VectorXd h = VectorXd::Zero(cell.hidden_dim());
  for (size_t i = 0; i < inputs.size(); ++i) {
    if (inputs[i].norm() > input_bound * (1.0 + 1e-12))
      throw std::invalid_argument("lemma4_check: input exceeds the stated bound");
    rnn_step(cell, h, inputs[i], tape, coeffs);
    h = tape.h;
    const double layer = static_cast<double>(i + 1);
    const double bound =
        input_bound * m_spec * layer * std::max(std::pow(w_spec, layer - 1.0), 1.0);
    const double ratio = bound > 0.0 ? h.norm() / bound : (h.norm() > 0.0 ? HUGE_VAL : 0.0);
    res.max_ratio = std::max(res.max_ratio, ratio);
  }
  res.ok = res.max_ratio <= 1.0 + 1e-12;
  return res;
}

}  // namespace spectral
