#pragma once

#include <Eigen/Core>

#include <cmath>
#include <ostream>
#include <random>
#include <stdexcept>

namespace spectral {

// --- addition task --------------------------------------------------------------
//
// Each sample is a length-L sequence of 2-vectors: a value row drawn uniformly
// from [0, 1] and a marker row that is 1 at exactly two positions, one in each
// half of the sequence. The target is the sum of the two marked values.

struct AdditionBatch {
  int seq_len = 0;
  int batch = 0;
  Eigen::MatrixXd values;   // seq_len x batch
  Eigen::MatrixXd markers;  // seq_len x batch
  Eigen::VectorXd targets;  // batch

  Eigen::Vector2d input(int t, int b) const {
    return Eigen::Vector2d(values(t, b), markers(t, b));
  }
};

inline AdditionBatch gen_addition(int seq_len, int batch, std::mt19937_64& rng) {
  if (seq_len < 2) throw std::invalid_argument("gen_addition: sequence length must be >= 2");
  if (batch < 1) throw std::invalid_argument("gen_addition: batch must be positive");
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::uniform_int_distribution<int> first_half(0, seq_len / 2 - 1);
  std::uniform_int_distribution<int> second_half(seq_len / 2, seq_len - 1);
  AdditionBatch out;
  out.seq_len = seq_len;
  out.batch = batch;
  out.values.resize(seq_len, batch);
  out.markers = Eigen::MatrixXd::Zero(seq_len, batch);
  out.targets.resize(batch);
  for (int b = 0; b < batch; ++b) {
    for (int t = 0; t < seq_len; ++t) out.values(t, b) = unif(rng);
    const int p1 = first_half(rng);
    const int p2 = second_half(rng);
    out.markers(p1, b) = 1.0;
    out.markers(p2, b) = 1.0;
    out.targets[b] = out.values(p1, b) + out.values(p2, b);
  }
  return out;
}

// MSE of the memoryless strategy that always predicts 1: Var(X + Y) = 1/6.
inline double addition_baseline_mse() { return 1.0 / 6.0; }

// --- copy task ------------------------------------------------------------------
//
// Alphabet {a_0..a_9}; a_8 is blank, a_9 the delimiter. A sample of lag T has
// length T + 20: a 10-symbol payload from {a_0..a_7}, then blanks, with the
// delimiter one-based at position T + 10. Targets are blank except the final
// 10 positions, which replay the payload.

inline constexpr int kCopyAlphabet = 10;
inline constexpr int kCopyPayloadSymbols = 8;
inline constexpr int kCopyBlank = 8;
inline constexpr int kCopyDelimiter = 9;
inline constexpr int kCopyPayloadLen = 10;

struct CopyBatch {
  int lag = 0;
  int batch = 0;
  Eigen::MatrixXi inputs;   // (lag + 20) x batch, symbols in [0, 9]
  Eigen::MatrixXi targets;  // (lag + 20) x batch

  int seq_len() const { return lag + 20; }
};

inline CopyBatch gen_copy(int lag, int batch, std::mt19937_64& rng) {
  if (lag < 1) throw std::invalid_argument("gen_copy: lag must be >= 1");
  if (batch < 1) throw std::invalid_argument("gen_copy: batch must be positive");
  std::uniform_int_distribution<int> sym(0, kCopyPayloadSymbols - 1);
  CopyBatch out;
  out.lag = lag;
  out.batch = batch;
  const int len = out.seq_len();
  out.inputs = Eigen::MatrixXi::Constant(len, batch, kCopyBlank);
  out.targets = Eigen::MatrixXi::Constant(len, batch, kCopyBlank);
  for (int b = 0; b < batch; ++b) {
    for (int t = 0; t < kCopyPayloadLen; ++t) {
      const int s = sym(rng);
      out.inputs(t, b) = s;
      out.targets(len - kCopyPayloadLen + t, b) = s;
    }
    out.inputs(lag + kCopyPayloadLen - 1, b) = kCopyDelimiter;  // one-based position T + 10
  }
  return out;
}

// Mean per-position cross-entropy of the memoryless strategy: blanks are free,
// the 10 payload symbols cost ln(8) each over a length of T + 20.
inline double copy_baseline_ce(int lag) {
  return kCopyPayloadLen * std::log(static_cast<double>(kCopyPayloadSymbols)) /
         static_cast<double>(lag + 20);
}

// One sample per line; addition: L values, L markers, target; copy: inputs
// then targets as integer symbols.
inline void dump_csv(std::ostream& os, const AdditionBatch& batch) {
  os.precision(17);
  for (int b = 0; b < batch.batch; ++b) {
    for (int t = 0; t < batch.seq_len; ++t) os << batch.values(t, b) << ',';
    for (int t = 0; t < batch.seq_len; ++t) os << batch.markers(t, b) << ',';
    os << batch.targets[b] << '\n';
  }
}

inline void dump_csv(std::ostream& os, const CopyBatch& batch) {
  for (int b = 0; b < batch.batch; ++b) {
    for (int t = 0; t < batch.seq_len(); ++t) os << batch.inputs(t, b) << ',';
    for (int t = 0; t < batch.seq_len(); ++t) {
      os << batch.targets(t, b);
      os << (t + 1 == batch.seq_len() ? '\n' : ',');
    }
  }
}

}  // namespace spectral
