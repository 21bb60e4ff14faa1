#pragma once

#include <array>
#include <cstdint>

namespace spectral {

// Kernel scopes for flop accounting. One multiply = 1 flop, one add = 1 flop;
// divisions, comparisons and moves are not counted. Transcendentals (exp, tanh)
// are tallied as 1 flop per element under Loss/Dense scopes.
enum class Kernel : int {
  Hprod = 0,
  Hgrad,
  SpectralFp,
  SpectralBp,
  Norms,
  Dense,
  Loss,
  Other,
  kCount
};

inline const char* kernel_name(Kernel k) {
  switch (k) {
    case Kernel::Hprod: return "hprod";
    case Kernel::Hgrad: return "hgrad";
    case Kernel::SpectralFp: return "spectral_fp";
    case Kernel::SpectralBp: return "spectral_bp";
    case Kernel::Norms: return "norms";
    case Kernel::Dense: return "dense";
    case Kernel::Loss: return "loss";
    default: return "other";
  }
}

// Scope-local multiply/add tally. Owned by the caller; kernels take an
// optional pointer so instrumentation can be dropped entirely in hot paths
// that do not need it.
class FlopCounter {
 public:
  FlopCounter() { reset(); }

  void add(Kernel k, std::uint64_t flops) {
    by_kernel_[static_cast<int>(k)] += flops;
  }

  std::uint64_t of(Kernel k) const { return by_kernel_[static_cast<int>(k)]; }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto v : by_kernel_) t += v;
    return t;
  }

  void reset() { by_kernel_.fill(0); }

  // Merge tallies from a sibling scope (e.g. per-thread counters).
  void merge(const FlopCounter& other) {
    for (int i = 0; i < static_cast<int>(Kernel::kCount); ++i)
      by_kernel_[i] += other.by_kernel_[i];
  }

 private:
  std::array<std::uint64_t, static_cast<int>(Kernel::kCount)> by_kernel_;
};

inline void count_flops(FlopCounter* fc, Kernel k, std::uint64_t flops) {
  if (fc) fc->add(k, flops);
}

}  // namespace spectral
