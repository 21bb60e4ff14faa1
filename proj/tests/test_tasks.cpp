#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <sstream>

#include "spectral/tasks.hpp"

using namespace spectral;
using Catch::Approx;

TEST_CASE("addition batches satisfy their structural invariants") {
  std::mt19937_64 rng(1);
  for (int seq_len : {2, 5, 30, 101}) {
    AdditionBatch batch = gen_addition(seq_len, 16, rng);
    for (int b = 0; b < batch.batch; ++b) {
      int ones = 0;
      double dot = 0.0;
      for (int t = 0; t < seq_len; ++t) {
        const double m = batch.markers(t, b);
        REQUIRE((m == 0.0 || m == 1.0));
        ones += m == 1.0 ? 1 : 0;
        REQUIRE(batch.values(t, b) >= 0.0);
        REQUIRE(batch.values(t, b) <= 1.0);
        dot += batch.values(t, b) * batch.markers(t, b);
      }
      REQUIRE(ones == 2);
      REQUIRE(batch.targets[b] == dot);  // exact, by construction
      REQUIRE(batch.targets[b] >= 0.0);
      REQUIRE(batch.targets[b] <= 2.0);
      // one marker per half
      double first_half = 0.0;
      for (int t = 0; t < seq_len / 2; ++t) first_half += batch.markers(t, b);
      REQUIRE(first_half == 1.0);
    }
  }
  REQUIRE_THROWS_AS(gen_addition(1, 4, rng), std::invalid_argument);
}

TEST_CASE("addition generation is reproducible per seed") {
  std::mt19937_64 a(42), b(42), c(43);
  AdditionBatch x = gen_addition(20, 8, a);
  AdditionBatch y = gen_addition(20, 8, b);
  AdditionBatch z = gen_addition(20, 8, c);
  REQUIRE(x.values == y.values);
  REQUIRE(x.markers == y.markers);
  REQUIRE(x.targets == y.targets);
  REQUIRE(x.values != z.values);
}

TEST_CASE("constant-1 predictor attains the 1/6 baseline empirically") {
  REQUIRE(addition_baseline_mse() == Approx(1.0 / 6.0));
  std::mt19937_64 rng(7);
  double mse = 0.0;
  const int total = 1000000, chunk = 10000;
  for (int i = 0; i < total / chunk; ++i) {
    AdditionBatch batch = gen_addition(2, chunk, rng);
    mse += (batch.targets.array() - 1.0).square().sum();
  }
  mse /= total;
  REQUIRE(mse == Approx(1.0 / 6.0).margin(1e-3));
}

TEST_CASE("copy batches satisfy their structural invariants") {
  std::mt19937_64 rng(2);
  for (int lag : {1, 10, 50, 120}) {
    CopyBatch batch = gen_copy(lag, 12, rng);
    const int len = batch.seq_len();
    REQUIRE(len == lag + 20);
    for (int b = 0; b < batch.batch; ++b) {
      int delimiters = 0;
      for (int t = 0; t < len; ++t) {
        REQUIRE(batch.inputs(t, b) >= 0);
        REQUIRE(batch.inputs(t, b) < kCopyAlphabet);
        REQUIRE(batch.targets(t, b) >= 0);
        REQUIRE(batch.targets(t, b) < kCopyAlphabet);
        if (batch.inputs(t, b) == kCopyDelimiter) {
          ++delimiters;
          REQUIRE(t == lag + kCopyPayloadLen - 1);  // one-based position T + 10
        }
      }
      REQUIRE(delimiters == 1);
      for (int t = 0; t < kCopyPayloadLen; ++t) {
        REQUIRE(batch.inputs(t, b) < kCopyPayloadSymbols);
        REQUIRE(batch.targets(len - kCopyPayloadLen + t, b) == batch.inputs(t, b));
      }
      for (int t = kCopyPayloadLen; t < len; ++t)
        if (t != lag + kCopyPayloadLen - 1) REQUIRE(batch.inputs(t, b) == kCopyBlank);
      for (int t = 0; t < len - kCopyPayloadLen; ++t) REQUIRE(batch.targets(t, b) == kCopyBlank);
    }
  }
  REQUIRE_THROWS_AS(gen_copy(0, 4, rng), std::invalid_argument);
}

TEST_CASE("copy generation is reproducible per seed") {
  std::mt19937_64 a(9), b(9);
  CopyBatch x = gen_copy(30, 6, a);
  CopyBatch y = gen_copy(30, 6, b);
  REQUIRE(x.inputs == y.inputs);
  REQUIRE(x.targets == y.targets);
}

TEST_CASE("memoryless copy baseline equals 10 ln(8) / (T + 20)") {
  REQUIRE(copy_baseline_ce(100) == Approx(10.0 * std::log(8.0) / 120.0).margin(1e-15));
  REQUIRE(copy_baseline_ce(100) == Approx(0.1733).margin(2e-4));

  // The memoryless strategy scores ln(8) on each payload target and 0 on
  // blanks, for every sample; the empirical mean must agree.
  std::mt19937_64 rng(11);
  const int lag = 50, samples = 100000, chunk = 10000;
  double ce = 0.0;
  for (int i = 0; i < samples / chunk; ++i) {
    CopyBatch batch = gen_copy(lag, chunk, rng);
    for (int b = 0; b < batch.batch; ++b) {
      double sample_ce = 0.0;
      for (int t = 0; t < batch.seq_len(); ++t)
        sample_ce += batch.targets(t, b) == kCopyBlank ? 0.0 : std::log(8.0);
      ce += sample_ce / batch.seq_len();
    }
  }
  ce /= samples;
  REQUIRE(ce == Approx(copy_baseline_ce(lag)).margin(1e-2));
}

TEST_CASE("csv dumps are one sample per line") {
  std::mt19937_64 rng(3);
  AdditionBatch ab = gen_addition(4, 3, rng);
  std::stringstream sa;
  dump_csv(sa, ab);
  int lines = 0;
  for (std::string line; std::getline(sa, line);) {
    ++lines;
    REQUIRE(std::count(line.begin(), line.end(), ',') == 2 * 4);
  }
  REQUIRE(lines == 3);

  CopyBatch cb = gen_copy(2, 2, rng);
  std::stringstream sc;
  dump_csv(sc, cb);
  lines = 0;
  for (std::string line; std::getline(sc, line);) {
    ++lines;
    REQUIRE(std::count(line.begin(), line.end(), ',') == 2 * cb.seq_len() - 1);
  }
  REQUIRE(lines == 2);
}
