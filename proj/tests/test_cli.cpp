#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "helpers.hpp"
#include "spectral/io.hpp"
#include "spectral/svd_param.hpp"

namespace fs = std::filesystem;
using namespace spectral;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string output;
};

RunResult run_cli(const std::string& args, const std::string& env_prefix = "") {
  static int counter = 0;
  const fs::path out = fs::temp_directory_path() / ("spectral_cli_out_" + std::to_string(counter++));
  const std::string cmd =
      env_prefix + std::string(SPECTRAL_NN_BIN) + " " + args + " > " + out.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream f(out);
  std::stringstream ss;
  ss << f.rdbuf();
  r.output = ss.str();
  fs::remove(out);
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Metrics are reproducible bit for bit except the wall-clock column.
std::string strip_seconds(const std::string& csv) {
  std::stringstream in(csv), out;
  for (std::string line; std::getline(in, line);) {
    const auto last_comma = line.rfind(',');
    out << line.substr(0, last_comma) << '\n';
  }
  return out.str();
}

std::string metrics_modulo_time(const fs::path& dir) { return strip_seconds(slurp(dir / "metrics.csv")); }

fs::path fresh_dir(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() / ("spectral_cli_" + tag);
  fs::remove_all(p);
  return p;
}

const std::string kTinyTrain =
    "train --task addition --seq-len 6 --hidden 8 --m1 3 --m2 3 --batch 4 --iters 20 "
    "--record-every 5 --eval-batch 8 --seed 3";

}  // namespace

TEST_CASE("train writes csv, snapshot, and checkpoint with the documented schema") {
  const fs::path dir = fresh_dir("train");
  RunResult r = run_cli(kTinyTrain + " --outdir " + dir.string());
  REQUIRE(r.exit_code == 0);
  REQUIRE(fs::exists(dir / "metrics.csv"));
  REQUIRE(fs::exists(dir / "config.txt"));
  REQUIRE(fs::exists(dir / "model.txt"));

  std::ifstream csv(dir / "metrics.csv");
  std::string header;
  std::getline(csv, header);
  REQUIRE(header == "iter,loss,eval_metric,grad_norm_h0,spectral_margin,flops,seconds");
  int rows = 0;
  for (std::string line; std::getline(csv, line);) ++rows;
  REQUIRE(rows == 5);  // iters 0, 5, 10, 15, 20
}

TEST_CASE("a zero-iteration run produces exactly one csv record") {
  const fs::path dir = fresh_dir("train0");
  RunResult r = run_cli(
      "train --task addition --seq-len 6 --hidden 8 --m1 2 --m2 2 --batch 4 --iters 0 --outdir " +
      dir.string());
  REQUIRE(r.exit_code == 0);
  std::ifstream csv(dir / "metrics.csv");
  int lines = 0;
  for (std::string line; std::getline(csv, line);) ++lines;
  REQUIRE(lines == 2);  // header + the initial record
}

TEST_CASE("identical flags reproduce the metrics csv byte for byte") {
  const fs::path a = fresh_dir("repro_a"), b = fresh_dir("repro_b");
  REQUIRE(run_cli(kTinyTrain + " --outdir " + a.string()).exit_code == 0);
  REQUIRE(run_cli(kTinyTrain + " --outdir " + b.string()).exit_code == 0);
  const std::string csv_a = metrics_modulo_time(a);
  REQUIRE(csv_a == metrics_modulo_time(b));
  REQUIRE(csv_a.find("nan") == std::string::npos);
}

TEST_CASE("the config snapshot replays the run bit for bit") {
  const fs::path a = fresh_dir("snap_a"), b = fresh_dir("snap_b");
  REQUIRE(run_cli(kTinyTrain + " --outdir " + a.string()).exit_code == 0);
  RunResult replay =
      run_cli("train --config " + (a / "config.txt").string() + " --outdir " + b.string());
  REQUIRE(replay.exit_code == 0);
  REQUIRE(metrics_modulo_time(a) == metrics_modulo_time(b));
}

TEST_CASE("flags override config-file values") {
  const fs::path a = fresh_dir("ovr_a"), b = fresh_dir("ovr_b"), c = fresh_dir("ovr_c");
  REQUIRE(run_cli(kTinyTrain + " --outdir " + a.string()).exit_code == 0);
  // same config but a different seed on the command line
  RunResult other = run_cli("train --config " + (a / "config.txt").string() + " --seed 9 --outdir " +
                            b.string());
  REQUIRE(other.exit_code == 0);
  REQUIRE(metrics_modulo_time(a) != metrics_modulo_time(b));
  // and the override is recorded in the new snapshot
  RunResult replay =
      run_cli("train --config " + (b / "config.txt").string() + " --outdir " + c.string());
  REQUIRE(replay.exit_code == 0);
  REQUIRE(metrics_modulo_time(b) == metrics_modulo_time(c));
}

TEST_CASE("unknown flags and unknown config keys exit with usage") {
  REQUIRE(run_cli("train --no-such-flag 1").exit_code == 1);
  const fs::path dir = fresh_dir("badcfg");
  fs::create_directories(dir);
  std::ofstream(dir / "bad.txt") << "task=addition\nnot-a-key=3\n";
  RunResult r = run_cli("train --config " + (dir / "bad.txt").string());
  REQUIRE(r.exit_code == 1);
}

TEST_CASE("SPECTRAL_NN_SEED is the fallback seed source") {
  const fs::path a = fresh_dir("env_a"), b = fresh_dir("env_b");
  const std::string flags =
      "train --task addition --seq-len 6 --hidden 8 --m1 2 --m2 2 --batch 4 --iters 10 "
      "--record-every 5 --eval-batch 8";
  REQUIRE(run_cli(flags + " --seed 77 --outdir " + a.string()).exit_code == 0);
  REQUIRE(run_cli(flags + " --outdir " + b.string(), "SPECTRAL_NN_SEED=77 ").exit_code == 0);
  REQUIRE(metrics_modulo_time(a) == metrics_modulo_time(b));
}

TEST_CASE("divergence aborts with exit code 2") {
  const fs::path dir = fresh_dir("diverge");
  RunResult r = run_cli(
      "train --task addition --model vanilla --activation identity --seq-len 40 --hidden 8 "
      "--m1 0 --m2 0 --batch 4 --lr 1e12 --iters 50 --record-every 1 --outdir " +
      dir.string());
  REQUIRE(r.exit_code == 2);
  REQUIRE(r.output.find("divergence") != std::string::npos);
}

TEST_CASE("gradcheck exits 0 normally and 3 with an injected corruption") {
  RunResult ok = run_cli("gradcheck --hidden 6 --m1 3 --m2 3 --steps 3 --seed 2");
  REQUIRE(ok.exit_code == 0);
  REQUIRE(ok.output.find("max relative error") != std::string::npos);

  RunResult broken = run_cli("gradcheck --hidden 6 --m1 3 --m2 3 --steps 3 --seed 2 --break-gradient");
  REQUIRE(broken.exit_code == 3);

  RunResult identity = run_cli("gradcheck --activation identity --seed 4");
  REQUIRE(identity.exit_code == 0);

  REQUIRE(run_cli("gradcheck --hidden 20").exit_code == 1);  // n > 8 rejected
}

TEST_CASE("bench prints one row per kernel") {
  RunResult r = run_cli("bench --n 32 --m1 4 --m2 4 --k 16 --reps 5");
  REQUIRE(r.exit_code == 0);
  for (const char* kernel : {"hprod", "hgrad", "spectral_fp", "spectral_bp"})
    REQUIRE(r.output.find(kernel) != std::string::npos);
}

TEST_CASE("decompose round trips matrices from csv") {
  const fs::path dir = fresh_dir("decomp");
  fs::create_directories(dir);

  std::mt19937_64 rng(5);
  {
    std::ofstream f(dir / "identity.csv");
    write_matrix_csv(f, Eigen::MatrixXd::Identity(4, 4));
  }
  RunResult id = run_cli("decompose " + (dir / "identity.csv").string());
  REQUIRE(id.exit_code == 0);
  REQUIRE(fs::exists(dir / "identity.csv.spectral"));

  {
    std::ofstream f(dir / "rand.csv");
    write_matrix_csv(f, spectral::testing::random_matrix(8, 8, rng));
  }
  RunResult rr = run_cli("decompose " + (dir / "rand.csv").string() + " --out " +
                         (dir / "rand.spectral").string());
  REQUIRE(rr.exit_code == 0);

  // the serialized factorization reconstructs the source matrix
  std::ifstream back(dir / "rand.spectral");
  SpectralMatrix sm = load_spectral_matrix(back);
  Eigen::MatrixXd orig = read_matrix_csv_file((dir / "rand.csv").string());
  REQUIRE((materialize(sm) - orig).norm() / orig.norm() < 1e-8);
}

TEST_CASE("decompose rejects rectangular input with exit 1") {
  const fs::path dir = fresh_dir("decomp_rect");
  fs::create_directories(dir);
  std::mt19937_64 rng(6);
  std::ofstream f(dir / "rect.csv");
  write_matrix_csv(f, spectral::testing::random_matrix(3, 4, rng));
  f.close();
  RunResult r = run_cli("decompose " + (dir / "rect.csv").string());
  REQUIRE(r.exit_code == 1);
}

TEST_CASE("decompose suggests parameters and exits 4 on a sigma-range failure") {
  const fs::path dir = fresh_dir("decomp_range");
  fs::create_directories(dir);
  Eigen::MatrixXd w(2, 2);
  w << 2, 0, 0, 0.5;
  std::ofstream f(dir / "w.csv");
  write_matrix_csv(f, w);
  f.close();
  RunResult r = run_cli("decompose " + (dir / "w.csv").string() + " --r 0.1 --sigma-star 1.0");
  REQUIRE(r.exit_code == 4);
  REQUIRE(r.output.find("suggested parameters") != std::string::npos);
}
