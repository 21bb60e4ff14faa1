// Command-line harness: train | gradcheck | bench | decompose.
//
// Exit codes: 0 success, 1 usage or invalid input, 2 divergence abort,
// 3 gradient check over threshold, 4 sigma-range failure in decompose.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "spectral/diagnostics.hpp"
#include "spectral/gradcheck.hpp"
#include "spectral/io.hpp"
#include "spectral/svd_param.hpp"
#include "spectral/tasks.hpp"
#include "spectral/training.hpp"

namespace fs = std::filesystem;
using namespace spectral;

namespace {

struct TrainFlags {
  TrainConfig cfg;
  std::string task = "addition";
  std::string activation = "leaky_relu";
  std::string model = "spectral";
  std::string outdir = "run";
  std::string dump_first_batch;
  std::string config_path;
};

// key=value config support: flags override file values, unknown keys are
// rejected. Each option registers a setter so the file can fill in whatever
// the command line left untouched.
struct ConfigBinding {
  CLI::Option* opt = nullptr;
  std::function<void(const std::string&)> set;
};

class ConfigKeys {
 public:
  template <typename T>
  void bind(const std::string& key, CLI::Option* opt, T& ref) {
    bindings_[key] = {opt, [&ref, key](const std::string& text) {
                        std::istringstream ss(text);
                        ss >> ref;
                        if (ss.fail() || !ss.eof())
                          throw CLI::ValidationError("--config", "bad value for " + key + ": " + text);
                      }};
  }

  void bind_string(const std::string& key, CLI::Option* opt, std::string& ref) {
    bindings_[key] = {opt, [&ref](const std::string& text) { ref = text; }};
  }

  // Returns the set of keys applied from the file.
  std::set<std::string> apply_file(const std::string& path) const {
    std::ifstream f(path);
    if (!f) throw CLI::ValidationError("--config", "cannot open " + path);
    std::set<std::string> applied;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
      ++lineno;
      if (line.empty() || line[0] == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw CLI::ValidationError("--config", "line " + std::to_string(lineno) + " is not key=value");
      const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
      const auto it = bindings_.find(key);
      if (it == bindings_.end())
        throw CLI::ValidationError("--config", "unknown key '" + key + "'");
      if (it->second.opt->count() > 0) continue;  // command line wins
      it->second.set(value);
      applied.insert(key);
    }
    return applied;
  }

 private:
  std::map<std::string, ConfigBinding> bindings_;
};

std::uint64_t env_seed_fallback(std::uint64_t current) {
  if (const char* env = std::getenv("SPECTRAL_NN_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw CLI::ValidationError("SPECTRAL_NN_SEED", "not a valid seed");
    }
  }
  return current;
}

void write_config_snapshot(const fs::path& path, const TrainFlags& f) {
  std::ofstream os(path);
  os.precision(17);
  os << "task=" << f.task << '\n';
  os << "seq-len=" << f.cfg.seq_len << '\n';
  os << "lag=" << f.cfg.lag << '\n';
  os << "hidden=" << f.cfg.hidden << '\n';
  os << "m1=" << f.cfg.m1 << '\n';
  os << "m2=" << f.cfg.m2 << '\n';
  os << "r=" << f.cfg.radius << '\n';
  os << "sigma-star=" << f.cfg.sigma_star << '\n';
  os << "activation=" << f.activation << '\n';
  os << "leak=" << f.cfg.leak << '\n';
  os << "lr=" << f.cfg.lr << '\n';
  os << "decay=" << f.cfg.decay << '\n';
  os << "epoch-iters=" << f.cfg.epoch_iters << '\n';
  os << "batch=" << f.cfg.batch << '\n';
  os << "iters=" << f.cfg.iters << '\n';
  os << "seed=" << f.cfg.seed << '\n';
  os << "model=" << f.model << '\n';
  os << "record-every=" << f.cfg.record_every << '\n';
  os << "eval-batch=" << f.cfg.eval_batch << '\n';
  os << "clip=" << f.cfg.clip << '\n';
  os << "early-stop-eval=" << f.cfg.early_stop_eval << '\n';
  os << "sigma-penalty=" << f.cfg.sigma_penalty << '\n';
}

void add_train_options(CLI::App* t, TrainFlags& f, ConfigKeys& keys) {
  auto opt = [&](const char* name, auto& ref, const char* desc) {
    CLI::Option* o = t->add_option(name, ref, desc);
    keys.bind(std::string(name).substr(2), o, ref);
    return o;
  };
  auto opt_str = [&](const char* name, std::string& ref, const char* desc) {
    CLI::Option* o = t->add_option(name, ref, desc);
    keys.bind_string(std::string(name).substr(2), o, ref);
    return o;
  };
  opt_str("--task", f.task, "addition | copy")->check(CLI::IsMember({"addition", "copy"}));
  opt("--seq-len", f.cfg.seq_len, "addition sequence length L");
  opt("--lag", f.cfg.lag, "copy time lag T");
  opt("--hidden", f.cfg.hidden, "hidden dimension n");
  opt("--m1", f.cfg.m1, "U-side reflector count");
  opt("--m2", f.cfg.m2, "V-side reflector count");
  opt("--r", f.cfg.radius, "singular-value radius");
  opt("--sigma-star", f.cfg.sigma_star, "singular-value center");
  opt_str("--activation", f.activation, "identity|relu|leaky_relu|sigmoid|tanh");
  opt("--leak", f.cfg.leak, "leaky-relu slope");
  opt("--lr", f.cfg.lr, "Adam learning rate");
  opt("--decay", f.cfg.decay, "learning-rate factor per epoch");
  opt("--epoch-iters", f.cfg.epoch_iters, "iterations per epoch for decay");
  opt("--batch", f.cfg.batch, "batch size");
  opt("--iters", f.cfg.iters, "iteration budget");
  opt_str("--model", f.model, "spectral | vanilla")
      ->check(CLI::IsMember({"spectral", "vanilla", "spectral_rnn", "vanilla_rnn"}));
  opt("--record-every", f.cfg.record_every, "metric cadence in iterations");
  opt("--eval-batch", f.cfg.eval_batch, "evaluation batch size");
  opt("--clip", f.cfg.clip, "global-norm gradient clip (0 = off)");
  opt("--early-stop-eval", f.cfg.early_stop_eval,
      "stop once the eval metric falls to this value (0 = off)");
  opt("--sigma-penalty", f.cfg.sigma_penalty, "coefficient on ||sigma - 1||^2");
  t->add_option("--outdir", f.outdir, "output directory for csv, snapshot, checkpoint");
  t->add_option("--dump-first-batch", f.dump_first_batch,
                "write the first training batch to this csv for inspection");
  t->add_option("--config", f.config_path, "key=value config file; flags override");
}

int run_train(TrainFlags& f, CLI::App* t, const ConfigKeys& keys) {
  std::set<std::string> applied;
  if (!f.config_path.empty()) applied = keys.apply_file(f.config_path);
  const bool seed_given = t->get_option("--seed")->count() > 0 || applied.count("seed") > 0;
  if (!seed_given) f.cfg.seed = env_seed_fallback(f.cfg.seed);
  f.cfg.task = f.task;
  f.cfg.act = activation_from_name(f.activation);
  f.cfg.model = model_kind_from_name(f.model);
  f.cfg.validate();

  fs::create_directories(f.outdir);
  write_config_snapshot(fs::path(f.outdir) / "config.txt", f);

  if (!f.dump_first_batch.empty()) {
    std::mt19937_64 rng(f.cfg.seed ^ 0x9E3779B97F4A7C15ULL);
    std::ofstream dump(f.dump_first_batch);
    if (f.cfg.task == "addition")
      dump_csv(dump, gen_addition(f.cfg.seq_len, f.cfg.batch, rng));
    else
      dump_csv(dump, gen_copy(f.cfg.lag, f.cfg.batch, rng));
  }

  std::ofstream csv(fs::path(f.outdir) / "metrics.csv");
  write_metrics_csv_header(csv);
  TrainHooks hooks;
  hooks.on_record = [&](const MetricRecord& rec, const SpectralRnnCell*, const VanillaRnnCell*) {
    write_metrics_csv_row(csv, rec);
    csv.flush();
  };

  TrainResult result;
  try {
    result = train(f.cfg, hooks);
  } catch (const DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return 2;
  }

  std::ofstream ckpt(fs::path(f.outdir) / "model.txt");
  if (result.kind == ModelKind::SpectralRnn)
    save_checkpoint(ckpt, result.spectral);
  else
    save_checkpoint(ckpt, result.vanilla);

  const MetricRecord& last = result.records.back();
  std::cout << "task=" << f.cfg.task << " model=" << f.model << " iters=" << last.iter
            << " loss=" << last.loss << " eval=" << last.eval_metric
            << " margin=" << last.spectral_margin << " flops=" << last.flops
            << " seconds=" << last.seconds << "\n";
  const double baseline =
      f.cfg.task == "addition" ? addition_baseline_mse() : copy_baseline_ce(f.cfg.lag);
  std::cout << "memoryless baseline: " << baseline << "\n";
  return 0;
}

int run_gradcheck(int n, int m1, int m2, int steps, int samples, const std::string& activation,
                  std::uint64_t seed, bool seed_given, bool break_gradient) {
  if (!seed_given) seed = env_seed_fallback(seed);
  if (n > 8 || steps > 5)
    throw CLI::ValidationError("gradcheck", "limited to --hidden <= 8 and --steps <= 5");
  GradCheckScenario sc = make_gradcheck_scenario(n, 2, 3, m1, m2, steps, samples, 0.1, 1.0,
                                                 activation_from_name(activation), seed);
  GradCheckResult res = sc.run(1e-5, break_gradient);
  write_gradcheck_report(std::cout, res);
  return res.max_rel_err < 1e-5 ? 0 : 3;
}

int run_bench(int n, int m1, int m2, int k, int reps) {
  std::mt19937_64 rng(1);
  using clock = std::chrono::steady_clock;
  struct Row {
    const char* name;
    double predicted, measured, ns;
  };
  std::vector<Row> rows;

  {
    HouseholderVector hv = HouseholderVector::random(k, rng);
    VectorXd h = VectorXd::Random(n);
    FlopCounter fc;
    hprod(h, hv, &fc);
    auto t0 = clock::now();
    for (int i = 0; i < reps; ++i) h = hprod(h, hv);
    const double ns = std::chrono::duration<double, std::nano>(clock::now() - t0).count() / reps;
    rows.push_back({"hprod", predicted_hprod_flops(k), double(fc.of(Kernel::Hprod)), ns});
  }
  {
    HouseholderVector hv = HouseholderVector::random(k, rng);
    VectorXd h = VectorXd::Random(n), g = VectorXd::Random(n);
    FlopCounter fc;
    hgrad(h, hv, g, false, &fc);
    auto t0 = clock::now();
    for (int i = 0; i < reps; ++i) hgrad(h, hv, g, false);
    const double ns = std::chrono::duration<double, std::nano>(clock::now() - t0).count() / reps;
    rows.push_back({"hgrad", predicted_hgrad_flops(n, k), double(fc.of(Kernel::Hgrad)), ns});
  }
  SpectralMatrix w = SpectralMatrix::create(n, n, m1, m2, 0.01, 1.0, rng);
  SpectralCoeffs coeffs = spectral_coeffs(w);
  SpectralTape tape;
  VectorXd h = VectorXd::Random(n);
  {
    FlopCounter fc;
    spectral_apply(w, h, tape, coeffs, &fc);
    auto t0 = clock::now();
    for (int i = 0; i < reps; ++i) spectral_apply(w, h, tape, coeffs);
    const double ns = std::chrono::duration<double, std::nano>(clock::now() - t0).count() / reps;
    rows.push_back(
        {"spectral_fp", predicted_spectral_fp_flops(n, m1, m2), double(fc.of(Kernel::SpectralFp)), ns});
  }
  {
    VectorXd g = VectorXd::Random(n);
    FlopCounter fc;
    spectral_backward(w, tape, g, coeffs, &fc);
    auto t0 = clock::now();
    for (int i = 0; i < reps; ++i) spectral_backward(w, tape, g, coeffs);
    const double ns = std::chrono::duration<double, std::nano>(clock::now() - t0).count() / reps;
    rows.push_back(
        {"spectral_bp", predicted_spectral_bp_flops(n, m1, m2), double(fc.of(Kernel::SpectralBp)), ns});
  }

  std::cout << "n=" << n << " m1=" << m1 << " m2=" << m2 << " k=" << k << "\n";
  std::cout << std::left << std::setw(14) << "kernel" << std::right << std::setw(14) << "predicted"
            << std::setw(14) << "measured" << std::setw(10) << "ratio" << std::setw(14)
            << "ns/call" << "\n";
  for (const auto& r : rows) {
    std::cout << std::left << std::setw(14) << r.name << std::right << std::setw(14) << r.predicted
              << std::setw(14) << r.measured << std::setw(10) << std::setprecision(4)
              << r.measured / r.predicted << std::setw(14) << std::setprecision(6) << r.ns << "\n";
  }
  return 0;
}

int run_decompose(const std::string& input, std::string output, double radius, double star,
                  bool have_radius, bool have_star) {
  MatrixXd w;
  try {
    w = read_matrix_csv_file(input);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  if (w.rows() != w.cols()) {
    std::cerr << "error: decompose expects a square matrix, got " << w.rows() << "x" << w.cols()
              << " (rectangular decomposition is API-only)\n";
    return 1;
  }
  const VectorXd sv = jacobi_svd(w).sigma;
  const double suggest_star = (sv.maxCoeff() + sv.minCoeff()) / 2.0;
  const double suggest_r = (sv.maxCoeff() - sv.minCoeff()) / 2.0 * 1.05 + 1e-6;
  if (!have_star) star = suggest_star;
  if (!have_radius) radius = suggest_r;

  SpectralMatrix sm;
  try {
    sm = decompose_square(w, radius, star);
  } catch (const std::range_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    std::cerr << "suggested parameters: --sigma-star " << std::setprecision(17) << suggest_star
              << " --r " << suggest_r << "\n";
    return 4;
  }
  if (output.empty()) output = input + ".spectral";
  std::ofstream os(output);
  save_spectral_matrix(os, sm);
  const double err = (materialize(sm) - w).norm() / std::max(w.norm(), 1e-300);
  std::cout << "wrote " << output << "\n";
  std::cout << "relative frobenius reconstruction error: " << std::setprecision(6) << err << "\n";
  return err < 1e-8 ? 0 : 4;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SVD-parameterized recurrent networks via Householder reflectors"};
  app.require_subcommand(1);

  TrainFlags tf;
  ConfigKeys train_keys;
  CLI::App* t = app.add_subcommand("train", "train a model on a synthetic task");
  add_train_options(t, tf, train_keys);
  train_keys.bind("seed", t->add_option("--seed", tf.cfg.seed, "rng seed"), tf.cfg.seed);

  int gc_n = 6, gc_m1 = 3, gc_m2 = 3, gc_steps = 4, gc_samples = 2;
  std::uint64_t gc_seed = 1;
  std::string gc_act = "sigmoid";
  bool gc_break = false;
  CLI::App* g = app.add_subcommand("gradcheck", "finite-difference check of the full backward pass");
  g->add_option("--hidden", gc_n, "hidden dimension (<= 8)");
  g->add_option("--m1", gc_m1, "U-side reflector count");
  g->add_option("--m2", gc_m2, "V-side reflector count");
  g->add_option("--steps", gc_steps, "rollout length (<= 5)");
  g->add_option("--samples", gc_samples, "rollout count");
  g->add_option("--activation", gc_act, "smooth activation to check");
  CLI::Option* gc_seed_opt = g->add_option("--seed", gc_seed, "rng seed");
  g->add_flag("--break-gradient", gc_break, "corrupt one analytic coordinate (checker sanity)");

  int b_n = 256, b_m1 = 32, b_m2 = 32, b_k = 0, b_reps = 200;
  CLI::App* b = app.add_subcommand("bench", "predicted vs measured flops and wall time per kernel");
  b->add_option("--n", b_n, "dimension");
  b->add_option("--m1", b_m1, "U-side reflector count");
  b->add_option("--m2", b_m2, "V-side reflector count");
  b->add_option("--k", b_k, "reflector size for hprod/hgrad rows (default n/2)");
  b->add_option("--reps", b_reps, "timing repetitions");

  std::string d_input, d_output;
  double d_r = 0.0, d_star = 1.0;
  CLI::App* d = app.add_subcommand("decompose", "factor a square csv matrix into spectral form");
  d->add_option("matrix", d_input, "csv file, one row per line")->required();
  d->add_option("--out", d_output, "output path (default <input>.spectral)");
  CLI::Option* d_r_opt = d->add_option("--r", d_r, "singular-value radius (default: fitted)");
  CLI::Option* d_star_opt =
      d->add_option("--sigma-star", d_star, "singular-value center (default: fitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? 0 : 1;
  }

  try {
    if (t->parsed()) return run_train(tf, t, train_keys);
    if (g->parsed())
      return run_gradcheck(gc_n, gc_m1, gc_m2, gc_steps, gc_samples, gc_act, gc_seed,
                           gc_seed_opt->count() > 0, gc_break);
    if (b->parsed()) return run_bench(b_n, b_m1, b_m2, b_k > 0 ? b_k : b_n / 2, b_reps);
    if (d->parsed())
      return run_decompose(d_input, d_output, d_r, d_star, d_r_opt->count() > 0,
                           d_star_opt->count() > 0);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
