#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ffm/config.hpp"
#include "ffm/experiment.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

uint64_t fnv1a(const std::string& bytes) {
  uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ffm::ConfigError("cannot open file: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::string timestamp_utc() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

ffm::Scheme parse_scheme_arg(const std::string& s) {
  if (s == "euler") return ffm::Scheme::Euler;
  if (s == "midpoint") return ffm::Scheme::Midpoint;
  if (s == "rk4") return ffm::Scheme::RK4;
  throw ffm::ConfigError("unknown scheme: " + s);
}

// ---- train -----------------------------------------------------------------

int cmd_train(const std::string& config_path) {
  const std::string raw = read_file(config_path);
  ffm::ExperimentConfig cfg = ffm::load_config(config_path);

  if (const char* env = std::getenv("FFM_OUTPUT_DIR")) cfg.output_dir = env;
  if (const char* env = std::getenv("FFM_SEED")) cfg.seed = std::strtoull(env, nullptr, 10);

  json manifest;
  manifest["config_path"] = config_path;
  manifest["config_hash"] = fnv1a(raw);
  manifest["seed"] = cfg.seed;
  manifest["started"] = timestamp_utc();

  std::cout << "training " << ffm::coupling_name(cfg.fed.coupling) << ": " << cfg.fed.rounds
            << " rounds, " << cfg.fed.n_clients << " client(s), batch " << cfg.fed.batch_size
            << ", seed " << cfg.seed << "\n";

  ffm::ExperimentHooks hooks;
  const int report_every = std::max(1, cfg.fed.rounds / 20);
  hooks.on_round = [&](int round, double loss) {
    if (round % report_every == 0 || round + 1 == cfg.fed.rounds)
      std::cout << "round " << round << "  loss " << loss << "\n";
  };
  const ffm::ExperimentResult res = ffm::run_experiment(cfg, hooks);

  for (const auto& [round, reps] : res.evals)
    for (const auto& r : reps)
      std::cout << "eval round " << round << "  nfe " << r.nfe << "  w2 " << r.w2
                << "  straightness " << r.straightness << "\n";

  if (!cfg.output_dir.empty()) {
    manifest["finished"] = timestamp_utc();
    manifest["output_dir"] = cfg.output_dir;
    json artifacts;
    artifacts["field_checkpoint"] = (fs::path(cfg.output_dir) / "field.ckpt").string();
    if (res.phi) artifacts["dual_checkpoint"] = (fs::path(cfg.output_dir) / "dual.ckpt").string();
    artifacts["run_state"] = (fs::path(cfg.output_dir) / "run_state.bin").string();
    artifacts["rounds_csv"] = (fs::path(cfg.output_dir) / "rounds.csv").string();
    artifacts["eval_csv"] = (fs::path(cfg.output_dir) / "eval.csv").string();
    manifest["artifacts"] = artifacts;
    manifest["field_checkpoint_hash"] = fnv1a(read_file(artifacts["field_checkpoint"]));
    std::ofstream os(fs::path(cfg.output_dir) / "run_manifest.json");
    os << manifest.dump(2) << "\n";
    std::cout << "artifacts written to " << cfg.output_dir << "\n";
  }
  return kExitOk;
}

// ---- sample ----------------------------------------------------------------

int cmd_sample(const std::string& ckpt_path, int nfe, int n, const std::string& scheme_name,
               uint64_t seed, const std::string& out_path, const std::string& traj_path) {
  const ffm::ParamVector field = ffm::load_checkpoint(ckpt_path);
  if (!field.arch.time_conditioned || field.arch.output_dim != field.arch.input_dim)
    throw ffm::ConfigError("checkpoint is not a velocity field (needs time conditioning and "
                           "matching input/output dims)");
  ffm::IntegratorCfg cfg;
  cfg.scheme = parse_scheme_arg(scheme_name);
  cfg.nfe = nfe;
  cfg.validate();

  ffm::Rng rng(seed);
  const ffm::PointBatch x0 = ffm::gaussian_noise(field.arch.input_dim, n, rng);

  const auto t0 = std::chrono::steady_clock::now();
  auto [x1, traj] = ffm::integrate(field, x0, cfg, !traj_path.empty());
  const double ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();

  std::ofstream os(out_path);
  if (!os) throw ffm::ConfigError("cannot open output file: " + out_path);
  os << "sample_id";
  for (int c = 0; c < x1.cols; ++c) os << ",x_" << (c + 1);
  os << "\n";
  for (int r = 0; r < x1.rows; ++r) {
    os << r;
    for (int c = 0; c < x1.cols; ++c) os << ',' << x1.at(r, c);
    os << "\n";
  }
  if (traj) {
    std::ofstream ts(traj_path);
    if (!ts) throw ffm::ConfigError("cannot open trajectory file: " + traj_path);
    ffm::trajectory_to_csv(*traj, ts);
  }
  std::cout << "sampled " << n << " points, nfe " << nfe << " (" << scheme_name << "), "
            << ms << " ms -> " << out_path << "\n";
  return kExitOk;
}

// ---- eval ------------------------------------------------------------------

int cmd_eval(const std::string& ckpt_path, const std::string& config_path,
             const std::vector<int>& nfes, uint64_t seed, const std::string& out_path) {
  if (nfes.empty()) throw ffm::ConfigError("eval: at least one --nfe is required");
  const ffm::ExperimentConfig cfg = ffm::load_config(config_path);
  const ffm::ParamVector field = ffm::load_checkpoint(ckpt_path);
  if (field.arch.input_dim != cfg.source.dim)
    throw ffm::ConfigError("checkpoint dimension does not match the config source");

  ffm::Rng rng(seed);
  const ffm::PointBatch target = ffm::sample(cfg.target, cfg.eval.held_out, rng);
  const auto reports =
      ffm::w2_vs_nfe(field, cfg.source, target, nfes, cfg.eval.n_eval, cfg.eval.scheme, rng);

  std::ostream* out = &std::cout;
  std::ofstream file;
  if (!out_path.empty()) {
    file.open(out_path);
    if (!file) throw ffm::ConfigError("cannot open output file: " + out_path);
    out = &file;
  }
  ffm::w2_reports_to_csv(*out, "eval", "checkpoint", 0, reports, true);
  if (!out_path.empty()) {
    for (const auto& r : reports)
      std::cout << "nfe " << r.nfe << "  w2 " << r.w2 << "  straightness " << r.straightness
                << "\n";
  }
  return kExitOk;
}

// ---- verify ----------------------------------------------------------------

int verify_ot() {
  ffm::Rng rng(2024);
  ffm::CostFn cost;
  int pass = 0;
  const int total = 100;
  for (int trial = 0; trial < total; ++trial) {
    const int n = 2 + int(rng.index(6));
    const ffm::PointBatch x0 = ffm::gaussian_noise(2, n, rng);
    const ffm::PointBatch x1 = ffm::gaussian_noise(2, n, rng);
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += cost(x0.row(i), x1.row(perm[i]));
      best = std::min(best, s / n);
    } while (std::next_permutation(perm.begin(), perm.end()));
    const double solved = ffm::solve_exact(x0, x1).total_cost;
    if (std::abs(solved - best) <= 1e-12 * std::max(1.0, std::abs(best))) {
      ++pass;
    } else {
      std::cout << "MISMATCH n=" << n << " solver=" << solved << " brute=" << best << "\n";
    }
  }
  std::cout << "ot suite: " << pass << "/" << total << " exact matches\n";
  return pass == total ? kExitOk : kExitRuntime;
}

int verify_lemma1() {
  ffm::Rng rng(7);
  int pass = 0;
  const int total = 200;
  for (int trial = 0; trial < total; ++trial) {
    const int n = 2 + int(rng.index(3));
    ffm::DiscreteMeasure mu{ffm::gaussian_noise(2, n, rng), std::vector<int>(n, 1)};
    std::vector<ffm::DiscreteMeasure> nus;
    std::vector<int> lam;
    const int k = 2 + int(rng.index(2));
    // power-of-two totals keep the exact solver's lcm expansion small
    const int sizes[] = {1, 2, 4};
    for (int i = 0; i < k; ++i) {
      const int m = sizes[rng.index(3)];
      ffm::PointBatch pts = ffm::gaussian_noise(2, m, rng);
      for (double& v : pts.data) v += rng.normal();
      std::vector<int> mult(m, 1 + int(rng.index(2)));
      nus.push_back({std::move(pts), std::move(mult)});
      lam.push_back(1 + int(rng.index(2)));
    }
    const ffm::Lemma1Result res = ffm::lemma1_check(mu, nus, lam);
    if (res.holds) {
      ++pass;
    } else {
      std::cout << "VIOLATION trial=" << trial << " lhs=" << res.lhs << " rhs=" << res.rhs
                << "\n";
    }
  }
  std::cout << "lemma1 suite: " << pass << "/" << total << " pass\n";
  return pass == total ? kExitOk : kExitRuntime;
}

int verify_theorem1() {
  const auto sweep = ffm::theorem1_sweep();
  std::cout << "skew  heterogeneity  plan_gap_sq\n";
  bool ok = true;
  for (size_t i = 0; i < sweep.size(); ++i) {
    std::cout << sweep[i].skew << "  " << sweep[i].heterogeneity << "  " << sweep[i].plan_gap_sq
              << "\n";
    if (i == 0 && sweep[i].plan_gap_sq > 1e-9) ok = false;
    if (i > 0 && sweep[i].plan_gap_sq < sweep[i - 1].plan_gap_sq - 1e-9) ok = false;
  }
  std::cout << "theorem1 sweep: " << (ok ? "pass" : "FAIL")
            << " (zero gap at zero skew, non-decreasing)\n";
  return ok ? kExitOk : kExitRuntime;
}

int verify_gradcheck() {
  ffm::Rng rng(11);
  double max_rel = 0.0;
  const double h = 1e-5;
  auto sumsq = [](const ffm::PointBatch& y) {
    ffm::PointBatch d(y.rows, y.cols);
    double s = 0.0;
    for (size_t i = 0; i < y.data.size(); ++i) {
      s += y.data[i] * y.data[i];
      d.data[i] = 2.0 * y.data[i];
    }
    return std::make_pair(s, d);
  };
  // velocity-field style network: parameter gradients
  for (int trial = 0; trial < 20; ++trial) {
    ffm::MlpArch arch{2, 2, {8, 8}, ffm::Activation::SiLU, true};
    ffm::ParamVector p = ffm::init_params(arch, rng);
    const ffm::PointBatch x = ffm::gaussian_noise(2, 4, rng);
    std::vector<double> t(4);
    for (double& v : t) v = rng.uniform();
    auto [loss, grad] = ffm::loss_and_grad(p, x, &t, sumsq);
    (void)loss;
    for (size_t i = 0; i < p.values.size(); i += 1 + p.values.size() / 30) {
      const double save = p.values[i];
      auto eval = [&](double v) {
        p.values[i] = v;
        const ffm::PointBatch y = ffm::forward(p, x, &t);
        double s = 0.0;
        for (double u : y.data) s += u * u;
        return s;
      };
      const double fd = (eval(save + h) - eval(save - h)) / (2 * h);
      p.values[i] = save;
      if (std::abs(grad.values[i]) > 1e-8)
        max_rel = std::max(max_rel, std::abs(fd - grad.values[i]) /
                                        std::max(std::abs(fd), std::abs(grad.values[i])));
    }
  }
  // dual-potential style network: input gradients
  for (int trial = 0; trial < 20; ++trial) {
    ffm::MlpArch arch{2, 1, {8, 8}, ffm::Activation::SiLU, false};
    const ffm::ParamVector p = ffm::init_params(arch, rng);
    ffm::PointBatch x = ffm::gaussian_noise(2, 3, rng);
    const ffm::PointBatch g = ffm::grad_wrt_input(p, x);
    for (int r = 0; r < x.rows; ++r)
      for (int c = 0; c < x.cols; ++c) {
        const double save = x.at(r, c);
        auto eval = [&](double v) {
          x.at(r, c) = v;
          return ffm::forward(p, x).at(r, 0);
        };
        const double fd = (eval(save + h) - eval(save - h)) / (2 * h);
        x.at(r, c) = save;
        if (std::abs(g.at(r, c)) > 1e-8)
          max_rel = std::max(max_rel, std::abs(fd - g.at(r, c)) /
                                          std::max(std::abs(fd), std::abs(g.at(r, c))));
      }
  }
  std::cout << "gradcheck suite: max rel err " << max_rel << "\n";
  return max_rel < 1e-4 ? kExitOk : kExitRuntime;
}

int cmd_verify(const std::string& suite) {
  if (suite == "ot") return verify_ot();
  if (suite == "lemma1") return verify_lemma1();
  if (suite == "theorem1") return verify_theorem1();
  if (suite == "gradcheck") return verify_gradcheck();
  throw ffm::ConfigError("unknown verify suite: " + suite);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"federated flow matching simulator"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "worker thread cap (results are thread-count invariant)")
      ->check(CLI::PositiveNumber);

  auto* train = app.add_subcommand("train", "train from a JSON config");
  std::string config_path;
  train->add_option("config", config_path, "config file")->required();

  auto* sample = app.add_subcommand("sample", "sample from a field checkpoint");
  std::string ckpt_path, scheme_name = "euler", out_path = "samples.csv", traj_path;
  int nfe = 10, n_samples = 1024;
  uint64_t seed = 1;
  sample->add_option("--checkpoint", ckpt_path, "field checkpoint")->required();
  sample->add_option("--nfe", nfe, "function evaluations");
  sample->add_option("--n", n_samples, "number of samples")->check(CLI::PositiveNumber);
  sample->add_option("--scheme", scheme_name, "euler|midpoint|rk4");
  sample->add_option("--seed", seed, "rng seed");
  sample->add_option("--out", out_path, "samples CSV path");
  sample->add_option("--trajectory", traj_path, "optional trajectory CSV path");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint against a config's target");
  std::string eval_ckpt, eval_config, eval_out;
  std::vector<int> eval_nfes;
  uint64_t eval_seed = 1;
  eval->add_option("--checkpoint", eval_ckpt, "field checkpoint")->required();
  eval->add_option("--config", eval_config, "experiment config (source/target specs)")->required();
  eval->add_option("--nfe", eval_nfes, "NFE list")->required();
  eval->add_option("--seed", eval_seed, "rng seed");
  eval->add_option("--out", eval_out, "W2 report CSV path (default: stdout)");

  auto* verify = app.add_subcommand("verify", "run a built-in oracle suite");
  std::string suite;
  verify->add_option("suite", suite, "ot|lemma1|theorem1|gradcheck")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train) return cmd_train(config_path);
    if (*sample) return cmd_sample(ckpt_path, nfe, n_samples, scheme_name, seed, out_path,
                                   traj_path);
    if (*eval) return cmd_eval(eval_ckpt, eval_config, eval_nfes, eval_seed, eval_out);
    if (*verify) return cmd_verify(suite);
  } catch (const ffm::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
