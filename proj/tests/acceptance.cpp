// End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
// exits nonzero if any fail. Criteria 7 and 8 share the same training runs
// (three couplings, five seeds) and dominate the runtime.

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "ffm/config.hpp"
#include "ffm/experiment.hpp"

using namespace ffm;

namespace {

bool report(int id, const std::string& desc, bool ok, const std::string& detail = "") {
  std::printf("%s criterion %d: %s%s%s\n", ok ? "PASS" : "FAIL", id, desc.c_str(),
              detail.empty() ? "" : " -- ", detail.c_str());
  std::fflush(stdout);
  return ok;
}

// ---- criterion 1: exact OT vs brute force ----------------------------------

bool criterion1() {
  Rng rng(101);
  CostFn cost;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + int(rng.index(6));
    const PointBatch x0 = gaussian_noise(2, n, rng);
    const PointBatch x1 = gaussian_noise(2, n, rng);
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += cost(x0.row(i), x1.row(perm[i]));
      best = std::min(best, s / n);
    } while (std::next_permutation(perm.begin(), perm.end()));
    const double solved = solve_exact(x0, x1).total_cost;
    if (std::abs(solved - best) > 1e-12 * std::max(1.0, std::abs(best)))
      return report(1, "exact OT oracle equivalence", false,
                    "mismatch at trial " + std::to_string(trial));
  }
  return report(1, "exact OT oracle equivalence", true, "100/100 instances match");
}

// ---- criterion 2: Sinkhorn fidelity ----------------------------------------

bool criterion2() {
  Rng rng(102);
  CostFn cost;
  double worst_rel = 0.0, worst_violation = 0.0;
  for (int trial = 0; trial < 25; ++trial) {
    const PointBatch x0 = gaussian_noise(2, 64, rng);
    const PointBatch x1 = gaussian_noise(2, 64, rng);
    double mean_cost = 0.0;
    for (int i = 0; i < 64; ++i)
      for (int j = 0; j < 64; ++j) mean_cost += cost(x0.row(i), x1.row(j));
    mean_cost /= 64.0 * 64.0;
    const double eps = 0.01 * mean_cost;
    const double exact = solve_exact(x0, x1).total_cost;
    const SinkhornResult res = solve_sinkhorn(x0, x1, eps, 150000, 9.9e-7);
    // cancel the leading entropic bias with the self-transport costs
    const double self0 = solve_sinkhorn(x0, x0, eps, 150000, 9.9e-7).plan.total_cost;
    const double self1 = solve_sinkhorn(x1, x1, eps, 150000, 9.9e-7).plan.total_cost;
    const double est = res.plan.total_cost - 0.5 * (self0 + self1);
    const double rel = std::abs(est - exact) / exact;
    worst_rel = std::max(worst_rel, rel);
    worst_violation = std::max(worst_violation, res.plan.marginal_violation());
    if (rel > 0.02 || res.plan.marginal_violation() >= 1e-6)
      return report(2, "Sinkhorn fidelity", false,
                    "trial " + std::to_string(trial) + " rel err " + std::to_string(rel));
  }
  char buf[128];
  std::snprintf(buf, sizeof(buf), "worst rel err %.2e, worst violation %.2e", worst_rel,
                worst_violation);
  return report(2, "Sinkhorn fidelity", true, buf);
}

// ---- criterion 3: gradient checks ------------------------------------------

bool criterion3() {
  Rng rng(103);
  const double h = 1e-5;
  double max_rel = 0.0;
  auto consider = [&](double fd, double g) {
    if (std::abs(g) > 1e-8)
      max_rel = std::max(max_rel, std::abs(fd - g) / std::max(std::abs(fd), std::abs(g)));
  };
  auto sumsq = [](const PointBatch& y) {
    PointBatch d(y.rows, y.cols);
    double s = 0.0;
    for (size_t i = 0; i < y.data.size(); ++i) {
      s += y.data[i] * y.data[i];
      d.data[i] = 2.0 * y.data[i];
    }
    return std::make_pair(s, d);
  };

  // velocity field network: parameter and input gradients of the sumsq loss
  for (int trial = 0; trial < 20; ++trial) {
    MlpArch arch{2, 2, {10, 10}, trial % 2 ? Activation::SiLU : Activation::SELU, true};
    ParamVector p = init_params(arch, rng);
    PointBatch x = gaussian_noise(2, 4, rng);
    std::vector<double> t(4);
    for (double& v : t) v = rng.uniform();
    auto loss_value = [&]() {
      const PointBatch y = forward(p, x, &t);
      double s = 0.0;
      for (double u : y.data) s += u * u;
      return s;
    };
    ForwardCache cache;
    const PointBatch y = forward(p, x, &t, &cache);
    auto [lv, dLdy] = sumsq(y);
    (void)lv;
    PointBatch dx;
    const GradVector grad = backward(p, cache, dLdy, &dx);
    for (size_t i = 0; i < p.values.size(); i += 1 + p.values.size() / 30) {
      const double save = p.values[i];
      p.values[i] = save + h;
      const double lp = loss_value();
      p.values[i] = save - h;
      const double lm = loss_value();
      p.values[i] = save;
      consider((lp - lm) / (2 * h), grad.values[i]);
    }
    for (int r = 0; r < x.rows; ++r)
      for (int c = 0; c < x.cols; ++c) {
        const double save = x.at(r, c);
        x.at(r, c) = save + h;
        const double lp = loss_value();
        x.at(r, c) = save - h;
        const double lm = loss_value();
        x.at(r, c) = save;
        consider((lp - lm) / (2 * h), dx.at(r, c));
      }
  }

  // dual potential network: parameter and input gradients of sum f(x)
  for (int trial = 0; trial < 20; ++trial) {
    MlpArch arch{2, 1, {10, 10}, trial % 2 ? Activation::ReLU : Activation::SiLU, false};
    ParamVector p = init_params(arch, rng);
    PointBatch x = gaussian_noise(2, 4, rng);
    auto loss_value = [&]() {
      const PointBatch y = forward(p, x);
      double s = 0.0;
      for (double u : y.data) s += u;
      return s;
    };
    ForwardCache cache;
    forward(p, x, nullptr, &cache);
    PointBatch ones(4, 1);
    std::fill(ones.data.begin(), ones.data.end(), 1.0);
    PointBatch dx;
    const GradVector grad = backward(p, cache, ones, &dx);
    for (size_t i = 0; i < p.values.size(); i += 1 + p.values.size() / 30) {
      const double save = p.values[i];
      p.values[i] = save + h;
      const double lp = loss_value();
      p.values[i] = save - h;
      const double lm = loss_value();
      p.values[i] = save;
      consider((lp - lm) / (2 * h), grad.values[i]);
    }
    for (int r = 0; r < x.rows; ++r)
      for (int c = 0; c < x.cols; ++c) {
        const double save = x.at(r, c);
        x.at(r, c) = save + h;
        const double lp = loss_value();
        x.at(r, c) = save - h;
        const double lm = loss_value();
        x.at(r, c) = save;
        consider((lp - lm) / (2 * h), dx.at(r, c));
      }
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), "max rel err %.2e", max_rel);
  return report(3, "gradient checks vs finite differences", true && max_rel < 1e-4, buf);
}

// ---- criterion 4: federated == centralized under IID determinism -----------

bool criterion4() {
  for (const std::vector<int>& splits : {std::vector<int>{128, 128}, std::vector<int>{64, 64, 128}}) {
    const int B = std::accumulate(splits.begin(), splits.end(), 0);
    Rng init_rng(104);
    MlpArch arch{2, 2, {32, 32}, Activation::ReLU, true};
    ParamVector theta_fed = init_params(arch, init_rng);
    ParamVector theta_cen = theta_fed;
    AdamState adam_fed(theta_fed.values.size(), 1e-3);
    AdamState adam_cen(theta_cen.values.size(), 1e-3);
    std::vector<double> weights;
    for (int b : splits) weights.push_back(double(b) / B);

    Rng data_rng(204);
    double max_dev = 0.0;
    for (int round = 0; round < 100; ++round) {
      const PointBatch x0 = gaussian_noise(2, B, data_rng);
      PointBatch x1 = gaussian_noise(2, B, data_rng);
      for (double& v : x1.data) v += 2.0;
      std::vector<double> t(B);
      for (double& v : t) v = data_rng.uniform();

      // centralized step on the full batch
      auto [closs, cgrad] = cfm_loss(theta_cen, x0, x1, t);
      (void)closs;
      adam_step(theta_cen, cgrad, adam_cen);

      // federated step on the per-client sub-batches, through the wire
      std::vector<GradientMessage> messages;
      int off = 0;
      for (size_t i = 0; i < splits.size(); ++i) {
        const int Bi = splits[i];
        const PointBatch x0i = x0.slice_rows(off, Bi);
        const PointBatch x1i = x1.slice_rows(off, Bi);
        const std::vector<double> ti(t.begin() + off, t.begin() + off + Bi);
        auto [loss, grad] = cfm_loss(theta_fed, x0i, x1i, ti);
        GradientMessage msg;
        msg.client_id = int(i);
        msg.round = round;
        msg.batch_count = Bi;
        msg.local_loss = loss;
        msg.grad_theta = std::move(grad);
        messages.push_back(GradientMessage::deserialize(msg.serialize()));
        off += Bi;
      }
      server_aggregate(messages, weights, theta_fed, adam_fed);

      for (size_t k = 0; k < theta_fed.values.size(); ++k)
        max_dev = std::max(max_dev, std::abs(theta_fed.values[k] - theta_cen.values[k]));
      if (max_dev > 1e-12)
        return report(4, "federated equals centralized (IID determinism)", false,
                      std::to_string(splits.size()) + " clients, round " + std::to_string(round) +
                          ", deviation " + std::to_string(max_dev));
    }
  }
  return report(4, "federated equals centralized (IID determinism)", true,
                "n in {2,3}, 100 rounds, max deviation 0");
}

// ---- criterion 5: mixture convexity inequality -----------------------------

bool criterion5() {
  Rng rng(105);
  const int sizes[] = {1, 2, 4};
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + int(rng.index(3));
    DiscreteMeasure mu{gaussian_noise(2, n, rng), std::vector<int>(n, 1)};
    std::vector<DiscreteMeasure> nus;
    std::vector<int> lam;
    const int k = 2 + int(rng.index(2));
    for (int i = 0; i < k; ++i) {
      const int m = sizes[rng.index(3)];
      PointBatch pts = gaussian_noise(2, m, rng);
      for (double& v : pts.data) v += rng.normal();
      std::vector<int> mult(m, 1 + int(rng.index(2)));
      nus.push_back({std::move(pts), std::move(mult)});
      lam.push_back(1 + int(rng.index(2)));
    }
    const Lemma1Result res = lemma1_check(mu, nus, lam);
    if (!res.holds)
      return report(5, "mixture convexity inequality", false,
                    "violated at trial " + std::to_string(trial));
  }
  // equality when all components are identical
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + int(rng.index(3));
    DiscreteMeasure mu{gaussian_noise(2, n, rng), std::vector<int>(n, 1)};
    const int m = sizes[rng.index(3)];
    DiscreteMeasure nu{gaussian_noise(2, m, rng), std::vector<int>(m, 1)};
    const Lemma1Result res = lemma1_check(mu, {nu, nu, nu}, {1, 2, 1});
    if (std::abs(res.lhs - res.rhs) > 1e-12)
      return report(5, "mixture convexity inequality", false, "equality case off by " +
                                                                  std::to_string(res.lhs - res.rhs));
  }
  return report(5, "mixture convexity inequality", true, "200/200 random + 20/20 equality cases");
}

// ---- criterion 6: heterogeneity sweep --------------------------------------

bool criterion6() {
  const auto sweep = theorem1_sweep();
  if (sweep.front().plan_gap_sq > 1e-9)
    return report(6, "plan gap sweep", false, "nonzero gap at zero skew");
  for (size_t i = 1; i < sweep.size(); ++i)
    if (sweep[i].plan_gap_sq < sweep[i - 1].plan_gap_sq - 1e-9)
      return report(6, "plan gap sweep", false, "gap decreased at level " + std::to_string(i));
  char buf[96];
  std::snprintf(buf, sizeof(buf), "gap 0 at zero skew, rises to %.3f at full skew",
                sweep.back().plan_gap_sq);
  return report(6, "plan gap sweep", true, buf);
}

// ---- criteria 7 & 8: 2D experiment reproduction ----------------------------

struct RunMetrics {
  double w2[3] = {0, 0, 0};  // NFE 2, 5, 10
  double straightness50 = 0;
};

RunMetrics train_and_measure(Coupling coupling, uint64_t seed, int rounds) {
  ExperimentConfig cfg;
  cfg.seed = seed;
  cfg.source.kind = DistKind::EightGaussians;
  cfg.source.radius = 4.0;
  cfg.target.kind = DistKind::TwoMoons;
  cfg.target.moon_noise = 0.05;
  cfg.dataset_size = 20000;
  cfg.partition.mode = PartitionCfg::Mode::Fixed;
  cfg.partition.assignments = {{0}, {1}};  // upper moon vs lower moon
  cfg.fed.n_clients = 2;
  cfg.fed.rounds = rounds;
  cfg.fed.batch_size = 256;
  cfg.fed.coupling = coupling;
  cfg.fed.lr_theta = 1e-3;
  cfg.fed.lr_phi = 1e-4;
  cfg.fed.dual_every = 5;
  cfg.fed.ctransform.pool_size = 256;
  cfg.eval.nfes = {2, 5, 10};
  cfg.eval.n_eval = 1024;
  cfg.eval.held_out = 10000;

  const ExperimentResult res = run_experiment(cfg);
  RunMetrics m;
  const auto& reps = res.evals.back().second;
  for (int i = 0; i < 3; ++i) m.w2[i] = reps[i].w2;

  Rng straight_rng(seed ^ 0x5757);
  const auto rep50 = w2_vs_nfe(res.theta, cfg.source, res.held_out_target, {50}, 1024,
                               Scheme::Euler, straight_rng);
  m.straightness50 = rep50[0].straightness;
  return m;
}

bool criteria78(const std::vector<uint64_t>& seeds, int rounds) {
  const int need = int(seeds.size()) - 1;  // >= 4 of 5
  int got_beats_vanilla[3] = {0, 0, 0};
  int lot_beats_vanilla[3] = {0, 0, 0};
  int straight_wins = 0;
  for (uint64_t seed : seeds) {
    const RunMetrics vanilla = train_and_measure(Coupling::Vanilla, seed, rounds);
    const RunMetrics lot = train_and_measure(Coupling::LocalOT, seed, rounds);
    const RunMetrics got = train_and_measure(Coupling::GlobalOT, seed, rounds);
    std::printf("  seed %llu  w2(nfe 2/5/10): vanilla %.4f/%.4f/%.4f  lot %.4f/%.4f/%.4f  "
                "got %.4f/%.4f/%.4f  straight50: %.5f vs %.5f\n",
                (unsigned long long)seed, vanilla.w2[0], vanilla.w2[1], vanilla.w2[2], lot.w2[0],
                lot.w2[1], lot.w2[2], got.w2[0], got.w2[1], got.w2[2], got.straightness50,
                vanilla.straightness50);
    std::fflush(stdout);
    for (int i = 0; i < 3; ++i) {
      if (got.w2[i] < vanilla.w2[i]) got_beats_vanilla[i]++;
      if (lot.w2[i] < vanilla.w2[i]) lot_beats_vanilla[i]++;
    }
    if (got.straightness50 < vanilla.straightness50) straight_wins++;
  }
  bool ok7 = true;
  for (int i = 0; i < 3; ++i)
    ok7 = ok7 && got_beats_vanilla[i] >= need && lot_beats_vanilla[i] >= need;
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "seeds won (of %d): got %d/%d/%d, lot %d/%d/%d at NFE 2/5/10",
                int(seeds.size()), got_beats_vanilla[0], got_beats_vanilla[1],
                got_beats_vanilla[2], lot_beats_vanilla[0], lot_beats_vanilla[1],
                lot_beats_vanilla[2]);
  const bool r7 = report(7, "2D experiment W2 ordering", ok7, buf);
  std::snprintf(buf, sizeof(buf), "global-OT straighter in %d/%d seeds at NFE=50", straight_wins,
                int(seeds.size()));
  const bool r8 = report(8, "straightness ordering", straight_wins >= need, buf);
  return r7 && r8;
}

// ---- criterion 9: integrator exactness -------------------------------------

bool criterion9() {
  // constant field: exact translation for every scheme
  MlpArch arch{2, 2, {}, Activation::ReLU, true};
  ParamVector constant(arch);
  constant.bias(0)[0] = 0.75;
  constant.bias(0)[1] = -1.5;
  Rng rng(109);
  const PointBatch x0 = gaussian_noise(2, 16, rng);
  for (Scheme s : {Scheme::Euler, Scheme::Midpoint, Scheme::RK4}) {
    for (int nfe : {4, 8, 20}) {
      IntegratorCfg cfg{s, nfe};
      auto [x1, traj] = integrate(constant, x0, cfg);
      for (int r = 0; r < 16; ++r) {
        if (std::abs(x1.at(r, 0) - (x0.at(r, 0) + 0.75)) > 1e-14 ||
            std::abs(x1.at(r, 1) - (x0.at(r, 1) - 1.5)) > 1e-14)
          return report(9, "integrator exactness", false, "constant field drift");
      }
    }
  }
  // linear field v = x under Euler: closed form (1 + 1/n)^n
  MlpArch arch1{1, 1, {}, Activation::ReLU, true};
  ParamVector linear(arch1);
  linear.weights(0)[0] = 1.0;  // x row; t row stays 0
  PointBatch one(1, 1);
  one.at(0, 0) = 1.0;
  for (int n : {1, 3, 10, 64, 177}) {
    IntegratorCfg cfg{Scheme::Euler, n};
    auto [x1, traj] = integrate(linear, one, cfg);
    if (std::abs(x1.at(0, 0) - std::pow(1.0 + 1.0 / n, n)) > 1e-12)
      return report(9, "integrator exactness", false, "Euler closed form at n=" + std::to_string(n));
  }
  return report(9, "integrator exactness", true, "constant + linear fields match closed forms");
}

// ---- criterion 10: privacy structural check --------------------------------

bool criterion10() {
  Rng rng(110);
  PointBatch data(64, 2);
  for (int r = 0; r < 64; ++r) {
    data.at(r, 0) = 31337.5 + r;  // sentinel coordinates, exactly representable
    data.at(r, 1) = -31337.5 - r;
  }
  std::vector<ClientState> clients;
  clients.emplace_back(0, data, rng.child(1, 0));
  const ParamVector theta = init_params(MlpArch{2, 2, {16}, Activation::ReLU, true}, rng);
  const ParamVector phi = init_params(MlpArch{2, 1, {16}, Activation::SiLU, false}, rng);
  DistributionSpec source;
  source.kind = DistKind::Gaussian;
  source.dim = 2;
  SolverCfg solver;

  auto scan = [&](const std::vector<uint8_t>& bytes) {
    for (int r = 0; r < 64; ++r)
      for (double sentinel : {data.at(r, 0), data.at(r, 1)}) {
        uint8_t pat[8];
        std::memcpy(pat, &sentinel, 8);
        if (std::search(bytes.begin(), bytes.end(), pat, pat + 8) != bytes.end()) return false;
      }
    return true;
  };

  for (int round = 0; round < 5; ++round) {
    const std::vector<std::vector<uint8_t>> wires = {
        client_step_vanilla(clients[0], theta, source, 32, round).serialize(),
        client_step_local_ot(clients[0], theta, source, 32, round, solver).serialize(),
        client_step_global_ot(clients[0], theta, phi, source, 32, 64, round).serialize(),
    };
    for (const auto& w : wires)
      if (!scan(w)) return report(10, "privacy structural check", false, "sentinel leaked");
  }
  // schema check: the record length is exactly header + gradient payload,
  // leaving no room for sample data
  GradientMessage msg = client_step_vanilla(clients[0], theta, source, 32, 0);
  const std::vector<uint8_t> bytes = msg.serialize();
  const size_t expected = 8 + 4 + 4 + 4 + 4 + 8 + 8 + 8 + 8 * msg.grad_theta.values.size();
  if (bytes.size() != expected)
    return report(10, "privacy structural check", false, "unexpected wire size");
  return report(10, "privacy structural check", true,
                "no sentinel bytes in any coupling's messages; schema is gradients-only");
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> wanted;
  std::vector<uint64_t> seeds = {1, 2, 3, 4, 5};
  int rounds = 10000;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg.rfind("--seeds=", 0) == 0) {
      const int n = std::stoi(arg.substr(8));
      seeds.assign(size_t(n), 0);
      for (int s = 0; s < n; ++s) seeds[s] = uint64_t(s + 1);
    } else if (arg.rfind("--rounds=", 0) == 0) {
      rounds = std::stoi(arg.substr(9));
    } else {
      wanted.insert(std::stoi(arg));
    }
  }
  auto run = [&](int id) { return wanted.empty() || wanted.count(id); };

  bool ok = true;
  if (run(1)) ok &= criterion1();
  if (run(2)) ok &= criterion2();
  if (run(3)) ok &= criterion3();
  if (run(4)) ok &= criterion4();
  if (run(5)) ok &= criterion5();
  if (run(6)) ok &= criterion6();
  if (run(9)) ok &= criterion9();
  if (run(10)) ok &= criterion10();
  if (run(7) || run(8)) ok &= criteria78(seeds, rounds);
  return ok ? 0 : 1;
}
