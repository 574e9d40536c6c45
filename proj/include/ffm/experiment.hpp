#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <vector>

#include "ffm/fedsim.hpp"
#include "ffm/metrics.hpp"

namespace ffm {

struct PartitionCfg {
  enum class Mode { Fixed, Dirichlet };
  Mode mode = Mode::Fixed;
  std::vector<std::vector<int>> assignments;  // Fixed: component labels per client
  double alpha = 0.3;                         // Dirichlet
};

struct EvalCfg {
  int every = 0;  // 0 => evaluate only after the final round
  std::vector<int> nfes = {2, 5, 10};
  int n_eval = 1024;
  Scheme scheme = Scheme::Euler;
  int held_out = 10000;
};

struct ExperimentConfig {
  uint64_t seed = 1;
  DistributionSpec source;
  DistributionSpec target;
  int dataset_size = 20000;  // target samples drawn before partitioning
  PartitionCfg partition;
  FederationSpec fed;
  std::vector<int> field_hidden = {128, 128, 128};
  Activation field_activation = Activation::ReLU;
  std::vector<int> dual_hidden = {128, 128, 128};
  Activation dual_activation = Activation::ReLU;
  EvalCfg eval;
  std::string output_dir;  // empty => no files written

  void validate() const {
    source.validate();
    target.validate();
    fed.validate();
    if (dataset_size < fed.n_clients) throw ConfigError("dataset_size too small for client count");
    if (source.dim != target.dim) throw ConfigError("source and target dims differ");
  }
};

struct ExperimentResult {
  ParamVector theta;
  std::optional<ParamVector> phi;
  std::vector<RoundReport> reports;
  std::vector<std::pair<int, std::vector<W2Report>>> evals;  // (round, reports)
  PointBatch held_out_target;
};

// ---- resumable run state ---------------------------------------------------

inline void save_run_state(const std::string& path, const ServerState& st) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot open run state for writing: " + path);
  os.write("FFMRUN1\0", 8);
  const uint32_t round = uint32_t(st.round);
  os.write(reinterpret_cast<const char*>(&round), 4);
  const uint32_t has_phi = st.phi ? 1 : 0;
  os.write(reinterpret_cast<const char*>(&has_phi), 4);
  save_checkpoint(os, st.theta);
  if (st.phi) save_checkpoint(os, *st.phi);
  auto put_adam = [&os](const AdamState& a) {
    const uint64_t n = a.m.size();
    os.write(reinterpret_cast<const char*>(&n), 8);
    os.write(reinterpret_cast<const char*>(&a.step), sizeof(a.step));
    os.write(reinterpret_cast<const char*>(&a.lr), 8);
    os.write(reinterpret_cast<const char*>(a.m.data()), std::streamsize(8 * n));
    os.write(reinterpret_cast<const char*>(a.v.data()), std::streamsize(8 * n));
  };
  put_adam(st.adam_theta);
  if (st.phi) put_adam(st.adam_phi);
}

inline ServerState load_run_state(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open run state: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, "FFMRUN1\0", 8) != 0) throw ConfigError("bad run state magic");
  ServerState st;
  uint32_t round = 0, has_phi = 0;
  is.read(reinterpret_cast<char*>(&round), 4);
  is.read(reinterpret_cast<char*>(&has_phi), 4);
  st.round = int(round);
  st.theta = load_checkpoint(is);
  if (has_phi) st.phi = load_checkpoint(is);
  auto get_adam = [&is](AdamState& a) {
    uint64_t n = 0;
    is.read(reinterpret_cast<char*>(&n), 8);
    is.read(reinterpret_cast<char*>(&a.step), sizeof(a.step));
    is.read(reinterpret_cast<char*>(&a.lr), 8);
    a.m.resize(n);
    a.v.resize(n);
    is.read(reinterpret_cast<char*>(a.m.data()), std::streamsize(8 * n));
    is.read(reinterpret_cast<char*>(a.v.data()), std::streamsize(8 * n));
  };
  get_adam(st.adam_theta);
  if (has_phi) get_adam(st.adam_phi);
  if (!is) throw ConfigError("truncated run state");
  return st;
}

// ---- experiment driver -----------------------------------------------------

struct ExperimentHooks {
  // raw wire bytes of every client message (privacy tests scan these)
  std::function<void(const std::vector<uint8_t>&)> on_wire;
  std::function<void(int round, double server_loss)> on_round;
};

inline std::vector<ClientState> build_clients(const ExperimentConfig& cfg, Rng& master) {
  Rng data_rng = master.child(0xDA7A);
  std::vector<int> labels;
  const PointBatch samples = sample(cfg.target, cfg.dataset_size, data_rng, &labels);
  std::vector<PointBatch> parts;
  if (cfg.fed.n_clients == 1) {
    parts.push_back(samples);
  } else if (cfg.partition.mode == PartitionCfg::Mode::Fixed) {
    parts = partition_fixed(samples, labels, cfg.partition.assignments);
  } else {
    parts = partition_dirichlet(samples, labels, cfg.partition.alpha, cfg.fed.n_clients, data_rng);
  }
  if (int(parts.size()) != cfg.fed.n_clients)
    throw ConfigError("partition produced wrong client count");
  std::vector<ClientState> clients;
  for (int i = 0; i < cfg.fed.n_clients; ++i)
    clients.emplace_back(i, std::move(parts[i]), master.child(0xC11E, uint64_t(i)));
  return clients;
}

inline std::vector<double> effective_weights(const ExperimentConfig& cfg,
                                             const std::vector<ClientState>& clients) {
  if (!cfg.fed.weights.empty()) return cfg.fed.weights;
  // default: proportional to client dataset sizes
  double total = 0.0;
  for (const auto& c : clients) total += c.dataset.rows;
  std::vector<double> w;
  for (const auto& c : clients) w.push_back(c.dataset.rows / total);
  return w;
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                       const ExperimentHooks& hooks = {},
                                       const ServerState* resume_from = nullptr) {
  cfg.validate();
  namespace fs = std::filesystem;
  const bool writing = !cfg.output_dir.empty();
  if (writing) fs::create_directories(cfg.output_dir);

  Rng master(cfg.seed);
  std::vector<ClientState> clients = build_clients(cfg, master);
  const std::vector<double> weights = effective_weights(cfg, clients);

  const int d = cfg.source.dim;
  MlpArch field_arch{d, d, cfg.field_hidden, cfg.field_activation, true};
  MlpArch dual_arch{d, 1, cfg.dual_hidden, cfg.dual_activation, false};

  ServerState st;
  if (resume_from) {
    st = *resume_from;
  } else {
    Rng init_rng = master.child(0x1217);
    st.theta = init_params(field_arch, init_rng);
    st.adam_theta = AdamState(st.theta.values.size(), cfg.fed.lr_theta);
    if (cfg.fed.coupling == Coupling::GlobalOT) {
      st.phi = init_params(dual_arch, init_rng);
      st.adam_phi = AdamState(st.phi->values.size(), cfg.fed.lr_phi);
    }
    st.round = 0;
  }

  ExperimentResult result;
  Rng eval_rng = master.child(0xEA11);
  result.held_out_target = sample(cfg.target, cfg.eval.held_out, eval_rng);

  const std::string algo = coupling_name(cfg.fed.coupling);
  auto evaluate = [&](int round) {
    Rng r = eval_rng.child(uint64_t(round));
    auto reps = w2_vs_nfe(st.theta, cfg.source, result.held_out_target, cfg.eval.nfes,
                          cfg.eval.n_eval, cfg.eval.scheme, r);
    result.evals.emplace_back(round, std::move(reps));
  };

  auto run_rounds = [&]() {
    for (; st.round < cfg.fed.rounds; ++st.round) {
      const int round = st.round;
      const auto t_start = std::chrono::steady_clock::now();

      std::vector<GradientMessage> messages;
      for (const ClientState& client : clients) {
        GradientMessage msg;
        switch (cfg.fed.coupling) {
          case Coupling::Vanilla:
            msg = client_step_vanilla(client, st.theta, cfg.source, cfg.fed.batch_size, round);
            break;
          case Coupling::LocalOT:
          case Coupling::CentralizedOTCFM:
            msg = client_step_local_ot(client, st.theta, cfg.source, cfg.fed.batch_size, round,
                                       cfg.fed.solver);
            break;
          case Coupling::GlobalOT:
            msg = client_step_global_ot(client, st.theta, *st.phi, cfg.source,
                                        cfg.fed.batch_size, cfg.fed.ctransform.pool_size, round);
            break;
        }
        // transport simulation: messages cross the wire as bytes
        const std::vector<uint8_t> wire = msg.serialize();
        if (hooks.on_wire) hooks.on_wire(wire);
        messages.push_back(GradientMessage::deserialize(wire));
      }

      const GradVector agg = server_aggregate(messages, weights, st.theta, st.adam_theta);

      double server_loss = 0.0;
      for (size_t i = 0; i < messages.size(); ++i)
        server_loss += weights[i] * messages[i].local_loss;

      if (cfg.fed.coupling == Coupling::GlobalOT && round % cfg.fed.dual_every == 0)
        dual_round(clients, weights, cfg.source, *st.phi, st.adam_phi, cfg.fed.batch_size,
                   cfg.fed.ctransform, round);

      const double ms = std::chrono::duration<double, std::milli>(
                            std::chrono::steady_clock::now() - t_start)
                            .count();
      for (const auto& m : messages)
        result.reports.push_back({round, algo, std::to_string(m.client_id), m.local_loss,
                                  m.grad_theta.norm(), 0.0});
      result.reports.push_back({round, algo, "server", server_loss, agg.norm(), ms});

      if (hooks.on_round) hooks.on_round(round, server_loss);
      if (cfg.eval.every > 0 && (round + 1) % cfg.eval.every == 0 &&
          round + 1 < cfg.fed.rounds)
        evaluate(round + 1);
    }
  };

  try {
    run_rounds();
  } catch (...) {
    if (writing) save_run_state((fs::path(cfg.output_dir) / "run_state.bin").string(), st);
    throw;
  }

  evaluate(cfg.fed.rounds);
  result.theta = st.theta;
  result.phi = st.phi;

  if (writing) {
    save_checkpoint((fs::path(cfg.output_dir) / "field.ckpt").string(), st.theta);
    if (st.phi) save_checkpoint((fs::path(cfg.output_dir) / "dual.ckpt").string(), *st.phi);
    save_run_state((fs::path(cfg.output_dir) / "run_state.bin").string(), st);
    {
      std::ofstream os(fs::path(cfg.output_dir) / "rounds.csv");
      round_reports_to_csv(os, result.reports);
    }
    {
      std::ofstream os(fs::path(cfg.output_dir) / "eval.csv");
      bool header = true;
      for (const auto& [round, reps] : result.evals) {
        w2_reports_to_csv(os, "train", algo, round, reps, header);
        header = false;
      }
    }
  }
  return result;
}

}  // namespace ffm
