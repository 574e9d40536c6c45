#pragma once

#include <fstream>
#include <set>
#include <string>

#include <json.hpp>

#include "ffm/experiment.hpp"

namespace ffm {

namespace detail {

using json = nlohmann::json;

inline void require_keys(const json& obj, const std::string& where,
                         const std::set<std::string>& allowed) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : obj.items())
    if (!allowed.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
}

inline DistributionSpec parse_distribution(const json& j, const std::string& where) {
  require_keys(j, where,
               {"kind", "dim", "mean", "cov_diag", "radius", "std", "noise", "low", "high"});
  DistributionSpec spec;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "gaussian") spec.kind = DistKind::Gaussian;
  else if (kind == "eight_gaussians") spec.kind = DistKind::EightGaussians;
  else if (kind == "two_moons") spec.kind = DistKind::TwoMoons;
  else if (kind == "uniform_box") spec.kind = DistKind::UniformBox;
  else throw ConfigError(where + ".kind: unknown distribution '" + kind + "'");
  spec.dim = j.value("dim", 2);
  if (j.contains("mean")) spec.mean = j["mean"].get<std::vector<double>>();
  if (j.contains("cov_diag")) spec.cov_diag = j["cov_diag"].get<std::vector<double>>();
  if (j.contains("radius")) spec.radius = j["radius"].get<double>();
  if (j.contains("std")) spec.mode_std = j["std"].get<double>();
  if (j.contains("noise")) spec.moon_noise = j["noise"].get<double>();
  if (j.contains("low")) spec.low = j["low"].get<std::vector<double>>();
  if (j.contains("high")) spec.high = j["high"].get<std::vector<double>>();
  spec.validate();
  return spec;
}

inline Activation parse_activation(const std::string& s, const std::string& where) {
  if (s == "relu") return Activation::ReLU;
  if (s == "silu") return Activation::SiLU;
  if (s == "selu") return Activation::SELU;
  throw ConfigError(where + ": unknown activation '" + s + "'");
}

inline Scheme parse_scheme(const std::string& s, const std::string& where) {
  if (s == "euler") return Scheme::Euler;
  if (s == "midpoint") return Scheme::Midpoint;
  if (s == "rk4") return Scheme::RK4;
  throw ConfigError(where + ": unknown scheme '" + s + "'");
}

}  // namespace detail

inline ExperimentConfig parse_config(const detail::json& j) {
  using detail::require_keys;
  require_keys(j, "config",
               {"seed", "source", "target", "dataset_size", "partition", "federation", "model",
                "dual_model", "eval", "output_dir"});
  ExperimentConfig cfg;
  cfg.seed = j.value("seed", uint64_t(1));
  cfg.source = detail::parse_distribution(j.at("source"), "source");
  cfg.target = detail::parse_distribution(j.at("target"), "target");
  cfg.dataset_size = j.value("dataset_size", 20000);

  if (j.contains("partition")) {
    const auto& p = j["partition"];
    require_keys(p, "partition", {"mode", "assignments", "alpha"});
    const std::string mode = p.value("mode", "fixed");
    if (mode == "fixed") {
      cfg.partition.mode = PartitionCfg::Mode::Fixed;
      if (p.contains("assignments"))
        cfg.partition.assignments = p["assignments"].get<std::vector<std::vector<int>>>();
    } else if (mode == "dirichlet") {
      cfg.partition.mode = PartitionCfg::Mode::Dirichlet;
      cfg.partition.alpha = p.value("alpha", 0.3);
    } else {
      throw ConfigError("partition.mode: unknown mode '" + mode + "'");
    }
  }

  const auto& f = j.at("federation");
  require_keys(f, "federation",
               {"n_clients", "weights", "rounds", "batch_size", "coupling", "lr_theta", "lr_phi",
                "dual_every", "ctransform", "solver"});
  cfg.fed.n_clients = f.value("n_clients", 1);
  if (f.contains("weights")) cfg.fed.weights = f["weights"].get<std::vector<double>>();
  cfg.fed.rounds = f.value("rounds", 1000);
  cfg.fed.batch_size = f.value("batch_size", 256);
  const std::string coupling = f.value("coupling", "vanilla");
  if (coupling == "vanilla") cfg.fed.coupling = Coupling::Vanilla;
  else if (coupling == "local_ot") cfg.fed.coupling = Coupling::LocalOT;
  else if (coupling == "global_ot") cfg.fed.coupling = Coupling::GlobalOT;
  else if (coupling == "centralized_ot_cfm") cfg.fed.coupling = Coupling::CentralizedOTCFM;
  else throw ConfigError("federation.coupling: unknown coupling '" + coupling + "'");
  cfg.fed.lr_theta = f.value("lr_theta", 1e-3);
  cfg.fed.lr_phi = f.value("lr_phi", 1e-4);
  cfg.fed.dual_every = f.value("dual_every", 5);
  if (f.contains("ctransform")) {
    const auto& c = f["ctransform"];
    require_keys(c, "federation.ctransform", {"mode", "pool_size", "gd_steps", "gd_lr"});
    const std::string mode = c.value("mode", "pool_min");
    if (mode == "pool_min") cfg.fed.ctransform.mode = CTransformCfg::Mode::PoolMin;
    else if (mode == "pool_min_gd") cfg.fed.ctransform.mode = CTransformCfg::Mode::PoolMinPlusGD;
    else throw ConfigError("federation.ctransform.mode: unknown mode '" + mode + "'");
    cfg.fed.ctransform.pool_size = c.value("pool_size", 256);
    cfg.fed.ctransform.gd_steps = c.value("gd_steps", 0);
    cfg.fed.ctransform.gd_lr = c.value("gd_lr", 0.5);
  }
  if (f.contains("solver")) {
    const auto& s = f["solver"];
    require_keys(s, "federation.solver", {"method", "epsilon", "max_iter", "tol", "exact_cap"});
    const std::string method = s.value("method", "exact");
    if (method == "exact") cfg.fed.solver.method = SolverCfg::Method::Exact;
    else if (method == "sinkhorn") cfg.fed.solver.method = SolverCfg::Method::Sinkhorn;
    else throw ConfigError("federation.solver.method: unknown method '" + method + "'");
    cfg.fed.solver.epsilon = s.value("epsilon", 0.05);
    cfg.fed.solver.max_iter = s.value("max_iter", 2000);
    cfg.fed.solver.tol = s.value("tol", 1e-8);
    cfg.fed.solver.exact_cap = s.value("exact_cap", kDefaultExactCap);
  }

  if (j.contains("model")) {
    const auto& m = j["model"];
    require_keys(m, "model", {"hidden", "activation"});
    if (m.contains("hidden")) cfg.field_hidden = m["hidden"].get<std::vector<int>>();
    if (m.contains("activation"))
      cfg.field_activation = detail::parse_activation(m["activation"], "model.activation");
  }
  if (j.contains("dual_model")) {
    const auto& m = j["dual_model"];
    require_keys(m, "dual_model", {"hidden", "activation"});
    if (m.contains("hidden")) cfg.dual_hidden = m["hidden"].get<std::vector<int>>();
    if (m.contains("activation"))
      cfg.dual_activation = detail::parse_activation(m["activation"], "dual_model.activation");
  }

  if (j.contains("eval")) {
    const auto& e = j["eval"];
    require_keys(e, "eval", {"every", "nfe", "n_eval", "scheme", "held_out"});
    cfg.eval.every = e.value("every", 0);
    if (e.contains("nfe")) cfg.eval.nfes = e["nfe"].get<std::vector<int>>();
    cfg.eval.n_eval = e.value("n_eval", 1024);
    if (e.contains("scheme")) cfg.eval.scheme = detail::parse_scheme(e["scheme"], "eval.scheme");
    cfg.eval.held_out = e.value("held_out", 10000);
  }

  cfg.output_dir = j.value("output_dir", std::string{});
  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  detail::json j;
  try {
    j = detail::json::parse(is);
  } catch (const detail::json::parse_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  return parse_config(j);
}

}  // namespace ffm
