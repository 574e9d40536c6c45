#include <catch2/catch_amalgamated.hpp>

#include "ffm/config.hpp"

using namespace ffm;
using nlohmann::json;

namespace {

json base_config() {
  return json{
      {"seed", 7},
      {"source", {{"kind", "gaussian"}, {"dim", 2}}},
      {"target", {{"kind", "two_moons"}, {"noise", 0.05}}},
      {"dataset_size", 1000},
      {"partition", {{"mode", "fixed"}, {"assignments", {{0}, {1}}}}},
      {"federation",
       {{"n_clients", 2},
        {"rounds", 10},
        {"batch_size", 32},
        {"coupling", "global_ot"},
        {"lr_theta", 1e-3},
        {"lr_phi", 1e-4},
        {"dual_every", 5},
        {"ctransform", {{"mode", "pool_min"}, {"pool_size", 128}}},
        {"solver", {{"method", "exact"}}}}},
      {"model", {{"hidden", {32, 32}}, {"activation", "silu"}}},
      {"dual_model", {{"hidden", {32}}, {"activation", "relu"}}},
      {"eval", {{"every", 5}, {"nfe", {2, 5, 10}}, {"n_eval", 256}, {"scheme", "euler"}}},
  };
}

}  // namespace

TEST_CASE("full config parses into the expected structures") {
  const ExperimentConfig cfg = parse_config(base_config());
  REQUIRE(cfg.seed == 7);
  REQUIRE(cfg.source.kind == DistKind::Gaussian);
  REQUIRE(cfg.target.kind == DistKind::TwoMoons);
  REQUIRE(cfg.target.moon_noise == 0.05);
  REQUIRE(cfg.fed.n_clients == 2);
  REQUIRE(cfg.fed.coupling == Coupling::GlobalOT);
  REQUIRE(cfg.fed.ctransform.pool_size == 128);
  REQUIRE(cfg.fed.solver.method == SolverCfg::Method::Exact);
  REQUIRE(cfg.field_hidden == std::vector<int>{32, 32});
  REQUIRE(cfg.field_activation == Activation::SiLU);
  REQUIRE(cfg.dual_activation == Activation::ReLU);
  REQUIRE(cfg.eval.every == 5);
  REQUIRE(cfg.eval.nfes == std::vector<int>{2, 5, 10});
  REQUIRE(cfg.partition.assignments.size() == 2);
}

TEST_CASE("defaults fill in missing optional sections") {
  json j = base_config();
  j.erase("model");
  j.erase("dual_model");
  j.erase("eval");
  j.erase("dataset_size");
  const ExperimentConfig cfg = parse_config(j);
  REQUIRE(cfg.field_hidden == std::vector<int>{128, 128, 128});
  REQUIRE(cfg.eval.n_eval == 1024);
  REQUIRE(cfg.eval.scheme == Scheme::Euler);
  REQUIRE(cfg.dataset_size == 20000);
}

TEST_CASE("unknown keys are rejected at every level") {
  json top = base_config();
  top["typo_key"] = 1;
  REQUIRE_THROWS_AS(parse_config(top), ConfigError);

  json fed = base_config();
  fed["federation"]["learning_rate"] = 0.1;
  REQUIRE_THROWS_AS(parse_config(fed), ConfigError);

  json dist = base_config();
  dist["source"]["variance"] = 2.0;
  REQUIRE_THROWS_AS(parse_config(dist), ConfigError);

  json ct = base_config();
  ct["federation"]["ctransform"]["pool"] = 64;
  REQUIRE_THROWS_AS(parse_config(ct), ConfigError);

  json ev = base_config();
  ev["eval"]["nfes"] = {1, 2};
  REQUIRE_THROWS_AS(parse_config(ev), ConfigError);
}

TEST_CASE("unknown enum strings are rejected") {
  json j = base_config();
  j["federation"]["coupling"] = "fancy_ot";
  REQUIRE_THROWS_AS(parse_config(j), ConfigError);
  j = base_config();
  j["source"]["kind"] = "spiral";
  REQUIRE_THROWS_AS(parse_config(j), ConfigError);
  j = base_config();
  j["model"]["activation"] = "tanh";
  REQUIRE_THROWS_AS(parse_config(j), ConfigError);
  j = base_config();
  j["eval"]["scheme"] = "heun";
  REQUIRE_THROWS_AS(parse_config(j), ConfigError);
}

TEST_CASE("semantic validation runs after parsing") {
  json j = base_config();
  j["federation"]["weights"] = {0.9, 0.3};  // does not sum to 1
  REQUIRE_THROWS_AS(parse_config(j), ConfigError);
  j = base_config();
  j["federation"]["coupling"] = "centralized_ot_cfm";  // needs n_clients == 1
  REQUIRE_THROWS_AS(parse_config(j), ConfigError);
}

TEST_CASE("load_config reports missing files and malformed json") {
  REQUIRE_THROWS_AS(load_config("/nonexistent/path/config.json"), ConfigError);
  const std::string path = "/tmp/ffm_test_bad_config.json";
  {
    std::ofstream os(path);
    os << "{ not json";
  }
  REQUIRE_THROWS_WITH(load_config(path), Catch::Matchers::ContainsSubstring("parse error"));
  std::remove(path.c_str());
}
