#pragma once

#include <cstring>
#include <optional>
#include <ostream>
#include <vector>

#include "ffm/core.hpp"
#include "ffm/distributions.hpp"
#include "ffm/flow.hpp"
#include "ffm/nn.hpp"
#include "ffm/ot.hpp"
#include "ffm/semidual.hpp"

namespace ffm {

enum class Coupling { Vanilla, LocalOT, GlobalOT, CentralizedOTCFM };

struct SolverCfg {
  enum class Method { Exact, Sinkhorn };
  Method method = Method::Exact;
  double epsilon = 0.05;
  int max_iter = 2000;
  double tol = 1e-8;
  int exact_cap = kDefaultExactCap;
};

struct FederationSpec {
  int n_clients = 1;
  std::vector<double> weights;  // empty => proportional to dataset sizes
  int rounds = 1000;
  int batch_size = 256;
  Coupling coupling = Coupling::Vanilla;
  double lr_theta = 1e-3;
  double lr_phi = 1e-4;
  int dual_every = 5;
  CTransformCfg ctransform;
  SolverCfg solver;

  void validate() const {
    if (n_clients < 1) throw ConfigError("n_clients must be >= 1");
    if (coupling == Coupling::CentralizedOTCFM && n_clients != 1)
      throw ConfigError("centralized_ot_cfm requires n_clients == 1");
    if (rounds < 0) throw ConfigError("rounds must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (lr_theta <= 0.0 || lr_phi <= 0.0) throw ConfigError("learning rates must be > 0");
    if (dual_every < 1) throw ConfigError("dual_every must be >= 1");
    if (!weights.empty()) {
      if (int(weights.size()) != n_clients) throw ConfigError("weights length != n_clients");
      double s = 0.0;
      for (double w : weights) {
        if (w <= 0.0) throw ConfigError("weights must be > 0");
        s += w;
      }
      if (std::abs(s - 1.0) > 1e-12) throw ConfigError("weights must sum to 1 (within 1e-12)");
    }
    ctransform.validate();
  }
};

struct ClientState {
  int id = 0;
  PointBatch dataset;  // local target samples; never serialized into messages
  Rng rng;             // per-client base stream; steps derive per-round children

  ClientState(int id_, PointBatch data, Rng rng_)
      : id(id_), dataset(std::move(data)), rng(rng_) {
    if (dataset.rows < 1) throw ConfigError("client dataset must be non-empty");
  }

  PointBatch draw(int B, Rng& r) const {
    PointBatch out(B, dataset.cols);
    for (int b = 0; b < B; ++b) {
      const int i = int(r.index(size_t(dataset.rows)));
      std::copy_n(dataset.row(i).data(), dataset.cols, out.row(b).data());
    }
    return out;
  }
};

struct ServerState {
  ParamVector theta;
  std::optional<ParamVector> phi;
  AdamState adam_theta;
  AdamState adam_phi;
  int round = 0;
};

// Per-round client -> server payload. Carries gradients and scalars only;
// there is deliberately no point-batch field in the schema.
struct GradientMessage {
  int client_id = 0;
  int round = 0;
  GradVector grad_theta;
  std::optional<GradVector> grad_phi;
  double local_loss = 0.0;
  int batch_count = 0;

  // length-prefixed wire record: u64 body length, then magic "FGM1",
  // u32 client_id, u32 round, u32 batch_count, f64 local_loss,
  // u64 theta_count, u64 phi_count (0 = absent), little-endian f64 payloads
  std::vector<uint8_t> serialize() const {
    const uint64_t phi_count = grad_phi ? grad_phi->values.size() : 0;
    const uint64_t body = 4 + 4 + 4 + 4 + 8 + 8 + 8 + 8 * (grad_theta.values.size() + phi_count);
    std::vector<uint8_t> out(8 + body);
    uint8_t* p = out.data();
    auto put = [&p](const void* src, size_t n) {
      std::memcpy(p, src, n);
      p += n;
    };
    put(&body, 8);
    put("FGM1", 4);
    const uint32_t cid = uint32_t(client_id), rnd = uint32_t(round), bc = uint32_t(batch_count);
    put(&cid, 4);
    put(&rnd, 4);
    put(&bc, 4);
    put(&local_loss, 8);
    const uint64_t tc = grad_theta.values.size();
    put(&tc, 8);
    put(&phi_count, 8);
    put(grad_theta.values.data(), 8 * tc);
    if (grad_phi) put(grad_phi->values.data(), 8 * phi_count);
    return out;
  }

  static GradientMessage deserialize(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < 8) throw ConfigError("gradient message: truncated");
    const uint8_t* p = bytes.data();
    auto get = [&p](void* dst, size_t n) {
      std::memcpy(dst, p, n);
      p += n;
    };
    uint64_t body = 0;
    get(&body, 8);
    if (bytes.size() != 8 + body) throw ConfigError("gradient message: length mismatch");
    char magic[4];
    get(magic, 4);
    if (std::memcmp(magic, "FGM1", 4) != 0) throw ConfigError("gradient message: bad magic");
    GradientMessage msg;
    uint32_t cid = 0, rnd = 0, bc = 0;
    get(&cid, 4);
    get(&rnd, 4);
    get(&bc, 4);
    msg.client_id = int(cid);
    msg.round = int(rnd);
    msg.batch_count = int(bc);
    get(&msg.local_loss, 8);
    uint64_t tc = 0, pc = 0;
    get(&tc, 8);
    get(&pc, 8);
    if (body != 4 + 4 + 4 + 4 + 8 + 8 + 8 + 8 * (tc + pc))
      throw ConfigError("gradient message: inconsistent counts");
    msg.grad_theta.values.resize(tc);
    get(msg.grad_theta.values.data(), 8 * tc);
    if (pc > 0) {
      msg.grad_phi.emplace();
      msg.grad_phi->values.resize(pc);
      get(msg.grad_phi->values.data(), 8 * pc);
    }
    return msg;
  }
};

namespace detail {

inline double gamma_draw(Rng& rng, double alpha) {
  if (alpha < 1.0) {
    double u = rng.uniform();
    while (u <= 0.0) u = rng.uniform();
    return gamma_draw(rng, alpha + 1.0) * std::pow(u, 1.0 / alpha);
  }
  const double d = alpha - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    const double x = rng.normal();
    const double t = 1.0 + c * x;
    if (t <= 0.0) continue;
    const double v = t * t * t;
    const double u = rng.uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

}  // namespace detail

// Split labeled samples across clients: per component, client shares follow a
// Dirichlet(alpha) draw. Redraws the whole partition if any client comes out
// empty.
inline std::vector<PointBatch> partition_dirichlet(const PointBatch& samples,
                                                   const std::vector<int>& labels, double alpha,
                                                   int n_clients, Rng& rng) {
  if (alpha <= 0.0) throw ConfigError("partition_dirichlet: alpha must be > 0");
  if (n_clients < 1) throw ConfigError("partition_dirichlet: n_clients must be >= 1");
  if (int(labels.size()) != samples.rows) throw ShapeError("partition_dirichlet: label length");
  if (samples.rows < n_clients) throw ConfigError("partition_dirichlet: fewer samples than clients");

  int n_components = 0;
  for (int l : labels) n_components = std::max(n_components, l + 1);

  for (int attempt = 0; attempt < 200; ++attempt) {
    std::vector<std::vector<int>> assigned(n_clients);
    for (int c = 0; c < n_components; ++c) {
      std::vector<double> p(n_clients);
      double s = 0.0;
      for (int j = 0; j < n_clients; ++j) {
        p[j] = detail::gamma_draw(rng, alpha);
        s += p[j];
      }
      for (double& v : p) v /= s;
      for (int r = 0; r < samples.rows; ++r) {
        if (labels[r] != c) continue;
        double u = rng.uniform();
        int j = 0;
        while (j + 1 < n_clients && u >= p[j]) {
          u -= p[j];
          ++j;
        }
        assigned[j].push_back(r);
      }
    }
    bool ok = true;
    for (const auto& a : assigned)
      if (a.empty()) ok = false;
    if (!ok) continue;
    std::vector<PointBatch> out;
    for (int j = 0; j < n_clients; ++j) {
      PointBatch b(int(assigned[j].size()), samples.cols);
      for (size_t k = 0; k < assigned[j].size(); ++k)
        std::copy_n(samples.row(assigned[j][k]).data(), samples.cols, b.row(int(k)).data());
      out.push_back(std::move(b));
    }
    return out;
  }
  throw ConfigError("partition_dirichlet: could not produce non-empty clients");
}

// Fixed label-to-client partition (the 2-client benchmark splits).
inline std::vector<PointBatch> partition_fixed(const PointBatch& samples,
                                               const std::vector<int>& labels,
                                               const std::vector<std::vector<int>>& assignments) {
  if (int(labels.size()) != samples.rows) throw ShapeError("partition_fixed: label length");
  const int n_clients = int(assignments.size());
  std::vector<int> owner;
  for (int j = 0; j < n_clients; ++j)
    for (int l : assignments[j]) {
      if (int(owner.size()) <= l) owner.resize(l + 1, -1);
      if (owner[l] != -1) throw ConfigError("partition_fixed: component assigned twice");
      owner[l] = j;
    }
  std::vector<std::vector<int>> rows(n_clients);
  for (int r = 0; r < samples.rows; ++r) {
    const int l = labels[r];
    if (l >= int(owner.size()) || owner[l] < 0)
      throw ConfigError("partition_fixed: unassigned component " + std::to_string(l));
    rows[owner[l]].push_back(r);
  }
  std::vector<PointBatch> out;
  for (int j = 0; j < n_clients; ++j) {
    if (rows[j].empty()) throw ConfigError("partition_fixed: client has no samples");
    PointBatch b(int(rows[j].size()), samples.cols);
    for (size_t k = 0; k < rows[j].size(); ++k)
      std::copy_n(samples.row(rows[j][k]).data(), samples.cols, b.row(int(k)).data());
    out.push_back(std::move(b));
  }
  return out;
}

// Gradient of the CFM loss on an explicit (x0, x1) pairing with fresh
// per-row t. Shared by all client step variants.
inline GradientMessage cfm_gradient_message(const ClientState& client, const ParamVector& theta,
                                            const PointBatch& x0, const PointBatch& x1, int round,
                                            Rng& rng) {
  std::vector<double> t(x0.rows);
  for (double& v : t) v = rng.uniform();
  auto [loss, grad] = cfm_loss(theta, x0, x1, t);
  GradientMessage msg;
  msg.client_id = client.id;
  msg.round = round;
  msg.grad_theta = std::move(grad);
  msg.local_loss = loss;
  msg.batch_count = x0.rows;
  return msg;
}

// FFM-vanilla client step: independent pairing of x0 ~ q0 and x1 ~ local data.
inline GradientMessage client_step_vanilla(const ClientState& client, const ParamVector& theta,
                                           const DistributionSpec& source, int B, int round) {
  Rng rng = client.rng.child(uint64_t(round), 0);
  const PointBatch x0 = sample(source, B, rng);
  const PointBatch x1 = client.draw(B, rng);
  return cfm_gradient_message(client, theta, x0, x1, round, rng);
}

// FFM-LOT client step: mini-batch OT plan on (x0, x1), pairs resampled from
// the plan.
inline GradientMessage client_step_local_ot(const ClientState& client, const ParamVector& theta,
                                            const DistributionSpec& source, int B, int round,
                                            const SolverCfg& solver) {
  Rng rng = client.rng.child(uint64_t(round), 0);
  const PointBatch x0 = sample(source, B, rng);
  const PointBatch x1 = client.draw(B, rng);
  TransportPlan plan;
  if (solver.method == SolverCfg::Method::Exact) {
    plan = solve_exact(x0, x1, solver.exact_cap);
  } else {
    auto res = solve_sinkhorn(x0, x1, solver.epsilon, solver.max_iter, solver.tol);
    plan = std::move(res.plan);
  }
  auto [p0, p1] = sample_pairs(plan, x0, x1, B, rng);
  return cfm_gradient_message(client, theta, p0, p1, round, rng);
}

// FFM-GOT client step: couple each target sample with the best candidate
// from a fresh q0 pool under the current dual potential.
inline GradientMessage client_step_global_ot(const ClientState& client, const ParamVector& theta,
                                             const ParamVector& phi, const DistributionSpec& source,
                                             int B, int K, int round) {
  Rng rng = client.rng.child(uint64_t(round), 0);
  const PointBatch pool = sample(source, K, rng);
  const PointBatch x1 = client.draw(B, rng);
  const ResampledPairs pairs = resample_global(phi, pool, x1);
  return cfm_gradient_message(client, theta, pairs.x0, pairs.x1, round, rng);
}

// Weighted aggregation in fixed client-index order, then one Adam step.
// Expects exactly one message per client, ids 0..n-1.
inline GradVector server_aggregate(const std::vector<GradientMessage>& messages,
                                   const std::vector<double>& weights, ParamVector& theta,
                                   AdamState& adam) {
  const int n = int(weights.size());
  if (int(messages.size()) != n)
    throw ConfigError("server_aggregate: expected one message per client");
  std::vector<const GradientMessage*> by_id(n, nullptr);
  for (const auto& m : messages) {
    if (m.client_id < 0 || m.client_id >= n || by_id[m.client_id])
      throw ConfigError("server_aggregate: missing or duplicate client message");
    by_id[m.client_id] = &m;
  }
  GradVector agg(theta.values.size());
  for (int i = 0; i < n; ++i) {
    const GradVector& g = by_id[i]->grad_theta;
    if (g.values.size() != agg.values.size())
      throw ShapeError("server_aggregate: gradient length mismatch");
    const double w = weights[i];
    for (size_t k = 0; k < agg.values.size(); ++k) agg.values[k] += w * g.values[k];
  }
  adam_step(theta, agg, adam);
  return agg;
}

// One federated dual-potential round: every client evaluates the local
// semi-dual loss, the server applies the weighted aggregate with Adam.
inline std::pair<double, double> dual_round(const std::vector<ClientState>& clients,
                                            const std::vector<double>& weights,
                                            const DistributionSpec& source, ParamVector& phi,
                                            AdamState& adam_phi, int B,
                                            const CTransformCfg& cfg, int round) {
  GradVector agg(phi.values.size());
  double loss_sum = 0.0;
  for (size_t i = 0; i < clients.size(); ++i) {
    Rng rng = clients[i].rng.child(uint64_t(round), 1);
    const PointBatch x0 = sample(source, B, rng);
    const PointBatch x1 = clients[i].draw(B, rng);
    const PointBatch candidates = sample(source, cfg.pool_size, rng);
    auto [loss, grad] = dual_loss_local(phi, x0, x1, candidates, cfg);
    const double w = weights[i];
    for (size_t k = 0; k < agg.values.size(); ++k) agg.values[k] += w * grad.values[k];
    loss_sum += w * loss;
  }
  adam_step(phi, agg, adam_phi);
  return {loss_sum, agg.norm()};
}

struct RoundReport {
  int round = 0;
  std::string algorithm;
  std::string actor;  // client id or "server"
  double loss = 0.0;
  double grad_norm = 0.0;
  double wall_ms = 0.0;
};

inline void round_reports_to_csv(std::ostream& os, const std::vector<RoundReport>& reports,
                                 bool header = true) {
  if (header) os << "round,algorithm,client_id,loss,grad_norm,wall_ms\n";
  for (const auto& r : reports)
    os << r.round << ',' << r.algorithm << ',' << r.actor << ',' << r.loss << ',' << r.grad_norm
       << ',' << r.wall_ms << '\n';
}

inline const char* coupling_name(Coupling c) {
  switch (c) {
    case Coupling::Vanilla: return "ffm_vanilla";
    case Coupling::LocalOT: return "ffm_lot";
    case Coupling::GlobalOT: return "ffm_got";
    case Coupling::CentralizedOTCFM: return "ot_cfm";
  }
  return "?";
}

}  // namespace ffm
