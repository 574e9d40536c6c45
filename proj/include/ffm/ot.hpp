#pragma once

#include <limits>
#include <numeric>
#include <ostream>
#include <vector>

#include "ffm/core.hpp"

namespace ffm {

// c(x0, x1) = 0.5 * ||x0 - x1||^2 (the only cost used by the artifact)
struct CostFn {
  double operator()(std::span<const double> a, std::span<const double> b) const {
    return 0.5 * sq_dist(a, b);
  }
};

struct TransportPlan {
  enum class Kind { Assignment, Dense };
  Kind kind = Kind::Assignment;

  // Assignment: source row i pairs with target row perm[i]
  std::vector<int> perm;

  // Dense: n x m mass matrix with marginals src_w / tgt_w
  std::vector<double> mass;
  std::vector<double> src_w, tgt_w;

  int n = 0, m = 0;
  double total_cost = 0.0;
  bool converged = true;

  double mass_at(int i, int j) const {
    if (kind == Kind::Assignment) return perm[i] == j ? 1.0 / n : 0.0;
    return mass[size_t(i) * m + j];
  }

  double recompute_cost(const PointBatch& x0, const PointBatch& x1) const {
    CostFn cost;
    if (kind == Kind::Assignment) {
      std::vector<double> terms(n);
      for (int i = 0; i < n; ++i) terms[i] = cost(x0.row(i), x1.row(perm[i])) / n;
      return pairwise_sum(terms);
    }
    std::vector<double> terms;
    terms.reserve(mass.size());
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) {
        const double w = mass[size_t(i) * m + j];
        terms.push_back(w == 0.0 ? 0.0 : w * cost(x0.row(i), x1.row(j)));
      }
    return pairwise_sum(terms);
  }

  // L1 violation of the marginal constraints (Dense only; 0 for assignments)
  double marginal_violation() const {
    if (kind == Kind::Assignment) return 0.0;
    double v = 0.0;
    for (int i = 0; i < n; ++i) {
      double s = 0.0;
      for (int j = 0; j < m; ++j) s += mass[size_t(i) * m + j];
      v += std::abs(s - src_w[i]);
    }
    for (int j = 0; j < m; ++j) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += mass[size_t(i) * m + j];
      v += std::abs(s - tgt_w[j]);
    }
    return v;
  }
};

namespace detail {

// Square assignment problem, O(n^3) shortest augmenting path with potentials.
// cost is n x n row-major. Returns row -> column matching.
inline std::vector<int> solve_assignment(const std::vector<double>& cost, int n) {
  const double INF = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, INF);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = INF;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[size_t(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= n; ++j)
    if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

}  // namespace detail

constexpr int kDefaultExactCap = 1024;

// Exact OT between two discrete measures given by points and integer
// multiplicities. Solved by expanding both sides into equal-mass unit atoms
// (multiplicities scaled to a common total) and running the assignment
// solver, then aggregating back onto the original support. Exact for
// rational weights; the expanded size must stay within `cap`.
inline TransportPlan solve_exact_weighted(const PointBatch& x0, const std::vector<int>& mult0,
                                          const PointBatch& x1, const std::vector<int>& mult1,
                                          int cap = kDefaultExactCap) {
  if (x0.rows < 1 || x1.rows < 1) throw ConfigError("solve_exact_weighted: empty measure");
  if (int(mult0.size()) != x0.rows || int(mult1.size()) != x1.rows)
    throw ShapeError("solve_exact_weighted: multiplicity length mismatch");
  if (x0.cols != x1.cols) throw ShapeError("solve_exact_weighted: dim mismatch");
  long long m0 = 0, m1 = 0;
  for (int v : mult0) {
    if (v < 1) throw ConfigError("multiplicities must be >= 1");
    m0 += v;
  }
  for (int v : mult1) {
    if (v < 1) throw ConfigError("multiplicities must be >= 1");
    m1 += v;
  }
  const long long L = std::lcm(m0, m1);
  const long long f0 = L / m0, f1 = L / m1;
  if (L > cap) throw ConfigError("solve_exact_weighted: expanded size exceeds cap");
  const int N = int(L);

  std::vector<int> owner0(N), owner1(N);
  {
    int k = 0;
    for (int i = 0; i < x0.rows; ++i)
      for (long long r = 0; r < mult0[i] * f0; ++r) owner0[k++] = i;
    k = 0;
    for (int j = 0; j < x1.rows; ++j)
      for (long long r = 0; r < mult1[j] * f1; ++r) owner1[k++] = j;
  }
  CostFn cost;
  std::vector<double> C(size_t(N) * N);
  for (int a = 0; a < N; ++a)
    for (int b = 0; b < N; ++b) C[size_t(a) * N + b] = cost(x0.row(owner0[a]), x1.row(owner1[b]));
  const std::vector<int> match = detail::solve_assignment(C, N);

  TransportPlan plan;
  plan.kind = TransportPlan::Kind::Dense;
  plan.n = x0.rows;
  plan.m = x1.rows;
  plan.mass.assign(size_t(plan.n) * plan.m, 0.0);
  const double unit = 1.0 / double(N);
  for (int a = 0; a < N; ++a) plan.mass[size_t(owner0[a]) * plan.m + owner1[match[a]]] += unit;
  plan.src_w.resize(plan.n);
  plan.tgt_w.resize(plan.m);
  for (int i = 0; i < plan.n; ++i) plan.src_w[i] = double(mult0[i]) / double(m0);
  for (int j = 0; j < plan.m; ++j) plan.tgt_w[j] = double(mult1[j]) / double(m1);
  plan.total_cost = plan.recompute_cost(x0, x1);
  return plan;
}

// Exact OT between uniform empirical measures. Equal sizes yield an
// assignment; unequal sizes fall back to the weighted Dense path.
inline TransportPlan solve_exact(const PointBatch& x0, const PointBatch& x1,
                                 int cap = kDefaultExactCap) {
  if (x0.rows < 1 || x1.rows < 1) throw ConfigError("solve_exact: empty batch");
  if (x0.cols != x1.cols) throw ShapeError("solve_exact: dim mismatch");
  if (x0.rows != x1.rows) {
    return solve_exact_weighted(x0, std::vector<int>(x0.rows, 1), x1,
                                std::vector<int>(x1.rows, 1), cap);
  }
  const int n = x0.rows;
  if (n > cap) throw ConfigError("solve_exact: batch size exceeds cap");
  CostFn cost;
  std::vector<double> C(size_t(n) * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) C[size_t(i) * n + j] = cost(x0.row(i), x1.row(j));
  TransportPlan plan;
  plan.kind = TransportPlan::Kind::Assignment;
  plan.n = plan.m = n;
  plan.perm = detail::solve_assignment(C, n);
  plan.total_cost = plan.recompute_cost(x0, x1);
  return plan;
}

struct SinkhornResult {
  TransportPlan plan;
  bool converged = false;
  int iterations = 0;
  // L1 marginal violation recorded once per iteration at the target epsilon
  std::vector<double> violation_history;
};

// Log-domain Sinkhorn with epsilon-scaling warm start. Weights default to
// uniform; sizes may differ.
inline SinkhornResult solve_sinkhorn(const PointBatch& x0, const PointBatch& x1, double epsilon,
                                     int max_iter = 2000, double tol = 1e-9,
                                     const std::vector<double>* w0 = nullptr,
                                     const std::vector<double>* w1 = nullptr) {
  if (epsilon <= 0.0) throw ConfigError("solve_sinkhorn: epsilon must be > 0");
  if (x0.rows < 1 || x1.rows < 1) throw ConfigError("solve_sinkhorn: empty batch");
  if (x0.cols != x1.cols) throw ShapeError("solve_sinkhorn: dim mismatch");
  const int n = x0.rows, m = x1.rows;

  CostFn cost;
  std::vector<double> C(size_t(n) * m);
  double mean_cost = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) {
      C[size_t(i) * m + j] = cost(x0.row(i), x1.row(j));
      mean_cost += C[size_t(i) * m + j];
    }
  mean_cost /= double(n) * m;

  std::vector<double> loga(n), logb(m), a(n), b(m);
  for (int i = 0; i < n; ++i) {
    a[i] = w0 ? (*w0)[i] : 1.0 / n;
    loga[i] = std::log(a[i]);
  }
  for (int j = 0; j < m; ++j) {
    b[j] = w1 ? (*w1)[j] : 1.0 / m;
    logb[j] = std::log(b[j]);
  }

  std::vector<double> f(n, 0.0), g(m, 0.0);

  auto update = [&](double eps) {
    // f update: f_i = -eps * LSE_j((g_j - C_ij)/eps + log b_j)
    for (int i = 0; i < n; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < m; ++j)
        mx = std::max(mx, (g[j] - C[size_t(i) * m + j]) / eps + logb[j]);
      double s = 0.0;
      for (int j = 0; j < m; ++j)
        s += std::exp((g[j] - C[size_t(i) * m + j]) / eps + logb[j] - mx);
      f[i] = -eps * (mx + std::log(s));
    }
    for (int j = 0; j < m; ++j) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int i = 0; i < n; ++i)
        mx = std::max(mx, (f[i] - C[size_t(i) * m + j]) / eps + loga[i]);
      double s = 0.0;
      for (int i = 0; i < n; ++i)
        s += std::exp((f[i] - C[size_t(i) * m + j]) / eps + loga[i] - mx);
      g[j] = -eps * (mx + std::log(s));
    }
  };

  auto violation = [&](double eps) {
    double v = 0.0;
    for (int i = 0; i < n; ++i) {
      double s = 0.0;
      for (int j = 0; j < m; ++j)
        s += std::exp((f[i] + g[j] - C[size_t(i) * m + j]) / eps + loga[i] + logb[j]);
      v += std::abs(s - a[i]);
    }
    for (int j = 0; j < m; ++j) {
      double s = 0.0;
      for (int i = 0; i < n; ++i)
        s += std::exp((f[i] + g[j] - C[size_t(i) * m + j]) / eps + loga[i] + logb[j]);
      v += std::abs(s - b[j]);
    }
    return v;
  };

  // warm start from larger epsilon, halving toward the target
  double eps_cur = std::max(epsilon, 0.5 * mean_cost);
  while (eps_cur > epsilon * 1.0001) {
    for (int it = 0; it < 5; ++it) update(eps_cur);
    eps_cur = std::max(epsilon, eps_cur * 0.5);
  }

  SinkhornResult res;
  bool converged = false;
  int it = 0;
  for (; it < max_iter; ++it) {
    update(epsilon);
    const double v = violation(epsilon);
    res.violation_history.push_back(v);
    if (v < tol) {
      converged = true;
      ++it;
      break;
    }
  }
  res.iterations = it;
  res.converged = converged;

  TransportPlan& plan = res.plan;
  plan.kind = TransportPlan::Kind::Dense;
  plan.n = n;
  plan.m = m;
  plan.src_w = a;
  plan.tgt_w = b;
  plan.mass.resize(size_t(n) * m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j)
      plan.mass[size_t(i) * m + j] =
          std::exp((f[i] + g[j] - C[size_t(i) * m + j]) / epsilon + loga[i] + logb[j]);
  plan.converged = converged;
  plan.total_cost = plan.recompute_cost(x0, x1);
  return res;
}

// Draw B index pairs with probability proportional to plan mass and return
// the corresponding point rows.
inline std::pair<PointBatch, PointBatch> sample_pairs(const TransportPlan& plan,
                                                      const PointBatch& x0, const PointBatch& x1,
                                                      int B, Rng& rng) {
  if (B < 1) throw ConfigError("sample_pairs: B must be >= 1");
  if (plan.n < 1 || plan.m < 1) throw ConfigError("sample_pairs: empty plan");
  PointBatch out0(B, x0.cols), out1(B, x1.cols);
  if (plan.kind == TransportPlan::Kind::Assignment) {
    for (int b = 0; b < B; ++b) {
      const int i = int(rng.index(size_t(plan.n)));
      std::copy_n(x0.row(i).data(), x0.cols, out0.row(b).data());
      std::copy_n(x1.row(plan.perm[i]).data(), x1.cols, out1.row(b).data());
    }
    return {out0, out1};
  }
  std::vector<double> cum(plan.mass.size());
  double acc = 0.0;
  for (size_t k = 0; k < plan.mass.size(); ++k) {
    acc += plan.mass[k];
    cum[k] = acc;
  }
  if (acc <= 0.0) throw ConfigError("sample_pairs: plan has no mass");
  for (int b = 0; b < B; ++b) {
    const double u = rng.uniform() * acc;
    const size_t k = size_t(std::lower_bound(cum.begin(), cum.end(), u) - cum.begin());
    const size_t kk = std::min(k, cum.size() - 1);
    const int i = int(kk / size_t(plan.m));
    const int j = int(kk % size_t(plan.m));
    std::copy_n(x0.row(i).data(), x0.cols, out0.row(b).data());
    std::copy_n(x1.row(j).data(), x1.cols, out1.row(b).data());
  }
  return {out0, out1};
}

// Debug dump: one (i, j, mass, cost) row per plan entry with nonzero mass.
inline void plan_to_csv(const TransportPlan& plan, const PointBatch& x0, const PointBatch& x1,
                        std::ostream& os) {
  CostFn cost;
  os << "i,j,mass,cost\n";
  for (int i = 0; i < plan.n; ++i)
    for (int j = 0; j < plan.m; ++j) {
      const double w = plan.mass_at(i, j);
      if (w == 0.0) continue;
      os << i << ',' << j << ',' << w << ',' << cost(x0.row(i), x1.row(j)) << '\n';
    }
}

}  // namespace ffm
