#pragma once

#include <cmath>
#include <numeric>
#include <ostream>
#include <vector>

#include "ffm/core.hpp"
#include "ffm/distributions.hpp"
#include "ffm/flow.hpp"
#include "ffm/ot.hpp"

namespace ffm {

struct W2Report {
  int nfe = 0;
  double w2 = 0.0;
  double straightness = 0.0;
  int n_eval = 0;
  uint64_t seed = 0;
  bool exact = true;  // false when the Sinkhorn fallback was used
};

struct W2Options {
  int exact_cap = 2048;      // largest size solved exactly
  double sinkhorn_eps_rel = 0.01;  // epsilon as fraction of mean cost, beyond cap
};

namespace detail {
inline PointBatch take_first(const PointBatch& x, int n) {
  return n == x.rows ? x : x.slice_rows(0, n);
}
}  // namespace detail

// Empirical 2-Wasserstein distance between point multisets. Counts are
// equalized by truncating the larger batch; sizes beyond the exact cap fall
// back to Sinkhorn with a small epsilon (flagged via *used_exact).
inline double w2_empirical(const PointBatch& a, const PointBatch& b, W2Options opt = {},
                           bool* used_exact = nullptr) {
  if (a.rows < 1 || b.rows < 1) throw ConfigError("w2_empirical: empty batch");
  if (a.cols != b.cols) throw ShapeError("w2_empirical: dim mismatch");
  int n = std::min(a.rows, b.rows);
  bool exact = n <= opt.exact_cap;
  if (!exact && opt.exact_cap > 0) {
    // prefer a capped exact solve over an entropic estimate
    n = opt.exact_cap;
    exact = true;
  }
  const PointBatch aa = detail::take_first(a, n);
  const PointBatch bb = detail::take_first(b, n);
  double mean_cost;
  if (exact) {
    mean_cost = solve_exact(aa, bb, std::max(n, kDefaultExactCap)).total_cost;
  } else {
    CostFn cost;
    double mc = 0.0;
    for (int i = 0; i < n; ++i) mc += cost(aa.row(i), bb.row(i));
    mc /= n;
    mean_cost = solve_sinkhorn(aa, bb, opt.sinkhorn_eps_rel * std::max(mc, 1e-12), 2000, 1e-6)
                    .plan.total_cost;
  }
  if (used_exact) *used_exact = exact;
  return std::sqrt(2.0 * mean_cost);  // cost is half squared distance
}

// Integrate n_eval source samples at each NFE and compare against held-out
// target samples.
inline std::vector<W2Report> w2_vs_nfe(const ParamVector& field, const DistributionSpec& source,
                                       const PointBatch& target, const std::vector<int>& nfes,
                                       int n_eval, Scheme scheme, Rng& rng, W2Options opt = {}) {
  if (nfes.empty()) throw ConfigError("w2_vs_nfe: empty NFE list");
  std::vector<W2Report> out;
  for (int nfe : nfes) {
    Rng r = rng.child(0xE7A1, uint64_t(nfe));
    const PointBatch x0 = sample(source, n_eval, r);
    IntegratorCfg cfg{scheme, nfe};
    auto [x1_hat, traj] = integrate(field, x0, cfg, true);
    W2Report rep;
    rep.nfe = nfe;
    rep.n_eval = n_eval;
    rep.seed = rng.seed();
    rep.w2 = w2_empirical(x1_hat, target, opt, &rep.exact);
    rep.straightness = straightness(*traj).value;
    out.push_back(rep);
  }
  return out;
}

// Discrete measure with integer multiplicities (rational weights).
struct DiscreteMeasure {
  PointBatch points;
  std::vector<int> mult;

  long long total() const { return std::accumulate(mult.begin(), mult.end(), 0LL); }
};

// W2^2 between two discrete measures via the exact weighted solver.
inline double w2sq_discrete(const DiscreteMeasure& a, const DiscreteMeasure& b, int cap = 1024) {
  return 2.0 * solve_exact_weighted(a.points, a.mult, b.points, b.mult, cap).total_cost;
}

struct Lemma1Result {
  double lhs = 0.0;  // W2^2(mu, mixture)
  double rhs = 0.0;  // sum_i lambda_i W2^2(mu, nu_i)
  bool holds = false;
};

// W_2^2(mu, sum_i lambda_i nu_i) <= sum_i lambda_i W_2^2(mu, nu_i), with
// lambda given as integer numerators (lambda_i = num_i / sum(num)).
inline Lemma1Result lemma1_check(const DiscreteMeasure& mu, const std::vector<DiscreteMeasure>& nus,
                                 const std::vector<int>& lambda_num, int cap = 1024) {
  if (nus.empty() || nus.size() != lambda_num.size())
    throw ConfigError("lemma1_check: need one weight per measure");
  long long lam_tot = 0;
  for (int v : lambda_num) {
    if (v < 1) throw ConfigError("lemma1_check: weights must be positive");
    lam_tot += v;
  }
  // common total so each nu_i contributes exactly lambda_i of the mixture mass
  long long T = 1;
  for (const auto& nu : nus) T = std::lcm(T, nu.total());

  DiscreteMeasure mixture;
  mixture.points = PointBatch(0, mu.points.cols);
  for (size_t i = 0; i < nus.size(); ++i) {
    const long long scale = lambda_num[i] * (T / nus[i].total());
    for (int r = 0; r < nus[i].points.rows; ++r) {
      mixture.points = PointBatch::vstack(mixture.points, nus[i].points.slice_rows(r, 1));
      mixture.mult.push_back(int(nus[i].mult[r] * scale));
    }
  }

  Lemma1Result res;
  res.lhs = w2sq_discrete(mu, mixture, cap);
  std::vector<double> terms(nus.size());
  for (size_t i = 0; i < nus.size(); ++i)
    terms[i] = double(lambda_num[i]) / double(lam_tot) * w2sq_discrete(mu, nus[i], cap);
  res.rhs = pairwise_sum(terms);
  res.holds = res.lhs <= res.rhs + 1e-9;
  return res;
}

// A transport plan viewed as a discrete measure on the product space, with
// masses scaled to integer multiplicities by `denom`.
inline DiscreteMeasure plan_as_measure(const TransportPlan& plan, const PointBatch& x0,
                                       const PointBatch& x1, long long denom) {
  DiscreteMeasure out;
  out.points = PointBatch(0, x0.cols + x1.cols);
  for (int i = 0; i < plan.n; ++i)
    for (int j = 0; j < plan.m; ++j) {
      const double w = plan.mass_at(i, j);
      if (w <= 0.0) continue;
      const double scaled = w * double(denom);
      const int k = int(std::llround(scaled));
      if (k < 1 || std::abs(scaled - k) > 1e-6)
        throw NumericError("plan_as_measure: mass not representable at given denominator");
      PointBatch row(1, x0.cols + x1.cols);
      std::copy_n(x0.row(i).data(), x0.cols, row.row(0).data());
      std::copy_n(x1.row(j).data(), x1.cols, row.row(0).data() + x0.cols);
      out.points = PointBatch::vstack(out.points, row);
      out.mult.push_back(k);
    }
  return out;
}

struct SweepPoint {
  double skew = 0.0;           // fraction of left-cluster mass moved to client 1
  double heterogeneity = 0.0;  // sum_i lambda_i W2(q1, q1^i)
  double plan_gap_sq = 0.0;    // W2^2(global plan, mixture of local plans)
};

// Two-cluster, two-client family: the global target holds two copies of each
// of 2*ppc points (ppc per cluster); skew moves left-cluster copies to
// client 1 and right-cluster copies to client 2. At skew 0 both clients hold
// the same measure as the global target, so the mixed local plan matches the
// global plan exactly.
inline std::vector<SweepPoint> theorem1_sweep(int n_levels = 5, uint64_t seed = 7,
                                              int points_per_cluster = 4,
                                              double cluster_sep = 8.0) {
  if (n_levels < 2) throw ConfigError("theorem1_sweep: need at least 2 skew levels");
  const int ppc = points_per_cluster;
  const int S = 2 * ppc;       // distinct target points
  const int n_src = 2 * S;     // source points (uniform mass)
  Rng rng(seed);

  auto jitter = [&]() { return 0.6 * rng.normal(); };
  PointBatch target(S, 2);
  for (int k = 0; k < ppc; ++k) {  // left cluster
    target.at(k, 0) = -cluster_sep / 2 + jitter();
    target.at(k, 1) = 2.0 + jitter();
  }
  for (int k = 0; k < ppc; ++k) {  // right cluster
    target.at(ppc + k, 0) = cluster_sep / 2 + jitter();
    target.at(ppc + k, 1) = 2.0 + jitter();
  }
  PointBatch source(n_src, 2);
  for (int k = 0; k < S; ++k) {
    source.at(k, 0) = -cluster_sep / 2 + jitter();
    source.at(k, 1) = -2.0 + jitter();
  }
  for (int k = 0; k < S; ++k) {
    source.at(S + k, 0) = cluster_sep / 2 + jitter();
    source.at(S + k, 1) = -2.0 + jitter();
  }
  const std::vector<int> src_mult(n_src, 1);
  const std::vector<int> tgt_mult_global(S, 2);  // two copies of every point

  const TransportPlan global_plan =
      solve_exact_weighted(source, src_mult, target, tgt_mult_global);
  const DiscreteMeasure global_measure =
      plan_as_measure(global_plan, source, target, 2LL * n_src);

  std::vector<SweepPoint> out;
  for (int lev = 0; lev < n_levels; ++lev) {
    const double s = double(lev) / double(n_levels - 1);
    // client 1 holds extra left copies: ppc + extra of 2*ppc left copies
    const int extra = int(std::llround(s * ppc));
    std::vector<int> m1(S, 0), m2(S, 0);
    for (int k = 0; k < ppc; ++k) {  // left points: 2 copies each to share
      const int c1 = std::min(2, 1 + (k < extra ? 1 : 0));
      m1[k] = c1;
      m2[k] = 2 - c1;
    }
    for (int k = 0; k < ppc; ++k) {  // right points mirror
      const int c2 = std::min(2, 1 + (k < extra ? 1 : 0));
      m2[ppc + k] = c2;
      m1[ppc + k] = 2 - c2;
    }

    auto client_measure = [&](const std::vector<int>& m) {
      DiscreteMeasure cm;
      cm.points = PointBatch(0, 2);
      for (int k = 0; k < S; ++k)
        if (m[k] > 0) {
          cm.points = PointBatch::vstack(cm.points, target.slice_rows(k, 1));
          cm.mult.push_back(m[k]);
        }
      return cm;
    };
    const DiscreteMeasure c1 = client_measure(m1), c2 = client_measure(m2);

    SweepPoint pt;
    pt.skew = s;

    const double w2_1 = std::sqrt(w2sq_discrete({target, tgt_mult_global}, c1));
    const double w2_2 = std::sqrt(w2sq_discrete({target, tgt_mult_global}, c2));
    pt.heterogeneity = 0.5 * w2_1 + 0.5 * w2_2;

    const TransportPlan p1 = solve_exact_weighted(source, src_mult, c1.points, c1.mult);
    const TransportPlan p2 = solve_exact_weighted(source, src_mult, c2.points, c2.mult);
    // mixture of local plans, each with weight 1/2; masses are k/(2*2*n_src)
    const long long denom = 4LL * n_src;
    DiscreteMeasure mix1 = plan_as_measure(p1, source, c1.points, denom / 2);
    const DiscreteMeasure mix2 = plan_as_measure(p2, source, c2.points, denom / 2);
    mix1.points = PointBatch::vstack(mix1.points, mix2.points);
    mix1.mult.insert(mix1.mult.end(), mix2.mult.begin(), mix2.mult.end());

    pt.plan_gap_sq = w2sq_discrete(global_measure, mix1, 1024);
    out.push_back(pt);
  }
  return out;
}

// Evaluation CSV: (tag, algorithm, round, nfe, w2, straightness, n_eval, seed)
inline void w2_reports_to_csv(std::ostream& os, const std::string& tag,
                              const std::string& algorithm, int round,
                              const std::vector<W2Report>& reports, bool header) {
  if (header) os << "tag,algorithm,round,nfe,w2,straightness,n_eval,seed\n";
  for (const auto& r : reports)
    os << tag << ',' << algorithm << ',' << round << ',' << r.nfe << ',' << r.w2 << ','
       << r.straightness << ',' << r.n_eval << ',' << r.seed << '\n';
}

}  // namespace ffm
