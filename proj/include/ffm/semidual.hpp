#pragma once

#include <vector>

#include "ffm/core.hpp"
#include "ffm/nn.hpp"
#include "ffm/ot.hpp"

namespace ffm {

struct CTransformCfg {
  enum class Mode { PoolMin, PoolMinPlusGD };
  Mode mode = Mode::PoolMin;
  int pool_size = 256;
  int gd_steps = 0;
  double gd_lr = 0.5;

  void validate() const {
    if (pool_size < 1) throw ConfigError("ctransform pool_size must be >= 1");
    if (gd_steps < 0) throw ConfigError("ctransform gd_steps must be >= 0");
    if (mode == Mode::PoolMinPlusGD && gd_steps > 0 && gd_lr <= 0.0)
      throw ConfigError("ctransform gd_lr must be > 0");
  }
};

struct CTransformResult {
  std::vector<double> values;  // f^c(x1_j)
  PointBatch minimizers;       // argmin x0 per row
  std::vector<int> pool_argmin;
};

namespace detail {

// scores[j*K + k] = c(pool_k, x1_j) - f(pool_k); ties break toward lowest k
inline std::vector<int> pool_argmin(const PointBatch& x1, const PointBatch& pool,
                                    const std::vector<double>& f_pool,
                                    std::vector<double>* best_scores = nullptr) {
  CostFn cost;
  std::vector<int> arg(x1.rows);
  if (best_scores) best_scores->resize(x1.rows);
  for (int j = 0; j < x1.rows; ++j) {
    double best = std::numeric_limits<double>::infinity();
    int bk = 0;
    for (int k = 0; k < pool.rows; ++k) {
      const double s = cost(pool.row(k), x1.row(j)) - f_pool[k];
      if (s < best) {
        best = s;
        bk = k;
      }
    }
    arg[j] = bk;
    if (best_scores) (*best_scores)[j] = best;
  }
  return arg;
}

}  // namespace detail

inline std::vector<double> eval_potential(const ParamVector& f, const PointBatch& x) {
  const PointBatch y = forward(f, x);
  std::vector<double> out(y.rows);
  for (int r = 0; r < y.rows; ++r) out[r] = y.at(r, 0);
  return out;
}

// f^c(x1_j) = min over the candidate pool of c(x0_k, x1_j) - f(x0_k),
// optionally refined by gradient descent on x0 starting from the pool
// argmin. The reported value is never worse than the pool minimum.
inline CTransformResult c_transform(const ParamVector& f, const PointBatch& x1,
                                    const PointBatch& candidates, const CTransformCfg& cfg) {
  cfg.validate();
  if (candidates.rows < 1) throw ConfigError("c_transform: empty candidate pool");
  if (f.arch.output_dim != 1) throw ShapeError("c_transform: potential must be scalar-output");
  if (candidates.cols != x1.cols) throw ShapeError("c_transform: dim mismatch");

  const std::vector<double> f_pool = eval_potential(f, candidates);
  CTransformResult res;
  res.pool_argmin = detail::pool_argmin(x1, candidates, f_pool, &res.values);
  res.minimizers = PointBatch(x1.rows, x1.cols);
  for (int j = 0; j < x1.rows; ++j)
    std::copy_n(candidates.row(res.pool_argmin[j]).data(), x1.cols, res.minimizers.row(j).data());

  if (cfg.mode == CTransformCfg::Mode::PoolMinPlusGD && cfg.gd_steps > 0) {
    CostFn cost;
    PointBatch x = res.minimizers;
    for (int s = 0; s < cfg.gd_steps; ++s) {
      // d/dx0 [c(x0, x1) - f(x0)] = (x0 - x1) - grad f(x0)
      const PointBatch gf = grad_wrt_input(f, x);
      for (int j = 0; j < x.rows; ++j)
        for (int c = 0; c < x.cols; ++c)
          x.at(j, c) -= cfg.gd_lr * ((x.at(j, c) - x1.at(j, c)) - gf.at(j, c));
    }
    const std::vector<double> f_ref = eval_potential(f, x);
    for (int j = 0; j < x1.rows; ++j) {
      const double refined = cost(x.row(j), x1.row(j)) - f_ref[j];
      if (std::isfinite(refined) && refined < res.values[j]) {
        res.values[j] = refined;
        std::copy_n(x.row(j).data(), x.cols, res.minimizers.row(j).data());
      }
    }
  }
  return res;
}

struct ResampledPairs {
  PointBatch x0;  // selected pool points, one per target row
  PointBatch x1;
  std::vector<int> argmin_index;
  std::vector<double> score;  // c(x0_j, x1_j) - f(x0_j)
};

// For each target point pick the candidate minimizing c(x0, x1) - f(x0).
inline ResampledPairs resample_global(const ParamVector& f, const PointBatch& x0_pool,
                                      const PointBatch& x1_batch) {
  if (x0_pool.rows < 1) throw ConfigError("resample_global: empty candidate pool");
  if (x1_batch.rows < 1) throw ConfigError("resample_global: empty target batch");
  const std::vector<double> f_pool = eval_potential(f, x0_pool);
  ResampledPairs out;
  out.argmin_index = detail::pool_argmin(x1_batch, x0_pool, f_pool, &out.score);
  out.x1 = x1_batch;
  out.x0 = PointBatch(x1_batch.rows, x0_pool.cols);
  for (int j = 0; j < x1_batch.rows; ++j)
    std::copy_n(x0_pool.row(out.argmin_index[j]).data(), x0_pool.cols, out.x0.row(j).data());
  return out;
}

// Local semi-dual loss mean_b f(x0_b) + mean_b f^c(x1_b). The c-transform is
// evaluated at fixed minimizers (envelope treatment: no gradient through the
// argmin). The semi-dual is a maximization, so the returned gradient is that
// of the negated loss, suitable for a descent-style optimizer.
inline std::pair<double, GradVector> dual_loss_local(const ParamVector& f, const PointBatch& x0,
                                                     const PointBatch& x1,
                                                     const PointBatch& candidates,
                                                     const CTransformCfg& cfg) {
  if (x0.rows < 1 || x1.rows < 1) throw ConfigError("dual_loss_local: empty batch");
  const CTransformResult ct = c_transform(f, x1, candidates, cfg);

  // loss value
  ForwardCache cache0;
  const PointBatch y0 = forward(f, x0, nullptr, &cache0);
  std::vector<double> terms0(x0.rows), termsc(x1.rows);
  for (int r = 0; r < x0.rows; ++r) terms0[r] = y0.at(r, 0) / x0.rows;
  for (int r = 0; r < x1.rows; ++r) termsc[r] = ct.values[r] / x1.rows;
  const double loss = pairwise_sum(terms0) + pairwise_sum(termsc);
  if (!std::isfinite(loss)) throw NumericError("dual_loss_local: non-finite loss");

  // gradient of -loss: -(1/B0) sum grad f(x0_b) + (1/B1) sum grad f(xbar_j)
  PointBatch d0(x0.rows, 1);
  for (int r = 0; r < x0.rows; ++r) d0.at(r, 0) = -1.0 / x0.rows;
  GradVector grad = backward(f, cache0, d0);

  ForwardCache cachec;
  forward(f, ct.minimizers, nullptr, &cachec);
  PointBatch dc(x1.rows, 1);
  for (int r = 0; r < x1.rows; ++r) dc.at(r, 0) = 1.0 / x1.rows;
  const GradVector gradc = backward(f, cachec, dc);
  for (size_t i = 0; i < grad.values.size(); ++i) grad.values[i] += gradc.values[i];
  return {loss, grad};
}

}  // namespace ffm
