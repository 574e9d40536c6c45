#pragma once

#include <optional>
#include <ostream>
#include <vector>

#include "ffm/core.hpp"
#include "ffm/nn.hpp"

namespace ffm {

struct Trajectory {
  // flattened: sample s, step k -> points[s * (steps+1) + k], each of dim d
  std::vector<double> points;
  std::vector<double> times;
  int n_samples = 0;
  int dim = 0;

  int n_steps() const { return int(times.size()) - 1; }
  std::span<const double> point(int sample, int step) const {
    return {points.data() + (size_t(sample) * times.size() + step) * dim, size_t(dim)};
  }
};

enum class Scheme { Euler, Midpoint, RK4 };

struct IntegratorCfg {
  Scheme scheme = Scheme::Euler;
  int nfe = 10;

  // steps derived from NFE: each Midpoint step costs 2 evals, RK4 costs 4
  int steps() const {
    switch (scheme) {
      case Scheme::Euler: return nfe;
      case Scheme::Midpoint:
        if (nfe % 2 != 0) throw ConfigError("Midpoint requires nfe divisible by 2");
        return nfe / 2;
      case Scheme::RK4:
        if (nfe % 4 != 0) throw ConfigError("RK4 requires nfe divisible by 4");
        return nfe / 4;
    }
    return nfe;
  }

  void validate() const {
    if (nfe < 1) throw ConfigError("nfe must be >= 1");
    (void)steps();
  }
};

inline PointBatch interpolate(const PointBatch& x0, const PointBatch& x1,
                              const std::vector<double>& t) {
  if (x0.rows != x1.rows || x0.cols != x1.cols) throw ShapeError("interpolate: shape mismatch");
  if (int(t.size()) != x0.rows) throw ShapeError("interpolate: t length mismatch");
  PointBatch xt(x0.rows, x0.cols);
  for (int r = 0; r < x0.rows; ++r) {
    const double tr = t[r];
    if (tr < 0.0 || tr > 1.0) throw ConfigError("interpolate: t outside [0,1]");
    for (int c = 0; c < x0.cols; ++c)
      xt.at(r, c) = (1.0 - tr) * x0.at(r, c) + tr * x1.at(r, c);
  }
  return xt;
}

// mean_b || v_theta(x_t, t) - (x1 - x0) ||^2 and its exact parameter gradient
inline std::pair<double, GradVector> cfm_loss(const ParamVector& field, const PointBatch& x0,
                                              const PointBatch& x1, const std::vector<double>& t) {
  const PointBatch xt = interpolate(x0, x1, t);
  const int B = x0.rows, d = x0.cols;
  return loss_and_grad(field, xt, &t, [&](const PointBatch& y) {
    if (y.cols != d) throw ShapeError("cfm_loss: field output dim != data dim");
    std::vector<double> row_losses(B);
    PointBatch dLdy(B, d);
    const double inv_b = 1.0 / double(B);
    for (int r = 0; r < B; ++r) {
      double s = 0.0;
      for (int c = 0; c < d; ++c) {
        const double e = y.at(r, c) - (x1.at(r, c) - x0.at(r, c));
        s += e * e;
        dLdy.at(r, c) = 2.0 * e * inv_b;
      }
      row_losses[r] = s * inv_b;
    }
    return std::make_pair(pairwise_sum(row_losses), dLdy);
  });
}

// Fixed-grid integration of dx/dt = v_theta(x, t) from t=0 to t=1 with
// exactly cfg.nfe field evaluations.
inline std::pair<PointBatch, std::optional<Trajectory>> integrate(const ParamVector& field,
                                                                 const PointBatch& x0,
                                                                 const IntegratorCfg& cfg,
                                                                 bool record = false) {
  cfg.validate();
  const int B = x0.rows, d = x0.cols;
  const int steps = cfg.steps();
  const double h = 1.0 / steps;

  std::optional<Trajectory> traj;
  if (record) {
    traj.emplace();
    traj->n_samples = B;
    traj->dim = d;
    traj->times.resize(steps + 1);
    for (int k = 0; k <= steps; ++k) traj->times[k] = (k == steps) ? 1.0 : k * h;
    traj->points.assign(size_t(B) * (steps + 1) * d, 0.0);
  }

  auto eval = [&](const PointBatch& x, double t) {
    std::vector<double> tv(B, t);
    return forward(field, x, &tv);
  };
  auto check = [&](const PointBatch& x, int step) {
    if (!x.all_finite())
      throw NumericError("integrate: non-finite state at step " + std::to_string(step));
  };
  auto store = [&](const PointBatch& x, int step) {
    if (!traj) return;
    for (int r = 0; r < B; ++r)
      std::copy_n(x.row(r).data(), d,
                  traj->points.data() + (size_t(r) * (steps + 1) + step) * d);
  };

  PointBatch x = x0;
  store(x, 0);
  for (int k = 0; k < steps; ++k) {
    const double t = k * h;
    switch (cfg.scheme) {
      case Scheme::Euler: {
        const PointBatch v = eval(x, t);
        for (size_t i = 0; i < x.data.size(); ++i) x.data[i] += h * v.data[i];
        break;
      }
      case Scheme::Midpoint: {
        const PointBatch k1 = eval(x, t);
        PointBatch xm = x;
        for (size_t i = 0; i < x.data.size(); ++i) xm.data[i] += 0.5 * h * k1.data[i];
        const PointBatch k2 = eval(xm, t + 0.5 * h);
        for (size_t i = 0; i < x.data.size(); ++i) x.data[i] += h * k2.data[i];
        break;
      }
      case Scheme::RK4: {
        const PointBatch k1 = eval(x, t);
        PointBatch tmp = x;
        for (size_t i = 0; i < x.data.size(); ++i) tmp.data[i] = x.data[i] + 0.5 * h * k1.data[i];
        const PointBatch k2 = eval(tmp, t + 0.5 * h);
        for (size_t i = 0; i < x.data.size(); ++i) tmp.data[i] = x.data[i] + 0.5 * h * k2.data[i];
        const PointBatch k3 = eval(tmp, t + 0.5 * h);
        for (size_t i = 0; i < x.data.size(); ++i) tmp.data[i] = x.data[i] + h * k3.data[i];
        const PointBatch k4 = eval(tmp, t + h);
        for (size_t i = 0; i < x.data.size(); ++i)
          x.data[i] += h / 6.0 * (k1.data[i] + 2.0 * k2.data[i] + 2.0 * k3.data[i] + k4.data[i]);
        break;
      }
    }
    check(x, k + 1);
    store(x, k + 1);
  }
  return {std::move(x), std::move(traj)};
}

struct StraightnessReport {
  double value = 0.0;   // mean (arc length / chord length) - 1
  int n_used = 0;
  int n_excluded = 0;   // rows with degenerate chord
};

inline StraightnessReport straightness(const Trajectory& traj) {
  const int S = traj.n_steps();
  if (S < 1) throw ConfigError("straightness: trajectory needs at least one step");
  StraightnessReport rep;
  std::vector<double> ratios;
  for (int s = 0; s < traj.n_samples; ++s) {
    double arc = 0.0;
    for (int k = 0; k < S; ++k)
      arc += std::sqrt(sq_dist(traj.point(s, k), traj.point(s, k + 1)));
    const double chord = std::sqrt(sq_dist(traj.point(s, 0), traj.point(s, S)));
    if (chord <= 1e-12) {
      ++rep.n_excluded;
      continue;
    }
    ratios.push_back(arc / chord - 1.0);
  }
  rep.n_used = int(ratios.size());
  if (rep.n_used > 0) rep.value = pairwise_sum(ratios) / rep.n_used;
  return rep;
}

// CSV export: (sample_id, step, t, x_1..x_d)
inline void trajectory_to_csv(const Trajectory& traj, std::ostream& os) {
  os << "sample_id,step,t";
  for (int c = 0; c < traj.dim; ++c) os << ",x_" << (c + 1);
  os << '\n';
  for (int s = 0; s < traj.n_samples; ++s)
    for (int k = 0; k <= traj.n_steps(); ++k) {
      os << s << ',' << k << ',' << traj.times[k];
      for (double v : traj.point(s, k)) os << ',' << v;
      os << '\n';
    }
}

}  // namespace ffm
