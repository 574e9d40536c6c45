#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <vector>

#include "ffm/core.hpp"

namespace ffm {

enum class DistKind { Gaussian, EightGaussians, TwoMoons, UniformBox };

// Parameter set for the benchmark source/target distributions. Only the
// fields relevant to `kind` are used; validate() enforces them.
struct DistributionSpec {
  DistKind kind = DistKind::Gaussian;
  int dim = 2;

  // Gaussian
  std::vector<double> mean;      // empty => zeros
  std::vector<double> cov_diag;  // empty => ones

  // EightGaussians
  double radius = 4.0;
  double mode_std = -1.0;  // < 0 => 0.1 * radius

  // TwoMoons
  double moon_noise = 0.05;

  // UniformBox
  std::vector<double> low;   // empty => -1
  std::vector<double> high;  // empty => +1

  void validate() const {
    if (dim < 1) throw ConfigError("distribution dim must be >= 1");
    switch (kind) {
      case DistKind::Gaussian:
        if (!mean.empty() && int(mean.size()) != dim)
          throw ConfigError("gaussian mean length != dim");
        if (!cov_diag.empty()) {
          if (int(cov_diag.size()) != dim) throw ConfigError("gaussian cov_diag length != dim");
          for (double v : cov_diag)
            if (v <= 0.0) throw ConfigError("gaussian cov_diag entries must be > 0");
        }
        break;
      case DistKind::EightGaussians:
        if (dim != 2) throw ConfigError("eight_gaussians requires dim == 2");
        if (radius <= 0.0) throw ConfigError("eight_gaussians radius must be > 0");
        if (mode_std == 0.0) throw ConfigError("eight_gaussians std must be > 0");
        break;
      case DistKind::TwoMoons:
        if (dim != 2) throw ConfigError("two_moons requires dim == 2");
        if (moon_noise < 0.0) throw ConfigError("two_moons noise must be >= 0");
        break;
      case DistKind::UniformBox: {
        if (!low.empty() && int(low.size()) != dim) throw ConfigError("uniform low length != dim");
        if (!high.empty() && int(high.size()) != dim)
          throw ConfigError("uniform high length != dim");
        for (int i = 0; i < dim; ++i) {
          const double lo = low.empty() ? -1.0 : low[i];
          const double hi = high.empty() ? 1.0 : high[i];
          if (!(lo < hi)) throw ConfigError("uniform box requires low < high componentwise");
        }
        break;
      }
    }
  }

  double eight_std() const { return mode_std < 0.0 ? 0.1 * radius : mode_std; }

  // Number of labeled components (for non-IID partitioning).
  int n_components() const {
    switch (kind) {
      case DistKind::EightGaussians: return 8;
      case DistKind::TwoMoons: return 2;
      default: return 1;
    }
  }

  // Mode centers of the 8-Gaussian ring, equally spaced, mode 0 at angle 0.
  std::pair<double, double> eight_mode(int k) const {
    const double a = 2.0 * std::numbers::pi * k / 8.0;
    return {radius * std::cos(a), radius * std::sin(a)};
  }
};

// Draw n samples; if `labels` is given it receives the component index of
// each row (8-Gaussian mode, moon index; 0 for unimodal kinds).
inline PointBatch sample(const DistributionSpec& spec, int n, Rng& rng,
                         std::vector<int>* labels = nullptr) {
  spec.validate();
  if (n < 1) throw ConfigError("sample: n must be >= 1");
  PointBatch out(n, spec.dim);
  if (labels) labels->assign(n, 0);
  switch (spec.kind) {
    case DistKind::Gaussian:
      for (int r = 0; r < n; ++r)
        for (int c = 0; c < spec.dim; ++c) {
          const double mu = spec.mean.empty() ? 0.0 : spec.mean[c];
          const double sd = spec.cov_diag.empty() ? 1.0 : std::sqrt(spec.cov_diag[c]);
          out.at(r, c) = mu + sd * rng.normal();
        }
      break;
    case DistKind::EightGaussians: {
      const double sd = spec.eight_std();
      for (int r = 0; r < n; ++r) {
        const int k = int(rng.index(8));
        auto [cx, cy] = spec.eight_mode(k);
        out.at(r, 0) = cx + sd * rng.normal();
        out.at(r, 1) = cy + sd * rng.normal();
        if (labels) (*labels)[r] = k;
      }
      break;
    }
    case DistKind::TwoMoons: {
      // two interleaving half-circles of radius 1, offsets (0.5, 0.5)
      for (int r = 0; r < n; ++r) {
        const int moon = int(rng.index(2));
        const double a = rng.uniform(0.0, std::numbers::pi);
        double x, y;
        if (moon == 0) {  // upper
          x = std::cos(a);
          y = std::sin(a);
        } else {  // lower
          x = 0.5 - std::cos(a);
          y = 0.5 - std::sin(a);
        }
        out.at(r, 0) = x + spec.moon_noise * rng.normal();
        out.at(r, 1) = y + spec.moon_noise * rng.normal();
        if (labels) (*labels)[r] = moon;
      }
      break;
    }
    case DistKind::UniformBox:
      for (int r = 0; r < n; ++r)
        for (int c = 0; c < spec.dim; ++c) {
          const double lo = spec.low.empty() ? -1.0 : spec.low[c];
          const double hi = spec.high.empty() ? 1.0 : spec.high[c];
          out.at(r, c) = rng.uniform(lo, hi);
        }
      break;
  }
  out.require_finite("sampled batch");
  return out;
}

inline PointBatch gaussian_noise(int dim, int n, Rng& rng) {
  if (dim < 1 || n < 1) throw ConfigError("gaussian_noise: dim and n must be >= 1");
  PointBatch out(n, dim);
  for (double& v : out.data) v = rng.normal();
  return out;
}

}  // namespace ffm
