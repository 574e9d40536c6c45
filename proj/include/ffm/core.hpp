#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ffm {

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
inline uint64_t splitmix64(uint64_t& x) {
  uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}
inline uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
}  // namespace detail

// xoshiro256++ seeded through splitmix64. child() derives an independent
// substream from (seed, tag_a, tag_b), so per-client/per-round streams do not
// depend on execution order.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed) {
    uint64_t sm = seed;
    for (auto& w : s_) w = detail::splitmix64(sm);
  }

  uint64_t seed() const { return seed_; }

  uint64_t next_u64() {
    const uint64_t result = detail::rotl(s_[0] + s_[3], 23) + s_[0];
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = detail::rotl(s_[3], 45);
    return result;
  }

  // uniform in [0, 1)
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    // Box-Muller
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // index in [0, n)
  size_t index(size_t n) {
    // rejection to avoid modulo bias
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return size_t(x % n);
  }

  Rng child(uint64_t a, uint64_t b = 0) const {
    uint64_t h = seed_;
    h = detail::splitmix64(h) ^ (0x9E3779B97F4A7C15ULL * (a + 1));
    h = detail::splitmix64(h) ^ (0xC2B2AE3D27D4EB4FULL * (b + 1));
    detail::splitmix64(h);
    return Rng(h);
  }

 private:
  uint64_t s_[4];
  uint64_t seed_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Dense batch of points, row-major: rows = batch size, cols = dimension.
struct PointBatch {
  std::vector<double> data;
  int rows = 0;
  int cols = 0;

  PointBatch() = default;
  PointBatch(int r, int c) : data(size_t(r) * c, 0.0), rows(r), cols(c) {
    if (r < 0 || c < 0) throw ShapeError("negative PointBatch shape");
  }

  double& at(int r, int c) { return data[size_t(r) * cols + c]; }
  double at(int r, int c) const { return data[size_t(r) * cols + c]; }
  std::span<double> row(int r) { return {data.data() + size_t(r) * cols, size_t(cols)}; }
  std::span<const double> row(int r) const {
    return {data.data() + size_t(r) * cols, size_t(cols)};
  }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  void require_finite(const char* what) const {
    if (!all_finite()) throw NumericError(std::string("non-finite values in ") + what);
  }

  PointBatch slice_rows(int begin, int count) const {
    PointBatch out(count, cols);
    std::copy_n(data.begin() + size_t(begin) * cols, size_t(count) * cols, out.data.begin());
    return out;
  }

  static PointBatch vstack(const PointBatch& a, const PointBatch& b) {
    if (a.cols != b.cols) throw ShapeError("vstack: column mismatch");
    PointBatch out(a.rows + b.rows, a.cols);
    std::copy(a.data.begin(), a.data.end(), out.data.begin());
    std::copy(b.data.begin(), b.data.end(), out.data.begin() + a.data.size());
    return out;
  }
};

inline double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

namespace detail {
inline size_t pow2_below(size_t n) {
  size_t p = 1;
  while (p * 2 < n) p *= 2;
  return p;
}
}  // namespace detail

// Pairwise (binary-tree) summation with splits at powers of two. Besides the
// usual accuracy benefit, the tree structure makes block-wise partial sums
// compose exactly: summing [0,p) and [p,n) separately and adding the results
// is bit-identical to summing [0,n), whenever p is the pow2 split point.
inline double pairwise_sum(const double* x, size_t n) {
  if (n == 0) return 0.0;
  if (n <= 8) {
    double s = x[0];
    for (size_t i = 1; i < n; ++i) s += x[i];
    return s;
  }
  const size_t p = detail::pow2_below(n);
  return pairwise_sum(x, p) + pairwise_sum(x + p, n - p);
}

inline double pairwise_sum(const std::vector<double>& x) { return pairwise_sum(x.data(), x.size()); }

// C (m x n) += A (m x k) * B (k x n), all row-major. ikj order: the inner
// accumulation for every output element runs over k sequentially, so row r of
// the result does not depend on how many other rows the call carries.
inline void gemm_acc(const double* A, const double* B, double* C, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* a = A + size_t(i) * k;
    double* c = C + size_t(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = a[p];
      const double* b = B + size_t(p) * n;
      for (int j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

// C (m x n) = A (m x k) * B^T where B is (n x k) row-major.
inline void gemm_bt(const double* A, const double* B, double* C, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* a = A + size_t(i) * k;
    double* c = C + size_t(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* b = B + size_t(j) * k;
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += a[p] * b[p];
      c[j] = s;
    }
  }
}

namespace detail {

constexpr int kReduceLeaf = 32;

// GW (nin x nout) = sum_r X[r,:] (x) D[r,:]; Gb (nout) = sum_r D[r,:],
// reduced as a pairwise tree over rows with pow2 splits (see pairwise_sum).
inline void outer_reduce_rec(const double* X, const double* D, int rows, int nin, int nout,
                             double* GW, double* Gb) {
  if (rows <= kReduceLeaf) {
    std::fill(GW, GW + size_t(nin) * nout, 0.0);
    std::fill(Gb, Gb + nout, 0.0);
    for (int r = 0; r < rows; ++r) {
      const double* x = X + size_t(r) * nin;
      const double* d = D + size_t(r) * nout;
      for (int i = 0; i < nin; ++i) {
        const double xv = x[i];
        double* g = GW + size_t(i) * nout;
        for (int j = 0; j < nout; ++j) g[j] += xv * d[j];
      }
      for (int j = 0; j < nout; ++j) Gb[j] += d[j];
    }
    return;
  }
  const int p = int(pow2_below(size_t(rows)));
  std::vector<double> gw2(size_t(nin) * nout);
  std::vector<double> gb2(size_t(nout), 0.0);
  outer_reduce_rec(X, D, p, nin, nout, GW, Gb);
  outer_reduce_rec(X + size_t(p) * nin, D + size_t(p) * nout, rows - p, nin, nout, gw2.data(),
                   gb2.data());
  for (size_t i = 0; i < size_t(nin) * nout; ++i) GW[i] += gw2[i];
  for (int j = 0; j < nout; ++j) Gb[j] += gb2[j];
}

}  // namespace detail

inline void outer_reduce(const double* X, const double* D, int rows, int nin, int nout, double* GW,
                         double* Gb) {
  detail::outer_reduce_rec(X, D, rows, nin, nout, GW, Gb);
}

}  // namespace ffm
