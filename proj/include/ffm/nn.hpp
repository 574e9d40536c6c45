#pragma once

#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "ffm/core.hpp"

namespace ffm {

enum class Activation { ReLU, SiLU, SELU };

struct MlpArch {
  int input_dim = 2;
  int output_dim = 2;
  std::vector<int> hidden;
  Activation activation = Activation::ReLU;
  bool time_conditioned = false;

  // dimension of the raw network input (data dim + 1 when time-conditioned)
  int net_input_dim() const { return input_dim + (time_conditioned ? 1 : 0); }

  int n_layers() const { return int(hidden.size()) + 1; }

  std::pair<int, int> layer_shape(int l) const {
    const int nin = (l == 0) ? net_input_dim() : hidden[l - 1];
    const int nout = (l == n_layers() - 1) ? output_dim : hidden[l];
    return {nin, nout};
  }

  size_t param_count() const {
    size_t n = 0;
    for (int l = 0; l < n_layers(); ++l) {
      auto [nin, nout] = layer_shape(l);
      n += size_t(nin) * nout + nout;
    }
    return n;
  }

  void validate() const {
    if (input_dim < 1 || output_dim < 1) throw ConfigError("MlpArch dims must be >= 1");
    for (int w : hidden)
      if (w < 1) throw ConfigError("MlpArch hidden widths must be >= 1");
  }

  bool operator==(const MlpArch&) const = default;
};

// Flat parameter vector; layout is layer-major, weights before biases.
// Layer l weight is (fan_in x fan_out) row-major.
struct ParamVector {
  std::vector<double> values;
  MlpArch arch;

  ParamVector() = default;
  explicit ParamVector(MlpArch a) : values(a.param_count(), 0.0), arch(std::move(a)) {}

  size_t weight_offset(int l) const {
    size_t off = 0;
    for (int i = 0; i < l; ++i) {
      auto [nin, nout] = arch.layer_shape(i);
      off += size_t(nin) * nout + nout;
    }
    return off;
  }
  size_t bias_offset(int l) const {
    auto [nin, nout] = arch.layer_shape(l);
    return weight_offset(l) + size_t(nin) * nout;
  }
  const double* weights(int l) const { return values.data() + weight_offset(l); }
  double* weights(int l) { return values.data() + weight_offset(l); }
  const double* bias(int l) const { return values.data() + bias_offset(l); }
  double* bias(int l) { return values.data() + bias_offset(l); }
};

struct GradVector {
  std::vector<double> values;

  GradVector() = default;
  explicit GradVector(size_t n) : values(n, 0.0) {}

  double norm() const {
    double s = 0.0;
    for (double v : values) s += v * v;
    return std::sqrt(s);
  }
};

inline ParamVector init_params(const MlpArch& arch, Rng& rng) {
  arch.validate();
  ParamVector p(arch);
  // Kaiming-uniform weights, zero biases
  for (int l = 0; l < arch.n_layers(); ++l) {
    auto [nin, nout] = arch.layer_shape(l);
    const double limit = std::sqrt(6.0 / nin);
    double* w = p.weights(l);
    for (size_t i = 0; i < size_t(nin) * nout; ++i) w[i] = rng.uniform(-limit, limit);
  }
  return p;
}

namespace detail {

inline double act_fwd(Activation a, double z) {
  switch (a) {
    case Activation::ReLU: return z > 0.0 ? z : 0.0;
    case Activation::SiLU: return z / (1.0 + std::exp(-z));
    case Activation::SELU: {
      constexpr double lam = 1.0507009873554804934193349852946;
      constexpr double alpha = 1.6732632423543772848170429916717;
      return z > 0.0 ? lam * z : lam * alpha * (std::exp(z) - 1.0);
    }
  }
  return 0.0;
}

// derivative given pre-activation z (ReLU subgradient 0 at z == 0)
inline double act_bwd(Activation a, double z) {
  switch (a) {
    case Activation::ReLU: return z > 0.0 ? 1.0 : 0.0;
    case Activation::SiLU: {
      const double s = 1.0 / (1.0 + std::exp(-z));
      return s * (1.0 + z * (1.0 - s));
    }
    case Activation::SELU: {
      constexpr double lam = 1.0507009873554804934193349852946;
      constexpr double alpha = 1.6732632423543772848170429916717;
      return z > 0.0 ? lam : lam * alpha * std::exp(z);
    }
  }
  return 0.0;
}

}  // namespace detail

// Per-layer activations kept for the backward pass.
struct ForwardCache {
  PointBatch net_input;               // B x net_input_dim
  std::vector<PointBatch> preacts;    // pre-activations per layer
  std::vector<PointBatch> activs;     // post-activations per hidden layer
};

inline PointBatch forward(const ParamVector& params, const PointBatch& x,
                          const std::vector<double>* t = nullptr, ForwardCache* cache = nullptr) {
  const MlpArch& arch = params.arch;
  if (x.cols != arch.input_dim) throw ShapeError("forward: input dim mismatch");
  if (arch.time_conditioned != (t != nullptr))
    throw ShapeError("forward: time column presence must match arch.time_conditioned");
  if (t && int(t->size()) != x.rows) throw ShapeError("forward: t length != batch size");

  const int B = x.rows;
  PointBatch in(B, arch.net_input_dim());
  for (int r = 0; r < B; ++r) {
    std::copy_n(x.row(r).data(), x.cols, in.row(r).data());
    if (t) in.at(r, x.cols) = (*t)[r];
  }
  if (cache) {
    cache->net_input = in;
    cache->preacts.clear();
    cache->activs.clear();
  }

  PointBatch cur = std::move(in);
  const int L = arch.n_layers();
  for (int l = 0; l < L; ++l) {
    auto [nin, nout] = arch.layer_shape(l);
    PointBatch z(B, nout);
    for (int r = 0; r < B; ++r) std::copy_n(params.bias(l), nout, z.row(r).data());
    gemm_acc(cur.data.data(), params.weights(l), z.data.data(), B, nin, nout);
    if (cache) cache->preacts.push_back(z);
    if (l == L - 1) {
      cur = std::move(z);
    } else {
      PointBatch a(B, nout);
      for (size_t i = 0; i < z.data.size(); ++i)
        a.data[i] = detail::act_fwd(arch.activation, z.data[i]);
      if (cache) cache->activs.push_back(a);
      cur = std::move(a);
    }
  }
  return cur;
}

// Reverse-mode pass. dLdy is the gradient of the scalar loss w.r.t. the
// network output (B x output_dim). Optionally also fills the gradient w.r.t.
// the data part of the input (B x input_dim, time column dropped).
inline GradVector backward(const ParamVector& params, const ForwardCache& cache,
                           const PointBatch& dLdy, PointBatch* dx = nullptr) {
  const MlpArch& arch = params.arch;
  const int B = cache.net_input.rows;
  if (dLdy.rows != B || dLdy.cols != arch.output_dim) throw ShapeError("backward: dLdy shape");

  GradVector grad(params.values.size());
  PointBatch delta = dLdy;  // gradient w.r.t. layer pre-activation
  const int L = arch.n_layers();
  for (int l = L - 1; l >= 0; --l) {
    auto [nin, nout] = arch.layer_shape(l);
    const PointBatch& in = (l == 0) ? cache.net_input : cache.activs[l - 1];
    outer_reduce(in.data.data(), delta.data.data(), B, nin, nout,
                 grad.values.data() + params.weight_offset(l),
                 grad.values.data() + params.bias_offset(l));
    if (l > 0 || dx != nullptr) {
      PointBatch dprev(B, nin);
      gemm_bt(delta.data.data(), params.weights(l), dprev.data.data(), B, nout, nin);
      if (l > 0) {
        const PointBatch& z = cache.preacts[l - 1];
        for (size_t i = 0; i < dprev.data.size(); ++i)
          dprev.data[i] *= detail::act_bwd(arch.activation, z.data[i]);
      }
      delta = std::move(dprev);
    }
  }
  if (dx) {
    *dx = PointBatch(B, arch.input_dim);
    for (int r = 0; r < B; ++r)
      std::copy_n(delta.row(r).data(), arch.input_dim, dx->row(r).data());
  }
  return grad;
}

// Loss closure maps the network output batch to (scalar loss, dL/doutput).
using LossClosure = std::function<std::pair<double, PointBatch>(const PointBatch&)>;

inline std::pair<double, GradVector> loss_and_grad(const ParamVector& params, const PointBatch& x,
                                                   const std::vector<double>* t,
                                                   const LossClosure& loss) {
  ForwardCache cache;
  const PointBatch y = forward(params, x, t, &cache);
  auto [value, dLdy] = loss(y);
  if (!std::isfinite(value)) throw NumericError("loss_and_grad: non-finite loss value");
  return {value, backward(params, cache, dLdy)};
}

// Per-row gradient of a scalar-output network w.r.t. its input.
inline PointBatch grad_wrt_input(const ParamVector& params, const PointBatch& x,
                                 const std::vector<double>* t = nullptr) {
  if (params.arch.output_dim != 1)
    throw ShapeError("grad_wrt_input: requires scalar-output network");
  ForwardCache cache;
  forward(params, x, t, &cache);
  PointBatch ones(x.rows, 1);
  std::fill(ones.data.begin(), ones.data.end(), 1.0);
  PointBatch dx;
  backward(params, cache, ones, &dx);
  return dx;
}

struct AdamState {
  std::vector<double> m, v;
  long step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState() = default;
  AdamState(size_t n, double lr_) : m(n, 0.0), v(n, 0.0), lr(lr_) {}
};

inline void adam_step(ParamVector& params, const GradVector& grad, AdamState& st) {
  const size_t n = params.values.size();
  if (grad.values.size() != n || st.m.size() != n || st.v.size() != n)
    throw ShapeError("adam_step: length mismatch");
  st.step += 1;
  const double bc1 = 1.0 - std::pow(st.beta1, double(st.step));
  const double bc2 = 1.0 - std::pow(st.beta2, double(st.step));
  for (size_t i = 0; i < n; ++i) {
    const double g = grad.values[i];
    st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * g;
    st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * g * g;
    const double mh = st.m[i] / bc1;
    const double vh = st.v[i] / bc2;
    params.values[i] -= st.lr * mh / (std::sqrt(vh) + st.eps);
  }
}

// ---- checkpoint format -----------------------------------------------------
// magic "FFMCKPT1", then u32 fields: version, input_dim, output_dim,
// n_hidden, hidden..., activation, time_conditioned, then u64 param count and
// the flat little-endian real64 parameter array.

namespace detail {
inline void put_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
inline void put_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
inline uint32_t get_u32(std::istream& is) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
inline uint64_t get_u64(std::istream& is) {
  uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  return v;
}
}  // namespace detail

inline void save_checkpoint(std::ostream& os, const ParamVector& params) {
  os.write("FFMCKPT1", 8);
  detail::put_u32(os, 1);
  detail::put_u32(os, uint32_t(params.arch.input_dim));
  detail::put_u32(os, uint32_t(params.arch.output_dim));
  detail::put_u32(os, uint32_t(params.arch.hidden.size()));
  for (int h : params.arch.hidden) detail::put_u32(os, uint32_t(h));
  detail::put_u32(os, uint32_t(params.arch.activation));
  detail::put_u32(os, params.arch.time_conditioned ? 1 : 0);
  detail::put_u64(os, params.values.size());
  os.write(reinterpret_cast<const char*>(params.values.data()),
           std::streamsize(params.values.size() * 8));
  if (!os) throw NumericError("save_checkpoint: write failed");
}

inline void save_checkpoint(const std::string& path, const ParamVector& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot open checkpoint for writing: " + path);
  save_checkpoint(os, params);
}

inline ParamVector load_checkpoint(std::istream& is) {
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, "FFMCKPT1", 8) != 0)
    throw ConfigError("bad checkpoint magic");
  const uint32_t version = detail::get_u32(is);
  if (version != 1) throw ConfigError("unsupported checkpoint version");
  MlpArch arch;
  arch.input_dim = int(detail::get_u32(is));
  arch.output_dim = int(detail::get_u32(is));
  const uint32_t nh = detail::get_u32(is);
  arch.hidden.resize(nh);
  for (uint32_t i = 0; i < nh; ++i) arch.hidden[i] = int(detail::get_u32(is));
  arch.activation = Activation(detail::get_u32(is));
  arch.time_conditioned = detail::get_u32(is) != 0;
  arch.validate();
  const uint64_t count = detail::get_u64(is);
  if (count != arch.param_count()) throw ConfigError("checkpoint param count mismatch");
  ParamVector p(arch);
  is.read(reinterpret_cast<char*>(p.values.data()), std::streamsize(count * 8));
  if (!is) throw ConfigError("truncated checkpoint");
  return p;
}

inline ParamVector load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open checkpoint: " + path);
  return load_checkpoint(is);
}

}  // namespace ffm
