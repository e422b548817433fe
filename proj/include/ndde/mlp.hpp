#pragma once

// Minimal dense network engine: forward evaluation and exact reverse-mode
// vector-Jacobian products with respect to inputs and parameters.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ndde/errors.hpp"
#include "ndde/rng.hpp"

namespace ndde {

enum class Activation { Tanh, Relu };

inline const char* activation_name(Activation a) {
  return a == Activation::Tanh ? "tanh" : "relu";
}

struct MlpSpec {
  std::vector<int> layer_dims;  // input dim first, output dim last
  Activation activation = Activation::Tanh;
  std::vector<bool> bias;  // one flag per affine layer; empty means all on
  double init_scale = 1.0;  // multiplies the 1/sqrt(fan_in) init band

  static MlpSpec dense(std::vector<int> dims, Activation act,
                       bool bias_all = true, double init_scale = 1.0) {
    MlpSpec s;
    s.layer_dims = std::move(dims);
    s.activation = act;
    s.bias.assign(s.layer_dims.empty() ? 0 : s.layer_dims.size() - 1,
                  bias_all);
    s.init_scale = init_scale;
    s.validate();
    return s;
  }

  int layers() const { return static_cast<int>(layer_dims.size()) - 1; }
  int input_dim() const { return layer_dims.front(); }
  int output_dim() const { return layer_dims.back(); }

  bool layer_has_bias(int l) const {
    return bias.empty() ? true : bias[static_cast<std::size_t>(l)];
  }

  long param_count() const {
    long n = 0;
    for (int l = 0; l < layers(); ++l) {
      n += static_cast<long>(layer_dims[l + 1]) * layer_dims[l];
      if (layer_has_bias(l)) n += layer_dims[l + 1];
    }
    return n;
  }

  void validate() const {
    if (layer_dims.size() < 2)
      throw ConfigError("mlp spec needs at least input and output dims");
    for (int d : layer_dims)
      if (d < 1) throw ConfigError("mlp layer dims must be >= 1");
    if (!bias.empty() && bias.size() != layer_dims.size() - 1)
      throw ConfigError("mlp bias flags must match layer count");
    if (!(init_scale > 0.0))
      throw ConfigError("mlp init_scale must be positive");
  }
};

struct LayerShape {
  int out = 0;
  int in = 0;
  long w_offset = 0;
  long b_offset = -1;  // -1 when the layer has no bias
};

inline std::vector<LayerShape> manifest(const MlpSpec& spec) {
  spec.validate();
  std::vector<LayerShape> shapes(static_cast<std::size_t>(spec.layers()));
  long offset = 0;
  for (int l = 0; l < spec.layers(); ++l) {
    LayerShape& s = shapes[static_cast<std::size_t>(l)];
    s.out = spec.layer_dims[l + 1];
    s.in = spec.layer_dims[l];
    s.w_offset = offset;
    offset += static_cast<long>(s.out) * s.in;
    if (spec.layer_has_bias(l)) {
      s.b_offset = offset;
      offset += s.out;
    }
  }
  return shapes;
}

// Flat learnable-parameter array. The owning spec's manifest defines the
// layout; round-trip flatten/unflatten is the identity by construction.
struct ParamVector {
  std::vector<double> values;

  ParamVector() = default;
  explicit ParamVector(std::size_t n) : values(n, 0.0) {}
  explicit ParamVector(std::vector<double> v) : values(std::move(v)) {}

  long size() const { return static_cast<long>(values.size()); }
  double* data() { return values.data(); }
  const double* data() const { return values.data(); }
  double& operator[](long i) { return values[static_cast<std::size_t>(i)]; }
  double operator[](long i) const {
    return values[static_cast<std::size_t>(i)];
  }
  std::span<double> span() { return values; }
  std::span<const double> span() const { return values; }
};

// Weights uniform in +-init_scale/sqrt(fan_in), biases zero.
inline ParamVector mlp_init(const MlpSpec& spec, std::uint64_t seed) {
  spec.validate();
  ParamVector params(static_cast<std::size_t>(spec.param_count()));
  SplitMix64 rng(seed);
  for (const LayerShape& s : manifest(spec)) {
    const double scale = spec.init_scale / std::sqrt(static_cast<double>(s.in));
    for (long i = 0; i < static_cast<long>(s.out) * s.in; ++i)
      params[s.w_offset + i] = rng.uniform(-scale, scale);
    // biases already zero
  }
  return params;
}

namespace detail {

struct MlpWorkspace {
  // act[0] is the input; act[l+1] is layer l's output after activation
  // (raw affine output for the last layer).
  std::vector<std::vector<double>> act;
  std::vector<double> delta;
  std::vector<double> delta_next;
};

inline MlpWorkspace& mlp_workspace() {
  static thread_local MlpWorkspace ws;
  return ws;
}

}  // namespace detail

// Spec plus precomputed manifest; stateless with respect to parameters, so
// a single instance serves concurrent callers.
class Mlp {
 public:
  explicit Mlp(MlpSpec spec) : spec_(std::move(spec)), shapes_(manifest(spec_)) {}

  const MlpSpec& spec() const { return spec_; }
  int input_dim() const { return spec_.input_dim(); }
  int output_dim() const { return spec_.output_dim(); }
  long param_count() const { return spec_.param_count(); }

  void forward(std::span<const double> w, std::span<const double> x,
               std::span<double> out) const {
    check_dims(w, x);
    if (static_cast<int>(out.size()) != output_dim())
      throw ShapeError("mlp_forward: output span size mismatch");
    auto& ws = detail::mlp_workspace();
    run_forward(w, x, ws);
    const auto& last = ws.act.back();
    for (std::size_t i = 0; i < last.size(); ++i) out[i] = last[i];
  }

  // x_grad (overwritten) = v^T d(out)/dx; w_grad (accumulated) += v^T d(out)/dw.
  // Either output span may be empty to skip it.
  void vjp(std::span<const double> w, std::span<const double> x,
           std::span<const double> v, std::span<double> x_grad,
           std::span<double> w_grad) const {
    check_dims(w, x);
    if (static_cast<int>(v.size()) != output_dim())
      throw ShapeError("mlp_vjp: covector size mismatch");
    if (!x_grad.empty() && static_cast<int>(x_grad.size()) != input_dim())
      throw ShapeError("mlp_vjp: x_grad span size mismatch");
    if (!w_grad.empty() && static_cast<long>(w_grad.size()) != param_count())
      throw ShapeError("mlp_vjp: w_grad span size mismatch");

    auto& ws = detail::mlp_workspace();
    run_forward(w, x, ws);

    const int L = spec_.layers();
    ws.delta.assign(v.begin(), v.end());
    for (int l = L - 1; l >= 0; --l) {
      const LayerShape& s = shapes_[static_cast<std::size_t>(l)];
      // Activation derivative from the stored post-activation value.
      if (l < L - 1) {
        const auto& a = ws.act[static_cast<std::size_t>(l + 1)];
        if (spec_.activation == Activation::Tanh) {
          for (int i = 0; i < s.out; ++i)
            ws.delta[static_cast<std::size_t>(i)] *=
                1.0 - a[static_cast<std::size_t>(i)] * a[static_cast<std::size_t>(i)];
        } else {
          // ReLU subgradient at 0 is 0.
          for (int i = 0; i < s.out; ++i)
            if (a[static_cast<std::size_t>(i)] <= 0.0)
              ws.delta[static_cast<std::size_t>(i)] = 0.0;
        }
      }
      const auto& in = ws.act[static_cast<std::size_t>(l)];
      if (!w_grad.empty()) {
        for (int i = 0; i < s.out; ++i) {
          const double di = ws.delta[static_cast<std::size_t>(i)];
          double* wrow = w_grad.data() + s.w_offset + static_cast<long>(i) * s.in;
          for (int j = 0; j < s.in; ++j)
            wrow[j] += di * in[static_cast<std::size_t>(j)];
          if (s.b_offset >= 0) w_grad[static_cast<std::size_t>(s.b_offset + i)] += di;
        }
      }
      if (l > 0 || !x_grad.empty()) {
        ws.delta_next.assign(static_cast<std::size_t>(s.in), 0.0);
        for (int i = 0; i < s.out; ++i) {
          const double di = ws.delta[static_cast<std::size_t>(i)];
          const double* wrow = w.data() + s.w_offset + static_cast<long>(i) * s.in;
          for (int j = 0; j < s.in; ++j)
            ws.delta_next[static_cast<std::size_t>(j)] += di * wrow[j];
        }
        std::swap(ws.delta, ws.delta_next);
      }
    }
    if (!x_grad.empty())
      for (int j = 0; j < input_dim(); ++j)
        x_grad[static_cast<std::size_t>(j)] = ws.delta[static_cast<std::size_t>(j)];
  }

 private:
  void check_dims(std::span<const double> w, std::span<const double> x) const {
    if (static_cast<long>(w.size()) != param_count())
      throw ShapeError("mlp: parameter count mismatch: expected " +
                       std::to_string(param_count()) + ", got " +
                       std::to_string(w.size()));
    if (static_cast<int>(x.size()) != input_dim())
      throw ShapeError("mlp: input dim mismatch: expected " +
                       std::to_string(input_dim()) + ", got " +
                       std::to_string(x.size()));
  }

  void run_forward(std::span<const double> w, std::span<const double> x,
                   detail::MlpWorkspace& ws) const {
    const int L = spec_.layers();
    ws.act.resize(static_cast<std::size_t>(L) + 1);
    ws.act[0].assign(x.begin(), x.end());
    for (int l = 0; l < L; ++l) {
      const LayerShape& s = shapes_[static_cast<std::size_t>(l)];
      const auto& in = ws.act[static_cast<std::size_t>(l)];
      auto& out = ws.act[static_cast<std::size_t>(l) + 1];
      out.assign(static_cast<std::size_t>(s.out), 0.0);
      for (int i = 0; i < s.out; ++i) {
        const double* wrow = w.data() + s.w_offset + static_cast<long>(i) * s.in;
        double z = s.b_offset >= 0 ? w[static_cast<std::size_t>(s.b_offset + i)] : 0.0;
        for (int j = 0; j < s.in; ++j) z += wrow[j] * in[static_cast<std::size_t>(j)];
        out[static_cast<std::size_t>(i)] = z;
      }
      if (l < L - 1) {
        if (spec_.activation == Activation::Tanh) {
          for (double& z : out) z = std::tanh(z);
        } else {
          for (double& z : out) z = z > 0.0 ? z : 0.0;
        }
      }
    }
  }

  MlpSpec spec_;
  std::vector<LayerShape> shapes_;
};

inline std::vector<double> mlp_forward(const MlpSpec& spec,
                                       const ParamVector& params,
                                       std::span<const double> x) {
  Mlp net(spec);
  std::vector<double> out(static_cast<std::size_t>(spec.output_dim()));
  net.forward(params.span(), x, out);
  return out;
}

struct MlpVjpResult {
  std::vector<double> x_grad;
  ParamVector w_grad;
};

inline MlpVjpResult mlp_vjp(const MlpSpec& spec, const ParamVector& params,
                            std::span<const double> x,
                            std::span<const double> v) {
  Mlp net(spec);
  MlpVjpResult r;
  r.x_grad.assign(static_cast<std::size_t>(spec.input_dim()), 0.0);
  r.w_grad = ParamVector(static_cast<std::size_t>(spec.param_count()));
  net.vjp(params.span(), x, v, r.x_grad, r.w_grad.span());
  return r;
}

}  // namespace ndde
