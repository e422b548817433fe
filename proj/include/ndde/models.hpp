#pragma once

// Catalog of vector fields and readouts: learned NODE/NDDE/ANODE/NODE+NDDE
// dynamics, the analytic annulus construction, the universal-approximation
// construction, and the closed-form systems used as ground truth.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ndde/errors.hpp"
#include "ndde/field.hpp"
#include "ndde/mlp.hpp"
#include "ndde/solver.hpp"

namespace ndde {

enum class FieldKind { Node, Ndde, Anode, NodePlusNdde, AnalyticAnnulus, Universal };

// How an NDDE net consumes the current and delayed states. The paper's
// experiments differ: delayed-only for the annulus, h(t) + h(t-tau) for the
// spiral, concatenation for the population/Mackey-Glass fits.
enum class NddeInput { Concat, DelayedOnly, Sum };

inline const char* field_kind_name(FieldKind k) {
  switch (k) {
    case FieldKind::Node: return "node";
    case FieldKind::Ndde: return "ndde";
    case FieldKind::Anode: return "anode";
    case FieldKind::NodePlusNdde: return "node_plus_ndde";
    case FieldKind::AnalyticAnnulus: return "analytic_annulus";
    case FieldKind::Universal: return "universal";
  }
  return "?";
}

inline const char* ndde_input_name(NddeInput p) {
  switch (p) {
    case NddeInput::Concat: return "concat";
    case NddeInput::DelayedOnly: return "delayed_only";
    case NddeInput::Sum: return "sum";
  }
  return "?";
}

struct FieldSpec {
  FieldKind kind = FieldKind::Node;
  int state_dim = 1;     // data dimension
  int augment_dim = 0;   // anode only, p >= 1
  double tau = 1.0;      // delay kinds
  NddeInput ndde_input = NddeInput::Concat;
  MlpSpec net;           // learned kinds
  MlpSpec init_net;      // node_plus_ndde history ODE
  double r = 0.75;       // analytic annulus radius parameter

  int solver_dim() const {
    return kind == FieldKind::Anode ? state_dim + augment_dim : state_dim;
  }

  bool delayed() const {
    return kind == FieldKind::Ndde || kind == FieldKind::NodePlusNdde ||
           kind == FieldKind::AnalyticAnnulus || kind == FieldKind::Universal;
  }

  int expected_net_input() const {
    switch (kind) {
      case FieldKind::Node: return state_dim;
      case FieldKind::Anode: return state_dim + augment_dim;
      case FieldKind::Ndde:
      case FieldKind::NodePlusNdde:
        return ndde_input == NddeInput::Concat ? 2 * state_dim : state_dim;
      default: return 0;
    }
  }

  void validate() const {
    if (state_dim < 1) throw ConfigError("state_dim must be >= 1");
    switch (kind) {
      case FieldKind::Anode:
        if (augment_dim < 1) throw ConfigError("anode needs augment_dim >= 1");
        [[fallthrough]];
      case FieldKind::Node: {
        net.validate();
        const int eff = solver_dim();
        if (net.input_dim() != eff || net.output_dim() != eff)
          throw ConfigError("net must map dim " + std::to_string(eff) +
                            " to itself, got " + std::to_string(net.input_dim()) +
                            "->" + std::to_string(net.output_dim()));
        break;
      }
      case FieldKind::Ndde:
      case FieldKind::NodePlusNdde: {
        net.validate();
        if (tau <= 0.0) throw ConfigError("delay tau must be positive");
        if (net.input_dim() != expected_net_input())
          throw ConfigError("ndde net input dim must be " +
                            std::to_string(expected_net_input()) + " for the " +
                            std::string(ndde_input_name(ndde_input)) +
                            " pattern, got " + std::to_string(net.input_dim()));
        if (net.output_dim() != state_dim)
          throw ConfigError("ndde net output dim must equal state_dim");
        if (kind == FieldKind::NodePlusNdde) {
          init_net.validate();
          if (init_net.input_dim() != state_dim || init_net.output_dim() != state_dim)
            throw ConfigError("init net must map state_dim to itself");
        }
        break;
      }
      case FieldKind::AnalyticAnnulus:
        if (tau <= 0.0) throw ConfigError("delay tau must be positive");
        if (r <= 0.0) throw ConfigError("annulus r must be positive");
        break;
      case FieldKind::Universal:
        break;
    }
  }
};

// f = net(input pattern of h, y). Covers NODE (pattern ignores y), ANODE
// (augmented state), and the NDDE consumption patterns.
class MlpDynamicsField final : public VectorField {
 public:
  enum class Pattern { State, Concat, DelayedOnly, Sum };

  MlpDynamicsField(MlpSpec spec, int dim, Pattern pattern)
      : net_(std::move(spec)), dim_(dim), pattern_(pattern) {
    const int want = pattern == Pattern::Concat ? 2 * dim : dim;
    if (net_.input_dim() != want || net_.output_dim() != dim)
      throw ConfigError("field net dims do not match the consumption pattern");
  }

  int dim() const override { return dim_; }
  long param_count() const override { return net_.param_count(); }

  void eval(std::span<const double> h, std::span<const double> y, double t,
            std::span<const double> w, std::span<double> out) const override {
    (void)t;
    net_.forward(w, make_input(h, y), out);
  }

  void vjp(std::span<const double> h, std::span<const double> y, double t,
           std::span<const double> w, std::span<const double> v,
           std::span<double> h_grad, std::span<double> y_grad,
           std::span<double> w_grad) const override {
    (void)t;
    auto& xg = xgrad_buffer();
    xg.assign(static_cast<std::size_t>(net_.input_dim()), 0.0);
    net_.vjp(w, make_input(h, y), v, xg, w_grad);
    const std::size_t d = static_cast<std::size_t>(dim_);
    switch (pattern_) {
      case Pattern::State:
        if (!h_grad.empty()) for (std::size_t i = 0; i < d; ++i) h_grad[i] = xg[i];
        if (!y_grad.empty()) for (std::size_t i = 0; i < d; ++i) y_grad[i] = 0.0;
        break;
      case Pattern::DelayedOnly:
        if (!h_grad.empty()) for (std::size_t i = 0; i < d; ++i) h_grad[i] = 0.0;
        if (!y_grad.empty()) for (std::size_t i = 0; i < d; ++i) y_grad[i] = xg[i];
        break;
      case Pattern::Sum:
        if (!h_grad.empty()) for (std::size_t i = 0; i < d; ++i) h_grad[i] = xg[i];
        if (!y_grad.empty()) for (std::size_t i = 0; i < d; ++i) y_grad[i] = xg[i];
        break;
      case Pattern::Concat:
        if (!h_grad.empty()) for (std::size_t i = 0; i < d; ++i) h_grad[i] = xg[i];
        if (!y_grad.empty()) for (std::size_t i = 0; i < d; ++i) y_grad[i] = xg[d + i];
        break;
    }
  }

 private:
  std::span<const double> make_input(std::span<const double> h,
                                     std::span<const double> y) const {
    const std::size_t d = static_cast<std::size_t>(dim_);
    switch (pattern_) {
      case Pattern::State: return h;
      case Pattern::DelayedOnly: return y;
      case Pattern::Sum: {
        auto& buf = input_buffer();
        buf.resize(d);
        for (std::size_t i = 0; i < d; ++i) buf[i] = h[i] + y[i];
        return buf;
      }
      case Pattern::Concat: {
        auto& buf = input_buffer();
        buf.resize(2 * d);
        for (std::size_t i = 0; i < d; ++i) buf[i] = h[i];
        for (std::size_t i = 0; i < d; ++i) buf[d + i] = y[i];
        return buf;
      }
    }
    return h;
  }

  static std::vector<double>& input_buffer() {
    static thread_local std::vector<double> buf;
    return buf;
  }
  static std::vector<double>& xgrad_buffer() {
    static thread_local std::vector<double> buf;
    return buf;
  }

  Mlp net_;
  int dim_;
  Pattern pattern_;
};

// dh1/dt = ||h(t-tau)|| - r, other components frozen. The radius is the
// single learnable parameter w[0].
class AnnulusField final : public VectorField {
 public:
  explicit AnnulusField(int dim) : dim_(dim) {
    if (dim < 1) throw ConfigError("annulus field needs dim >= 1");
  }

  int dim() const override { return dim_; }
  long param_count() const override { return 1; }

  void eval(std::span<const double> h, std::span<const double> y, double t,
            std::span<const double> w, std::span<double> out) const override {
    (void)h;
    (void)t;
    out[0] = norm(y) - w[0];
    for (int i = 1; i < dim_; ++i) out[static_cast<std::size_t>(i)] = 0.0;
  }

  void vjp(std::span<const double> h, std::span<const double> y, double t,
           std::span<const double> w, std::span<const double> v,
           std::span<double> h_grad, std::span<double> y_grad,
           std::span<double> w_grad) const override {
    (void)h;
    (void)t;
    (void)w;
    if (!h_grad.empty())
      for (int i = 0; i < dim_; ++i) h_grad[static_cast<std::size_t>(i)] = 0.0;
    if (!y_grad.empty()) {
      const double n = norm(y);
      for (int i = 0; i < dim_; ++i)
        y_grad[static_cast<std::size_t>(i)] =
            n > 1e-300 ? v[0] * y[static_cast<std::size_t>(i)] / n : 0.0;
    }
    if (!w_grad.empty()) w_grad[0] += -v[0];
  }

 private:
  static double norm(std::span<const double> y) {
    double s = 0.0;
    for (double x : y) s += x * x;
    return std::sqrt(s);
  }
  int dim_;
};

// f(h, y) = G(y). With tau = T and constant history x this realizes
// h(T) = x + T * G(x).
class UniversalField final : public VectorField {
 public:
  using Map = std::function<void(std::span<const double>, std::span<double>)>;

  UniversalField(Map g, int dim) : g_(std::move(g)), dim_(dim) {}

  int dim() const override { return dim_; }
  long param_count() const override { return 0; }

  void eval(std::span<const double> h, std::span<const double> y, double t,
            std::span<const double> w, std::span<double> out) const override {
    (void)h;
    (void)t;
    (void)w;
    g_(y, out);
  }

  void vjp(std::span<const double>, std::span<const double>, double,
           std::span<const double>, std::span<const double>,
           std::span<double>, std::span<double>,
           std::span<double>) const override {
    throw ConfigError("universal construction fields expose no derivatives");
  }

 private:
  Map g_;
  int dim_;
};

// dx/dt = w[0] * x(t - tau); the scalar workhorse for adjoint checks and the
// toy map demonstration (w[0] = -2).
class ScalarLinearDelayField final : public VectorField {
 public:
  int dim() const override { return 1; }
  long param_count() const override { return 1; }

  void eval(std::span<const double> h, std::span<const double> y, double t,
            std::span<const double> w, std::span<double> out) const override {
    (void)h;
    (void)t;
    out[0] = w[0] * y[0];
  }

  void vjp(std::span<const double> h, std::span<const double> y, double t,
           std::span<const double> w, std::span<const double> v,
           std::span<double> h_grad, std::span<double> y_grad,
           std::span<double> w_grad) const override {
    (void)h;
    (void)t;
    if (!h_grad.empty()) h_grad[0] = 0.0;
    if (!y_grad.empty()) y_grad[0] = v[0] * w[0];
    if (!w_grad.empty()) w_grad[0] += v[0] * y[0];
  }
};

// dx/dt = -2 x(t); the ODE counterpart in the toy map demonstration.
class ScalarLinearOdeField final : public VectorField {
 public:
  explicit ScalarLinearOdeField(double coef) : coef_(coef) {}

  int dim() const override { return 1; }
  long param_count() const override { return 0; }

  void eval(std::span<const double> h, std::span<const double> y, double t,
            std::span<const double> w, std::span<double> out) const override {
    (void)y;
    (void)t;
    (void)w;
    out[0] = coef_ * h[0];
  }

  void vjp(std::span<const double> h, std::span<const double> y, double t,
           std::span<const double> w, std::span<const double> v,
           std::span<double> h_grad, std::span<double> y_grad,
           std::span<double> w_grad) const override {
    (void)h;
    (void)y;
    (void)t;
    (void)w;
    (void)w_grad;
    if (!h_grad.empty()) h_grad[0] = v[0] * coef_;
    if (!y_grad.empty()) y_grad[0] = 0.0;
  }

 private:
  double coef_;
};

// Dimensionless delayed logistic: dx/dt = r x(t) (1 - x(t - tau)).
class PopulationField final : public VectorField {
 public:
  explicit PopulationField(double growth) : r_(growth) {}

  int dim() const override { return 1; }
  long param_count() const override { return 0; }

  void eval(std::span<const double> h, std::span<const double> y, double t,
            std::span<const double> w, std::span<double> out) const override {
    (void)t;
    (void)w;
    out[0] = r_ * h[0] * (1.0 - y[0]);
  }

  void vjp(std::span<const double> h, std::span<const double> y, double t,
           std::span<const double> w, std::span<const double> v,
           std::span<double> h_grad, std::span<double> y_grad,
           std::span<double> w_grad) const override {
    (void)t;
    (void)w;
    (void)w_grad;
    if (!h_grad.empty()) h_grad[0] = v[0] * r_ * (1.0 - y[0]);
    if (!y_grad.empty()) y_grad[0] = -v[0] * r_ * h[0];
  }

 private:
  double r_;
};

// Mackey-Glass: dx/dt = beta y / (1 + y^n) - gamma x, y = x(t - tau).
// Fractional n assumes y > 0; a negative y produces NaN which the solver
// reports as divergence.
class MackeyGlassField final : public VectorField {
 public:
  MackeyGlassField(double beta, double n, double gamma)
      : beta_(beta), n_(n), gamma_(gamma) {}

  int dim() const override { return 1; }
  long param_count() const override { return 0; }

  void eval(std::span<const double> h, std::span<const double> y, double t,
            std::span<const double> w, std::span<double> out) const override {
    (void)t;
    (void)w;
    const double yn = std::pow(y[0], n_);
    out[0] = beta_ * y[0] / (1.0 + yn) - gamma_ * h[0];
  }

  void vjp(std::span<const double> h, std::span<const double> y, double t,
           std::span<const double> w, std::span<const double> v,
           std::span<double> h_grad, std::span<double> y_grad,
           std::span<double> w_grad) const override {
    (void)h;
    (void)t;
    (void)w;
    (void)w_grad;
    if (!h_grad.empty()) h_grad[0] = -v[0] * gamma_;
    if (!y_grad.empty()) {
      const double yn = std::pow(y[0], n_);
      const double denom = (1.0 + yn) * (1.0 + yn);
      y_grad[0] = v[0] * beta_ * (1.0 + (1.0 - n_) * yn) / denom;
    }
  }

 private:
  double beta_, n_, gamma_;
};

// 2-D spiral generator: dx/dt = A tanh(x(t) + x(t - tau)).
class SpiralField final : public VectorField {
 public:
  explicit SpiralField(const std::array<double, 4>& a) : a_(a) {}

  int dim() const override { return 2; }
  long param_count() const override { return 0; }

  void eval(std::span<const double> h, std::span<const double> y, double t,
            std::span<const double> w, std::span<double> out) const override {
    (void)t;
    (void)w;
    const double u0 = std::tanh(h[0] + y[0]);
    const double u1 = std::tanh(h[1] + y[1]);
    out[0] = a_[0] * u0 + a_[1] * u1;
    out[1] = a_[2] * u0 + a_[3] * u1;
  }

  void vjp(std::span<const double> h, std::span<const double> y, double t,
           std::span<const double> w, std::span<const double> v,
           std::span<double> h_grad, std::span<double> y_grad,
           std::span<double> w_grad) const override {
    (void)t;
    (void)w;
    (void)w_grad;
    const double u0 = std::tanh(h[0] + y[0]);
    const double u1 = std::tanh(h[1] + y[1]);
    const double d0 = (1.0 - u0 * u0) * (v[0] * a_[0] + v[1] * a_[2]);
    const double d1 = (1.0 - u1 * u1) * (v[0] * a_[1] + v[1] * a_[3]);
    if (!h_grad.empty()) {
      h_grad[0] = d0;
      h_grad[1] = d1;
    }
    if (!y_grad.empty()) {
      y_grad[0] = d0;
      y_grad[1] = d1;
    }
  }

 private:
  std::array<double, 4> a_;
};

// A realized FieldSpec: the main dynamics field plus, for NODE+NDDE, the
// history-ODE field. Parameters are laid out [main | init].
struct Model {
  FieldSpec spec;
  std::shared_ptr<const VectorField> field;
  std::shared_ptr<const VectorField> init_field;  // null unless node_plus_ndde
  long main_param_count = 0;
  long total_param_count = 0;

  std::span<const double> main_params(std::span<const double> w) const {
    return w.subspan(0, static_cast<std::size_t>(main_param_count));
  }
  std::span<const double> init_params(std::span<const double> w) const {
    return w.subspan(static_cast<std::size_t>(main_param_count));
  }

  // History for one input sample. ANODE inputs are zero-padded to the
  // augmented dimension by the caller.
  HistoryFunction make_history(std::span<const double> x,
                               std::span<const double> w) const {
    if (spec.kind == FieldKind::NodePlusNdde) {
      auto ip = init_params(w);
      return HistoryFunction::ode_driven(
          *init_field, std::vector<double>(ip.begin(), ip.end()),
          std::vector<double>(x.begin(), x.end()), spec.tau);
    }
    return HistoryFunction::constant(std::vector<double>(x.begin(), x.end()));
  }
};

inline std::pair<Model, ParamVector> make_field(const FieldSpec& spec,
                                                std::uint64_t seed) {
  spec.validate();
  Model m;
  m.spec = spec;
  switch (spec.kind) {
    case FieldKind::Node:
      m.field = std::make_shared<MlpDynamicsField>(spec.net, spec.state_dim,
                                                   MlpDynamicsField::Pattern::State);
      break;
    case FieldKind::Anode:
      m.field = std::make_shared<MlpDynamicsField>(spec.net, spec.solver_dim(),
                                                   MlpDynamicsField::Pattern::State);
      break;
    case FieldKind::Ndde:
    case FieldKind::NodePlusNdde: {
      MlpDynamicsField::Pattern p = MlpDynamicsField::Pattern::Concat;
      if (spec.ndde_input == NddeInput::DelayedOnly)
        p = MlpDynamicsField::Pattern::DelayedOnly;
      else if (spec.ndde_input == NddeInput::Sum)
        p = MlpDynamicsField::Pattern::Sum;
      m.field = std::make_shared<MlpDynamicsField>(spec.net, spec.state_dim, p);
      if (spec.kind == FieldKind::NodePlusNdde)
        m.init_field = std::make_shared<MlpDynamicsField>(
            spec.init_net, spec.state_dim, MlpDynamicsField::Pattern::State);
      break;
    }
    case FieldKind::AnalyticAnnulus:
      m.field = std::make_shared<AnnulusField>(spec.state_dim);
      break;
    case FieldKind::Universal:
      throw ConfigError("universal fields are built with universal_construct");
  }
  m.main_param_count = m.field->param_count();
  m.total_param_count = m.main_param_count +
                        (m.init_field ? m.init_field->param_count() : 0);

  ParamVector params(static_cast<std::size_t>(m.total_param_count));
  if (spec.kind == FieldKind::AnalyticAnnulus) {
    params[0] = spec.r;
  } else {
    ParamVector main = mlp_init(spec.net, seed);
    std::copy(main.values.begin(), main.values.end(), params.values.begin());
    if (m.init_field) {
      ParamVector init = mlp_init(spec.init_net, derive_seed(seed, 1));
      std::copy(init.values.begin(), init.values.end(),
                params.values.begin() + m.main_param_count);
    }
  }
  return {std::move(m), std::move(params)};
}

struct UniversalConstruction {
  std::shared_ptr<const VectorField> field;
  double tau = 0.0;  // equals the horizon T
};

// Theorem-2 construction: the field f(h, y) = G(y) with tau = T maps the
// constant history x to h(T) = x + T * G(x).
inline UniversalConstruction universal_construct(UniversalField::Map g, int dim,
                                                 double horizon_T) {
  if (horizon_T <= 0.0) throw ConfigError("horizon must be positive");
  UniversalConstruction u;
  u.field = std::make_shared<UniversalField>(std::move(g), dim);
  u.tau = horizon_T;
  return u;
}

struct ReadoutHead {
  enum class Kind { Identity, Linear, ProjectFirst };

  Kind kind = Kind::Identity;
  int project_k = 0;               // ProjectFirst
  int in_dim = 0, out_dim = 0;     // Linear
  ParamVector params;              // Linear: W (out x in) then bias (out)

  static ReadoutHead identity() { return ReadoutHead{}; }

  static ReadoutHead project_first(int k) {
    if (k < 1) throw ConfigError("projection needs k >= 1");
    ReadoutHead h;
    h.kind = Kind::ProjectFirst;
    h.project_k = k;
    return h;
  }

  static ReadoutHead linear(int in_dim, int out_dim, ParamVector params) {
    if (params.size() != static_cast<long>(out_dim) * in_dim + out_dim)
      throw ShapeError("linear readout parameter count mismatch");
    ReadoutHead h;
    h.kind = Kind::Linear;
    h.in_dim = in_dim;
    h.out_dim = out_dim;
    h.params = std::move(params);
    return h;
  }

  int output_dim(int state_dim) const {
    switch (kind) {
      case Kind::Identity: return state_dim;
      case Kind::ProjectFirst: return project_k;
      case Kind::Linear: return out_dim;
    }
    return state_dim;
  }

  void apply(std::span<const double> state, std::span<double> out) const {
    switch (kind) {
      case Kind::Identity:
        if (out.size() != state.size()) throw ShapeError("readout dim mismatch");
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = state[i];
        return;
      case Kind::ProjectFirst:
        if (static_cast<int>(state.size()) < project_k)
          throw ShapeError("projection exceeds state dim");
        for (int i = 0; i < project_k; ++i)
          out[static_cast<std::size_t>(i)] = state[static_cast<std::size_t>(i)];
        return;
      case Kind::Linear: {
        if (static_cast<int>(state.size()) != in_dim)
          throw ShapeError("linear readout input dim mismatch");
        const double* w = params.data();
        const double* b = params.data() + static_cast<long>(out_dim) * in_dim;
        for (int i = 0; i < out_dim; ++i) {
          double z = b[i];
          for (int j = 0; j < in_dim; ++j)
            z += w[static_cast<long>(i) * in_dim + j] * state[static_cast<std::size_t>(j)];
          out[static_cast<std::size_t>(i)] = z;
        }
        return;
      }
    }
  }

  // state_grad (overwritten) = v^T d(readout)/d(state).
  void vjp(std::span<const double> state, std::span<const double> v,
           std::span<double> state_grad) const {
    for (std::size_t i = 0; i < state_grad.size(); ++i) state_grad[i] = 0.0;
    switch (kind) {
      case Kind::Identity:
        for (std::size_t i = 0; i < state.size(); ++i) state_grad[i] = v[i];
        return;
      case Kind::ProjectFirst:
        for (int i = 0; i < project_k; ++i)
          state_grad[static_cast<std::size_t>(i)] = v[static_cast<std::size_t>(i)];
        return;
      case Kind::Linear: {
        const double* w = params.data();
        for (int i = 0; i < out_dim; ++i)
          for (int j = 0; j < in_dim; ++j)
            state_grad[static_cast<std::size_t>(j)] +=
                v[static_cast<std::size_t>(i)] * w[static_cast<long>(i) * in_dim + j];
        return;
      }
    }
  }
};

inline std::vector<double> readout(const ReadoutHead& head,
                                   std::span<const double> state) {
  std::vector<double> out(static_cast<std::size_t>(
      head.output_dim(static_cast<int>(state.size()))));
  head.apply(state, out);
  return out;
}

// Analytic annulus field with a fixed radius; kept as a convenience for the
// closed-form demonstration.
inline std::pair<std::shared_ptr<const VectorField>, ParamVector>
analytic_annulus_field(double r, int dim) {
  if (r <= 0.0) throw ConfigError("annulus r must be positive");
  auto field = std::make_shared<AnnulusField>(dim);
  ParamVector params(1);
  params[0] = r;
  return {field, std::move(params)};
}

}  // namespace ndde
