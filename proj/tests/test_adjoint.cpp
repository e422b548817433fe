#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "ndde/adjoint.hpp"
#include "ndde/models.hpp"
#include "reference.hpp"

using namespace ndde;

namespace {

struct ConstField final : VectorField {
  std::vector<double> c;
  explicit ConstField(std::vector<double> c_) : c(std::move(c_)) {}
  int dim() const override { return static_cast<int>(c.size()); }
  long param_count() const override { return 0; }
  void eval(std::span<const double>, std::span<const double>, double,
            std::span<const double>, std::span<double> out) const override {
    for (std::size_t i = 0; i < c.size(); ++i) out[i] = c[i];
  }
  void vjp(std::span<const double>, std::span<const double>, double,
           std::span<const double>, std::span<const double>,
           std::span<double> h, std::span<double> y,
           std::span<double>) const override {
    for (double& g : h) g = 0.0;
    for (double& g : y) g = 0.0;
  }
};

struct ZeroField final : VectorField {
  int d;
  explicit ZeroField(int dim_) : d(dim_) {}
  int dim() const override { return d; }
  long param_count() const override { return 0; }
  void eval(std::span<const double>, std::span<const double>, double,
            std::span<const double>, std::span<double> out) const override {
    for (double& o : out) o = 0.0;
  }
  void vjp(std::span<const double>, std::span<const double>, double,
           std::span<const double>, std::span<const double>,
           std::span<double> h, std::span<double> y,
           std::span<double>) const override {
    for (double& g : h) g = 0.0;
    for (double& g : y) g = 0.0;
  }
};

// Scalar MSE-style loss against fixed targets at the given rows.
ObservationLoss quadratic_loss(const Trajectory& traj,
                               const std::vector<double>& times,
                               const std::vector<double>& targets) {
  ObservationLoss loss;
  std::size_t t_idx = 0;
  for (double t : times) {
    auto r = traj.row(traj.grid.index_of(t));
    std::vector<double> g(r.size());
    for (std::size_t j = 0; j < r.size(); ++j)
      g[j] = 2.0 * (r[j] - targets[t_idx * r.size() + j]);
    loss.add(t, std::move(g));
    ++t_idx;
  }
  return loss;
}

double quadratic_value(const Trajectory& traj, const std::vector<double>& times,
                       const std::vector<double>& targets) {
  double L = 0.0;
  std::size_t t_idx = 0;
  for (double t : times) {
    auto r = traj.row(traj.grid.index_of(t));
    for (std::size_t j = 0; j < r.size(); ++j) {
      const double e = r[j] - targets[t_idx * r.size() + j];
      L += e * e;
    }
    ++t_idx;
  }
  return L;
}

}  // namespace

TEST_CASE("state-independent field freezes lambda at the terminal gradient") {
  ConstField f({0.3, -0.7});
  Grid g = Grid::from_span(0.0, 1.0, 0.02);
  Trajectory traj = integrate_dde(f, {}, HistoryFunction::constant({1.0, 2.0}),
                                  0.5, g, Method::Rk4);
  ObservationLoss loss;
  loss.add(1.0, {2.5, -1.5});
  AdjointSolution adj = adjoint_backward(f, {}, traj, 0.5, loss);
  for (int k = 0; k <= g.n_steps; ++k) {
    CHECK(adj.lambda(k)[0] == 2.5);
    CHECK(adj.lambda(k)[1] == -1.5);
  }
  CHECK(adj.sup_norm == 2.5);
}

TEST_CASE("delay-ignoring field reproduces the NODE adjoint to 1e-12") {
  FieldSpec spec;
  spec.kind = FieldKind::Node;
  spec.state_dim = 2;
  spec.net = MlpSpec::dense({2, 8, 2}, Activation::Tanh);
  auto [model, params] = make_field(spec, 21);
  Grid g = Grid::from_span(0.0, 1.0, 0.02);
  std::vector<double> x0 = {0.3, -0.6};

  Trajectory traj = integrate_dde(*model.field, params.span(),
                                  HistoryFunction::constant(x0), 0.2, g,
                                  Method::Rk4);
  ObservationLoss loss;
  loss.add(0.5, {0.4, -0.2});
  loss.add(1.0, {1.0, 2.0});

  AdjointSolution adj = adjoint_backward(*model.field, params.span(), traj, 0.2, loss);
  auto node_ref = ref::node_adjoint_reference(*model.field, params.span(), traj, loss);
  CHECK(ref::max_abs_diff(adj.lambdas, node_ref.lambdas) < 1e-12);
  CHECK(ref::max_abs_diff(adj.param_accum.values, node_ref.w_grad.values) < 1e-12);
}

TEST_CASE("scalar delayed gradient matches finite differences") {
  ScalarLinearDelayField f;
  std::vector<double> w = {0.9};
  const double tau = 0.5;
  Grid g = Grid::from_span(0.0, 1.0, 0.01);
  auto run = [&](std::span<const double> ww) {
    Trajectory t = integrate_dde(f, ww, HistoryFunction::constant({1.0}), tau, g,
                                 Method::Rk4);
    const double xT = t.row(g.n_steps)[0];
    return xT * xT;
  };
  Trajectory traj = integrate_dde(f, w, HistoryFunction::constant({1.0}), tau, g,
                                  Method::Rk4);
  ObservationLoss loss;
  loss.add(1.0, {2.0 * traj.row(g.n_steps)[0]});
  AdjointSolution adj = adjoint_backward(f, w, traj, tau, loss);
  ParamVector grad = param_gradient(f, w, traj, adj);
  ParamVector fd = finite_diff_gradient(run, w, 1e-6);
  const double scale = std::max(std::abs(grad[0]), std::abs(fd[0]));
  CHECK(std::abs(grad[0] - fd[0]) / scale < 1e-5);
}

TEST_CASE("param_gradient trivia and the learnable annulus radius") {
  // lambda == 0 -> zero gradient
  ScalarLinearDelayField f;
  std::vector<double> w = {0.4};
  Grid g = Grid::from_span(0.0, 1.0, 0.02);
  Trajectory traj = integrate_dde(f, w, HistoryFunction::constant({1.0}), 0.5, g,
                                  Method::Rk4);
  ObservationLoss zero_loss;
  zero_loss.add(1.0, {0.0});
  AdjointSolution adj = adjoint_backward(f, w, traj, 0.5, zero_loss);
  CHECK(param_gradient(f, w, traj, adj)[0] == 0.0);

  // Eq.-7 field with learnable r, tau = T, L = h1(T): dL/dr = -T exactly.
  auto [field, params] = analytic_annulus_field(0.75, 2);
  const double T = 10.0;
  Grid ga = Grid::from_span(0.0, T, 0.1);
  Trajectory ta = integrate_dde(*field, params.span(),
                                HistoryFunction::constant({0.3, 0.4}), T, ga,
                                Method::Rk4);
  ObservationLoss la;
  la.add(T, {1.0, 0.0});
  AdjointSolution aa = adjoint_backward(*field, params.span(), ta, T, la);
  ParamVector ra = param_gradient(*field, params.span(), ta, aa);
  CHECK(ra[0] == Catch::Approx(-T).epsilon(1e-12));

  auto run_r = [&](std::span<const double> rr) {
    Trajectory t = integrate_dde(*field, rr, HistoryFunction::constant({0.3, 0.4}),
                                 T, ga, Method::Rk4);
    return t.row(ga.n_steps)[0];
  };
  ParamVector fd = finite_diff_gradient(run_r, params.span(), 1e-6);
  CHECK(std::abs(fd[0] - ra[0]) < 1e-6);
}

TEST_CASE("grid mismatch raises an alignment error") {
  ScalarLinearDelayField f;
  std::vector<double> w = {0.4};
  Grid g = Grid::from_span(0.0, 1.0, 0.02);
  Trajectory traj = integrate_dde(f, w, HistoryFunction::constant({1.0}), 0.5, g,
                                  Method::Rk4);
  ObservationLoss loss;
  loss.add(1.0, {1.0});
  AdjointSolution adj = adjoint_backward(f, w, traj, 0.5, loss);
  Grid other = Grid::from_span(0.0, 1.0, 0.01);
  Trajectory traj2 = integrate_dde(f, w, HistoryFunction::constant({1.0}), 0.5,
                                   other, Method::Rk4);
  CHECK_THROWS_AS(param_gradient(f, w, traj2, adj), AlignmentError);
  CHECK_THROWS_AS(input_gradient(f, w, traj2, adj, traj2.history), AlignmentError);
  ObservationLoss off;
  off.add(0.505, {1.0});
  CHECK_THROWS_AS(adjoint_backward(f, w, traj, 0.5, off), AlignmentError);
}

TEST_CASE("input gradient: identity flow, toy decomposition, FD oracle") {
  // Zero field: dL/dx0 = dL/dh(T).
  ZeroField zf(2);
  Grid g = Grid::from_span(0.0, 1.0, 0.05);
  Trajectory zt = integrate_dde(zf, {}, HistoryFunction::constant({0.7, -0.1}),
                                0.5, g, Method::Rk4);
  ObservationLoss zl;
  zl.add(1.0, {1.5, -2.0});
  AdjointSolution za = adjoint_backward(zf, {}, zt, 0.5, zl);
  auto zi = input_gradient(zf, {}, zt, za, zt.history);
  CHECK(zi[0] == 1.5);
  CHECK(zi[1] == -2.0);

  // Toy: x' = -2 x(t-1), tau = T = 1, L = x(1). lambda(0) = 1, the delayed
  // path integrates to -2, and the total is -1.
  ScalarLinearDelayField f;
  std::vector<double> w = {-2.0};
  Grid g2 = Grid::from_span(0.0, 1.0, 0.01);
  Trajectory traj = integrate_dde(f, w, HistoryFunction::constant({1.0}), 1.0,
                                  g2, Method::Rk4);
  ObservationLoss loss;
  loss.add(1.0, {1.0});
  AdjointSolution adj = adjoint_backward(f, w, traj, 1.0, loss);
  CHECK(adj.lambda(0)[0] == Catch::Approx(1.0).epsilon(1e-12));
  CHECK(adj.history_const_accum[0] == Catch::Approx(-2.0).epsilon(1e-12));
  auto ig = input_gradient(f, w, traj, adj, traj.history);
  CHECK(ig[0] == Catch::Approx(-1.0).epsilon(1e-12));

  // Random NDDE with constant history vs finite differences.
  FieldSpec spec;
  spec.kind = FieldKind::Ndde;
  spec.state_dim = 2;
  spec.tau = 0.5;
  spec.net = MlpSpec::dense({4, 8, 2}, Activation::Tanh);
  auto [model, params] = make_field(spec, 31);
  Grid g3 = Grid::from_span(0.0, 1.0, 0.01);
  std::vector<double> x0 = {0.2, -0.5};
  std::vector<double> times = {0.5, 1.0};
  std::vector<double> targets = {0.1, -0.1, 0.3, 0.2};
  Trajectory t3 = integrate_dde(*model.field, params.span(),
                                HistoryFunction::constant(x0), 0.5, g3,
                                Method::Rk4);
  ObservationLoss l3 = quadratic_loss(t3, times, targets);
  AdjointSolution a3 = adjoint_backward(*model.field, params.span(), t3, 0.5, l3);
  auto i3 = input_gradient(*model.field, params.span(), t3, a3, t3.history);
  auto run_x = [&](std::span<const double> xx) {
    Trajectory t = integrate_dde(*model.field, params.span(),
                                 HistoryFunction::constant({xx[0], xx[1]}), 0.5,
                                 g3, Method::Rk4);
    return quadratic_value(t, times, targets);
  };
  ParamVector fd = finite_diff_gradient(run_x, x0, 1e-5);
  CHECK(ref::max_rel_err(i3, fd.values) < 1e-5);
}

TEST_CASE("piecewise mode: degenerate single segment equals dense to 1e-12") {
  FieldSpec spec;
  spec.kind = FieldKind::Ndde;
  spec.state_dim = 2;
  spec.tau = 1.0;
  spec.net = MlpSpec::dense({4, 8, 2}, Activation::Tanh);
  auto [model, params] = make_field(spec, 41);
  Grid g = Grid::from_span(0.0, 1.0, 0.02);
  Trajectory traj = integrate_dde(*model.field, params.span(),
                                  HistoryFunction::constant({0.4, 0.1}), 1.0, g,
                                  Method::Rk4);
  ObservationLoss loss = quadratic_loss(traj, {1.0}, {0.0, 0.0});
  GradientBundle dense = dde_gradient(*model.field, params.span(), traj, loss,
                                      GradMode::Dense);
  GradientBundle pw = dde_gradient(*model.field, params.span(), traj, loss,
                                   GradMode::Piecewise);
  CHECK(ref::max_abs_diff(dense.w_grad.values, pw.w_grad.values) < 1e-12);
  CHECK(ref::max_abs_diff(dense.input_grad, pw.input_grad) < 1e-12);
}

TEST_CASE("piecewise mode: two-segment scalar NDDE agrees with dense and FD") {
  ScalarLinearDelayField f;
  std::vector<double> w = {0.8};
  const double tau = 0.5;
  Grid g = Grid::from_span(0.0, 1.0, 0.01);
  std::vector<double> times = {0.5, 1.0};
  std::vector<double> targets = {0.2, -0.4};
  Trajectory traj = integrate_dde(f, w, HistoryFunction::constant({1.3}), tau, g,
                                  Method::Rk4);
  ObservationLoss loss = quadratic_loss(traj, times, targets);

  GradientBundle dense = dde_gradient(f, w, traj, loss, GradMode::Dense);
  auto cps = checkpoint_states(traj, tau, 2);
  GradientBundle pw = grad_piecewise(f, w, cps, tau, 2, g.step, Method::Rk4,
                                     loss, traj.history);
  CHECK(std::abs(dense.w_grad[0] - pw.w_grad[0]) < 1e-8);
  CHECK(std::abs(dense.input_grad[0] - pw.input_grad[0]) < 1e-8);

  auto run = [&](std::span<const double> ww) {
    Trajectory t = integrate_dde(f, ww, HistoryFunction::constant({1.3}), tau, g,
                                 Method::Rk4);
    return quadratic_value(t, times, targets);
  };
  ParamVector fd = finite_diff_gradient(run, w, 1e-5);
  CHECK(std::abs(pw.w_grad[0] - fd[0]) /
            std::max(std::abs(fd[0]), std::abs(pw.w_grad[0])) <
        1e-5);
}

TEST_CASE("piecewise mode: zero field reconstructs exactly") {
  ZeroField zf(2);
  Grid g = Grid::from_span(0.0, 1.0, 0.05);
  Trajectory traj = integrate_dde(zf, {}, HistoryFunction::constant({0.9, 0.2}),
                                  0.5, g, Method::Rk4);
  ObservationLoss loss;
  loss.add(1.0, {3.0, -1.0});
  GradientBundle pw = dde_gradient(zf, {}, traj, loss, GradMode::Piecewise);
  CHECK(pw.diagnostics.reconstruction_max_err == 0.0);
  CHECK(pw.input_grad[0] == 3.0);
  CHECK(pw.input_grad[1] == -1.0);
}

TEST_CASE("grad_piecewise validates the checkpoint count") {
  ScalarLinearDelayField f;
  std::vector<double> w = {0.5};
  ObservationLoss loss;
  loss.add(1.0, {1.0});
  std::vector<std::vector<double>> cps = {{1.0}, {0.5}};
  CHECK_THROWS_AS(grad_piecewise(f, w, cps, 0.5, 2, 0.01, Method::Rk4, loss,
                                 HistoryFunction::constant({1.0})),
                  ConfigError);
}

TEST_CASE("mode equivalence on a tanh NDDE with interior observations") {
  FieldSpec spec;
  spec.kind = FieldKind::Ndde;
  spec.state_dim = 2;
  spec.tau = 0.5;
  spec.ndde_input = NddeInput::Concat;
  spec.net = MlpSpec::dense({4, 10, 2}, Activation::Tanh);
  auto [model, params] = make_field(spec, 61);
  Grid g = Grid::from_span(0.0, 1.0, 0.01);
  std::vector<double> x0 = {0.5, -0.2};
  Trajectory traj = integrate_dde(*model.field, params.span(),
                                  HistoryFunction::constant(x0), 0.5, g,
                                  Method::Rk4);
  std::vector<double> times = {0.25, 0.5, 0.75, 1.0};
  std::vector<double> targets(times.size() * 2, 0.1);
  ObservationLoss loss = quadratic_loss(traj, times, targets);
  GradientBundle dense = dde_gradient(*model.field, params.span(), traj, loss,
                                      GradMode::Dense);
  GradientBundle pw = dde_gradient(*model.field, params.span(), traj, loss,
                                   GradMode::Piecewise);
  CHECK(ref::max_abs_diff(dense.w_grad.values, pw.w_grad.values) < 1e-8);
  CHECK(ref::max_abs_diff(dense.input_grad, pw.input_grad) < 1e-8);
  CHECK(pw.diagnostics.reconstruction_max_err < 1e-10);
}

TEST_CASE("observation jumps are additive across split losses") {
  FieldSpec spec;
  spec.kind = FieldKind::Ndde;
  spec.state_dim = 1;
  spec.tau = 0.5;
  spec.net = MlpSpec::dense({2, 6, 1}, Activation::Tanh);
  auto [model, params] = make_field(spec, 71);
  Grid g = Grid::from_span(0.0, 1.0, 0.01);
  Trajectory traj = integrate_dde(*model.field, params.span(),
                                  HistoryFunction::constant({0.6}), 0.5, g,
                                  Method::Rk4);
  ObservationLoss l1;
  l1.add(0.5, {1.7});
  ObservationLoss l2;
  l2.add(1.0, {-0.9});
  ObservationLoss both;
  both.add(0.5, {1.7});
  both.add(1.0, {-0.9});

  GradientBundle g1 = dde_gradient(*model.field, params.span(), traj, l1);
  GradientBundle g2 = dde_gradient(*model.field, params.span(), traj, l2);
  GradientBundle gb = dde_gradient(*model.field, params.span(), traj, both);
  for (long i = 0; i < gb.w_grad.size(); ++i)
    CHECK(std::abs(gb.w_grad[i] - (g1.w_grad[i] + g2.w_grad[i])) < 1e-10);
  CHECK(std::abs(gb.input_grad[0] - (g1.input_grad[0] + g2.input_grad[0])) < 1e-10);
}

TEST_CASE("oracle agreement across model kinds") {
  // One representative per kind; the acceptance suite runs the full matrix.
  struct Case {
    FieldSpec spec;
    double T;
  };
  std::vector<Case> cases;
  {
    FieldSpec s;
    s.kind = FieldKind::Node;
    s.state_dim = 2;
    s.tau = 0.5;
    s.net = MlpSpec::dense({2, 8, 2}, Activation::Tanh);
    cases.push_back({s, 1.0});
  }
  {
    FieldSpec s;
    s.kind = FieldKind::Ndde;
    s.state_dim = 2;
    s.tau = 0.5;
    s.ndde_input = NddeInput::Sum;
    s.net = MlpSpec::dense({2, 8, 2}, Activation::Tanh);
    cases.push_back({s, 1.0});
  }
  {
    FieldSpec s;
    s.kind = FieldKind::Anode;
    s.state_dim = 1;
    s.augment_dim = 1;
    s.tau = 0.5;
    s.net = MlpSpec::dense({2, 8, 2}, Activation::Tanh);
    cases.push_back({s, 0.5});
  }
  {
    FieldSpec s;
    s.kind = FieldKind::NodePlusNdde;
    s.state_dim = 2;
    s.tau = 0.5;
    s.net = MlpSpec::dense({4, 6, 2}, Activation::Tanh);
    s.init_net = MlpSpec::dense({2, 6, 2}, Activation::Tanh);
    cases.push_back({s, 1.0});
  }

  SplitMix64 rng(2024);
  for (const Case& c : cases) {
    auto [model, params] = make_field(c.spec, rng.next());
    const double step = c.spec.tau / 50.0;
    Grid g = Grid::from_span(0.0, c.T, step);
    std::vector<double> x(static_cast<std::size_t>(model.spec.solver_dim()));
    for (double& v : x) v = rng.uniform(-1.0, 1.0);
    std::vector<double> times = {c.T / 2.0, c.T};
    std::vector<double> targets(times.size() * x.size());
    for (double& v : targets) v = rng.uniform(-1.0, 1.0);

    auto forward = [&](std::span<const double> w) {
      if (model.spec.delayed()) {
        HistoryFunction h = model.make_history(x, w);
        return integrate_dde(*model.field, model.main_params(w), h, c.spec.tau,
                             g, Method::Rk4);
      }
      return integrate_ode(*model.field, model.main_params(w), x, g, Method::Rk4);
    };
    auto run = [&](std::span<const double> w) {
      Trajectory t = forward(w);
      return quadratic_value(t, times, targets);
    };

    Trajectory traj = forward(params.span());
    ObservationLoss loss = quadratic_loss(traj, times, targets);
    GradientBundle b = dde_gradient(*model.field, model.main_params(params.span()),
                                    traj, loss, GradMode::Dense);
    std::vector<double> adjoint(b.w_grad.values);
    adjoint.insert(adjoint.end(), b.init_w_grad.values.begin(),
                   b.init_w_grad.values.end());
    ParamVector fd = finite_diff_gradient(run, params.span(), 1e-5);
    CHECK(ref::max_rel_err(adjoint, fd.values) < 1e-4);
  }
}

TEST_CASE("finite_diff_gradient basics") {
  auto norm2 = [](std::span<const double> w) {
    double s = 0.0;
    for (double v : w) s += v * v;
    return s;
  };
  std::vector<double> w = {0.3, -1.2, 2.0};
  ParamVector g = finite_diff_gradient(norm2, w, 1e-5);
  for (int i = 0; i < 3; ++i)
    CHECK(std::abs(g[i] - 2.0 * w[static_cast<std::size_t>(i)]) < 1e-8);

  auto constant = [](std::span<const double>) { return 3.5; };
  ParamVector gz = finite_diff_gradient(constant, w, 1e-5);
  for (int i = 0; i < 3; ++i) CHECK(gz[i] == 0.0);

  auto bad = [](std::span<const double>) {
    return std::numeric_limits<double>::quiet_NaN();
  };
  CHECK_THROWS_AS(finite_diff_gradient(bad, w, 1e-5), DivergenceError);
}
