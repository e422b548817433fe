#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "ndde/models.hpp"
#include "ndde/solver.hpp"
#include "reference.hpp"

using namespace ndde;

TEST_CASE("node with zero parameters is the identity flow") {
  FieldSpec spec;
  spec.kind = FieldKind::Node;
  spec.state_dim = 2;
  spec.net = MlpSpec::dense({2, 6, 2}, Activation::Tanh);
  auto [model, params] = make_field(spec, 1);
  std::fill(params.values.begin(), params.values.end(), 0.0);
  Grid g = Grid::from_span(0.0, 1.0, 0.1);
  std::vector<double> x0 = {0.4, -1.1};
  Trajectory traj = integrate_ode(*model.field, params.span(), x0, g, Method::Rk4);
  for (int k = 0; k <= g.n_steps; ++k) {
    CHECK(traj.row(k)[0] == x0[0]);
    CHECK(traj.row(k)[1] == x0[1]);
  }
}

TEST_CASE("ndde dimension contracts per consumption pattern") {
  FieldSpec spec;
  spec.kind = FieldKind::Ndde;
  spec.state_dim = 2;
  spec.tau = 0.5;
  spec.ndde_input = NddeInput::Concat;
  spec.net = MlpSpec::dense({3, 6, 2}, Activation::Tanh);  // wants 4
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec.net = MlpSpec::dense({4, 6, 2}, Activation::Tanh);
  CHECK_NOTHROW(spec.validate());

  spec.ndde_input = NddeInput::DelayedOnly;
  CHECK_THROWS_AS(spec.validate(), ConfigError);  // now wants 2
  spec.net = MlpSpec::dense({2, 6, 2}, Activation::Tanh);
  CHECK_NOTHROW(spec.validate());
}

TEST_CASE("consumption patterns route h and y as documented") {
  MlpSpec net = MlpSpec::dense({2, 5, 2}, Activation::Tanh);
  ParamVector p = mlp_init(net, 13);
  std::vector<double> h = {0.3, -0.2};
  std::vector<double> y = {-0.6, 0.9};
  std::vector<double> out(2);

  MlpDynamicsField delayed(net, 2, MlpDynamicsField::Pattern::DelayedOnly);
  delayed.eval(h, y, 0.0, p.span(), out);
  auto want = mlp_forward(net, p, y);
  CHECK(out[0] == want[0]);
  CHECK(out[1] == want[1]);

  MlpDynamicsField sum(net, 2, MlpDynamicsField::Pattern::Sum);
  sum.eval(h, y, 0.0, p.span(), out);
  want = mlp_forward(net, p, std::vector<double>{h[0] + y[0], h[1] + y[1]});
  CHECK(out[0] == want[0]);
  CHECK(out[1] == want[1]);

  MlpSpec cnet = MlpSpec::dense({4, 5, 2}, Activation::Tanh);
  ParamVector cp = mlp_init(cnet, 14);
  MlpDynamicsField concat(cnet, 2, MlpDynamicsField::Pattern::Concat);
  concat.eval(h, y, 0.0, cp.span(), out);
  want = mlp_forward(cnet, cp, std::vector<double>{h[0], h[1], y[0], y[1]});
  CHECK(out[0] == want[0]);
  CHECK(out[1] == want[1]);
}

TEST_CASE("anode augments with zeros and projects back to the data") {
  FieldSpec spec;
  spec.kind = FieldKind::Anode;
  spec.state_dim = 1;
  spec.augment_dim = 1;
  spec.net = MlpSpec::dense({2, 6, 2}, Activation::Tanh);
  auto [model, params] = make_field(spec, 3);
  CHECK(model.spec.solver_dim() == 2);

  std::vector<double> aug = {0.7, 0.0};  // data component plus one zero
  ReadoutHead head = ReadoutHead::project_first(1);
  auto projected = readout(head, aug);
  REQUIRE(projected.size() == 1);
  CHECK(projected[0] == 0.7);
}

TEST_CASE("analytic annulus field: inner and outer bounds from the radius rule") {
  auto [field, params] = analytic_annulus_field(0.75, 2);
  const double T = 10.0;
  Grid g = Grid::from_span(0.0, T, 0.1);
  auto transform = [&](std::vector<double> x) {
    Trajectory t = integrate_dde(*field, params.span(),
                                 HistoryFunction::constant(std::move(x)), T, g,
                                 Method::Rk4);
    auto r = t.row(g.n_steps);
    return std::vector<double>(r.begin(), r.end());
  };

  auto inner = transform({0.3, 0.4});  // norm 0.5
  CHECK(inner[0] == Catch::Approx(0.3 + T * (0.5 - 0.75)).margin(1e-9));
  CHECK(inner[0] <= -2.0);

  auto outer = transform({0.6, 0.8});  // norm 1.0
  CHECK(outer[0] == Catch::Approx(0.6 + T * (1.0 - 0.75)).margin(1e-9));
  CHECK(outer[0] >= 1.0);

  auto origin = transform({0.0, 0.0});
  CHECK(origin[0] == Catch::Approx(-T * 0.75).margin(1e-9));
  CHECK(origin[1] == 0.0);
}

TEST_CASE("universal construction realizes x + T*G(x)") {
  const double T = 1.0;
  const int dim = 2;

  // F(x) = -x  =>  G(x) = (F(x) - x)/T = -2x/T
  auto g_neg = [T](std::span<const double> y, std::span<double> out) {
    for (std::size_t i = 0; i < y.size(); ++i) out[i] = -2.0 * y[i] / T;
  };
  UniversalConstruction u = universal_construct(g_neg, dim, T);
  Grid grid = Grid::from_span(0.0, T, 0.01);
  SplitMix64 rng(404);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x = {rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)};
    Trajectory t = integrate_dde(*u.field, {}, HistoryFunction::constant(x),
                                 u.tau, grid, Method::Rk4);
    auto hT = t.row(grid.n_steps);
    CHECK(std::abs(hT[0] + x[0]) < 1e-9);
    CHECK(std::abs(hT[1] + x[1]) < 1e-9);
  }

  // G == 0 keeps the input; F = identity gives G == 0.
  auto g_zero = [](std::span<const double>, std::span<double> out) {
    for (double& o : out) o = 0.0;
  };
  UniversalConstruction uz = universal_construct(g_zero, dim, T);
  Trajectory tz = integrate_dde(*uz.field, {}, HistoryFunction::constant({1.5, -0.5}),
                                uz.tau, grid, Method::Rk4);
  CHECK(tz.row(grid.n_steps)[0] == 1.5);
  CHECK(tz.row(grid.n_steps)[1] == -0.5);
}

TEST_CASE("universal construction is exact for arbitrary G") {
  // Constant-in-time field: the quadrature is exact up to roundoff.
  const double T = 2.0;
  MlpSpec net = MlpSpec::dense({3, 7, 3}, Activation::Tanh);
  ParamVector p = mlp_init(net, 90);
  auto g_net = [&](std::span<const double> y, std::span<double> out) {
    Mlp m(net);
    m.forward(p.span(), y, out);
  };
  UniversalConstruction u = universal_construct(g_net, 3, T);
  Grid grid = Grid::from_span(0.0, T, 0.02);
  std::vector<double> x = {0.2, -0.8, 0.5};
  Trajectory t = integrate_dde(*u.field, {}, HistoryFunction::constant(x), u.tau,
                               grid, Method::Rk4);
  std::vector<double> gx(3);
  g_net(x, gx);
  for (int i = 0; i < 3; ++i)
    CHECK(std::abs(t.row(grid.n_steps)[static_cast<std::size_t>(i)] -
                   (x[static_cast<std::size_t>(i)] + T * gx[static_cast<std::size_t>(i)])) < 1e-12);
}

TEST_CASE("readout heads") {
  std::vector<double> state = {1.5, -2.5, 3.5};
  auto id = readout(ReadoutHead::identity(), state);
  CHECK(id == state);

  auto proj = readout(ReadoutHead::project_first(1), std::vector<double>{1.0, 2.0});
  REQUIRE(proj.size() == 1);
  CHECK(proj[0] == 1.0);

  ParamVector zero(static_cast<std::size_t>(2 * 3 + 2));
  auto lin = readout(ReadoutHead::linear(3, 2, zero), state);
  CHECK(lin[0] == 0.0);
  CHECK(lin[1] == 0.0);

  CHECK_THROWS_AS(readout(ReadoutHead::project_first(4), std::vector<double>{1.0}),
                  ShapeError);
  CHECK_THROWS_AS(ReadoutHead::linear(3, 2, ParamVector(5)), ShapeError);
}

TEST_CASE("readout vjp routes loss gradients into the state") {
  ReadoutHead proj = ReadoutHead::project_first(1);
  std::vector<double> state = {0.5, 0.9};
  std::vector<double> v = {2.0};
  std::vector<double> sg(2);
  proj.vjp(state, v, sg);
  CHECK(sg[0] == 2.0);
  CHECK(sg[1] == 0.0);

  ParamVector w(static_cast<std::size_t>(2 * 2 + 2));
  w[0] = 1.0; w[1] = 2.0; w[2] = 3.0; w[3] = 4.0;
  ReadoutHead lin = ReadoutHead::linear(2, 2, w);
  std::vector<double> v2 = {1.0, -1.0};
  lin.vjp(state, v2, sg);
  CHECK(sg[0] == Catch::Approx(1.0 * 1.0 + (-1.0) * 3.0));
  CHECK(sg[1] == Catch::Approx(1.0 * 2.0 + (-1.0) * 4.0));
}

TEST_CASE("autonomous ODE trajectories from distinct starts never meet") {
  // The Fig.-2 counterpart: x' = -2x from +1 and -1.
  ScalarLinearOdeField f(-2.0);
  Grid g = Grid::from_span(0.0, 1.0, 0.01);
  Trajectory plus = integrate_ode(f, {}, std::vector<double>{1.0}, g, Method::Rk4);
  Trajectory minus = integrate_ode(f, {}, std::vector<double>{-1.0}, g, Method::Rk4);
  double min_gap = 1e300;
  for (int k = 0; k <= g.n_steps; ++k) {
    CHECK(plus.row(k)[0] > 0.0);
    CHECK(minus.row(k)[0] < 0.0);
    min_gap = std::min(min_gap, plus.row(k)[0] - minus.row(k)[0]);
  }
  CHECK(min_gap > 1e-9);
}

TEST_CASE("make_field layouts: node_plus_ndde concatenates init params") {
  FieldSpec spec;
  spec.kind = FieldKind::NodePlusNdde;
  spec.state_dim = 2;
  spec.tau = 0.5;
  spec.net = MlpSpec::dense({4, 6, 2}, Activation::Tanh);
  spec.init_net = MlpSpec::dense({2, 4, 2}, Activation::Tanh);
  auto [model, params] = make_field(spec, 17);
  CHECK(model.main_param_count == spec.net.param_count());
  CHECK(model.total_param_count ==
        spec.net.param_count() + spec.init_net.param_count());
  CHECK(params.size() == model.total_param_count);
  HistoryFunction h = model.make_history(std::vector<double>{0.1, 0.2}, params.span());
  CHECK(h.kind == HistoryFunction::Kind::OdeDriven);
  CHECK(h.span == Catch::Approx(0.5));
}

TEST_CASE("universal fields refuse reverse-mode use") {
  auto g0 = [](std::span<const double>, std::span<double> out) {
    for (double& o : out) o = 0.0;
  };
  UniversalConstruction u = universal_construct(g0, 2, 1.0);
  std::vector<double> h = {1.0, 1.0}, v = {1.0, 1.0}, hg(2), yg(2);
  CHECK_THROWS_AS(u.field->vjp(h, h, 0.0, {}, v, hg, yg, {}), ConfigError);
}
