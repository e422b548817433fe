#pragma once

// Deterministic fixed-step integrators for ODEs and single-delay DDEs on
// uniform grids. DDEs use the method of steps: the delayed argument is read
// from already-computed grid rows and held at its step-start value inside
// each step.

#include <cmath>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "ndde/errors.hpp"
#include "ndde/field.hpp"

namespace ndde {

enum class Method { Euler, Rk4 };

inline const char* method_name(Method m) {
  return m == Method::Euler ? "euler" : "rk4";
}

struct Grid {
  double t0 = 0.0;
  double t1 = 0.0;
  double step = 0.0;
  int n_steps = 0;

  // n_steps = round(span/step); the step must divide the span to 1e-12.
  static Grid from_span(double t0, double t1, double step) {
    if (step <= 0.0) throw ConfigError("grid step must be positive");
    const double span = t1 - t0;
    if (span <= 0.0) throw ConfigError("grid span must be positive");
    const double n_real = span / step;
    const long n = std::lround(n_real);
    if (n < 1 || std::abs(n * step - span) > 1e-12 * std::max(1.0, std::abs(span)))
      throw ConfigError("grid step does not divide the span: step=" +
                        std::to_string(step) + " span=" + std::to_string(span));
    Grid g;
    g.t0 = t0;
    g.step = step;
    g.n_steps = static_cast<int>(n);
    g.t1 = t0 + static_cast<double>(n) * step;
    return g;
  }

  static Grid from_steps(double t0, double step, int n_steps) {
    if (step <= 0.0) throw ConfigError("grid step must be positive");
    if (n_steps < 1) throw ConfigError("grid needs at least one step");
    Grid g;
    g.t0 = t0;
    g.step = step;
    g.n_steps = n_steps;
    g.t1 = t0 + static_cast<double>(n_steps) * step;
    return g;
  }

  double time_at(int k) const { return t0 + static_cast<double>(k) * step; }

  bool aligned(double t, double tol = 1e-9) const {
    const long k = std::lround((t - t0) / step);
    return k >= 0 && k <= n_steps && std::abs(time_at(static_cast<int>(k)) - t) <= tol;
  }

  int index_of(double t, double tol = 1e-9) const {
    const long k = std::lround((t - t0) / step);
    if (k < 0 || k > n_steps || std::abs(time_at(static_cast<int>(k)) - t) > tol)
      throw AlignmentError("time " + std::to_string(t) + " is not on the grid");
    return static_cast<int>(k);
  }

  bool same_as(const Grid& o, double tol = 1e-12) const {
    return n_steps == o.n_steps && std::abs(t0 - o.t0) <= tol &&
           std::abs(step - o.step) <= tol;
  }
};

// Delay offset in grid steps; tau must lie on the grid.
inline int delay_offset(double tau, double step) {
  if (tau <= 0.0) throw ConfigError("delay tau must be positive");
  const long d = std::lround(tau / step);
  if (d < 1 || std::abs(static_cast<double>(d) * step - tau) > 1e-9)
    throw ConfigError("delay tau=" + std::to_string(tau) +
                      " is not a multiple of the grid step " +
                      std::to_string(step));
  return static_cast<int>(d);
}

// DDE initial condition phi(t) for t <= 0. Constant, driven by an auxiliary
// ODE solved on [-span, 0], or a grid-aligned table of rows (used to restart
// integrations from the tail of an observed trajectory).
struct HistoryFunction {
  enum class Kind { Constant, OdeDriven, Tabulated };

  Kind kind = Kind::Constant;
  int dim = 0;
  std::vector<double> x0;  // Constant

  const VectorField* init_field = nullptr;  // OdeDriven
  std::vector<double> init_params;
  std::vector<double> seed_state;  // state at t = -span
  double span = 0.0;

  // Materialized rows covering [-span, 0] at table_step spacing; the last
  // row is phi(0). Filled for OdeDriven by materialize(); given directly
  // for Tabulated.
  std::vector<double> table;
  double table_step = 0.0;

  static HistoryFunction constant(std::vector<double> x) {
    HistoryFunction h;
    h.kind = Kind::Constant;
    h.dim = static_cast<int>(x.size());
    h.x0 = std::move(x);
    return h;
  }

  static HistoryFunction ode_driven(const VectorField& field,
                                    std::vector<double> params,
                                    std::vector<double> seed, double span) {
    if (span <= 0.0) throw ConfigError("history span must be positive");
    HistoryFunction h;
    h.kind = Kind::OdeDriven;
    h.dim = field.dim();
    h.init_field = &field;
    h.init_params = std::move(params);
    h.seed_state = std::move(seed);
    h.span = span;
    if (static_cast<int>(h.seed_state.size()) != h.dim)
      throw ShapeError("history seed state dim mismatch");
    return h;
  }

  static HistoryFunction tabulated(double step, int dim,
                                   std::vector<double> rows) {
    if (rows.empty() || rows.size() % static_cast<std::size_t>(dim) != 0)
      throw ShapeError("tabulated history rows must be a multiple of dim");
    HistoryFunction h;
    h.kind = Kind::Tabulated;
    h.dim = dim;
    h.table = std::move(rows);
    h.table_step = step;
    h.span = step * static_cast<double>(h.table.size() / static_cast<std::size_t>(dim) - 1);
    return h;
  }

  int table_rows() const {
    return dim == 0 ? 0 : static_cast<int>(table.size() / static_cast<std::size_t>(dim));
  }

  bool materialized() const {
    return kind == Kind::Constant || !table.empty();
  }

  // Row at t = j*step for j in [-span_steps, 0].
  std::span<const double> row_at(int j, double step) const {
    if (kind == Kind::Constant) return x0;
    if (std::abs(table_step - step) > 1e-12)
      throw AlignmentError("history table step mismatch");
    const int m = table_rows() - 1 + j;
    if (m < 0 || m >= table_rows())
      throw AlignmentError("history lookup before the covered span");
    return std::span<const double>(table.data() + static_cast<std::size_t>(m) * dim,
                                   static_cast<std::size_t>(dim));
  }

  std::span<const double> value_at_zero() const {
    if (kind == Kind::Constant) return x0;
    if (table.empty()) throw ConfigError("history not materialized");
    return std::span<const double>(
        table.data() + (table.size() - static_cast<std::size_t>(dim)),
        static_cast<std::size_t>(dim));
  }
};

struct Trajectory {
  Grid grid;
  int dim = 0;
  std::vector<double> states;  // (n_steps + 1) x dim, row-major
  Method method = Method::Rk4;
  double tau = -1.0;  // negative: produced by integrate_ode
  HistoryFunction history;

  int rows() const { return grid.n_steps + 1; }

  std::span<const double> row(int k) const {
    return std::span<const double>(states.data() + static_cast<std::size_t>(k) * dim,
                                   static_cast<std::size_t>(dim));
  }
  std::span<double> row(int k) {
    return std::span<double>(states.data() + static_cast<std::size_t>(k) * dim,
                             static_cast<std::size_t>(dim));
  }
};

namespace detail {

struct StepScratch {
  std::vector<double> s1, s2, s3, s4, a;
  void resize(std::size_t n) {
    s1.resize(n);
    s2.resize(n);
    s3.resize(n);
    s4.resize(n);
    a.resize(n);
  }
};

inline StepScratch& step_scratch() {
  static thread_local StepScratch s;
  return s;
}

// One explicit step from x at time t. DDE mode holds y_frozen fixed across
// the stages; ODE mode feeds the running stage state as the delayed
// argument as well.
inline void explicit_step(const VectorField& f, std::span<const double> w,
                          Method method, bool ode_mode, double t, double dt,
                          std::span<const double> x,
                          std::span<const double> y_frozen,
                          std::span<double> out) {
  const std::size_t n = x.size();
  StepScratch& ws = step_scratch();
  ws.resize(n);
  auto y_of = [&](std::span<const double> stage) {
    return ode_mode ? stage : y_frozen;
  };
  if (method == Method::Euler) {
    f.eval(x, y_of(x), t, w, ws.s1);
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i] + dt * ws.s1[i];
    return;
  }
  const double h2 = dt / 2.0;
  f.eval(x, y_of(x), t, w, ws.s1);
  for (std::size_t i = 0; i < n; ++i) ws.a[i] = x[i] + h2 * ws.s1[i];
  f.eval(ws.a, y_of(ws.a), t + h2, w, ws.s2);
  for (std::size_t i = 0; i < n; ++i) ws.a[i] = x[i] + h2 * ws.s2[i];
  f.eval(ws.a, y_of(ws.a), t + h2, w, ws.s3);
  for (std::size_t i = 0; i < n; ++i) ws.a[i] = x[i] + dt * ws.s3[i];
  f.eval(ws.a, y_of(ws.a), t + dt, w, ws.s4);
  const double d6 = dt / 6.0;
  const double d3 = dt / 3.0;
  for (std::size_t i = 0; i < n; ++i)
    out[i] = x[i] + d6 * (ws.s1[i] + ws.s4[i]) + d3 * (ws.s2[i] + ws.s3[i]);
}

inline bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

inline void check_row_finite(std::span<const double> row, int k) {
  if (!all_finite(row))
    throw DivergenceError("non-finite state at step " + std::to_string(k), k);
}

}  // namespace detail

inline Trajectory integrate_ode(const VectorField& field,
                                std::span<const double> params,
                                std::span<const double> x0, const Grid& grid,
                                Method method) {
  if (static_cast<int>(x0.size()) != field.dim())
    throw ShapeError("integrate_ode: initial state dim mismatch");
  Trajectory traj;
  traj.grid = grid;
  traj.dim = field.dim();
  traj.method = method;
  traj.tau = -1.0;
  traj.history = HistoryFunction::constant(std::vector<double>(x0.begin(), x0.end()));
  traj.states.resize(static_cast<std::size_t>(traj.rows()) * traj.dim);
  std::memcpy(traj.row(0).data(), x0.data(), x0.size() * sizeof(double));
  detail::check_row_finite(traj.row(0), 0);
  for (int k = 0; k < grid.n_steps; ++k) {
    detail::explicit_step(field, params, method, /*ode_mode=*/true,
                          grid.time_at(k), grid.step, traj.row(k), {},
                          traj.row(k + 1));
    detail::check_row_finite(traj.row(k + 1), k + 1);
  }
  return traj;
}

// Materializes an OdeDriven history on the solver grid (same step, same
// method). No-op for Constant and Tabulated histories.
inline void materialize_history(HistoryFunction& history, double step,
                                Method method) {
  if (history.kind != HistoryFunction::Kind::OdeDriven) {
    if (history.kind == HistoryFunction::Kind::Tabulated &&
        std::abs(history.table_step - step) > 1e-12)
      throw AlignmentError("tabulated history step mismatch");
    return;
  }
  const double n_real = history.span / step;
  const long m = std::lround(n_real);
  if (m < 1 || std::abs(static_cast<double>(m) * step - history.span) > 1e-9)
    throw ConfigError("history span is not a multiple of the grid step");
  Grid aux = Grid::from_steps(-history.span, step, static_cast<int>(m));
  Trajectory sol = integrate_ode(*history.init_field, history.init_params,
                                 history.seed_state, aux, method);
  history.table = std::move(sol.states);
  history.table_step = step;
}

inline Trajectory integrate_dde(const VectorField& field,
                                std::span<const double> params,
                                const HistoryFunction& history, double tau,
                                const Grid& grid, Method method) {
  if (grid.t0 != 0.0)
    throw ConfigError("integrate_dde requires a grid starting at t0 = 0");
  if (history.dim != field.dim())
    throw ShapeError("integrate_dde: history dim mismatch");
  const int d = delay_offset(tau, grid.step);
  if (history.kind != HistoryFunction::Kind::Constant &&
      history.span < tau - 1e-9)
    throw ConfigError("history span is shorter than the delay");

  Trajectory traj;
  traj.grid = grid;
  traj.dim = field.dim();
  traj.method = method;
  traj.tau = tau;
  traj.history = history;
  materialize_history(traj.history, grid.step, method);

  traj.states.resize(static_cast<std::size_t>(traj.rows()) * traj.dim);
  {
    auto phi0 = traj.history.value_at_zero();
    std::memcpy(traj.row(0).data(), phi0.data(), phi0.size() * sizeof(double));
  }
  detail::check_row_finite(traj.row(0), 0);
  for (int k = 0; k < grid.n_steps; ++k) {
    std::span<const double> y =
        k >= d ? traj.row(k - d) : traj.history.row_at(k - d, grid.step);
    detail::explicit_step(field, params, method, /*ode_mode=*/false,
                          grid.time_at(k), grid.step, traj.row(k), y,
                          traj.row(k + 1));
    detail::check_row_finite(traj.row(k + 1), k + 1);
  }
  return traj;
}

// Exact stored rows at the requested grid-aligned times; never interpolates.
inline std::vector<double> sample_at(const Trajectory& traj,
                                     std::span<const double> times) {
  std::vector<double> out(times.size() * static_cast<std::size_t>(traj.dim));
  for (std::size_t i = 0; i < times.size(); ++i) {
    const int k = traj.grid.index_of(times[i]);
    std::memcpy(out.data() + i * static_cast<std::size_t>(traj.dim),
                traj.row(k).data(),
                static_cast<std::size_t>(traj.dim) * sizeof(double));
  }
  return out;
}

// Rows i0..i1 inclusive as a trajectory starting at time_at(i0).
inline Trajectory subtrajectory(const Trajectory& traj, int i0, int i1) {
  if (i0 < 0 || i1 > traj.grid.n_steps || i1 <= i0)
    throw AlignmentError("subtrajectory: bad row range");
  Trajectory out;
  out.grid = Grid::from_steps(traj.grid.time_at(i0), traj.grid.step, i1 - i0);
  out.dim = traj.dim;
  out.method = traj.method;
  out.tau = traj.tau;
  out.history = traj.history;
  out.states.assign(traj.states.begin() + static_cast<long>(i0) * traj.dim,
                    traj.states.begin() + (static_cast<long>(i1) + 1) * traj.dim);
  return out;
}

}  // namespace ndde
