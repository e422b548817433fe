#pragma once

// Reverse-mode gradients for losses on DDE/ODE trajectories. The backward
// pass is the exact reverse of the discrete forward solver: each explicit
// step is re-expanded into its stages and transposed with field VJPs, so
// the delayed adjoint equation is integrated backward on the forward grid
// with lambda(t + tau) read from already-computed rows, and the resulting
// gradients are exact for the discretized system (the finite-difference
// oracle over the same solver agrees to roundoff).
//
// Two storage modes are provided: dense-store (whole forward trajectory
// kept) and piecewise checkpointing (only the states at multiples of tau
// kept; segment rows are reconstructed backward from the checkpoints, one
// tau-interval at a time, via the stacked segment system).

#include <cmath>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "ndde/errors.hpp"
#include "ndde/field.hpp"
#include "ndde/mlp.hpp"
#include "ndde/solver.hpp"

namespace ndde {

// Loss gradients attached to grid-aligned observation times in (t0, T].
// When the loss uses the final state, T is the last entry.
struct ObservationLoss {
  std::vector<double> times;
  std::vector<std::vector<double>> grads;  // dL/dh(t_k), state-space covectors

  void add(double t, std::vector<double> grad) {
    times.push_back(t);
    grads.push_back(std::move(grad));
  }

  void validate(const Grid& grid, int dim) const {
    if (times.size() != grads.size())
      throw ShapeError("observation loss: times/grads length mismatch");
    double prev = grid.t0;
    for (std::size_t i = 0; i < times.size(); ++i) {
      if (times[i] <= prev + 1e-12)
        throw AlignmentError("observation times must be strictly increasing "
                             "and greater than t0");
      grid.index_of(times[i]);
      if (static_cast<int>(grads[i].size()) != dim)
        throw ShapeError("observation gradient dim mismatch");
      prev = times[i];
    }
  }
};

// lambda(t) at grid nodes. Rows store the value the backward sweep carries
// onward from each node, i.e. including the observation jump applied on
// arrival at that node. param_accum / history accumulators are the exact
// stage-level gradient sums collected during the same sweep.
struct AdjointSolution {
  Grid grid;
  int dim = 0;
  std::vector<double> lambdas;  // (n_steps + 1) x dim
  ParamVector param_accum;
  std::vector<double> history_const_accum;  // constant history: summed delayed cotangent
  std::vector<double> history_row_accum;    // table-backed history: per-row cotangents
  double sup_norm = 0.0;

  std::span<const double> lambda(int k) const {
    return std::span<const double>(lambdas.data() + static_cast<std::size_t>(k) * dim,
                                   static_cast<std::size_t>(dim));
  }
};

struct AdjointDiagnostics {
  double reconstruction_max_err = 0.0;
  double adjoint_sup_norm = 0.0;
};

struct GradientBundle {
  ParamVector w_grad;       // main field parameters
  ParamVector init_w_grad;  // history-ODE parameters (OdeDriven history only)
  std::vector<double> input_grad;
  AdjointDiagnostics diagnostics;
};

enum class GradMode { Dense, Piecewise };

namespace detail {

struct ReverseScratch {
  std::vector<double> s, a2, a3, a4, b, htmp, ytmp;
  void resize(std::size_t n) {
    s.resize(n);
    a2.resize(n);
    a3.resize(n);
    a4.resize(n);
    b.resize(n);
    htmp.resize(n);
    ytmp.resize(n);
  }
};

inline ReverseScratch& reverse_scratch() {
  static thread_local ReverseScratch s;
  return s;
}

// Transpose of one forward explicit step (step-start state x, frozen
// delayed argument y, covector mu = dL/d x_next):
//   gx (overwritten) = mu^T d(x_next)/dx
//   gy (overwritten) = mu^T d(x_next)/dy   (skipped in ODE mode)
//   w_grad (accumulated) += mu^T d(x_next)/dw
// The forward stages are recomputed from x before transposing them.
inline void reverse_step(const VectorField& f, std::span<const double> w,
                         Method method, bool ode_mode, double t, double dt,
                         std::span<const double> x,
                         std::span<const double> y_frozen,
                         std::span<const double> mu, std::span<double> gx,
                         std::span<double> gy, std::span<double> w_grad) {
  const std::size_t n = x.size();
  ReverseScratch& ws = reverse_scratch();
  ws.resize(n);

  auto stage_vjp = [&](std::span<const double> xs, double ts,
                       std::span<const double> v) {
    // ws.htmp receives the stage-state cotangent; gy accumulates.
    if (ode_mode) {
      f.vjp(xs, xs, ts, w, v, ws.htmp, ws.ytmp, w_grad);
      for (std::size_t i = 0; i < n; ++i) ws.htmp[i] += ws.ytmp[i];
    } else {
      f.vjp(xs, y_frozen, ts, w, v, ws.htmp, ws.ytmp, w_grad);
      if (!gy.empty())
        for (std::size_t i = 0; i < n; ++i) gy[i] += ws.ytmp[i];
    }
  };

  for (std::size_t i = 0; i < n; ++i) gx[i] = mu[i];
  if (!gy.empty())
    for (std::size_t i = 0; i < n; ++i) gy[i] = 0.0;

  auto y_of = [&](std::span<const double> stage) {
    return ode_mode ? stage : y_frozen;
  };

  if (method == Method::Euler) {
    for (std::size_t i = 0; i < n; ++i) ws.b[i] = dt * mu[i];
    stage_vjp(x, t, ws.b);
    for (std::size_t i = 0; i < n; ++i) gx[i] += ws.htmp[i];
    return;
  }

  // Recompute the stage inputs.
  const double h2 = dt / 2.0;
  f.eval(x, y_of(x), t, w, ws.s);
  for (std::size_t i = 0; i < n; ++i) ws.a2[i] = x[i] + h2 * ws.s[i];
  f.eval(ws.a2, y_of(ws.a2), t + h2, w, ws.s);
  for (std::size_t i = 0; i < n; ++i) ws.a3[i] = x[i] + h2 * ws.s[i];
  f.eval(ws.a3, y_of(ws.a3), t + h2, w, ws.s);
  for (std::size_t i = 0; i < n; ++i) ws.a4[i] = x[i] + dt * ws.s[i];

  const double d6 = dt / 6.0;
  const double d3 = dt / 3.0;

  // Stage 4: s4 = f(a4, ., t+dt), weight dt/6.
  for (std::size_t i = 0; i < n; ++i) ws.b[i] = d6 * mu[i];
  stage_vjp(ws.a4, t + dt, ws.b);
  for (std::size_t i = 0; i < n; ++i) gx[i] += ws.htmp[i];
  // Stage 3: weight dt/3 plus the a4 = x + dt*s3 path.
  for (std::size_t i = 0; i < n; ++i) ws.b[i] = d3 * mu[i] + dt * ws.htmp[i];
  stage_vjp(ws.a3, t + h2, ws.b);
  for (std::size_t i = 0; i < n; ++i) gx[i] += ws.htmp[i];
  // Stage 2: weight dt/3 plus the a3 = x + (dt/2)*s2 path.
  for (std::size_t i = 0; i < n; ++i) ws.b[i] = d3 * mu[i] + h2 * ws.htmp[i];
  stage_vjp(ws.a2, t + h2, ws.b);
  for (std::size_t i = 0; i < n; ++i) gx[i] += ws.htmp[i];
  // Stage 1: weight dt/6 plus the a2 = x + (dt/2)*s1 path.
  for (std::size_t i = 0; i < n; ++i) ws.b[i] = d6 * mu[i] + h2 * ws.htmp[i];
  stage_vjp(x, t, ws.b);
  for (std::size_t i = 0; i < n; ++i) gx[i] += ws.htmp[i];
}

inline double sup_norm_of(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace detail

// Backward sweep over a stored forward trajectory. Integrates the delayed
// adjoint equation backward on the forward grid: at node k the delayed term
// (already produced while transposing step k + tau/step) is added, and the
// observation jump dL/dh(t_k), if any, is applied before continuing.
inline AdjointSolution adjoint_backward(const VectorField& field,
                                        std::span<const double> params,
                                        const Trajectory& forward, double tau,
                                        const ObservationLoss& loss) {
  loss.validate(forward.grid, forward.dim);
  const bool delayed_mode = forward.tau > 0.0;
  if (delayed_mode && std::abs(forward.tau - tau) > 1e-12)
    throw AlignmentError("adjoint_backward: tau does not match the forward pass");

  const Grid& grid = forward.grid;
  const int n = grid.n_steps;
  const int dim = forward.dim;
  const int d = delayed_mode ? delay_offset(tau, grid.step) : 0;

  AdjointSolution adj;
  adj.grid = grid;
  adj.dim = dim;
  adj.lambdas.assign(static_cast<std::size_t>(n + 1) * dim, 0.0);
  adj.param_accum = ParamVector(static_cast<std::size_t>(field.param_count()));
  if (delayed_mode) {
    if (forward.history.kind == HistoryFunction::Kind::Constant)
      adj.history_const_accum.assign(static_cast<std::size_t>(dim), 0.0);
    else
      adj.history_row_accum.assign(forward.history.table.size(), 0.0);
  }

  // Observation jumps by grid row.
  std::vector<const std::vector<double>*> jump(static_cast<std::size_t>(n + 1), nullptr);
  for (std::size_t i = 0; i < loss.times.size(); ++i)
    jump[static_cast<std::size_t>(grid.index_of(loss.times[i]))] = &loss.grads[i];

  std::vector<double> delayed(static_cast<std::size_t>(n + 1) * dim, 0.0);
  std::vector<double> carry(static_cast<std::size_t>(dim), 0.0);
  std::vector<double> gx(static_cast<std::size_t>(dim));
  std::vector<double> gy(static_cast<std::size_t>(dim));

  auto route_history = [&](int j, std::span<const double> g) {
    // j < 0 is the history grid index of the consumed row.
    if (forward.history.kind == HistoryFunction::Kind::Constant) {
      for (int i = 0; i < dim; ++i) adj.history_const_accum[static_cast<std::size_t>(i)] += g[static_cast<std::size_t>(i)];
    } else {
      const int m = forward.history.table_rows() - 1 + j;
      double* row = adj.history_row_accum.data() + static_cast<std::size_t>(m) * dim;
      for (int i = 0; i < dim; ++i) row[i] += g[static_cast<std::size_t>(i)];
    }
  };

  if (jump[static_cast<std::size_t>(n)])
    for (int i = 0; i < dim; ++i)
      carry[static_cast<std::size_t>(i)] += (*jump[static_cast<std::size_t>(n)])[static_cast<std::size_t>(i)];
  std::memcpy(adj.lambdas.data() + static_cast<std::size_t>(n) * dim, carry.data(),
              static_cast<std::size_t>(dim) * sizeof(double));
  adj.sup_norm = detail::sup_norm_of(carry);

  for (int k = n - 1; k >= 0; --k) {
    std::span<const double> y{};
    if (delayed_mode)
      y = k >= d ? forward.row(k - d) : forward.history.row_at(k - d, grid.step);
    detail::reverse_step(field, params, forward.method, !delayed_mode,
                         grid.time_at(k), grid.step, forward.row(k), y, carry,
                         gx, delayed_mode ? std::span<double>(gy) : std::span<double>{},
                         adj.param_accum.span());
    if (delayed_mode) {
      if (k >= d) {
        double* row = delayed.data() + static_cast<std::size_t>(k - d) * dim;
        for (int i = 0; i < dim; ++i) row[i] += gy[static_cast<std::size_t>(i)];
      } else {
        route_history(k - d, gy);
      }
    }
    const double* dl = delayed.data() + static_cast<std::size_t>(k) * dim;
    for (int i = 0; i < dim; ++i)
      carry[static_cast<std::size_t>(i)] = gx[static_cast<std::size_t>(i)] + dl[i];
    if (jump[static_cast<std::size_t>(k)])
      for (int i = 0; i < dim; ++i)
        carry[static_cast<std::size_t>(i)] += (*jump[static_cast<std::size_t>(k)])[static_cast<std::size_t>(i)];
    std::memcpy(adj.lambdas.data() + static_cast<std::size_t>(k) * dim, carry.data(),
                static_cast<std::size_t>(dim) * sizeof(double));
    adj.sup_norm = std::max(adj.sup_norm, detail::sup_norm_of(carry));
  }
  return adj;
}

// dL/dw over [0, T]; the integral of Eq. 5 realized as the exact stage-level
// accumulation collected by the backward sweep.
inline ParamVector param_gradient(const VectorField& field,
                                  std::span<const double> params,
                                  const Trajectory& forward,
                                  const AdjointSolution& adj) {
  (void)params;
  if (!adj.grid.same_as(forward.grid))
    throw AlignmentError("param_gradient: adjoint/forward grid mismatch");
  if (adj.param_accum.size() != field.param_count())
    throw ShapeError("param_gradient: parameter count mismatch");
  return adj.param_accum;
}

struct HistoryGradient {
  std::vector<double> input_grad;  // dL/dx0 (constant) or dL/d seed_state
  ParamVector init_w_grad;         // empty unless OdeDriven
};

// Gradient with respect to the history. Constant history x0: lambda(0) plus
// the delayed-path contribution accumulated on [0, tau]. OdeDriven history:
// the backward sweep continues through the auxiliary ODE on [-span, 0] with
// the delayed cotangents as source terms, yielding the seed-state gradient
// and the history-net parameter gradient.
inline HistoryGradient history_gradient(const AdjointSolution& adj,
                                        const Trajectory& forward,
                                        const HistoryFunction& history) {
  const int dim = adj.dim;
  HistoryGradient out;
  if (forward.tau <= 0.0 || history.kind == HistoryFunction::Kind::Constant) {
    out.input_grad.assign(adj.lambda(0).begin(), adj.lambda(0).end());
    if (forward.tau > 0.0)
      for (int i = 0; i < dim; ++i)
        out.input_grad[static_cast<std::size_t>(i)] +=
            adj.history_const_accum[static_cast<std::size_t>(i)];
    return out;
  }
  if (history.kind == HistoryFunction::Kind::Tabulated)
    throw ConfigError("input gradient is not defined for tabulated histories");

  // OdeDriven: sources on the materialized rows, then reverse through the
  // auxiliary integration.
  const HistoryFunction& mat = forward.history;
  if (mat.table.empty()) throw ConfigError("history was not materialized");
  const int rows = mat.table_rows();
  std::vector<double> sources = adj.history_row_accum;
  sources.resize(static_cast<std::size_t>(rows) * dim, 0.0);
  {
    auto l0 = adj.lambda(0);
    double* last = sources.data() + static_cast<std::size_t>(rows - 1) * dim;
    for (int i = 0; i < dim; ++i) last[i] += l0[static_cast<std::size_t>(i)];
  }
  out.init_w_grad = ParamVector(static_cast<std::size_t>(history.init_field->param_count()));
  std::vector<double> carry(sources.end() - dim, sources.end());
  std::vector<double> gx(static_cast<std::size_t>(dim));
  for (int m = rows - 2; m >= 0; --m) {
    auto x = std::span<const double>(mat.table.data() + static_cast<std::size_t>(m) * dim,
                                     static_cast<std::size_t>(dim));
    detail::reverse_step(*history.init_field, history.init_params,
                         forward.method, /*ode_mode=*/true,
                         -mat.span + m * mat.table_step, mat.table_step, x, {},
                         carry, gx, {}, out.init_w_grad.span());
    const double* src = sources.data() + static_cast<std::size_t>(m) * dim;
    for (int i = 0; i < dim; ++i)
      carry[static_cast<std::size_t>(i)] = gx[static_cast<std::size_t>(i)] + src[i];
  }
  out.input_grad = std::move(carry);
  return out;
}

inline std::vector<double> input_gradient(const VectorField& field,
                                          std::span<const double> params,
                                          const Trajectory& forward,
                                          const AdjointSolution& adj,
                                          const HistoryFunction& history) {
  (void)field;
  (void)params;
  if (!adj.grid.same_as(forward.grid))
    throw AlignmentError("input_gradient: adjoint/forward grid mismatch");
  return history_gradient(adj, forward, history).input_grad;
}

// Forward states at 0, tau, ..., n*tau, extracted from a stored trajectory.
inline std::vector<std::vector<double>> checkpoint_states(
    const Trajectory& forward, double tau, int n_segments) {
  const int m = delay_offset(tau, forward.grid.step);
  if (static_cast<long>(m) * n_segments != forward.grid.n_steps)
    throw ConfigError("checkpoint_states: T must equal n_segments * tau");
  std::vector<std::vector<double>> cps;
  cps.reserve(static_cast<std::size_t>(n_segments) + 1);
  for (int i = 0; i <= n_segments; ++i) {
    auto r = forward.row(i * m);
    cps.emplace_back(r.begin(), r.end());
  }
  return cps;
}

// Piece-wise reverse-mode pass over checkpoints h(0), h(tau), ..., h(T).
// Each tau-interval is processed backward: the stacked segment system
// (segment k coupled to segment k-1 at equal local time) is re-integrated
// backward from the checkpoints to reconstruct the rows the sweep needs,
// then the active segment's adjoint is stepped with the same exact stage
// transposition as the dense mode, accumulating dL/dw along the way.
inline GradientBundle grad_piecewise(const VectorField& field,
                                     std::span<const double> params,
                                     const std::vector<std::vector<double>>& checkpoints,
                                     double tau, int n_segments, double step,
                                     Method method, const ObservationLoss& loss,
                                     const HistoryFunction& history_in) {
  if (static_cast<int>(checkpoints.size()) != n_segments + 1)
    throw ConfigError("grad_piecewise: need n_segments + 1 checkpoints, got " +
                      std::to_string(checkpoints.size()));
  if (n_segments < 1) throw ConfigError("grad_piecewise: n_segments must be >= 1");
  const int m = delay_offset(tau, step);
  const int dim = field.dim();
  for (const auto& c : checkpoints)
    if (static_cast<int>(c.size()) != dim)
      throw ShapeError("grad_piecewise: checkpoint dim mismatch");

  HistoryFunction history = history_in;
  materialize_history(history, step, method);

  const int n_rows = n_segments * m;  // global steps
  const Grid grid = Grid::from_steps(0.0, step, n_rows);
  loss.validate(grid, dim);
  std::vector<const std::vector<double>*> jump(static_cast<std::size_t>(n_rows + 1), nullptr);
  for (std::size_t i = 0; i < loss.times.size(); ++i)
    jump[static_cast<std::size_t>(grid.index_of(loss.times[i]))] = &loss.grads[i];

  GradientBundle bundle;
  bundle.w_grad = ParamVector(static_cast<std::size_t>(field.param_count()));
  std::vector<double> hist_const_accum(static_cast<std::size_t>(dim), 0.0);
  std::vector<double> hist_row_accum;
  if (history.kind != HistoryFunction::Kind::Constant)
    hist_row_accum.assign(history.table.size(), 0.0);

  std::vector<double> carry(static_cast<std::size_t>(dim), 0.0);
  if (jump[static_cast<std::size_t>(n_rows)])
    for (int i = 0; i < dim; ++i)
      carry[static_cast<std::size_t>(i)] += (*jump[static_cast<std::size_t>(n_rows)])[static_cast<std::size_t>(i)];
  double sup_norm = detail::sup_norm_of(carry);
  double recon_max = 0.0;

  // Delayed-cotangent buffer handed from iteration i to iteration i-1,
  // indexed by local row.
  std::vector<double> src_cur(static_cast<std::size_t>(m) * dim, 0.0);
  std::vector<double> src_next(static_cast<std::size_t>(m) * dim, 0.0);

  std::vector<double> rows_i(static_cast<std::size_t>(m + 1) * dim);
  std::vector<double> rows_prev(static_cast<std::size_t>(m + 1) * dim);
  std::vector<double> stack, stack_new;
  std::vector<double> gx(static_cast<std::size_t>(dim));
  std::vector<double> gy(static_cast<std::size_t>(dim));

  auto stack_row = [&](std::vector<double>& s, int k) {
    return std::span<double>(s.data() + static_cast<std::size_t>(k) * dim,
                             static_cast<std::size_t>(dim));
  };

  for (int i = n_segments - 1; i >= 0; --i) {
    // Reconstruct segments 0..i backward from their upper checkpoints. Per
    // backward step the segments are visited in ascending order so each
    // frozen delayed argument (the lower segment's row at the same local
    // time) is already available, matching the forward freezing exactly.
    stack.assign(static_cast<std::size_t>(i + 1) * dim, 0.0);
    stack_new.assign(static_cast<std::size_t>(i + 1) * dim, 0.0);
    for (int k = 0; k <= i; ++k)
      std::memcpy(stack_row(stack, k).data(), checkpoints[static_cast<std::size_t>(k) + 1].data(),
                  static_cast<std::size_t>(dim) * sizeof(double));
    std::memcpy(rows_i.data() + static_cast<std::size_t>(m) * dim,
                checkpoints[static_cast<std::size_t>(i) + 1].data(),
                static_cast<std::size_t>(dim) * sizeof(double));
    if (i > 0)
      std::memcpy(rows_prev.data() + static_cast<std::size_t>(m) * dim,
                  checkpoints[static_cast<std::size_t>(i)].data(),
                  static_cast<std::size_t>(dim) * sizeof(double));

    for (int j = m - 1; j >= 0; --j) {
      for (int k = 0; k <= i; ++k) {
        std::span<const double> y = k == 0 ? history.row_at(j - m, step)
                                           : std::span<const double>(stack_row(stack_new, k - 1));
        detail::explicit_step(field, params, method, /*ode_mode=*/false,
                              (static_cast<double>(k) * m + j + 1) * step, -step,
                              stack_row(stack, k), y, stack_row(stack_new, k));
      }
      std::swap(stack, stack_new);
      std::memcpy(rows_i.data() + static_cast<std::size_t>(j) * dim,
                  stack_row(stack, i).data(), static_cast<std::size_t>(dim) * sizeof(double));
      if (i > 0)
        std::memcpy(rows_prev.data() + static_cast<std::size_t>(j) * dim,
                    stack_row(stack, i - 1).data(), static_cast<std::size_t>(dim) * sizeof(double));
    }
    for (int k = 0; k <= i; ++k) {
      auto rec = stack_row(stack, k);
      for (int c = 0; c < dim; ++c)
        recon_max = std::max(recon_max,
                             std::abs(rec[static_cast<std::size_t>(c)] -
                                      checkpoints[static_cast<std::size_t>(k)][static_cast<std::size_t>(c)]));
    }

    // Adjoint sweep over segment i.
    for (int j = m - 1; j >= 0; --j) {
      const int global_row = i * m + j;
      auto x = std::span<const double>(rows_i.data() + static_cast<std::size_t>(j) * dim,
                                       static_cast<std::size_t>(dim));
      std::span<const double> y =
          i == 0 ? history.row_at(j - m, step)
                 : std::span<const double>(rows_prev.data() + static_cast<std::size_t>(j) * dim,
                                           static_cast<std::size_t>(dim));
      detail::reverse_step(field, params, method, /*ode_mode=*/false,
                           static_cast<double>(global_row) * step, step, x, y,
                           carry, gx, gy, bundle.w_grad.span());
      if (i == 0) {
        if (history.kind == HistoryFunction::Kind::Constant) {
          for (int c = 0; c < dim; ++c)
            hist_const_accum[static_cast<std::size_t>(c)] += gy[static_cast<std::size_t>(c)];
        } else {
          const int hr = history.table_rows() - 1 + (j - m);
          double* row = hist_row_accum.data() + static_cast<std::size_t>(hr) * dim;
          for (int c = 0; c < dim; ++c) row[c] += gy[static_cast<std::size_t>(c)];
        }
      } else {
        double* row = src_next.data() + static_cast<std::size_t>(j) * dim;
        for (int c = 0; c < dim; ++c) row[c] += gy[static_cast<std::size_t>(c)];
      }
      const double* src = src_cur.data() + static_cast<std::size_t>(j) * dim;
      for (int c = 0; c < dim; ++c)
        carry[static_cast<std::size_t>(c)] = gx[static_cast<std::size_t>(c)] + src[c];
      if (jump[static_cast<std::size_t>(global_row)])
        for (int c = 0; c < dim; ++c)
          carry[static_cast<std::size_t>(c)] += (*jump[static_cast<std::size_t>(global_row)])[static_cast<std::size_t>(c)];
      sup_norm = std::max(sup_norm, detail::sup_norm_of(carry));
    }
    std::swap(src_cur, src_next);
    std::fill(src_next.begin(), src_next.end(), 0.0);
  }

  bundle.diagnostics.reconstruction_max_err = recon_max;
  bundle.diagnostics.adjoint_sup_norm = sup_norm;

  if (history.kind == HistoryFunction::Kind::Constant) {
    bundle.input_grad = carry;
    for (int c = 0; c < dim; ++c)
      bundle.input_grad[static_cast<std::size_t>(c)] += hist_const_accum[static_cast<std::size_t>(c)];
  } else if (history.kind == HistoryFunction::Kind::OdeDriven) {
    const int rows = history.table_rows();
    double* last = hist_row_accum.data() + static_cast<std::size_t>(rows - 1) * dim;
    for (int c = 0; c < dim; ++c) last[c] += carry[static_cast<std::size_t>(c)];
    bundle.init_w_grad = ParamVector(static_cast<std::size_t>(history.init_field->param_count()));
    std::vector<double> hcarry(hist_row_accum.end() - dim, hist_row_accum.end());
    for (int r = rows - 2; r >= 0; --r) {
      auto xr = std::span<const double>(history.table.data() + static_cast<std::size_t>(r) * dim,
                                        static_cast<std::size_t>(dim));
      detail::reverse_step(*history.init_field, history.init_params, method,
                           /*ode_mode=*/true, -history.span + r * step, step,
                           xr, {}, hcarry, gx, {}, bundle.init_w_grad.span());
      const double* src = hist_row_accum.data() + static_cast<std::size_t>(r) * dim;
      for (int c = 0; c < dim; ++c)
        hcarry[static_cast<std::size_t>(c)] = gx[static_cast<std::size_t>(c)] + src[c];
    }
    bundle.input_grad = std::move(hcarry);
  } else {
    bundle.input_grad = carry;
  }
  return bundle;
}

// One-call gradient of an observation loss over a stored forward pass.
inline GradientBundle dde_gradient(const VectorField& field,
                                   std::span<const double> params,
                                   const Trajectory& forward,
                                   const ObservationLoss& loss,
                                   GradMode mode = GradMode::Dense) {
  if (mode == GradMode::Piecewise && forward.tau > 0.0) {
    const int m = delay_offset(forward.tau, forward.grid.step);
    if (forward.grid.n_steps % m == 0) {
      const int n_segments = forward.grid.n_steps / m;
      auto cps = checkpoint_states(forward, forward.tau, n_segments);
      return grad_piecewise(field, params, cps, forward.tau, n_segments,
                            forward.grid.step, forward.method, loss,
                            forward.history);
    }
    throw ConfigError("piecewise gradients need T to be a multiple of tau");
  }
  AdjointSolution adj = adjoint_backward(field, params, forward, forward.tau, loss);
  GradientBundle bundle;
  bundle.w_grad = adj.param_accum;
  HistoryGradient hg = history_gradient(adj, forward, forward.history);
  bundle.input_grad = std::move(hg.input_grad);
  bundle.init_w_grad = std::move(hg.init_w_grad);
  bundle.diagnostics.adjoint_sup_norm = adj.sup_norm;
  bundle.diagnostics.reconstruction_max_err = 0.0;
  return bundle;
}

// Central finite differences of a scalar loss closure; the independent
// oracle used to validate every adjoint path.
template <class LossFn>
ParamVector finite_diff_gradient(LossFn&& loss, std::span<const double> params,
                                 double eps) {
  std::vector<double> w(params.begin(), params.end());
  ParamVector grad(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double saved = w[i];
    w[i] = saved + eps;
    const double lp = loss(std::span<const double>(w));
    w[i] = saved - eps;
    const double lm = loss(std::span<const double>(w));
    w[i] = saved;
    if (!std::isfinite(lp) || !std::isfinite(lm))
      throw DivergenceError("non-finite loss during finite differencing at "
                            "component " + std::to_string(i),
                            static_cast<long>(i));
    grad[static_cast<long>(i)] = (lp - lm) / (2.0 * eps);
  }
  return grad;
}

}  // namespace ndde
