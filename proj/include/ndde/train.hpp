#pragma once

// Losses, Adam, and the mini-batch training loops for the annulus
// classification task and the time-series regression tasks, with
// test-horizon evaluation by rollout from the end of the training window.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "ndde/adjoint.hpp"
#include "ndde/datasets.hpp"
#include "ndde/errors.hpp"
#include "ndde/models.hpp"
#include "ndde/rng.hpp"
#include "ndde/solver.hpp"

namespace ndde {

enum class LossKind { Mse, Mae, SoftmaxCe };

inline const char* loss_kind_name(LossKind k) {
  switch (k) {
    case LossKind::Mse: return "mse";
    case LossKind::Mae: return "mae";
    case LossKind::SoftmaxCe: return "softmax_ce";
  }
  return "?";
}

struct LossEval {
  double value = 0.0;
  std::vector<std::vector<double>> grads;  // dL/d(prediction row)
};

// Mean loss over all rows of a flat (rows x dim) prediction matrix, plus the
// per-row gradients routed back to the observation times. The MAE
// subgradient at 0 is 0.
inline LossEval loss_eval(LossKind kind, std::span<const double> preds,
                          std::span<const double> targets, int dim) {
  if (dim < 1) throw ShapeError("loss_eval: dim must be positive");
  if (preds.size() != targets.size() || preds.size() % static_cast<std::size_t>(dim) != 0)
    throw ShapeError("loss_eval: prediction/target shape mismatch");
  const std::size_t rows = preds.size() / static_cast<std::size_t>(dim);
  if (rows == 0) throw ShapeError("loss_eval: empty prediction matrix");

  LossEval out;
  out.grads.assign(rows, std::vector<double>(static_cast<std::size_t>(dim), 0.0));
  const double n_entries = static_cast<double>(preds.size());

  switch (kind) {
    case LossKind::Mse: {
      double sum = 0.0;
      for (std::size_t r = 0; r < rows; ++r)
        for (int j = 0; j < dim; ++j) {
          const std::size_t i = r * static_cast<std::size_t>(dim) + static_cast<std::size_t>(j);
          const double e = preds[i] - targets[i];
          sum += e * e;
          out.grads[r][static_cast<std::size_t>(j)] = 2.0 * e / n_entries;
        }
      out.value = sum / n_entries;
      return out;
    }
    case LossKind::Mae: {
      double sum = 0.0;
      for (std::size_t r = 0; r < rows; ++r)
        for (int j = 0; j < dim; ++j) {
          const std::size_t i = r * static_cast<std::size_t>(dim) + static_cast<std::size_t>(j);
          const double e = preds[i] - targets[i];
          sum += std::abs(e);
          out.grads[r][static_cast<std::size_t>(j)] =
              (e > 0.0 ? 1.0 : (e < 0.0 ? -1.0 : 0.0)) / n_entries;
        }
      out.value = sum / n_entries;
      return out;
    }
    case LossKind::SoftmaxCe: {
      // Rows are logits; targets are one-hot rows.
      double sum = 0.0;
      std::vector<double> soft(static_cast<std::size_t>(dim));
      for (std::size_t r = 0; r < rows; ++r) {
        const double* p = preds.data() + r * static_cast<std::size_t>(dim);
        const double* t = targets.data() + r * static_cast<std::size_t>(dim);
        double mx = p[0];
        for (int j = 1; j < dim; ++j) mx = std::max(mx, p[j]);
        double z = 0.0;
        for (int j = 0; j < dim; ++j) {
          soft[static_cast<std::size_t>(j)] = std::exp(p[j] - mx);
          z += soft[static_cast<std::size_t>(j)];
        }
        for (int j = 0; j < dim; ++j) {
          soft[static_cast<std::size_t>(j)] /= z;
          sum -= t[j] * std::log(std::max(soft[static_cast<std::size_t>(j)], 1e-300));
          out.grads[r][static_cast<std::size_t>(j)] = soft[static_cast<std::size_t>(j)];
        }
        for (int j = 0; j < dim; ++j)
          out.grads[r][static_cast<std::size_t>(j)] =
              (out.grads[r][static_cast<std::size_t>(j)] - t[j]) / static_cast<double>(rows);
      }
      out.value = sum / static_cast<double>(rows);
      return out;
    }
  }
  return out;
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m, v;
  long t = 0;

  void init(std::size_t n) {
    m.assign(n, 0.0);
    v.assign(n, 0.0);
    t = 0;
  }
};

inline void adam_step(AdamState& state, std::span<double> params,
                      std::span<const double> grads, const AdamConfig& cfg) {
  if (state.m.size() != params.size()) state.init(params.size());
  if (grads.size() != params.size())
    throw ShapeError("adam_step: gradient length mismatch");
  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

struct TrainConfig {
  FieldSpec model;
  ReadoutHead readout;
  LossKind loss = LossKind::Mse;
  double lr = 1e-3;
  int batch_size = 64;
  int epochs = 5;       // classification
  long iterations = 0;  // time series
  std::uint64_t seed = 0;
  double solver_step = 0.0;  // 0 = tau / 100
  double horizon_T = 0.0;    // classification horizon; 0 = tau
  Method method = Method::Rk4;
  AdamConfig adam;
  GradMode grad_mode = GradMode::Dense;
  bool spot_check = true;
  int spot_check_every = 100;
  double spot_check_tol = 1e-3;
  double spot_check_eps = 1e-6;
  long eval_every = 0;   // time series: 0 = final evaluation only
  long trace_every = 0;  // parameter snapshots; 0 = off

  double step() const {
    if (solver_step > 0.0) return solver_step;
    return spec_tau() / 100.0;
  }
  double spec_tau() const { return model.tau; }

  void validate() const {
    model.validate();
    if (lr <= 0.0) throw ConfigError("learning rate must be positive");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    AdamConfig a = adam;
    if (a.lr != lr) a.lr = lr;  // lr is authoritative
    if (model.delayed()) delay_offset(model.tau, step());
  }

  AdamConfig adam_with_lr() const {
    AdamConfig a = adam;
    a.lr = lr;
    return a;
  }
};

struct TrainReport {
  std::vector<double> train_loss;  // one entry per iteration

  struct EvalPoint {
    long iteration = 0;
    double accuracy = std::numeric_limits<double>::quiet_NaN();
    double full_train_loss = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> test_losses;  // per horizon (time series)
  };
  std::vector<EvalPoint> evals;

  std::vector<std::pair<long, std::vector<double>>> param_trace;
  ParamVector final_params;
  double final_accuracy = std::numeric_limits<double>::quiet_NaN();
  double final_train_loss = std::numeric_limits<double>::quiet_NaN();
  // Mean of the last 5% of the per-iteration series; the stable read of an
  // oscillating full-batch loss.
  double trailing_train_loss = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> final_test_losses;
  long iterations_run = 0;
  long spot_checks_run = 0;
  long spot_check_failures = 0;
  double wall_seconds = 0.0;

  void finalize_trailing() {
    if (train_loss.empty()) return;
    const std::size_t window =
        std::max<std::size_t>(1, train_loss.size() / 20);
    double sum = 0.0;
    for (std::size_t i = train_loss.size() - window; i < train_loss.size(); ++i)
      sum += train_loss[i];
    trailing_train_loss = sum / static_cast<double>(window);
  }
};

// Divergence in the middle of a run; carries what was computed so far.
class TrainRunError : public DivergenceError {
 public:
  TrainRunError(const DivergenceError& cause, TrainReport partial)
      : DivergenceError(cause.what(), cause.step()),
        partial_report(std::move(partial)) {}
  TrainReport partial_report;
};

namespace detail {

inline Trajectory forward_sample(const Model& model,
                                 std::span<const double> params,
                                 std::span<const double> x, const Grid& grid,
                                 Method method) {
  if (model.spec.delayed()) {
    HistoryFunction hist = model.make_history(x, params);
    return integrate_dde(*model.field, model.main_params(params), hist,
                         model.spec.tau, grid, method);
  }
  return integrate_ode(*model.field, model.main_params(params), x, grid, method);
}

// Zero-pads a data point to the solver dimension (ANODE augmentation).
inline std::vector<double> solver_input(const Model& model,
                                        std::span<const double> x) {
  std::vector<double> full(static_cast<std::size_t>(model.spec.solver_dim()), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) full[i] = x[i];
  return full;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Classification (annulus task)
// ---------------------------------------------------------------------------

namespace detail {

struct ClassifierTask {
  const TrainConfig* config = nullptr;
  const LabeledSet* data = nullptr;
  Model model;
  Grid grid;
  int readout_dim = 0;

  std::vector<double> target_row(int label) const {
    if (readout_dim == 1)
      return {static_cast<double>(label)};
    if (readout_dim == 2 && config->loss == LossKind::SoftmaxCe)
      return label > 0 ? std::vector<double>{1.0, 0.0}
                       : std::vector<double>{0.0, 1.0};
    throw ConfigError("classification needs a scalar readout or a 2-way "
                      "softmax readout");
  }

  bool correct(std::span<const double> pred, int label) const {
    if (readout_dim == 1) return (pred[0] > 0.0) == (label > 0);
    return (pred[0] > pred[1]) == (label > 0);
  }

  // Mean loss over the given samples; optionally the parameter gradient and
  // the number of correct sign predictions.
  double batch_pass(std::span<const double> params,
                    std::span<const int> indices, std::vector<double>* grad,
                    int* n_correct) const {
    const int B = static_cast<int>(indices.size());
    const int out_dim = readout_dim;
    std::vector<double> preds(static_cast<std::size_t>(B) * out_dim);
    std::vector<double> targets(static_cast<std::size_t>(B) * out_dim);
    std::vector<Trajectory> trajs;
    if (grad) trajs.reserve(static_cast<std::size_t>(B));

    std::vector<double> pred_row(static_cast<std::size_t>(out_dim));
    for (int s = 0; s < B; ++s) {
      const int idx = indices[static_cast<std::size_t>(s)];
      std::vector<double> x = solver_input(model, data->point(idx));
      Trajectory traj = forward_sample(model, params, x, grid, config->method);
      const auto final_state = traj.row(grid.n_steps);
      config->readout.apply(final_state, pred_row);
      for (int j = 0; j < out_dim; ++j)
        preds[static_cast<std::size_t>(s) * out_dim + static_cast<std::size_t>(j)] =
            pred_row[static_cast<std::size_t>(j)];
      const auto target = target_row(data->labels[static_cast<std::size_t>(idx)]);
      for (int j = 0; j < out_dim; ++j)
        targets[static_cast<std::size_t>(s) * out_dim + static_cast<std::size_t>(j)] =
            target[static_cast<std::size_t>(j)];
      if (n_correct && correct(pred_row, data->labels[static_cast<std::size_t>(idx)]))
        ++*n_correct;
      if (grad) trajs.push_back(std::move(traj));
    }

    LossEval ev = loss_eval(config->loss, preds, targets, out_dim);
    if (grad) {
      std::vector<double> state_grad(static_cast<std::size_t>(model.spec.solver_dim()));
      for (int s = 0; s < B; ++s) {
        const Trajectory& traj = trajs[static_cast<std::size_t>(s)];
        config->readout.vjp(traj.row(grid.n_steps), ev.grads[static_cast<std::size_t>(s)],
                            state_grad);
        ObservationLoss obs;
        obs.add(grid.t1, state_grad);
        GradientBundle b = dde_gradient(*model.field, model.main_params(params),
                                        traj, obs, config->grad_mode);
        for (long i = 0; i < b.w_grad.size(); ++i)
          (*grad)[static_cast<std::size_t>(i)] += b.w_grad[i];
        for (long i = 0; i < b.init_w_grad.size(); ++i)
          (*grad)[static_cast<std::size_t>(model.main_param_count + i)] += b.init_w_grad[i];
      }
    }
    return ev.value;
  }
};

inline void spot_check_gradient(const TrainConfig& config,
                                std::span<const double> params,
                                std::span<const double> grad, SplitMix64& rng,
                                TrainReport& report,
                                const std::function<double(std::span<const double>)>& loss_fn) {
  const std::size_t c = static_cast<std::size_t>(rng.below(params.size()));
  std::vector<double> w(params.begin(), params.end());
  const double saved = w[c];
  w[c] = saved + config.spot_check_eps;
  const double lp = loss_fn(w);
  w[c] = saved - config.spot_check_eps;
  const double lm = loss_fn(w);
  const double fd = (lp - lm) / (2.0 * config.spot_check_eps);
  const double a = grad[c];
  ++report.spot_checks_run;
  const double scale = std::max(std::abs(a), std::abs(fd));
  if (std::abs(a - fd) > config.spot_check_tol * scale &&
      std::abs(a - fd) > 1e-7)
    ++report.spot_check_failures;
}

}  // namespace detail

inline TrainReport train_run(const TrainConfig& config, const LabeledSet& data) {
  config.validate();
  const auto t_start = std::chrono::steady_clock::now();

  detail::ClassifierTask task;
  task.config = &config;
  task.data = &data;
  auto [model, params0] = make_field(config.model, config.seed);
  task.model = std::move(model);
  const double horizon = config.horizon_T > 0.0 ? config.horizon_T
                                                : config.model.tau;
  task.grid = Grid::from_span(0.0, horizon, config.step());
  task.readout_dim = config.readout.output_dim(task.model.spec.solver_dim());

  ParamVector params = params0;
  AdamState opt;
  opt.init(params.values.size());
  AdamConfig adam = config.adam_with_lr();

  TrainReport report;
  report.final_params = params;

  std::vector<int> all_indices(static_cast<std::size_t>(data.size()));
  std::iota(all_indices.begin(), all_indices.end(), 0);

  auto evaluate_full = [&](long iter) {
    int n_correct = 0;
    const double full_loss =
        task.batch_pass(params.span(), all_indices, nullptr, &n_correct);
    TrainReport::EvalPoint ev;
    ev.iteration = iter;
    ev.accuracy = static_cast<double>(n_correct) / static_cast<double>(data.size());
    ev.full_train_loss = full_loss;
    report.evals.push_back(ev);
    report.final_accuracy = ev.accuracy;
    report.final_train_loss = ev.full_train_loss;
  };

  if (config.epochs == 0) {
    evaluate_full(0);
    report.final_params = params;
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return report;
  }

  SplitMix64 shuffle_rng(derive_seed(config.seed, 2));
  SplitMix64 spot_rng(derive_seed(config.seed, 3));
  std::vector<int> order = all_indices;
  std::vector<double> grad(params.values.size());
  long iter = 0;

  try {
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
      shuffle(order, shuffle_rng);
      for (std::size_t start = 0; start < order.size();
           start += static_cast<std::size_t>(config.batch_size)) {
        const std::size_t end =
            std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
        std::span<const int> batch(order.data() + start, end - start);
        std::fill(grad.begin(), grad.end(), 0.0);
        const double loss = task.batch_pass(params.span(), batch, &grad, nullptr);
        report.train_loss.push_back(loss);
        ++iter;
        if (config.spot_check && config.spot_check_every > 0 &&
            iter % config.spot_check_every == 0) {
          detail::spot_check_gradient(
              config, params.span(), grad, spot_rng, report,
              [&](std::span<const double> w) {
                return task.batch_pass(w, batch, nullptr, nullptr);
              });
        }
        adam_step(opt, params.span(), grad, adam);
        if (config.trace_every > 0 && iter % config.trace_every == 0)
          report.param_trace.emplace_back(iter, params.values);
      }
      evaluate_full(iter);
    }
  } catch (const DivergenceError& e) {
    report.final_params = params;
    report.iterations_run = iter;
    throw TrainRunError(e, std::move(report));
  }

  report.final_params = params;
  report.iterations_run = iter;
  report.finalize_trailing();
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return report;
}

// ---------------------------------------------------------------------------
// Time-series regression
// ---------------------------------------------------------------------------

namespace detail {

struct TimeSeriesTask {
  const TrainConfig* config = nullptr;
  const SplitResult* split = nullptr;
  Model model;
  Grid train_grid;               // [0, t_split] at the solver step
  std::vector<double> obs_times;  // multiples of the sampling period in (0, t_split]
  std::vector<std::vector<double>> targets;  // per trajectory, n_obs x data_dim
  std::vector<std::vector<double>> x0;       // per trajectory (data dim)
  int data_dim = 0;
  int n_obs = 0;

  void prepare() {
    const TrajectoryBatch& train = split->train;
    data_dim = train.trajectories.front().dim;
    const double t_split = train.split_time;
    const double period = train.sampling_period > 0.0
                              ? train.sampling_period
                              : train.grid().step;
    const double step = config->step();
    {
      const long k = std::lround(period / step);
      if (k < 1 || std::abs(static_cast<double>(k) * step - period) > 1e-9)
        throw ConfigError("solver step does not divide the sampling period");
    }
    train_grid = Grid::from_span(0.0, t_split, step);
    const long n = std::lround(t_split / period);
    for (long k = 1; k <= n; ++k)
      obs_times.push_back(static_cast<double>(k) * period);
    n_obs = static_cast<int>(obs_times.size());

    targets.reserve(train.trajectories.size());
    x0.reserve(train.trajectories.size());
    for (const Trajectory& traj : train.trajectories) {
      targets.push_back(sample_at(traj, obs_times));
      auto r0 = traj.row(0);
      x0.emplace_back(r0.begin(), r0.end());
    }
    if (config->readout.output_dim(model.spec.solver_dim()) != data_dim)
      throw ConfigError("readout output dim must match the data dim");
  }

  // Mean loss over the given trajectories; optionally the gradient.
  double batch_pass(std::span<const double> params,
                    std::span<const int> indices,
                    std::vector<double>* grad) const {
    const int B = static_cast<int>(indices.size());
    const std::size_t row_len = static_cast<std::size_t>(data_dim);
    std::vector<double> preds;
    std::vector<double> tgts;
    preds.reserve(static_cast<std::size_t>(B * n_obs) * row_len);
    tgts.reserve(preds.capacity());
    std::vector<Trajectory> trajs;
    if (grad) trajs.reserve(static_cast<std::size_t>(B));

    std::vector<double> pred_row(row_len);
    for (int s = 0; s < B; ++s) {
      const int idx = indices[static_cast<std::size_t>(s)];
      std::vector<double> x = solver_input(model, x0[static_cast<std::size_t>(idx)]);
      Trajectory traj = forward_sample(model, params, x, train_grid, config->method);
      for (int j = 0; j < n_obs; ++j) {
        const int row = train_grid.index_of(obs_times[static_cast<std::size_t>(j)]);
        config->readout.apply(traj.row(row), pred_row);
        preds.insert(preds.end(), pred_row.begin(), pred_row.end());
      }
      const auto& t = targets[static_cast<std::size_t>(idx)];
      tgts.insert(tgts.end(), t.begin(), t.end());
      if (grad) trajs.push_back(std::move(traj));
    }

    LossEval ev = loss_eval(config->loss, preds, tgts, data_dim);
    if (grad) {
      std::vector<double> state_grad(static_cast<std::size_t>(model.spec.solver_dim()));
      for (int s = 0; s < B; ++s) {
        const Trajectory& traj = trajs[static_cast<std::size_t>(s)];
        ObservationLoss obs;
        for (int j = 0; j < n_obs; ++j) {
          const int row = train_grid.index_of(obs_times[static_cast<std::size_t>(j)]);
          config->readout.vjp(traj.row(row),
                              ev.grads[static_cast<std::size_t>(s * n_obs + j)],
                              state_grad);
          obs.add(obs_times[static_cast<std::size_t>(j)], state_grad);
        }
        GradientBundle b = dde_gradient(*model.field, model.main_params(params),
                                        traj, obs, config->grad_mode);
        for (long i = 0; i < b.w_grad.size(); ++i)
          (*grad)[static_cast<std::size_t>(i)] += b.w_grad[i];
        for (long i = 0; i < b.init_w_grad.size(); ++i)
          (*grad)[static_cast<std::size_t>(model.main_param_count + i)] += b.init_w_grad[i];
      }
    }
    return ev.value;
  }

  // Rollout losses over the test horizons, seeded by the true state at
  // t_split (ANODE augmented components restart at zero; delayed models read
  // their history from the observed tail of the training window).
  std::vector<double> horizon_losses(std::span<const double> params) const {
    if (split->test_horizons.empty()) return {};
    const TrajectoryBatch& train = split->train;
    const double t_split = train.split_time;
    const double step = config->step();
    const double period = train.sampling_period > 0.0
                              ? train.sampling_period
                              : train.grid().step;
    const double max_h = split->horizon_lengths.back();
    const Grid roll_grid = Grid::from_span(0.0, max_h, step);
    const long n_off = std::lround(max_h / period);
    std::vector<double> offsets;
    for (long k = 1; k <= n_off; ++k)
      offsets.push_back(static_cast<double>(k) * period);

    // Predictions and targets stacked per horizon.
    std::vector<std::vector<double>> preds(split->horizon_lengths.size());
    std::vector<std::vector<double>> tgts(split->horizon_lengths.size());
    std::vector<double> pred_row(static_cast<std::size_t>(data_dim));

    const int n_traj = static_cast<int>(train.trajectories.size());
    for (int s = 0; s < n_traj; ++s) {
      const Trajectory& train_traj = train.trajectories[static_cast<std::size_t>(s)];
      const Trajectory& full_test =
          split->test_horizons.back().trajectories[static_cast<std::size_t>(s)];
      Trajectory roll;
      bool diverged = false;
      try {
        if (model.spec.delayed()) {
          const double tau = model.spec.tau;
          const long n_hist = std::lround(tau / step);
          std::vector<double> hist_times;
          for (long k = 0; k <= n_hist; ++k)
            hist_times.push_back(t_split - tau + static_cast<double>(k) * step);
          std::vector<double> hist_rows = sample_at(train_traj, hist_times);
          if (model.spec.solver_dim() != data_dim)
            throw ConfigError("delayed models do not support augmented rollouts");
          HistoryFunction hist = HistoryFunction::tabulated(step, data_dim,
                                                            std::move(hist_rows));
          roll = integrate_dde(*model.field, model.main_params(params), hist,
                               tau, roll_grid, config->method);
        } else {
          auto seed_row = full_test.row(0);
          std::vector<double> seed = solver_input(model, seed_row);
          roll = integrate_ode(*model.field, model.main_params(params), seed,
                               roll_grid, config->method);
        }
      } catch (const DivergenceError&) {
        diverged = true;
      }
      for (std::size_t h = 0; h < split->horizon_lengths.size(); ++h) {
        const double horizon = split->horizon_lengths[h];
        for (double off : offsets) {
          if (off > horizon + 1e-9) break;
          if (diverged) {
            for (int j = 0; j < data_dim; ++j) {
              preds[h].push_back(std::numeric_limits<double>::infinity());
              tgts[h].push_back(0.0);
            }
            continue;
          }
          const int row = roll_grid.index_of(off);
          config->readout.apply(roll.row(row), pred_row);
          preds[h].insert(preds[h].end(), pred_row.begin(), pred_row.end());
          const int trow = full_test.grid.index_of(t_split + off);
          auto target = full_test.row(trow);
          tgts[h].insert(tgts[h].end(), target.begin(), target.end());
        }
      }
    }

    std::vector<double> losses;
    for (std::size_t h = 0; h < preds.size(); ++h) {
      bool finite = true;
      for (double p : preds[h])
        if (!std::isfinite(p)) finite = false;
      losses.push_back(finite
                           ? loss_eval(config->loss, preds[h], tgts[h], data_dim).value
                           : std::numeric_limits<double>::infinity());
    }
    return losses;
  }
};

}  // namespace detail

inline TrainReport train_run(const TrainConfig& config, const SplitResult& split) {
  config.validate();
  if (config.iterations < 0) throw ConfigError("iterations must be >= 0");
  const auto t_start = std::chrono::steady_clock::now();

  detail::TimeSeriesTask task;
  task.config = &config;
  task.split = &split;
  auto [model, params0] = make_field(config.model, config.seed);
  task.model = std::move(model);
  task.prepare();

  ParamVector params = params0;
  AdamState opt;
  opt.init(params.values.size());
  AdamConfig adam = config.adam_with_lr();

  TrainReport report;
  report.final_params = params;

  auto evaluate = [&](long iter) {
    TrainReport::EvalPoint ev;
    ev.iteration = iter;
    std::vector<int> all(static_cast<std::size_t>(split.train.size()));
    std::iota(all.begin(), all.end(), 0);
    ev.full_train_loss = task.batch_pass(params.span(), all, nullptr);
    ev.test_losses = task.horizon_losses(params.span());
    report.evals.push_back(ev);
    report.final_train_loss = ev.full_train_loss;
    report.final_test_losses = ev.test_losses;
  };

  if (config.iterations == 0) {
    evaluate(0);
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return report;
  }

  SplitMix64 shuffle_rng(derive_seed(config.seed, 2));
  SplitMix64 spot_rng(derive_seed(config.seed, 3));
  std::vector<int> order(static_cast<std::size_t>(split.train.size()));
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();  // force an initial shuffle
  std::vector<double> grad(params.values.size());
  std::vector<int> batch;

  try {
    for (long iter = 1; iter <= config.iterations; ++iter) {
      batch.clear();
      for (int b = 0; b < config.batch_size; ++b) {
        if (cursor >= order.size()) {
          shuffle(order, shuffle_rng);
          cursor = 0;
        }
        batch.push_back(order[cursor++]);
      }
      std::fill(grad.begin(), grad.end(), 0.0);
      const double loss = task.batch_pass(params.span(), batch, &grad);
      report.train_loss.push_back(loss);
      if (config.spot_check && config.spot_check_every > 0 &&
          iter % config.spot_check_every == 0) {
        detail::spot_check_gradient(
            config, params.span(), grad, spot_rng, report,
            [&](std::span<const double> w) {
              return task.batch_pass(w, batch, nullptr);
            });
      }
      adam_step(opt, params.span(), grad, adam);
      if (config.trace_every > 0 && iter % config.trace_every == 0)
        report.param_trace.emplace_back(iter, params.values);
      if (config.eval_every > 0 && iter % config.eval_every == 0 &&
          iter < config.iterations)
        evaluate(iter);
      report.iterations_run = iter;
    }
  } catch (const DivergenceError& e) {
    report.final_params = params;
    throw TrainRunError(e, std::move(report));
  }

  report.final_params = params;
  evaluate(config.iterations);
  report.finalize_trailing();
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return report;
}

}  // namespace ndde
