#pragma once

// Ground-truth generators for the synthetic experiments: the annulus
// classification set and the delayed dynamical systems, plus the
// train/test-horizon split.

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ndde/errors.hpp"
#include "ndde/models.hpp"
#include "ndde/rng.hpp"
#include "ndde/solver.hpp"

namespace ndde {

struct LabeledSet {
  std::vector<double> points;  // N x dim, row-major
  int dim = 2;
  std::vector<int> labels;  // +1 inner, -1 outer

  struct Meta {
    int n_inner = 0, n_outer = 0;
    double r1 = 0, r2 = 0, r3 = 0;
    std::uint64_t seed = 0;
  } meta;

  int size() const { return static_cast<int>(labels.size()); }
  std::span<const double> point(int i) const {
    return std::span<const double>(points.data() + static_cast<std::size_t>(i) * dim,
                                   static_cast<std::size_t>(dim));
  }
};

// Inner points uniform in the disk of radius r1, outer points uniform in the
// annulus [r2, r3], both by area-correct radial sampling.
inline LabeledSet gen_annulus(int n_inner, int n_outer, double r1, double r2,
                              double r3, std::uint64_t seed) {
  if (!(0.0 < r1 && r1 < r2 && r2 < r3))
    throw ConfigError("annulus radii must satisfy 0 < r1 < r2 < r3");
  if (n_inner < 0 || n_outer < 0)
    throw ConfigError("annulus point counts must be non-negative");
  LabeledSet set;
  set.dim = 2;
  set.meta = {n_inner, n_outer, r1, r2, r3, seed};
  set.points.reserve(static_cast<std::size_t>(n_inner + n_outer) * 2);
  set.labels.reserve(static_cast<std::size_t>(n_inner + n_outer));
  SplitMix64 rng(seed);
  const double two_pi = 2.0 * 3.14159265358979323846;
  for (int i = 0; i < n_inner; ++i) {
    const double r = r1 * std::sqrt(rng.uniform());
    const double a = two_pi * rng.uniform();
    set.points.push_back(r * std::cos(a));
    set.points.push_back(r * std::sin(a));
    set.labels.push_back(+1);
  }
  for (int i = 0; i < n_outer; ++i) {
    const double u = rng.uniform();
    const double r = std::sqrt(r2 * r2 + u * (r3 * r3 - r2 * r2));
    const double a = two_pi * rng.uniform();
    set.points.push_back(r * std::cos(a));
    set.points.push_back(r * std::sin(a));
    set.labels.push_back(-1);
  }
  return set;
}

enum class ScalarSystem { ToyLinear, Population, MackeyGlass };

inline const char* scalar_system_name(ScalarSystem s) {
  switch (s) {
    case ScalarSystem::ToyLinear: return "toy_linear";
    case ScalarSystem::Population: return "population";
    case ScalarSystem::MackeyGlass: return "mackey_glass";
  }
  return "?";
}

struct ScalarSystemParams {
  double coef = -2.0;   // toy_linear: dx/dt = coef * x(t - tau)
  double growth = 1.8;  // population r
  double beta = 4.0, n = 9.65, gamma = 2.0;  // mackey_glass
};

struct TrajectoryBatch {
  std::vector<Trajectory> trajectories;
  std::string system;
  double tau = 0.0;
  double sampling_period = 0.0;  // observation spacing; 0 = every grid node
  double split_time = 0.0;       // 0 = unsplit
  std::uint64_t seed = 0;

  int size() const { return static_cast<int>(trajectories.size()); }
  const Grid& grid() const { return trajectories.front().grid; }
};

// Integrates n_traj copies of the chosen system with constant histories
// drawn uniformly from init_range; deterministic per seed.
inline TrajectoryBatch gen_scalar_dde(ScalarSystem kind,
                                      const ScalarSystemParams& params,
                                      int n_traj, const Grid& grid, double tau,
                                      std::pair<double, double> init_range,
                                      std::uint64_t seed) {
  if (n_traj < 1) throw ConfigError("need at least one trajectory");
  TrajectoryBatch batch;
  batch.system = scalar_system_name(kind);
  batch.tau = tau;
  batch.seed = seed;
  batch.trajectories.reserve(static_cast<std::size_t>(n_traj));

  ScalarLinearDelayField toy;
  PopulationField population(params.growth);
  MackeyGlassField mackey(params.beta, params.n, params.gamma);
  const VectorField* field = nullptr;
  std::vector<double> w;
  switch (kind) {
    case ScalarSystem::ToyLinear:
      field = &toy;
      w = {params.coef};
      break;
    case ScalarSystem::Population: field = &population; break;
    case ScalarSystem::MackeyGlass: field = &mackey; break;
  }

  for (int i = 0; i < n_traj; ++i) {
    SplitMix64 rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    const double x0 = rng.uniform(init_range.first, init_range.second);
    try {
      Trajectory traj = integrate_dde(*field, w, HistoryFunction::constant({x0}),
                                      tau, grid, Method::Rk4);
      if (kind == ScalarSystem::Population) {
        for (int k = 0; k <= grid.n_steps; ++k)
          if (traj.row(k)[0] <= 0.0)
            throw DivergenceError("population trajectory " + std::to_string(i) +
                                      " left the positive regime at step " +
                                      std::to_string(k),
                                  k);
      }
      batch.trajectories.push_back(std::move(traj));
    } catch (const DivergenceError& e) {
      throw DivergenceError("trajectory " + std::to_string(i) + ": " + e.what(),
                            e.step());
    }
  }
  return batch;
}

// One trajectory of dx/dt = A tanh(x(t) + x(t - tau)).
inline Trajectory gen_spiral2d(const std::array<double, 4>& a,
                               std::span<const double> x0, double tau,
                               const Grid& grid) {
  SpiralField field(a);
  return integrate_dde(field, {},
                       HistoryFunction::constant(std::vector<double>(x0.begin(), x0.end())),
                       tau, grid, Method::Rk4);
}

struct SplitResult {
  TrajectoryBatch train;                     // [0, t_split]
  std::vector<TrajectoryBatch> test_horizons;  // (t_split, t_split + k*tau], k in {1, 2, 5}
  std::vector<double> horizon_lengths;
};

// The boundary state belongs to the training window and seeds the test
// rollouts: each test trajectory starts with the row at t_split.
inline SplitResult split_timeseries(const TrajectoryBatch& batch,
                                    double t_split) {
  if (batch.trajectories.empty()) throw ConfigError("empty trajectory batch");
  const Grid& grid = batch.grid();
  const int split_row = grid.index_of(t_split);
  if (split_row == 0) throw ConfigError("split time at the start of the span");
  const std::array<int, 3> multiples = {1, 2, 5};

  SplitResult out;
  out.train = batch;
  out.train.trajectories.clear();
  out.train.split_time = t_split;
  for (const Trajectory& t : batch.trajectories)
    out.train.trajectories.push_back(subtrajectory(t, 0, split_row));

  for (int mult : multiples) {
    const double horizon = static_cast<double>(mult) * batch.tau;
    const double t_end = t_split + horizon;
    if (t_end > grid.t1 + 1e-9)
      throw ConfigError("test horizon " + std::to_string(horizon) +
                        " exceeds the generated span");
    const int end_row = grid.index_of(t_end);
    TrajectoryBatch test = batch;
    test.trajectories.clear();
    test.split_time = t_split;
    for (const Trajectory& t : batch.trajectories)
      test.trajectories.push_back(subtrajectory(t, split_row, end_row));
    out.test_horizons.push_back(std::move(test));
    out.horizon_lengths.push_back(horizon);
  }
  return out;
}

}  // namespace ndde
