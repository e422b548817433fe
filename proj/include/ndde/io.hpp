#pragma once

// File formats: trajectory CSV (17 significant digits), the parameter blob
// (plain-text manifest header + little-endian doubles), gradient-check
// reports, dataset directories, and train-report exports.

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ndde/datasets.hpp"
#include "ndde/errors.hpp"
#include "ndde/mlp.hpp"
#include "ndde/solver.hpp"
#include "ndde/train.hpp"

namespace ndde {

namespace detail {

inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open " + path.string() + " for writing");
  return out;
}

inline std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  return in;
}

}  // namespace detail

// --------------------------------------------------------------------------
// Trajectory CSV: header t,x1,...,xd then one row per grid node.
// --------------------------------------------------------------------------

inline void write_trajectory_csv(const std::filesystem::path& path,
                                 const Trajectory& traj) {
  auto out = detail::open_out(path);
  out << "t";
  for (int j = 1; j <= traj.dim; ++j) out << ",x" << j;
  out << "\n";
  for (int k = 0; k < traj.rows(); ++k) {
    out << detail::fmt17(traj.grid.time_at(k));
    auto row = traj.row(k);
    for (int j = 0; j < traj.dim; ++j)
      out << "," << detail::fmt17(row[static_cast<std::size_t>(j)]);
    out << "\n";
  }
}

// Reads a trajectory CSV back. The history is not stored in the file; the
// result carries a constant history equal to the first row.
inline Trajectory read_trajectory_csv(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("empty trajectory file");
  int dim = 0;
  {
    std::stringstream hs(line);
    std::string cell;
    if (!std::getline(hs, cell, ',') || cell != "t")
      throw ConfigError("trajectory CSV must start with a t column");
    while (std::getline(hs, cell, ',')) ++dim;
    if (dim < 1) throw ConfigError("trajectory CSV has no state columns");
  }
  std::vector<double> times;
  std::vector<double> states;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::string cell;
    if (!std::getline(ls, cell, ',')) break;
    times.push_back(std::stod(cell));
    for (int j = 0; j < dim; ++j) {
      if (!std::getline(ls, cell, ','))
        throw ConfigError("short row in trajectory CSV");
      states.push_back(std::stod(cell));
    }
  }
  if (times.size() < 2) throw ConfigError("trajectory CSV needs >= 2 rows");
  Trajectory traj;
  traj.dim = dim;
  traj.grid = Grid::from_steps(times.front(), times[1] - times.front(),
                               static_cast<int>(times.size()) - 1);
  traj.states = std::move(states);
  traj.history = HistoryFunction::constant(
      std::vector<double>(traj.states.begin(), traj.states.begin() + dim));
  return traj;
}

// --------------------------------------------------------------------------
// Parameter blob: text manifest header, then raw little-endian doubles.
// --------------------------------------------------------------------------

inline void write_params(const std::filesystem::path& path, const MlpSpec& spec,
                         const ParamVector& params, std::uint64_t seed) {
  if (params.size() != spec.param_count())
    throw ShapeError("parameter blob: count does not match the spec");
  auto out = detail::open_out(path);
  out << "ndde-params 1\n";
  out << "dims";
  for (int d : spec.layer_dims) out << " " << d;
  out << "\n";
  out << "activation " << activation_name(spec.activation) << "\n";
  out << "bias";
  for (int l = 0; l < spec.layers(); ++l) out << " " << (spec.layer_has_bias(l) ? 1 : 0);
  out << "\n";
  out << "seed " << seed << "\n";
  out << "count " << params.size() << "\n";
  out << "data\n";
  for (long i = 0; i < params.size(); ++i) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(params[i]);
    unsigned char bytes[8];
    for (int b = 0; b < 8; ++b)
      bytes[b] = static_cast<unsigned char>((bits >> (8 * b)) & 0xff);
    out.write(reinterpret_cast<const char*>(bytes), 8);
  }
}

struct ParamBlob {
  MlpSpec spec;
  ParamVector params;
  std::uint64_t seed = 0;
};

inline ParamBlob read_params(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  std::string line;
  ParamBlob blob;
  long count = -1;
  if (!std::getline(in, line) || line != "ndde-params 1")
    throw ConfigError("bad parameter blob header in " + path.string());
  while (std::getline(in, line)) {
    if (line == "data") break;
    std::stringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "dims") {
      int d;
      while (ls >> d) blob.spec.layer_dims.push_back(d);
    } else if (key == "activation") {
      std::string a;
      ls >> a;
      if (a == "tanh") blob.spec.activation = Activation::Tanh;
      else if (a == "relu") blob.spec.activation = Activation::Relu;
      else throw ConfigError("unknown activation in blob: " + a);
    } else if (key == "bias") {
      int b;
      while (ls >> b) blob.spec.bias.push_back(b != 0);
    } else if (key == "seed") {
      ls >> blob.seed;
    } else if (key == "count") {
      ls >> count;
    } else {
      throw ConfigError("unknown key in parameter blob: " + key);
    }
  }
  blob.spec.validate();
  if (count != blob.spec.param_count())
    throw ConfigError("parameter blob count disagrees with the manifest");
  blob.params = ParamVector(static_cast<std::size_t>(count));
  for (long i = 0; i < count; ++i) {
    unsigned char bytes[8];
    in.read(reinterpret_cast<char*>(bytes), 8);
    if (!in) throw ConfigError("parameter blob truncated");
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b)
      bits |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
    blob.params[i] = std::bit_cast<double>(bits);
  }
  return blob;
}

// --------------------------------------------------------------------------
// Gradient-check report CSV.
// --------------------------------------------------------------------------

struct GradcheckRow {
  long index = 0;
  double adjoint_grad = 0.0;
  double fd_grad = 0.0;
  double rel_err = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckRow> rows;
  double max_rel_err = 0.0;  // over components above the magnitude floor
  long compared = 0;
};

inline GradcheckReport compare_gradients(std::span<const double> adjoint,
                                         std::span<const double> fd,
                                         double magnitude_floor = 1e-8) {
  if (adjoint.size() != fd.size())
    throw ShapeError("compare_gradients: length mismatch");
  GradcheckReport report;
  for (std::size_t i = 0; i < adjoint.size(); ++i) {
    GradcheckRow row;
    row.index = static_cast<long>(i);
    row.adjoint_grad = adjoint[i];
    row.fd_grad = fd[i];
    const double scale = std::max(std::abs(adjoint[i]), std::abs(fd[i]));
    row.rel_err = std::abs(adjoint[i] - fd[i]) / std::max(scale, magnitude_floor);
    report.rows.push_back(row);
    if (scale > magnitude_floor) {
      report.max_rel_err = std::max(report.max_rel_err, row.rel_err);
      ++report.compared;
    }
  }
  return report;
}

inline void write_gradcheck_csv(const std::filesystem::path& path,
                                const GradcheckReport& report) {
  auto out = detail::open_out(path);
  out << "component_index,adjoint_grad,fd_grad,rel_err\n";
  for (const GradcheckRow& r : report.rows)
    out << r.index << "," << detail::fmt17(r.adjoint_grad) << ","
        << detail::fmt17(r.fd_grad) << "," << detail::fmt17(r.rel_err) << "\n";
  out << "# max_rel_err " << detail::fmt17(report.max_rel_err) << " over "
      << report.compared << " components\n";
}

// --------------------------------------------------------------------------
// Dataset directory: one trajectory CSV per member plus a metadata sidecar.
// --------------------------------------------------------------------------

inline void write_trajectory_batch(const std::filesystem::path& dir,
                                   const TrajectoryBatch& batch) {
  std::filesystem::create_directories(dir);
  for (int i = 0; i < batch.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "traj_%04d.csv", i);
    write_trajectory_csv(dir / name, batch.trajectories[static_cast<std::size_t>(i)]);
  }
  auto meta = detail::open_out(dir / "metadata.txt");
  meta << "system " << batch.system << "\n";
  meta << "n_traj " << batch.size() << "\n";
  meta << "tau " << detail::fmt17(batch.tau) << "\n";
  meta << "sampling_period " << detail::fmt17(batch.sampling_period) << "\n";
  meta << "split_time " << detail::fmt17(batch.split_time) << "\n";
  meta << "seed " << batch.seed << "\n";
  const Grid& g = batch.grid();
  meta << "grid " << detail::fmt17(g.t0) << " " << detail::fmt17(g.t1) << " "
       << detail::fmt17(g.step) << "\n";
}

inline void write_labeled_set_csv(const std::filesystem::path& path,
                                  const LabeledSet& set) {
  auto out = detail::open_out(path);
  out << "x1,x2,label\n";
  for (int i = 0; i < set.size(); ++i) {
    auto p = set.point(i);
    out << detail::fmt17(p[0]) << "," << detail::fmt17(p[1]) << ","
        << set.labels[static_cast<std::size_t>(i)] << "\n";
  }
}

// --------------------------------------------------------------------------
// Train-report exports.
// --------------------------------------------------------------------------

inline void write_train_report(const std::filesystem::path& dir,
                               const TrainReport& report) {
  std::filesystem::create_directories(dir);
  {
    auto out = detail::open_out(dir / "train_loss.csv");
    out << "iteration,train_loss\n";
    for (std::size_t i = 0; i < report.train_loss.size(); ++i)
      out << (i + 1) << "," << detail::fmt17(report.train_loss[i]) << "\n";
  }
  {
    auto out = detail::open_out(dir / "eval.csv");
    std::size_t horizons = 0;
    for (const auto& ev : report.evals)
      horizons = std::max(horizons, ev.test_losses.size());
    out << "iteration,accuracy,full_train_loss";
    for (std::size_t h = 0; h < horizons; ++h) out << ",test_loss_h" << (h + 1);
    out << "\n";
    for (const auto& ev : report.evals) {
      out << ev.iteration << "," << detail::fmt17(ev.accuracy) << ","
          << detail::fmt17(ev.full_train_loss);
      for (std::size_t h = 0; h < horizons; ++h)
        out << ","
            << (h < ev.test_losses.size() ? detail::fmt17(ev.test_losses[h]) : "");
      out << "\n";
    }
  }
  if (!report.param_trace.empty()) {
    auto out = detail::open_out(dir / "param_trace.csv");
    out << "iteration";
    for (std::size_t j = 0; j < report.param_trace.front().second.size(); ++j)
      out << ",w" << j;
    out << "\n";
    for (const auto& [iter, values] : report.param_trace) {
      out << iter;
      for (double v : values) out << "," << detail::fmt17(v);
      out << "\n";
    }
  }
  {
    auto out = detail::open_out(dir / "summary.txt");
    out << "iterations " << report.iterations_run << "\n";
    out << "final_train_loss " << detail::fmt17(report.final_train_loss) << "\n";
    out << "trailing_train_loss " << detail::fmt17(report.trailing_train_loss)
        << "\n";
    out << "final_accuracy " << detail::fmt17(report.final_accuracy) << "\n";
    out << "final_test_losses";
    for (double v : report.final_test_losses) out << " " << detail::fmt17(v);
    out << "\n";
    out << "spot_checks " << report.spot_checks_run << " failures "
        << report.spot_check_failures << "\n";
    out << "wall_seconds " << detail::fmt17(report.wall_seconds) << "\n";
  }
}

}  // namespace ndde
