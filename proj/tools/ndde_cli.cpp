// Command-line driver: dataset generation, training runs, gradient checks,
// the closed-form demonstrations, and run aggregation.
//
// Exit codes: 0 success, 1 configuration error, 2 numerical divergence.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ndde/ndde.hpp"

namespace fs = std::filesystem;
using namespace ndde;

namespace {

struct CliArgs {
  std::string subcommand;
  std::map<std::string, std::string> flags;
  std::vector<std::string> positional;
  std::string command_line;

  bool has(const std::string& f) const { return flags.count(f) != 0; }
  std::string get(const std::string& f, const std::string& fallback = "") const {
    auto it = flags.find(f);
    return it == flags.end() ? fallback : it->second;
  }
};

const char* kUsage =
    "usage: ndde <subcommand> [options]\n"
    "\n"
    "subcommands:\n"
    "  gen           generate a dataset from a config ([system] section)\n"
    "  train         run a training experiment from a config\n"
    "  gradcheck     adjoint vs central finite differences for a config\n"
    "  demo-annulus  closed-form annulus transform (radius field)\n"
    "  demo-map      toy DDE/ODE map of +-1 at T = 1\n"
    "  report        aggregate run directories into a comparison table\n"
    "\n"
    "options:\n"
    "  --config <path>          experiment config file\n"
    "  --seed <int>             override the config seed\n"
    "  --out <dir>              override the output directory\n"
    "  --mode dense|piecewise   gradient storage mode\n"
    "  --tol <float>            gradcheck pass threshold (default 1e-4)\n";

CliArgs parse_args(int argc, char** argv) {
  static const std::vector<std::string> known = {"--config", "--seed", "--out",
                                                 "--mode", "--tol"};
  CliArgs args;
  std::ostringstream cmd;
  for (int i = 0; i < argc; ++i) {
    if (i) cmd << " ";
    cmd << argv[i];
  }
  args.command_line = cmd.str();
  if (argc < 2) throw ConfigError("missing subcommand\n" + std::string(kUsage));
  args.subcommand = argv[1];
  for (int i = 2; i < argc; ++i) {
    std::string a = argv[i];
    if (a.rfind("--", 0) == 0) {
      if (std::find(known.begin(), known.end(), a) == known.end())
        throw ConfigError("unknown flag " + a);
      if (i + 1 >= argc) throw ConfigError("flag " + a + " needs a value");
      args.flags[a.substr(2)] = argv[++i];
    } else {
      args.positional.push_back(a);
    }
  }
  return args;
}

ExperimentConfig load_config(const CliArgs& args) {
  if (!args.has("config"))
    throw ConfigError("this subcommand needs --config <path>");
  return ExperimentConfig::parse_file(args.get("config"));
}

GradMode mode_from(const CliArgs& args, GradMode fallback) {
  if (!args.has("mode")) return fallback;
  const std::string m = args.get("mode");
  if (m == "dense") return GradMode::Dense;
  if (m == "piecewise") return GradMode::Piecewise;
  throw ConfigError("unknown gradient mode: " + m);
}

std::uint64_t seed_from(const CliArgs& args, std::uint64_t fallback) {
  if (!args.has("seed")) return fallback;
  try {
    return std::stoull(args.get("seed"));
  } catch (const std::exception&) {
    throw ConfigError("--seed must be an integer");
  }
}

// ---------------------------------------------------------------------------

int cmd_gen(const CliArgs& args) {
  ExperimentConfig cfg = load_config(args);
  SystemConfig sys = parse_system(cfg.section("system"));
  sys.seed = seed_from(args, sys.seed);
  OutputConfig out = cfg.has("output") ? parse_output(cfg.section("output"))
                                       : OutputConfig{};
  if (args.has("out")) out.dir = args.get("out");

  if (sys.kind == SystemConfig::Kind::Annulus) {
    LabeledSet set = build_annulus(sys);
    write_labeled_set_csv(out.dir / "annulus.csv", set);
    std::cout << "wrote " << set.size() << " labeled points to "
              << (out.dir / "annulus.csv").string() << "\n";
  } else {
    TrajectoryBatch batch = build_batch(sys);
    if (sys.has_split()) batch.split_time = sys.t_split;
    write_trajectory_batch(out.dir, batch);
    std::cout << "wrote " << batch.size() << " trajectories to "
              << out.dir.string() << "\n";
  }
  write_manifest(out.dir, cfg, args.command_line, sys.seed);
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_train(const CliArgs& args) {
  ExperimentConfig cfg = load_config(args);
  SystemConfig sys = parse_system(cfg.section("system"));
  ConfigSection& model_section = cfg.section("model");
  FieldSpec spec = parse_model(model_section);
  ReadoutHead head = parse_readout(model_section);
  model_section.reject_unknown();
  TrainConfig train_cfg = parse_train(cfg.section("train"), spec, head);
  OutputConfig out = cfg.has("output") ? parse_output(cfg.section("output"))
                                       : OutputConfig{};
  train_cfg.seed = seed_from(args, train_cfg.seed);
  train_cfg.grad_mode = mode_from(args, train_cfg.grad_mode);
  if (args.has("out")) out.dir = args.get("out");

  write_manifest(out.dir, cfg, args.command_line, train_cfg.seed);

  auto finish = [&](const TrainReport& report) {
    write_train_report(out.dir, report);
    if (out.emit_params && spec.kind != FieldKind::AnalyticAnnulus) {
      const long main_count = spec.net.param_count();
      ParamVector main(static_cast<std::size_t>(main_count));
      std::copy(report.final_params.values.begin(),
                report.final_params.values.begin() + main_count,
                main.values.begin());
      write_params(out.dir / "params_main.bin", spec.net, main, train_cfg.seed);
      if (spec.kind == FieldKind::NodePlusNdde) {
        ParamVector init(std::vector<double>(
            report.final_params.values.begin() + main_count,
            report.final_params.values.end()));
        write_params(out.dir / "params_init.bin", spec.init_net, init,
                     train_cfg.seed);
      }
    }
    std::cout << "run complete: iterations=" << report.iterations_run
              << " final_train_loss=" << report.final_train_loss;
    if (!std::isnan(report.final_accuracy))
      std::cout << " accuracy=" << report.final_accuracy;
    if (!report.final_test_losses.empty()) {
      std::cout << " test_losses=";
      for (std::size_t i = 0; i < report.final_test_losses.size(); ++i)
        std::cout << (i ? "," : "") << report.final_test_losses[i];
    }
    std::cout << " wall=" << report.wall_seconds << "s\n";
    std::cout << "report written to " << out.dir.string() << "\n";
  };

  try {
    if (sys.kind == SystemConfig::Kind::Annulus) {
      LabeledSet data = build_annulus(sys);
      if (out.emit_dataset) write_labeled_set_csv(out.dir / "annulus.csv", data);
      finish(train_run(train_cfg, data));
    } else {
      TrajectoryBatch batch = build_batch(sys);
      if (out.emit_dataset) write_trajectory_batch(out.dir / "dataset", batch);
      SplitResult split = build_split(sys, batch);
      finish(train_run(train_cfg, split));
    }
  } catch (const TrainRunError& e) {
    write_train_report(out.dir, e.partial_report);
    std::cerr << "divergence during training: " << e.what()
              << " (partial report written to " << out.dir.string() << ")\n";
    return 2;
  }
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_gradcheck(const CliArgs& args) {
  ExperimentConfig cfg = load_config(args);
  ConfigSection& model_section = cfg.section("model");
  FieldSpec spec = parse_model(model_section);
  ReadoutHead head = parse_readout(model_section);
  model_section.reject_unknown();
  TrainConfig train_cfg = parse_train(cfg.section("train"), spec, head);
  OutputConfig out = cfg.has("output") ? parse_output(cfg.section("output"))
                                       : OutputConfig{};
  const std::uint64_t seed = seed_from(args, train_cfg.seed);
  const GradMode mode = mode_from(args, train_cfg.grad_mode);
  if (args.has("out")) out.dir = args.get("out");
  const double tol = args.has("tol") ? std::stod(args.get("tol")) : 1e-4;

  auto [model, params] = make_field(spec, seed);
  const bool delayed = spec.delayed();
  const double tau = spec.tau;
  const double T = train_cfg.horizon_T > 0.0 ? train_cfg.horizon_T
                   : delayed                 ? 2.0 * tau
                                             : 1.0;
  const double step = train_cfg.solver_step > 0.0 ? train_cfg.solver_step
                      : delayed                   ? tau / 50.0
                                                  : T / 100.0;
  Grid grid = Grid::from_span(0.0, T, step);

  SplitMix64 rng(derive_seed(seed, 99));
  std::vector<double> x(static_cast<std::size_t>(model.spec.solver_dim()));
  for (double& v : x) v = rng.uniform(-1.0, 1.0);
  std::vector<double> obs_times = {T / 2.0, T};
  std::vector<double> targets(obs_times.size() * x.size());
  for (double& v : targets) v = rng.uniform(-1.0, 1.0);

  auto run_loss = [&](std::span<const double> w) {
    Trajectory traj = detail::forward_sample(model, w, x, grid, train_cfg.method);
    double L = 0.0;
    std::size_t t_idx = 0;
    for (double t : obs_times) {
      auto r = traj.row(grid.index_of(t));
      for (std::size_t j = 0; j < r.size(); ++j) {
        const double e = r[j] - targets[t_idx * r.size() + j];
        L += e * e;
      }
      ++t_idx;
    }
    return L;
  };

  Trajectory traj = detail::forward_sample(model, params.span(), x, grid,
                                           train_cfg.method);
  ObservationLoss loss;
  std::size_t t_idx = 0;
  for (double t : obs_times) {
    auto r = traj.row(grid.index_of(t));
    std::vector<double> g(r.size());
    for (std::size_t j = 0; j < r.size(); ++j)
      g[j] = 2.0 * (r[j] - targets[t_idx * r.size() + j]);
    loss.add(t, std::move(g));
    ++t_idx;
  }
  GradientBundle bundle = dde_gradient(*model.field, model.main_params(params.span()),
                                       traj, loss, mode);

  // Adjoint and oracle vectors: all parameters, then the input state.
  std::vector<double> adjoint;
  adjoint.insert(adjoint.end(), bundle.w_grad.values.begin(), bundle.w_grad.values.end());
  adjoint.insert(adjoint.end(), bundle.init_w_grad.values.begin(),
                 bundle.init_w_grad.values.end());
  adjoint.insert(adjoint.end(), bundle.input_grad.begin(), bundle.input_grad.end());

  ParamVector fd_w = finite_diff_gradient(run_loss, params.span(), 1e-5);
  auto x_loss = [&](std::span<const double> xx) {
    std::vector<double> x_local(xx.begin(), xx.end());
    Trajectory t2 = detail::forward_sample(model, params.span(), x_local, grid,
                                           train_cfg.method);
    double L = 0.0;
    std::size_t ti = 0;
    for (double t : obs_times) {
      auto r = t2.row(grid.index_of(t));
      for (std::size_t j = 0; j < r.size(); ++j) {
        const double e = r[j] - targets[ti * r.size() + j];
        L += e * e;
      }
      ++ti;
    }
    return L;
  };
  ParamVector fd_x = finite_diff_gradient(x_loss, x, 1e-5);

  std::vector<double> fd;
  fd.insert(fd.end(), fd_w.values.begin(), fd_w.values.end());
  fd.insert(fd.end(), fd_x.values.begin(), fd_x.values.end());

  GradcheckReport report = compare_gradients(adjoint, fd);
  write_gradcheck_csv(out.dir / "gradcheck.csv", report);
  write_manifest(out.dir, cfg, args.command_line, seed);
  std::cout << "gradcheck: " << report.rows.size() << " components ("
            << report.compared << " above the magnitude floor), max rel err "
            << report.max_rel_err << "\n";
  if (report.max_rel_err >= tol) {
    std::cerr << "gradcheck FAILED at tolerance " << tol << "\n";
    return 1;
  }
  std::cout << "gradcheck passed at tolerance " << tol << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_demo_annulus(const CliArgs& args) {
  const std::uint64_t seed = seed_from(args, 12345);
  fs::path out_dir = args.has("out") ? fs::path(args.get("out")) : fs::path(".");
  const double r1 = 0.5, r2 = 1.0, r3 = 1.5;
  const double r = (r1 + r2) / 2.0;
  const double tau = 10.0;

  LabeledSet set = gen_annulus(1000, 2000, r1, r2, r3, seed);
  auto [field, params] = analytic_annulus_field(r, 2);
  Grid grid = Grid::from_span(0.0, tau, tau / 100.0);

  fs::create_directories(out_dir);
  std::ofstream csv(out_dir / "demo_annulus.csv");
  csv << "x1,x2,label,h1_T,h2_T,predicted\n";
  int correct = 0;
  double min_margin = 1e300;
  for (int i = 0; i < set.size(); ++i) {
    auto x = set.point(i);
    Trajectory traj = integrate_dde(*field, params.span(),
                                    HistoryFunction::constant({x[0], x[1]}),
                                    tau, grid, Method::Rk4);
    auto h = traj.row(grid.n_steps);
    const int label = set.labels[static_cast<std::size_t>(i)];
    const int predicted = h[0] < 0.0 ? +1 : -1;  // inner drains negative
    if (predicted == label) ++correct;
    min_margin = std::min(min_margin, std::abs(h[0]));
    csv << x[0] << "," << x[1] << "," << label << "," << h[0] << "," << h[1]
        << "," << predicted << "\n";
  }
  std::cout << "classified " << correct << "/" << set.size()
            << " points by sign(h1(T)); min |h1(T)| = " << min_margin << "\n";
  if (correct != set.size()) {
    std::cerr << "separation failed\n";
    return 1;
  }
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_demo_map(const CliArgs& args) {
  fs::path out_dir = args.has("out") ? fs::path(args.get("out")) : fs::path(".");
  const double tau = 1.0, T = 1.0, step = 0.01;
  Grid grid = Grid::from_span(0.0, T, step);

  ScalarLinearDelayField dde_field;
  std::vector<double> w = {-2.0};
  ScalarLinearOdeField ode_field(-2.0);

  Trajectory dde_plus = integrate_dde(dde_field, w, HistoryFunction::constant({1.0}),
                                      tau, grid, Method::Rk4);
  Trajectory dde_minus = integrate_dde(dde_field, w, HistoryFunction::constant({-1.0}),
                                       tau, grid, Method::Rk4);
  Trajectory ode_plus = integrate_ode(ode_field, {}, std::vector<double>{1.0},
                                      grid, Method::Rk4);
  Trajectory ode_minus = integrate_ode(ode_field, {}, std::vector<double>{-1.0},
                                       grid, Method::Rk4);

  fs::create_directories(out_dir);
  std::ofstream csv(out_dir / "demo_map.csv");
  csv << "t,dde_from_plus1,dde_from_minus1,ode_from_plus1,ode_from_minus1\n";
  for (int k = 0; k <= grid.n_steps; ++k)
    csv << grid.time_at(k) << "," << dde_plus.row(k)[0] << ","
        << dde_minus.row(k)[0] << "," << ode_plus.row(k)[0] << ","
        << ode_minus.row(k)[0] << "\n";

  const double end_plus = dde_plus.row(grid.n_steps)[0];
  const double end_minus = dde_minus.row(grid.n_steps)[0];
  std::cout << "DDE endpoints: 1 -> " << end_plus << ", -1 -> " << end_minus << "\n";
  bool ok = std::abs(end_plus + 1.0) < 1e-9 && std::abs(end_minus - 1.0) < 1e-9;
  for (int k = 0; k <= grid.n_steps && ok; ++k)
    ok = ode_plus.row(k)[0] > 0.0 && ode_minus.row(k)[0] < 0.0;
  if (!ok) {
    std::cerr << "map demonstration failed\n";
    return 1;
  }
  std::cout << "ODE trajectories keep strict sign separation on the grid\n";
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_report(const CliArgs& args) {
  if (args.positional.empty())
    throw ConfigError("report needs one or more run directories");
  fs::path out_dir = args.has("out") ? fs::path(args.get("out")) : fs::path(".");

  struct Row {
    std::string run;
    std::map<std::string, std::string> fields;
  };
  std::vector<Row> rows;
  for (const std::string& dir : args.positional) {
    const fs::path summary = fs::path(dir) / "summary.txt";
    std::ifstream in(summary);
    if (!in) throw ConfigError("missing " + summary.string());
    Row row;
    row.run = dir;
    std::string line;
    while (std::getline(in, line)) {
      std::stringstream ls(line);
      std::string key;
      ls >> key;
      std::string rest;
      std::getline(ls, rest);
      if (!rest.empty() && rest.front() == ' ') rest.erase(0, 1);
      row.fields[key] = rest;
    }
    rows.push_back(std::move(row));
  }

  static const std::vector<std::string> cols = {
      "iterations", "final_train_loss", "final_accuracy", "final_test_losses"};
  fs::create_directories(out_dir);
  std::ofstream csv(out_dir / "report.csv");
  csv << "run";
  for (const auto& c : cols) csv << "," << c;
  csv << "\n";
  std::cout << "run";
  for (const auto& c : cols) std::cout << "\t" << c;
  std::cout << "\n";
  for (const Row& row : rows) {
    csv << row.run;
    std::cout << row.run;
    for (const auto& c : cols) {
      auto it = row.fields.find(c);
      const std::string v = it == row.fields.end() ? "" : it->second;
      csv << "," << v;
      std::cout << "\t" << v;
    }
    csv << "\n";
    std::cout << "\n";
  }
  std::cout << "table written to " << (out_dir / "report.csv").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    CliArgs args = parse_args(argc, argv);
    if (args.subcommand == "gen") return cmd_gen(args);
    if (args.subcommand == "train") return cmd_train(args);
    if (args.subcommand == "gradcheck") return cmd_gradcheck(args);
    if (args.subcommand == "demo-annulus") return cmd_demo_annulus(args);
    if (args.subcommand == "demo-map") return cmd_demo_map(args);
    if (args.subcommand == "report") return cmd_report(args);
    std::cerr << "unknown subcommand: " << args.subcommand << "\n" << kUsage;
    return 1;
  } catch (const DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const ShapeError& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return 1;
  } catch (const AlignmentError& e) {
    std::cerr << "alignment error: " << e.what() << "\n";
    return 1;
  }
}
