#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "ndde/config.hpp"
#include "ndde/io.hpp"

using namespace ndde;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  fs::path dir = fs::temp_directory_path() / "ndde_io_test";
  fs::create_directories(dir);
  return dir;
}

struct ExpField final : VectorField {
  int dim() const override { return 1; }
  long param_count() const override { return 0; }
  void eval(std::span<const double> h, std::span<const double>, double,
            std::span<const double>, std::span<double> out) const override {
    out[0] = h[0];
  }
  void vjp(std::span<const double>, std::span<const double>, double,
           std::span<const double>, std::span<const double>,
           std::span<double>, std::span<double>,
           std::span<double>) const override {}
};

}  // namespace

TEST_CASE("trajectory CSV round-trips bitwise") {
  ExpField f;
  Grid g = Grid::from_span(0.0, 1.0, 0.05);
  Trajectory traj = integrate_ode(f, {}, std::vector<double>{1.1}, g, Method::Rk4);
  const fs::path path = temp_dir() / "traj.csv";
  write_trajectory_csv(path, traj);

  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "t,x1");

  Trajectory back = read_trajectory_csv(path);
  REQUIRE(back.dim == traj.dim);
  REQUIRE(back.rows() == traj.rows());
  CHECK(std::memcmp(back.states.data(), traj.states.data(),
                    sizeof(double) * traj.states.size()) == 0);
  CHECK(back.grid.step == Catch::Approx(traj.grid.step).epsilon(1e-15));
}

TEST_CASE("parameter blob round-trips bitwise with its manifest") {
  MlpSpec spec = MlpSpec::dense({2, 16, 2}, Activation::Relu);
  ParamVector params = mlp_init(spec, 123);
  const fs::path path = temp_dir() / "params.bin";
  write_params(path, spec, params, 123);

  ParamBlob blob = read_params(path);
  CHECK(blob.seed == 123);
  CHECK(blob.spec.layer_dims == spec.layer_dims);
  CHECK(blob.spec.activation == spec.activation);
  REQUIRE(blob.params.size() == params.size());
  CHECK(std::memcmp(blob.params.data(), params.data(),
                    sizeof(double) * params.values.size()) == 0);
}

TEST_CASE("parameter blob detects truncation and count mismatch") {
  MlpSpec spec = MlpSpec::dense({2, 4, 2}, Activation::Tanh);
  ParamVector params = mlp_init(spec, 9);
  const fs::path path = temp_dir() / "trunc.bin";
  write_params(path, spec, params, 9);
  // chop the payload
  const auto size = fs::file_size(path);
  fs::resize_file(path, size - 8);
  CHECK_THROWS_AS(read_params(path), ConfigError);
  CHECK_THROWS_AS(read_params(temp_dir() / "missing.bin"), ConfigError);
}

TEST_CASE("gradcheck report and CSV summary line") {
  std::vector<double> adj = {1.0, 2.0, 1e-12, 0.5};
  std::vector<double> fd = {1.0 + 1e-6, 2.0, 2e-12, 0.5};
  GradcheckReport report = compare_gradients(adj, fd);
  CHECK(report.compared == 3);  // the 1e-12 component sits below the floor
  CHECK(report.max_rel_err > 0.0);
  CHECK(report.max_rel_err < 2e-6);

  const fs::path path = temp_dir() / "gradcheck.csv";
  write_gradcheck_csv(path, report);
  std::ifstream in(path);
  std::string line, last, header;
  std::getline(in, header);
  CHECK(header == "component_index,adjoint_grad,fd_grad,rel_err");
  int rows = 0;
  while (std::getline(in, line)) {
    if (!line.empty()) last = line;
    ++rows;
  }
  CHECK(rows == 5);  // 4 components + summary
  CHECK(last.find("max_rel_err") != std::string::npos);
}

TEST_CASE("train report files are written") {
  TrainReport report;
  report.train_loss = {1.0, 0.5, 0.25};
  TrainReport::EvalPoint ev;
  ev.iteration = 3;
  ev.accuracy = 0.9;
  ev.full_train_loss = 0.25;
  ev.test_losses = {0.1, 0.2, 0.3};
  report.evals.push_back(ev);
  report.param_trace.emplace_back(2, std::vector<double>{0.5, -0.5});
  report.final_accuracy = 0.9;
  report.final_train_loss = 0.25;
  report.final_test_losses = {0.1, 0.2, 0.3};
  report.iterations_run = 3;

  const fs::path dir = temp_dir() / "report";
  write_train_report(dir, report);
  CHECK(fs::exists(dir / "train_loss.csv"));
  CHECK(fs::exists(dir / "eval.csv"));
  CHECK(fs::exists(dir / "param_trace.csv"));
  CHECK(fs::exists(dir / "summary.txt"));

  std::ifstream in(dir / "eval.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header ==
        "iteration,accuracy,full_train_loss,test_loss_h1,test_loss_h2,test_loss_h3");
}

TEST_CASE("labeled set CSV carries points and labels") {
  LabeledSet set = gen_annulus(5, 5, 0.5, 1.0, 1.5, 2);
  const fs::path path = temp_dir() / "annulus.csv";
  write_labeled_set_csv(path, set);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "x1,x2,label");
  int rows = 0;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 10);
}

TEST_CASE("config parsing: sections, defaults, and rejection") {
  const std::string text =
      "# experiment\n"
      "[system]\n"
      "kind = annulus\n"
      "seed = 5\n"
      "n_inner = 10\n"
      "n_outer = 20\n"
      "\n"
      "[model]\n"
      "kind = ndde\n"
      "state_dim = 2\n"
      "tau = 1.0\n"
      "ndde_input = delayed_only\n"
      "hidden = 8,8\n"
      "activation = relu\n"
      "readout = project:1\n"
      "\n"
      "[train]\n"
      "loss = mse\n"
      "lr = 0.001\n"
      "batch_size = 16\n"
      "epochs = 1\n"
      "seed = 3\n"
      "step = 0.1\n"
      "T = 1.0\n";

  ExperimentConfig cfg = ExperimentConfig::parse_string(text);
  SystemConfig sys = parse_system(cfg.section("system"));
  CHECK(sys.kind == SystemConfig::Kind::Annulus);
  CHECK(sys.n_inner == 10);
  CHECK(sys.seed == 5);

  ConfigSection& ms = cfg.section("model");
  FieldSpec spec = parse_model(ms);
  ReadoutHead head = parse_readout(ms);
  ms.reject_unknown();
  CHECK(spec.kind == FieldKind::Ndde);
  CHECK(spec.ndde_input == NddeInput::DelayedOnly);
  CHECK(spec.net.layer_dims == std::vector<int>{2, 8, 8, 2});
  CHECK(head.kind == ReadoutHead::Kind::ProjectFirst);

  TrainConfig tc = parse_train(cfg.section("train"), spec, head);
  CHECK(tc.batch_size == 16);
  CHECK(tc.solver_step == Catch::Approx(0.1));
}

TEST_CASE("config parsing rejects unknown keys by name") {
  const std::string text =
      "[system]\n"
      "kind = annulus\n"
      "seed = 5\n"
      "unknown_knob = 3\n";
  ExperimentConfig cfg = ExperimentConfig::parse_string(text);
  try {
    parse_system(cfg.section("system"));
    FAIL("expected rejection");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("unknown_knob") != std::string::npos);
  }
}

TEST_CASE("config parsing: seeds are mandatory") {
  ExperimentConfig cfg = ExperimentConfig::parse_string(
      "[system]\nkind = annulus\n");
  CHECK_THROWS_AS(parse_system(cfg.section("system")), ConfigError);
}

TEST_CASE("config parsing: malformed input") {
  CHECK_THROWS_AS(ExperimentConfig::parse_string("[nonsense]\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse_string("key = 1\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse_string("[system]\nbroken line\n"),
                  ConfigError);
  CHECK_THROWS_AS(
      ExperimentConfig::parse_string("[system]\nseed = 1\nseed = 2\n"),
      ConfigError);
  ExperimentConfig cfg =
      ExperimentConfig::parse_string("[train]\nlr = abc\nseed = 1\n");
  CHECK_THROWS_AS(cfg.section("train").get_double("lr"), ConfigError);
  CHECK_THROWS_AS(cfg.section("missing"), ConfigError);
}

TEST_CASE("manifest snapshot embeds the config text") {
  ExperimentConfig cfg = ExperimentConfig::parse_string(
      "[system]\nkind = annulus\nseed = 5\n");
  const fs::path dir = temp_dir() / "manifest";
  write_manifest(dir, cfg, "ndde train --config x.cfg", 5);
  std::ifstream in(dir / "manifest.txt");
  std::string all((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  CHECK(all.find("ndde_version") != std::string::npos);
  CHECK(all.find("effective_seed 5") != std::string::npos);
  CHECK(all.find("kind = annulus") != std::string::npos);
}
