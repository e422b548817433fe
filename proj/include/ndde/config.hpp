#pragma once

// Plain-text experiment configs: [system] / [model] / [train] / [output]
// sections of key = value lines. Unknown keys are rejected by name; seeds
// are mandatory.

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ndde/datasets.hpp"
#include "ndde/errors.hpp"
#include "ndde/models.hpp"
#include "ndde/train.hpp"
#include "ndde/version.hpp"

namespace ndde {

class ConfigSection {
 public:
  ConfigSection() = default;
  explicit ConfigSection(std::string name) : name_(std::move(name)) {}

  const std::string& name() const { return name_; }

  void set(const std::string& key, const std::string& value) {
    if (kv_.count(key))
      throw ConfigError("duplicate key '" + key + "' in [" + name_ + "]");
    kv_[key] = value;
  }

  bool has(const std::string& key) const { return kv_.count(key) != 0; }

  std::string get_string(const std::string& key) const {
    auto it = kv_.find(key);
    if (it == kv_.end())
      throw ConfigError("missing key '" + key + "' in [" + name_ + "]");
    used_.insert(key);
    return it->second;
  }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    if (!has(key)) return fallback;
    return get_string(key);
  }

  double get_double(const std::string& key) const {
    return parse_double(key, get_string(key));
  }
  double get_double(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    return get_double(key);
  }

  long get_long(const std::string& key) const {
    const std::string v = get_string(key);
    try {
      std::size_t pos = 0;
      long out = std::stol(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return out;
    } catch (const std::exception&) {
      throw ConfigError("key '" + key + "' in [" + name_ +
                        "] is not an integer: " + v);
    }
  }
  long get_long(const std::string& key, long fallback) const {
    if (!has(key)) return fallback;
    return get_long(key);
  }

  std::uint64_t get_seed(const std::string& key) const {
    const std::string v = get_string(key);
    try {
      return std::stoull(v);
    } catch (const std::exception&) {
      throw ConfigError("key '" + key + "' in [" + name_ +
                        "] is not a seed: " + v);
    }
  }

  bool get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const std::string v = get_string(key);
    if (v == "1" || v == "true" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "no") return false;
    throw ConfigError("key '" + key + "' in [" + name_ +
                      "] is not a boolean: " + v);
  }

  std::vector<int> get_int_list(const std::string& key) const {
    std::vector<int> out;
    std::stringstream ss(get_string(key));
    std::string cell;
    while (std::getline(ss, cell, ','))
      out.push_back(static_cast<int>(parse_double(key, cell)));
    return out;
  }

  // Every key must have been consumed by a getter.
  void reject_unknown() const {
    for (const auto& [key, value] : kv_)
      if (!used_.count(key))
        throw ConfigError("unknown key '" + key + "' in [" + name_ + "]");
  }

  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  double parse_double(const std::string& key, const std::string& v) const {
    try {
      std::size_t pos = 0;
      double out = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return out;
    } catch (const std::exception&) {
      throw ConfigError("key '" + key + "' in [" + name_ +
                        "] is not a number: " + v);
    }
  }

  std::string name_;
  std::map<std::string, std::string> kv_;
  mutable std::set<std::string> used_;
};

struct ExperimentConfig {
  std::map<std::string, ConfigSection> sections;
  std::string raw_text;

  static ExperimentConfig parse_string(const std::string& text) {
    static const std::set<std::string> known = {"system", "model", "train",
                                                "output"};
    ExperimentConfig cfg;
    cfg.raw_text = text;
    std::stringstream ss(text);
    std::string line;
    std::string current;
    int lineno = 0;
    while (std::getline(ss, line)) {
      ++lineno;
      std::string s = trim(line);
      if (s.empty() || s[0] == '#') continue;
      if (s.front() == '[' && s.back() == ']') {
        current = trim(s.substr(1, s.size() - 2));
        if (!known.count(current))
          throw ConfigError("unknown section [" + current + "] at line " +
                            std::to_string(lineno));
        cfg.sections.emplace(current, ConfigSection(current));
        continue;
      }
      const auto eq = s.find('=');
      if (eq == std::string::npos)
        throw ConfigError("expected key = value at line " + std::to_string(lineno));
      if (current.empty())
        throw ConfigError("key outside any section at line " + std::to_string(lineno));
      cfg.sections.at(current).set(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
    }
    return cfg;
  }

  static ExperimentConfig parse_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_string(buf.str());
  }

  bool has(const std::string& name) const { return sections.count(name) != 0; }

  ConfigSection& section(const std::string& name) {
    auto it = sections.find(name);
    if (it == sections.end())
      throw ConfigError("missing [" + name + "] section");
    return it->second;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }
};

// --------------------------------------------------------------------------
// [system]
// --------------------------------------------------------------------------

struct SystemConfig {
  enum class Kind { Annulus, ToyLinear, Population, MackeyGlass, Spiral };

  Kind kind = Kind::Annulus;
  std::uint64_t seed = 0;

  // annulus
  int n_inner = 1000, n_outer = 2000;
  double r1 = 0.5, r2 = 1.0, r3 = 1.5;

  // time series
  int n_traj = 100;
  double span = 8.0;
  double gen_step = 0.01;
  double sampling_period = 0.05;
  double t_split = 3.0;
  double tau = 1.0;
  double init_lo = 0.1, init_hi = 1.2;
  ScalarSystemParams params;

  // spiral
  std::array<double, 4> a_matrix = {-1.0, 1.0, -1.0, -1.0};
  std::array<double, 2> x0 = {0.0, 1.0};

  bool is_timeseries() const { return kind != Kind::Annulus; }
  bool has_split() const { return is_timeseries() && kind != Kind::Spiral; }

  // Appendix configurations for direct (non-config-file) construction.
  static SystemConfig annulus_defaults(std::uint64_t seed) {
    SystemConfig s;
    s.kind = Kind::Annulus;
    s.seed = seed;
    return s;
  }
  static SystemConfig spiral_defaults(std::uint64_t seed) {
    SystemConfig s;
    s.kind = Kind::Spiral;
    s.seed = seed;
    s.n_traj = 1;
    s.span = 2.5;
    s.gen_step = 0.01;
    s.sampling_period = 0.1;
    s.tau = 0.5;
    return s;
  }
  static SystemConfig scalar_defaults(Kind kind, std::uint64_t seed) {
    SystemConfig s;
    s.kind = kind;
    s.seed = seed;
    return s;
  }
};

inline SystemConfig parse_system(ConfigSection& s) {
  SystemConfig out;
  const std::string kind = s.get_string("kind");
  out.seed = s.get_seed("seed");
  if (kind == "annulus") {
    out.kind = SystemConfig::Kind::Annulus;
    out.n_inner = static_cast<int>(s.get_long("n_inner", 1000));
    out.n_outer = static_cast<int>(s.get_long("n_outer", 2000));
    out.r1 = s.get_double("r1", 0.5);
    out.r2 = s.get_double("r2", 1.0);
    out.r3 = s.get_double("r3", 1.5);
  } else if (kind == "toy_linear" || kind == "population" ||
             kind == "mackey_glass") {
    out.kind = kind == "toy_linear" ? SystemConfig::Kind::ToyLinear
               : kind == "population" ? SystemConfig::Kind::Population
                                      : SystemConfig::Kind::MackeyGlass;
    out.n_traj = static_cast<int>(s.get_long("n_traj", 100));
    out.span = s.get_double("span", 8.0);
    out.gen_step = s.get_double("gen_step", 0.01);
    out.sampling_period = s.get_double("sampling_period", 0.05);
    out.t_split = s.get_double("t_split", 3.0);
    out.tau = s.get_double("tau", 1.0);
    out.init_lo = s.get_double("init_lo", 0.1);
    out.init_hi = s.get_double("init_hi", 1.2);
    out.params.coef = s.get_double("coef", -2.0);
    out.params.growth = s.get_double("growth", 1.8);
    out.params.beta = s.get_double("beta", 4.0);
    out.params.n = s.get_double("n", 9.65);
    out.params.gamma = s.get_double("gamma", 2.0);
  } else if (kind == "spiral") {
    out.kind = SystemConfig::Kind::Spiral;
    out.n_traj = 1;
    out.span = s.get_double("span", 2.5);
    out.gen_step = s.get_double("gen_step", 0.01);
    out.sampling_period = s.get_double("sampling_period", 0.1);
    out.tau = s.get_double("tau", 0.5);
    out.a_matrix[0] = s.get_double("a11", -1.0);
    out.a_matrix[1] = s.get_double("a12", 1.0);
    out.a_matrix[2] = s.get_double("a21", -1.0);
    out.a_matrix[3] = s.get_double("a22", -1.0);
    out.x0[0] = s.get_double("x0_1", 0.0);
    out.x0[1] = s.get_double("x0_2", 1.0);
  } else {
    throw ConfigError("unknown system kind: " + kind);
  }
  s.reject_unknown();
  return out;
}

inline LabeledSet build_annulus(const SystemConfig& sys) {
  return gen_annulus(sys.n_inner, sys.n_outer, sys.r1, sys.r2, sys.r3, sys.seed);
}

inline TrajectoryBatch build_batch(const SystemConfig& sys) {
  Grid grid = Grid::from_span(0.0, sys.span, sys.gen_step);
  TrajectoryBatch batch;
  if (sys.kind == SystemConfig::Kind::Spiral) {
    batch.system = "spiral";
    batch.tau = sys.tau;
    batch.seed = sys.seed;
    batch.trajectories.push_back(
        gen_spiral2d(sys.a_matrix, std::span<const double>(sys.x0), sys.tau, grid));
  } else {
    ScalarSystem kind = sys.kind == SystemConfig::Kind::ToyLinear
                            ? ScalarSystem::ToyLinear
                        : sys.kind == SystemConfig::Kind::Population
                            ? ScalarSystem::Population
                            : ScalarSystem::MackeyGlass;
    batch = gen_scalar_dde(kind, sys.params, sys.n_traj, grid, sys.tau,
                           {sys.init_lo, sys.init_hi}, sys.seed);
  }
  batch.sampling_period = sys.sampling_period;
  return batch;
}

// The training view of the generated data: split time series keep their
// test horizons; the spiral trains on its full window.
inline SplitResult build_split(const SystemConfig& sys,
                               const TrajectoryBatch& batch) {
  if (sys.has_split()) return split_timeseries(batch, sys.t_split);
  SplitResult out;
  out.train = batch;
  out.train.split_time = batch.grid().t1;
  return out;
}

// --------------------------------------------------------------------------
// [model]
// --------------------------------------------------------------------------

inline FieldSpec parse_model(ConfigSection& s) {
  FieldSpec spec;
  const std::string kind = s.get_string("kind");
  spec.state_dim = static_cast<int>(s.get_long("state_dim", 1));
  const std::string act_name = s.get_string("activation", "tanh");
  Activation act;
  if (act_name == "tanh") act = Activation::Tanh;
  else if (act_name == "relu") act = Activation::Relu;
  else throw ConfigError("unknown activation: " + act_name);
  const bool bias = s.get_bool("bias", true);
  const double init_scale = s.get_double("init_scale", 1.0);

  auto build_net = [&](int in, int out, const std::vector<int>& hidden) {
    std::vector<int> dims;
    dims.push_back(in);
    for (int h : hidden) dims.push_back(h);
    dims.push_back(out);
    return MlpSpec::dense(dims, act, bias, init_scale);
  };

  if (kind == "node" || kind == "anode" || kind == "ndde" ||
      kind == "node_plus_ndde") {
    const std::vector<int> hidden = s.get_int_list("hidden");
    if (kind == "node") {
      spec.kind = FieldKind::Node;
      spec.net = build_net(spec.state_dim, spec.state_dim, hidden);
    } else if (kind == "anode") {
      spec.kind = FieldKind::Anode;
      spec.augment_dim = static_cast<int>(s.get_long("augment_dim", 1));
      const int eff = spec.state_dim + spec.augment_dim;
      spec.net = build_net(eff, eff, hidden);
    } else {
      spec.kind = kind == "ndde" ? FieldKind::Ndde : FieldKind::NodePlusNdde;
      spec.tau = s.get_double("tau");
      const std::string pattern = s.get_string("ndde_input", "concat");
      if (pattern == "concat") spec.ndde_input = NddeInput::Concat;
      else if (pattern == "delayed_only") spec.ndde_input = NddeInput::DelayedOnly;
      else if (pattern == "sum") spec.ndde_input = NddeInput::Sum;
      else throw ConfigError("unknown ndde_input: " + pattern);
      spec.net = build_net(spec.expected_net_input(), spec.state_dim, hidden);
      if (spec.kind == FieldKind::NodePlusNdde) {
        const std::vector<int> init_hidden =
            s.has("init_hidden") ? s.get_int_list("init_hidden") : hidden;
        spec.init_net = build_net(spec.state_dim, spec.state_dim, init_hidden);
      }
    }
  } else if (kind == "analytic_annulus") {
    spec.kind = FieldKind::AnalyticAnnulus;
    spec.state_dim = static_cast<int>(s.get_long("state_dim", 2));
    spec.tau = s.get_double("tau", 10.0);
    spec.r = s.get_double("r", 0.75);
  } else {
    throw ConfigError("unknown model kind: " + kind);
  }
  spec.validate();
  return spec;
}

inline ReadoutHead parse_readout(ConfigSection& s) {
  const std::string r = s.get_string("readout", "identity");
  if (r == "identity") return ReadoutHead::identity();
  if (r.rfind("project:", 0) == 0) {
    try {
      return ReadoutHead::project_first(std::stoi(r.substr(8)));
    } catch (const std::exception&) {
      throw ConfigError("bad projection readout: " + r);
    }
  }
  throw ConfigError("unknown readout: " + r + " (use identity or project:<k>)");
}

// --------------------------------------------------------------------------
// [train]
// --------------------------------------------------------------------------

inline TrainConfig parse_train(ConfigSection& s, FieldSpec model,
                               ReadoutHead readout) {
  TrainConfig cfg;
  cfg.model = std::move(model);
  cfg.readout = std::move(readout);
  const std::string loss = s.get_string("loss", "mse");
  if (loss == "mse") cfg.loss = LossKind::Mse;
  else if (loss == "mae") cfg.loss = LossKind::Mae;
  else if (loss == "softmax_ce") cfg.loss = LossKind::SoftmaxCe;
  else throw ConfigError("unknown loss: " + loss);
  cfg.lr = s.get_double("lr", 1e-3);
  cfg.batch_size = static_cast<int>(s.get_long("batch_size", 64));
  cfg.epochs = static_cast<int>(s.get_long("epochs", 5));
  cfg.iterations = s.get_long("iterations", 0);
  cfg.seed = s.get_seed("seed");
  cfg.solver_step = s.get_double("step", 0.0);
  cfg.horizon_T = s.get_double("T", 0.0);
  cfg.adam.beta1 = s.get_double("beta1", 0.9);
  cfg.adam.beta2 = s.get_double("beta2", 0.999);
  cfg.adam.eps = s.get_double("eps", 1e-8);
  const std::string mode = s.get_string("mode", "dense");
  if (mode == "dense") cfg.grad_mode = GradMode::Dense;
  else if (mode == "piecewise") cfg.grad_mode = GradMode::Piecewise;
  else throw ConfigError("unknown gradient mode: " + mode);
  cfg.spot_check = s.get_bool("spot_check", true);
  cfg.spot_check_every = static_cast<int>(s.get_long("spot_check_every", 100));
  cfg.eval_every = s.get_long("eval_every", 0);
  cfg.trace_every = s.get_long("trace_every", 0);
  s.reject_unknown();
  cfg.validate();
  return cfg;
}

struct OutputConfig {
  std::filesystem::path dir = "runs/out";
  bool emit_dataset = false;
  bool emit_params = true;
};

inline OutputConfig parse_output(ConfigSection& s) {
  OutputConfig out;
  out.dir = s.get_string("dir", "runs/out");
  out.emit_dataset = s.get_bool("emit_dataset", false);
  out.emit_params = s.get_bool("emit_params", true);
  s.reject_unknown();
  return out;
}

// Snapshot sufficient to reproduce the run bitwise: resolved config text,
// the effective seeds, the code version, and the command line.
inline void write_manifest(const std::filesystem::path& dir,
                           const ExperimentConfig& cfg,
                           const std::string& command_line,
                           std::uint64_t effective_seed) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "manifest.txt");
  out << "ndde_version " << kVersion << "\n";
  out << "command " << command_line << "\n";
  out << "effective_seed " << effective_seed << "\n";
  out << "config_begin\n";
  out << cfg.raw_text;
  if (!cfg.raw_text.empty() && cfg.raw_text.back() != '\n') out << "\n";
  out << "config_end\n";
}

}  // namespace ndde
