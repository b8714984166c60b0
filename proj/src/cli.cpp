#include "slowmodes/cli.hpp"

#include "slowmodes/diagnostics.hpp"
#include "slowmodes/io.hpp"
#include "slowmodes/toy_models.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

namespace slowmodes::cli {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

// Reads one JSON object section, remembering which keys were consumed so that
// leftovers can be reported as unknown.
class Section {
 public:
  Section(const json& doc, std::string name) : name_(std::move(name)) {
    if (doc.contains(name_)) {
      node_ = &doc.at(name_);
      if (!node_->is_object()) throw InvalidArgument("configuration key '" + name_ + "' must be an object");
    }
  }

  template <typename T>
  void read(const std::string& key, T& target) {
    if (node_ == nullptr || !node_->contains(key)) return;
    seen_.insert(key);
    const json& value = node_->at(key);
    try {
      if constexpr (std::is_same_v<T, double>) {
        if (!value.is_number()) throw InvalidArgument("");
      } else if constexpr (std::is_integral_v<T>) {
        if (!value.is_number_integer()) throw InvalidArgument("");
        if constexpr (std::is_unsigned_v<T>) {
          if (value.is_number_integer() && !value.is_number_unsigned()) throw InvalidArgument("");
        }
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!value.is_string()) throw InvalidArgument("");
      }
      target = value.get<T>();
    } catch (const std::exception&) {
      throw InvalidArgument("configuration key '" + path(key) + "' has the wrong type");
    }
  }

  template <typename T>
  void read_list(const std::string& key, std::vector<T>& target) {
    if (node_ == nullptr || !node_->contains(key)) return;
    seen_.insert(key);
    const json& value = node_->at(key);
    const bool ok = value.is_array() && std::all_of(value.begin(), value.end(), [](const json& v) {
                      if constexpr (std::is_integral_v<T>) return v.is_number_integer();
                      return v.is_number();
                    });
    if (!ok) throw InvalidArgument("configuration key '" + path(key) + "' must be a list of numbers");
    target = value.get<std::vector<T>>();
  }

  void finish() const {
    if (node_ == nullptr) return;
    for (const auto& [key, value] : node_->items()) {
      if (!seen_.count(key)) throw InvalidArgument("unknown configuration key '" + path(key) + "'");
    }
  }

  std::string path(const std::string& key) const { return name_ + "." + key; }

 private:
  std::string name_;
  const json* node_ = nullptr;
  std::set<std::string> seen_;
};

void require(bool condition, const std::string& key, const std::string& rule) {
  if (!condition) throw InvalidArgument("configuration key '" + key + "' " + rule);
}

MlpSpec mlp_spec(const RunConfig& c) {
  MlpSpec spec;
  spec.layers = c.srv.layers;
  spec.hidden_activation = c.srv.activation == "linear" ? Activation::Linear : Activation::Tanh;
  return spec;
}

TrainConfig train_config(const RunConfig& c) {
  TrainConfig t = c.srv.training;
  t.lag = c.data.lag;
  t.n_modes = c.method.n_modes;
  return t;
}

bool synthetic(const RunConfig& c) { return c.system.kind == "fourwell" || c.system.kind == "ring"; }

PotentialGrid system_grid(const RunConfig& c) {
  const auto [lo, hi] = c.system.domain;
  if (c.system.kind == "fourwell") return make_grid_1d(c.system.bins, lo, hi, potential_1d);
  if (c.system.kind == "ring") {
    return make_grid_2d(c.system.bins, c.system.bins, {lo, hi}, {lo, hi}, potential_ring);
  }
  throw InvalidArgument("configuration key 'system.kind' must be fourwell or ring for this command");
}

/// Bin centers of a uniform grid of the given dimension, used to tabulate modes.
Matrix grid_centers(const RunConfig& c, int dimension) {
  const auto [lo, hi] = c.system.domain;
  const auto flat1 = [](double) { return 0.0; };
  const auto flat2 = [](double, double) { return 0.0; };
  if (dimension == 1) return make_grid_1d(c.system.bins, lo, hi, flat1).centers;
  if (dimension == 2) return make_grid_2d(c.system.bins, c.system.bins, {lo, hi}, {lo, hi}, flat2).centers;
  throw InvalidArgument("projection needs a 1D or 2D model");
}

fs::path output_dir(const RunConfig& c, const std::string& override_dir) {
  fs::path dir = override_dir.empty() ? fs::path(c.output.directory) : fs::path(override_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

std::vector<Trajectory> read_trajectories(const std::vector<std::string>& paths) {
  std::vector<Trajectory> out;
  for (const auto& p : paths) out.push_back(io::read_trajectory_csv(p));
  for (const auto& t : out) {
    if (t.dimension() != out.front().dimension()) {
      throw InvalidArgument("trajectories have different dimensions");
    }
  }
  return out;
}

io::AnyModel fit_method(const RunConfig& c, std::span<const Trajectory> trajs, int lag) {
  if (c.method.kind == "tica") return fit_tica(trajs, lag, c.method.n_modes, c.tica.epsilon);
  if (c.method.kind == "ktica") {
    KticaOptions o;
    o.kernel.bandwidth = c.ktica.bandwidth;
    o.landmarks = c.ktica.landmarks;
    o.n_modes = c.method.n_modes;
    o.epsilon = c.ktica.epsilon;
    o.seed = c.ktica.seed;
    return fit_ktica(trajs, lag, o);
  }
  TrainConfig t = train_config(c);
  t.lag = lag;
  return train_srv(trajs, mlp_spec(c), t);
}

/// Refits a model of the same kind and hyperparameters at another lag.
Vector refit_eigenvalues(const io::AnyModel& model, const RunConfig& c,
                         std::span<const Trajectory> trajs, int lag) {
  if (const auto* m = std::get_if<LinearModel>(&model)) {
    return fit_tica(trajs, lag, static_cast<int>(m->eigenvalues.size()), c.tica.epsilon).eigenvalues;
  }
  if (const auto* m = std::get_if<KticaModel>(&model)) {
    return fit_ktica(trajs, lag, m->landmarks, m->kernel, static_cast<int>(m->eigenvalues.size()),
                     c.ktica.epsilon)
        .eigenvalues;
  }
  const auto& m = std::get<SrvModel>(model);
  TrainConfig t = m.config;
  t.lag = lag;
  return train_srv(trajs, m.spec, t).eigenvalues;
}

void print_spectrum(std::ostream& out, const Vector& eigenvalues, int lag) {
  for (Index i = 0; i < eigenvalues.size(); ++i) {
    out << "mode " << i + 1 << ": lambda=" << io::format_double(eigenvalues[i])
        << ", t=" << io::format_double(implied_timescale(eigenvalues[i], lag).value) << '\n';
  }
}

std::vector<int> parse_int_list(const std::string& text, const std::string& what) {
  std::vector<int> values;
  std::stringstream ss(text);
  std::string token;
  while (std::getline(ss, token, ',')) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(token, &used);
      if (used != token.size()) throw std::invalid_argument(token);
      values.push_back(v);
    } catch (const std::exception&) {
      throw InvalidArgument(what + ": cannot parse integer '" + token + "'");
    }
  }
  if (values.empty()) throw InvalidArgument(what + ": empty list");
  return values;
}

struct Options {
  std::string config_path;
  std::vector<std::string> traj_paths;
  std::string model_path;
  std::string oracle_path;
  std::string ck;
  std::string out_dir;
};

RunConfig config_or_defaults(const Options& o) {
  if (o.config_path.empty()) return RunConfig{};
  return load_config(o.config_path);
}

void cmd_generate(const Options& o, std::ostream& out) {
  const RunConfig c = config_or_defaults(o);
  if (!synthetic(c)) {
    throw InvalidArgument("configuration key 'system.kind' must be fourwell or ring to generate data");
  }
  const fs::path dir = output_dir(c, o.out_dir);
  const TransitionMatrix tm = build_transition_matrix(system_grid(c));
  const Trajectory traj = sample_trajectory(tm, c.data.trajectory_length, c.data.seed);
  const SpectrumOracle oracle = reference_spectrum(matrix_power(tm, c.data.lag), c.method.n_modes);
  io::write_trajectory_csv(dir / "traj.csv", traj);
  io::write_oracle_csv(dir / "oracle.csv", oracle);
  io::write_transition_binary(dir / "transition.bin", tm.P);
  print_spectrum(out, oracle.eigenvalues.tail(oracle.eigenvalues.size() - 1), c.data.lag);
}

void cmd_fit(const Options& o, std::ostream& out) {
  const RunConfig c = config_or_defaults(o);
  if (o.traj_paths.empty()) throw InvalidArgument("fit needs at least one --traj file");
  const fs::path dir = output_dir(c, o.out_dir);
  const auto trajs = read_trajectories(o.traj_paths);
  const io::AnyModel model = fit_method(c, trajs, c.data.lag);
  io::save_model(dir / ("model." + c.method.kind + ".txt"), model);
  const Vector eigs = io::model_eigenvalues(model);
  io::write_spectrum_csv(dir / "spectrum.csv", eigs, c.data.lag);
  print_spectrum(out, eigs, c.data.lag);
}

void cmd_evaluate(const Options& o, std::ostream& out) {
  const RunConfig c = config_or_defaults(o);
  if (o.model_path.empty()) throw InvalidArgument("evaluate needs --model");
  if (o.traj_paths.empty()) throw InvalidArgument("evaluate needs at least one --traj file");
  const io::AnyModel model = io::load_model(o.model_path);
  const auto trajs = read_trajectories(o.traj_paths);
  const int dim = io::model_input_dim(model);
  if (trajs.front().dimension() != dim) {
    throw InvalidArgument("trajectory dimension " + std::to_string(trajs.front().dimension()) +
                          " does not match model input dimension " + std::to_string(dim));
  }
  const int lag = io::model_lag(model);
  const Vector eigs = io::model_eigenvalues(model);
  const int n_modes = static_cast<int>(eigs.size());
  const fs::path dir = output_dir(c, o.out_dir);

  if (!o.oracle_path.empty()) {
    const SpectrumOracle oracle = io::read_oracle_csv(o.oracle_path);
    const Matrix centers = grid_centers(c, dim);
    if (centers.rows() != oracle.stationary.size()) {
      throw InvalidArgument("oracle has " + std::to_string(oracle.stationary.size()) +
                            " bins but system.bins describes " + std::to_string(centers.rows()));
    }
    const Matrix modes = io::transform(model, centers);
    const Index shared = std::min<Index>(modes.cols(), oracle.eigenfunctions.cols() - 1);
    std::vector<Projection> projections;
    for (Index i = 0; i < shared; ++i) {
      projections.push_back(
          weighted_projection(modes.col(i), oracle.eigenfunctions.col(i + 1), oracle.stationary));
      out << "projection mode " << i + 1 << ": " << io::format_double(projections.back().absolute)
          << '\n';
    }
    io::write_projection_csv(dir / "projection.csv", projections);
  }

  const double loss = held_out_vamp2([&](const Matrix& X) { return io::transform(model, X); },
                                     trajs, lag, n_modes);
  {
    std::ostringstream csv;
    csv << "lag,n_modes,vamp2_loss\n" << lag << ',' << n_modes << ',' << io::format_double(loss) << '\n';
    io::write_text(dir / "heldout.csv", csv.str());
  }
  out << "heldout vamp2 loss: " << io::format_double(loss) << '\n';

  if (!o.ck.empty()) {
    const std::vector<int> ks = parse_int_list(o.ck, "--ck");
    for (int k : ks) {
      if (k < 1) throw InvalidArgument("--ck multipliers must be >= 1");
    }
    const CkReport report = ck_test(
        eigs, lag, [&](int kl) { return refit_eigenvalues(model, c, trajs, kl); }, ks);
    io::write_ck_csv(dir / "ck_report.csv", report);
    for (const auto& r : report.rows) {
      out << "ck mode " << r.mode << " k=" << r.k << ": rel_dev=" << io::format_double(r.rel_dev)
          << '\n';
    }
  }
}

void cmd_sweep(const Options& o, std::ostream& out) {
  const RunConfig c = config_or_defaults(o);
  if (!synthetic(c)) {
    throw InvalidArgument("configuration key 'system.kind' must be fourwell or ring to sweep");
  }
  const fs::path dir = output_dir(c, o.out_dir);
  const TransitionMatrix tm = build_transition_matrix(system_grid(c));
  std::vector<Trajectory> train;
  if (o.traj_paths.empty()) {
    train.push_back(sample_trajectory(tm, c.data.trajectory_length, c.data.seed));
  } else {
    train = read_trajectories(o.traj_paths);
  }
  const std::vector<Trajectory> test{sample_trajectory(tm, c.sweep.test_length, c.sweep.test_seed)};

  std::ostringstream csv;
  csv << "sigma,m,test_loss\n";
  for (double sigma : c.sweep.bandwidths) {
    for (int m : c.sweep.landmarks) {
      KticaOptions opt;
      opt.kernel.bandwidth = sigma;
      opt.landmarks = m;
      opt.n_modes = c.method.n_modes;
      opt.epsilon = c.ktica.epsilon;
      opt.seed = c.ktica.seed;
      const KticaModel model = fit_ktica(train, c.data.lag, opt);
      const double loss = held_out_vamp2(
          [&](const Matrix& X) { return transform_ktica(model, X); }, test, c.data.lag,
          c.method.n_modes, c.ktica.epsilon);
      csv << io::format_double(sigma) << ',' << m << ',' << io::format_double(loss) << '\n';
      out << "sigma=" << io::format_double(sigma) << " m=" << m
          << ": test_loss=" << io::format_double(loss) << '\n';
    }
  }
  io::write_text(dir / "sweep.csv", csv.str());
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InvalidArgument(std::string("configuration is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw InvalidArgument("configuration must be a JSON object");
  static const std::set<std::string> sections{"system", "data",  "method", "tica",
                                              "ktica",  "srv",   "sweep",  "output"};
  for (const auto& [key, value] : doc.items()) {
    if (!sections.count(key)) throw InvalidArgument("unknown configuration key '" + key + "'");
  }

  RunConfig c;
  Section system(doc, "system");
  system.read("kind", c.system.kind);
  system.read("bins", c.system.bins);
  std::vector<double> domain{c.system.domain[0], c.system.domain[1]};
  system.read_list("domain", domain);
  require(domain.size() == 2, "system.domain", "must have exactly two entries");
  c.system.domain = {domain[0], domain[1]};
  system.finish();

  Section data(doc, "data");
  data.read("lag", c.data.lag);
  data.read("trajectory_length", c.data.trajectory_length);
  data.read("seed", c.data.seed);
  data.finish();

  Section method(doc, "method");
  method.read("kind", c.method.kind);
  method.read("n_modes", c.method.n_modes);
  method.finish();

  Section tica(doc, "tica");
  tica.read("epsilon", c.tica.epsilon);
  tica.finish();

  Section ktica(doc, "ktica");
  ktica.read("bandwidth", c.ktica.bandwidth);
  ktica.read("landmarks", c.ktica.landmarks);
  ktica.read("seed", c.ktica.seed);
  ktica.read("epsilon", c.ktica.epsilon);
  ktica.finish();

  Section srv(doc, "srv");
  TrainConfig& t = c.srv.training;
  std::string loss = t.loss == LossKind::Vamp2 ? "vamp2" : "timescale_sum";
  srv.read_list("layers", c.srv.layers);
  srv.read("activation", c.srv.activation);
  srv.read("learning_rate", t.learning_rate);
  srv.read("beta1", t.beta1);
  srv.read("beta2", t.beta2);
  srv.read("adam_epsilon", t.adam_epsilon);
  srv.read("batch_size", t.batch_size);
  srv.read("max_epochs", t.max_epochs);
  srv.read("patience", t.patience);
  srv.read("validation_fraction", t.validation_fraction);
  srv.read("seed", t.seed);
  srv.read("loss", loss);
  srv.read("epsilon", t.epsilon);
  srv.finish();
  require(loss == "vamp2" || loss == "timescale_sum", "srv.loss", "must be vamp2 or timescale_sum");
  t.loss = loss == "vamp2" ? LossKind::Vamp2 : LossKind::TimescaleSum;

  Section sweep(doc, "sweep");
  sweep.read_list("bandwidths", c.sweep.bandwidths);
  sweep.read_list("landmarks", c.sweep.landmarks);
  sweep.read("test_length", c.sweep.test_length);
  sweep.read("test_seed", c.sweep.test_seed);
  sweep.finish();

  Section output(doc, "output");
  output.read("directory", c.output.directory);
  output.finish();

  validate_config(c);
  return c;
}

RunConfig load_config(const std::string& path) { return parse_config(io::read_text(path)); }

void validate_config(const RunConfig& c) {
  const auto& k = c.system.kind;
  require(k == "fourwell" || k == "ring" || k == "file", "system.kind", "must be fourwell, ring or file");
  require(c.system.bins >= 2, "system.bins", "must be >= 2");
  require(std::isfinite(c.system.domain[0]) && std::isfinite(c.system.domain[1]) &&
              c.system.domain[0] < c.system.domain[1],
          "system.domain", "must be a finite interval [lo, hi] with lo < hi");
  require(c.data.lag >= 1, "data.lag", "must be >= 1");
  require(c.data.trajectory_length > c.data.lag, "data.trajectory_length", "must exceed data.lag");
  const auto& m = c.method.kind;
  require(m == "tica" || m == "ktica" || m == "srv", "method.kind", "must be tica, ktica or srv");
  require(c.method.n_modes >= 1, "method.n_modes", "must be >= 1");
  require(c.tica.epsilon >= 0.0 && std::isfinite(c.tica.epsilon), "tica.epsilon", "must be >= 0");
  require(c.ktica.bandwidth > 0.0 && std::isfinite(c.ktica.bandwidth), "ktica.bandwidth", "must be > 0");
  require(c.ktica.landmarks >= c.method.n_modes, "ktica.landmarks", "must be >= method.n_modes");
  require(c.ktica.epsilon >= 0.0 && std::isfinite(c.ktica.epsilon), "ktica.epsilon", "must be >= 0");
  require(c.srv.activation == "tanh" || c.srv.activation == "linear", "srv.activation",
          "must be tanh or linear");
  try {
    const MlpSpec spec = mlp_spec(c);
    spec.validate();
    train_config(c).validate(spec);
  } catch (const InvalidArgument& e) {
    throw InvalidArgument(std::string("configuration section 'srv': ") + e.what());
  }
  require(!c.sweep.bandwidths.empty(), "sweep.bandwidths", "must not be empty");
  for (double s : c.sweep.bandwidths) require(s > 0.0 && std::isfinite(s), "sweep.bandwidths", "entries must be > 0");
  require(!c.sweep.landmarks.empty(), "sweep.landmarks", "must not be empty");
  for (int l : c.sweep.landmarks) require(l >= c.method.n_modes, "sweep.landmarks", "entries must be >= method.n_modes");
  require(c.sweep.test_length > c.data.lag, "sweep.test_length", "must exceed data.lag");
  require(!c.output.directory.empty(), "output.directory", "must not be empty");
}

std::string dump_config(const RunConfig& c) {
  const TrainConfig& t = c.srv.training;
  json doc = {
      {"system", {{"kind", c.system.kind}, {"bins", c.system.bins}, {"domain", c.system.domain}}},
      {"data", {{"lag", c.data.lag}, {"trajectory_length", c.data.trajectory_length}, {"seed", c.data.seed}}},
      {"method", {{"kind", c.method.kind}, {"n_modes", c.method.n_modes}}},
      {"tica", {{"epsilon", c.tica.epsilon}}},
      {"ktica",
       {{"bandwidth", c.ktica.bandwidth},
        {"landmarks", c.ktica.landmarks},
        {"seed", c.ktica.seed},
        {"epsilon", c.ktica.epsilon}}},
      {"srv",
       {{"layers", c.srv.layers},
        {"activation", c.srv.activation},
        {"learning_rate", t.learning_rate},
        {"beta1", t.beta1},
        {"beta2", t.beta2},
        {"adam_epsilon", t.adam_epsilon},
        {"batch_size", t.batch_size},
        {"max_epochs", t.max_epochs},
        {"patience", t.patience},
        {"validation_fraction", t.validation_fraction},
        {"seed", t.seed},
        {"loss", t.loss == LossKind::Vamp2 ? "vamp2" : "timescale_sum"},
        {"epsilon", t.epsilon}}},
      {"sweep",
       {{"bandwidths", c.sweep.bandwidths},
        {"landmarks", c.sweep.landmarks},
        {"test_length", c.sweep.test_length},
        {"test_seed", c.sweep.test_seed}}},
      {"output", {{"directory", c.output.directory}}}};
  return doc.dump(2) + "\n";
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Slow-mode estimation on discrete toy systems"};
  app.require_subcommand(1);
  Options o;

  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "JSON run configuration");
    sub->add_option("--out", o.out_dir, "output directory (overrides output.directory)");
  };
  auto* generate = app.add_subcommand("generate", "sample a trajectory and write the exact spectrum");
  add_common(generate);
  auto* fit = app.add_subcommand("fit", "fit the configured method to trajectories");
  add_common(fit);
  fit->add_option("--traj", o.traj_paths, "trajectory CSV (repeatable)");
  auto* evaluate = app.add_subcommand("evaluate", "projection, held-out loss and CK reports");
  add_common(evaluate);
  evaluate->add_option("--traj", o.traj_paths, "trajectory CSV (repeatable)");
  evaluate->add_option("--model", o.model_path, "model file from fit");
  evaluate->add_option("--oracle", o.oracle_path, "oracle CSV from generate");
  evaluate->add_option("--ck", o.ck, "comma-separated lag multipliers");
  auto* sweep = app.add_subcommand("sweep", "kTICA bandwidth x landmark held-out sweep");
  add_common(sweep);
  sweep->add_option("--traj", o.traj_paths, "training trajectory CSV (repeatable)");
  auto* config = app.add_subcommand("config", "configuration utilities");
  config->require_subcommand(1);
  auto* dump = config->add_subcommand("dump-defaults", "print the default configuration");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (generate->parsed()) cmd_generate(o, out);
    else if (fit->parsed()) cmd_fit(o, out);
    else if (evaluate->parsed()) cmd_evaluate(o, out);
    else if (sweep->parsed()) cmd_sweep(o, out);
    else if (dump->parsed()) out << dump_config(RunConfig{});
    return kOk;
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << '\n';
    return kConfigError;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << '\n';
    return kIoError;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kNumericError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kNumericError;
  }
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace slowmodes::cli
