#include "slowmodes/io.hpp"

#include <json.hpp>

#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace slowmodes::io {

namespace {

using nlohmann::json;

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string::size_type start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.push_back(line.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

double parse_double(const std::string& token, const fs::path& path, Index line) {
  double value = 0.0;
  const char* first = token.data();
  const char* last = token.data() + token.size();
  while (first < last && *first == ' ') ++first;
  while (last > first && (last[-1] == ' ' || last[-1] == '\r')) --last;
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    throw IoError(path.string() + ":" + std::to_string(line) + ": cannot parse number '" + token +
                  "'");
  }
  return value;
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(path, mode);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

// Non-finite numbers are written as strings so the document stays valid JSON.
json number(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

double as_double(const json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
  }
  throw IoError("expected a number in model document");
}

json vector_json(const Vector& v) {
  json arr = json::array();
  for (Index i = 0; i < v.size(); ++i) arr.push_back(number(v[i]));
  return arr;
}

Vector vector_from(const json& j) {
  Vector v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Index>(i)] = as_double(j[i]);
  return v;
}

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Index c = 0; c < m.cols(); ++c) row.push_back(number(m(r, c)));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from(const json& j, Index cols_if_empty = 0) {
  const auto rows = static_cast<Index>(j.size());
  const Index cols = rows > 0 ? static_cast<Index>(j[0].size()) : cols_if_empty;
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    if (static_cast<Index>(j[r].size()) != cols) throw IoError("ragged matrix in model document");
    for (Index c = 0; c < cols; ++c) m(r, c) = as_double(j[r][c]);
  }
  return m;
}

const char* loss_name(LossKind kind) {
  return kind == LossKind::Vamp2 ? "vamp2" : "timescale_sum";
}

LossKind loss_from(const std::string& name) {
  if (name == "vamp2") return LossKind::Vamp2;
  if (name == "timescale_sum") return LossKind::TimescaleSum;
  throw IoError("unknown loss kind '" + name + "'");
}

json config_json(const TrainConfig& c) {
  return {{"lag", c.lag},
          {"n_modes", c.n_modes},
          {"learning_rate", c.learning_rate},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_epsilon", c.adam_epsilon},
          {"batch_size", c.batch_size},
          {"max_epochs", c.max_epochs},
          {"patience", c.patience},
          {"validation_fraction", c.validation_fraction},
          {"seed", c.seed},
          {"loss", loss_name(c.loss)},
          {"epsilon", c.epsilon}};
}

TrainConfig config_from(const json& j) {
  TrainConfig c;
  c.lag = j.at("lag").get<int>();
  c.n_modes = j.at("n_modes").get<int>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.adam_epsilon = j.at("adam_epsilon").get<double>();
  c.batch_size = j.at("batch_size").get<Index>();
  c.max_epochs = j.at("max_epochs").get<int>();
  c.patience = j.at("patience").get<int>();
  c.validation_fraction = j.at("validation_fraction").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.loss = loss_from(j.at("loss").get<std::string>());
  c.epsilon = j.at("epsilon").get<double>();
  return c;
}

json to_json(const LinearModel& m) {
  return {{"method", "tica"},
          {"lag", m.lag},
          {"mean", vector_json(m.mean)},
          {"coefficients", matrix_json(m.coefficients)},
          {"eigenvalues", vector_json(m.eigenvalues)}};
}

json to_json(const KticaModel& m) {
  return {{"method", "ktica"},
          {"lag", m.lag},
          {"bandwidth", m.kernel.bandwidth},
          {"landmarks", matrix_json(m.landmarks.points)},
          {"landmark_seed", m.landmarks.seed},
          {"inertia", number(m.landmarks.inertia)},
          {"kmeans_iterations", m.landmarks.iterations},
          {"whitening", matrix_json(m.projection)},
          {"feature_mean", vector_json(m.feature_mean)},
          {"coefficients", matrix_json(m.coefficients)},
          {"eigenvalues", vector_json(m.eigenvalues)}};
}

json to_json(const SrvModel& m) {
  json weights = json::array();
  json biases = json::array();
  for (std::size_t l = 0; l < m.params.weights.size(); ++l) {
    weights.push_back(matrix_json(m.params.weights[l]));
    biases.push_back(vector_json(m.params.biases[l]));
  }
  json trace = json::array();
  for (const auto& r : m.trace) {
    trace.push_back({{"epoch", r.epoch},
                     {"train_loss", number(r.train_loss)},
                     {"validation_loss", number(r.validation_loss)},
                     {"best_validation_loss", number(r.best_validation_loss)},
                     {"skipped_steps", r.skipped_steps}});
  }
  return {{"method", "srv"},
          {"lag", m.lag},
          {"spec",
           {{"layers", m.spec.layers},
            {"activation", m.spec.hidden_activation == Activation::Tanh ? "tanh" : "linear"}}},
          {"weights", std::move(weights)},
          {"biases", std::move(biases)},
          {"output_mean", vector_json(m.output_mean)},
          {"mixing", matrix_json(m.mixing)},
          {"eigenvalues", vector_json(m.eigenvalues)},
          {"config", config_json(m.config)},
          {"trace", std::move(trace)}};
}

LinearModel linear_from(const json& j) {
  LinearModel m;
  m.lag = j.at("lag").get<int>();
  m.mean = vector_from(j.at("mean"));
  m.coefficients = matrix_from(j.at("coefficients"));
  m.eigenvalues = vector_from(j.at("eigenvalues"));
  return m;
}

KticaModel ktica_from(const json& j) {
  KticaModel m;
  m.lag = j.at("lag").get<int>();
  m.kernel.bandwidth = j.at("bandwidth").get<double>();
  m.landmarks.points = matrix_from(j.at("landmarks"));
  m.landmarks.seed = j.at("landmark_seed").get<std::uint64_t>();
  m.landmarks.inertia = as_double(j.at("inertia"));
  m.landmarks.iterations = j.at("kmeans_iterations").get<int>();
  m.projection = matrix_from(j.at("whitening"));
  m.feature_mean = vector_from(j.at("feature_mean"));
  m.coefficients = matrix_from(j.at("coefficients"));
  m.eigenvalues = vector_from(j.at("eigenvalues"));
  return m;
}

SrvModel srv_from(const json& j) {
  SrvModel m;
  m.lag = j.at("lag").get<int>();
  m.spec.layers = j.at("spec").at("layers").get<std::vector<int>>();
  const auto act = j.at("spec").at("activation").get<std::string>();
  if (act != "tanh" && act != "linear") throw IoError("unknown activation '" + act + "'");
  m.spec.hidden_activation = act == "tanh" ? Activation::Tanh : Activation::Linear;
  m.spec.validate();
  const auto& weights = j.at("weights");
  const auto& biases = j.at("biases");
  if (static_cast<int>(weights.size()) != m.spec.depth() ||
      static_cast<int>(biases.size()) != m.spec.depth()) {
    throw IoError("layer count does not match network spec");
  }
  for (int l = 0; l < m.spec.depth(); ++l) {
    Matrix w = matrix_from(weights[l], m.spec.layers[l]);
    Vector b = vector_from(biases[l]);
    if (w.rows() != m.spec.layers[l + 1] || w.cols() != m.spec.layers[l] ||
        b.size() != m.spec.layers[l + 1]) {
      throw IoError("layer " + std::to_string(l) + " has the wrong shape");
    }
    m.params.weights.push_back(std::move(w));
    m.params.biases.push_back(std::move(b));
  }
  m.output_mean = vector_from(j.at("output_mean"));
  m.mixing = matrix_from(j.at("mixing"));
  m.eigenvalues = vector_from(j.at("eigenvalues"));
  m.config = config_from(j.at("config"));
  for (const auto& r : j.at("trace")) {
    EpochRecord rec;
    rec.epoch = r.at("epoch").get<int>();
    rec.train_loss = as_double(r.at("train_loss"));
    rec.validation_loss = as_double(r.at("validation_loss"));
    rec.best_validation_loss = as_double(r.at("best_validation_loss"));
    rec.skipped_steps = r.at("skipped_steps").get<int>();
    m.trace.push_back(rec);
  }
  return m;
}

void write_csv_row(std::ostream& out, std::initializer_list<std::string> cells) {
  bool first = true;
  for (const auto& c : cells) {
    if (!first) out << ',';
    out << c;
    first = false;
  }
  out << '\n';
}

}  // namespace

std::string format_double(double value) {
  std::array<char, 64> buf{};
  const auto [ptr, ec] =
      std::to_chars(buf.data(), buf.data() + buf.size(), value, std::chars_format::general, 17);
  if (ec != std::errc()) throw IoError("number formatting failed");
  return {buf.data(), ptr};
}

void write_trajectory_csv(const fs::path& path, const Trajectory& trajectory) {
  auto out = open_out(path);
  out << 't';
  for (int c = 0; c < trajectory.dimension(); ++c) out << ",x" << c;
  out << '\n';
  for (Index t = 0; t < trajectory.length(); ++t) {
    out << t;
    for (int c = 0; c < trajectory.dimension(); ++c) out << ',' << format_double(trajectory.frames(t, c));
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

Trajectory read_trajectory_csv(const fs::path& path) {
  const auto lines = read_lines(path);
  if (lines.empty()) throw IoError(path.string() + ": empty trajectory file");
  const auto header = split(lines[0], ',');
  if (header.size() < 2 || header[0] != "t") {
    throw IoError(path.string() + ": header must start with t,x0");
  }
  for (std::size_t c = 1; c < header.size(); ++c) {
    if (header[c] != "x" + std::to_string(c - 1)) {
      throw IoError(path.string() + ": unexpected column '" + header[c] + "'");
    }
  }
  const auto dim = static_cast<Index>(header.size() - 1);
  Trajectory traj;
  traj.frames.resize(static_cast<Index>(lines.size() - 1), dim);
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto cells = split(lines[r], ',');
    if (cells.size() != header.size()) {
      throw IoError(path.string() + ":" + std::to_string(r + 1) + ": wrong number of columns");
    }
    for (Index c = 0; c < dim; ++c) {
      traj.frames(static_cast<Index>(r - 1), c) =
          parse_double(cells[static_cast<std::size_t>(c) + 1], path, static_cast<Index>(r + 1));
    }
  }
  return traj;
}

void write_oracle_csv(const fs::path& path, const SpectrumOracle& oracle) {
  auto out = open_out(path);
  out << "bin,pi";
  for (Index i = 0; i < oracle.eigenfunctions.cols(); ++i) out << ",psi" << i;
  out << '\n';
  for (Index b = 0; b < oracle.stationary.size(); ++b) {
    out << b << ',' << format_double(oracle.stationary[b]);
    for (Index i = 0; i < oracle.eigenfunctions.cols(); ++i) {
      out << ',' << format_double(oracle.eigenfunctions(b, i));
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

SpectrumOracle read_oracle_csv(const fs::path& path) {
  const auto lines = read_lines(path);
  if (lines.empty()) throw IoError(path.string() + ": empty oracle file");
  const auto header = split(lines[0], ',');
  if (header.size() < 3 || header[0] != "bin" || header[1] != "pi") {
    throw IoError(path.string() + ": header must start with bin,pi,psi0");
  }
  const auto modes = static_cast<Index>(header.size() - 2);
  const auto bins = static_cast<Index>(lines.size() - 1);
  SpectrumOracle oracle;
  oracle.stationary.resize(bins);
  oracle.eigenfunctions.resize(bins, modes);
  for (Index r = 0; r < bins; ++r) {
    const auto cells = split(lines[static_cast<std::size_t>(r) + 1], ',');
    if (cells.size() != header.size()) {
      throw IoError(path.string() + ":" + std::to_string(r + 2) + ": wrong number of columns");
    }
    oracle.stationary[r] = parse_double(cells[1], path, r + 2);
    for (Index i = 0; i < modes; ++i) {
      oracle.eigenfunctions(r, i) = parse_double(cells[static_cast<std::size_t>(i) + 2], path, r + 2);
    }
  }
  return oracle;
}

void write_transition_binary(const fs::path& path, const Matrix& P) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  auto out = open_out(path, std::ios::out | std::ios::binary);
  const auto n = static_cast<std::uint32_t>(P.rows());
  out.write("SLOW", 4);
  out.write(reinterpret_cast<const char*>(&n), sizeof n);
  for (Index r = 0; r < P.rows(); ++r) {
    for (Index c = 0; c < P.cols(); ++c) {
      const double v = P(r, c);
      out.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
  }
  if (!out) throw IoError("write failed for " + path.string());
}

Matrix read_transition_binary(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::array<char, 4> magic{};
  std::uint32_t n = 0;
  in.read(magic.data(), 4);
  in.read(reinterpret_cast<char*>(&n), sizeof n);
  if (!in || std::memcmp(magic.data(), "SLOW", 4) != 0) {
    throw IoError(path.string() + ": not a transition matrix file");
  }
  Matrix P(n, n);
  for (Index r = 0; r < P.rows(); ++r) {
    for (Index c = 0; c < P.cols(); ++c) {
      double v = 0.0;
      in.read(reinterpret_cast<char*>(&v), sizeof v);
      P(r, c) = v;
    }
  }
  if (!in) throw IoError(path.string() + ": truncated transition matrix");
  return P;
}

std::string method_name(const AnyModel& model) {
  return std::visit(
      [](const auto& m) -> std::string {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, LinearModel>) return "tica";
        if constexpr (std::is_same_v<T, KticaModel>) return "ktica";
        return "srv";
      },
      model);
}

int model_lag(const AnyModel& model) {
  return std::visit([](const auto& m) { return m.lag; }, model);
}

Vector model_eigenvalues(const AnyModel& model) {
  return std::visit([](const auto& m) -> Vector { return m.eigenvalues; }, model);
}

int model_input_dim(const AnyModel& model) {
  return std::visit(
      [](const auto& m) -> int {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, LinearModel>) return static_cast<int>(m.mean.size());
        if constexpr (std::is_same_v<T, KticaModel>) return static_cast<int>(m.landmarks.points.cols());
        if constexpr (std::is_same_v<T, SrvModel>) return m.spec.input_dim();
      },
      model);
}

Matrix transform(const AnyModel& model, const Matrix& X) {
  return std::visit(
      [&](const auto& m) -> Matrix {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, LinearModel>) return m.transform(X);
        if constexpr (std::is_same_v<T, KticaModel>) return transform_ktica(m, X);
        if constexpr (std::is_same_v<T, SrvModel>) return srv_transform(m, X);
      },
      model);
}

std::string serialize_model(const AnyModel& model) {
  const json doc = std::visit([](const auto& m) { return to_json(m); }, model);
  return doc.dump(1) + "\n";
}

AnyModel deserialize_model(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
    const auto method = doc.at("method").get<std::string>();
    if (method == "tica") return linear_from(doc);
    if (method == "ktica") return ktica_from(doc);
    if (method == "srv") return srv_from(doc);
    throw IoError("unknown model method '" + method + "'");
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed model document: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw IoError(std::string("malformed model document: ") + e.what());
  }
}

void save_model(const fs::path& path, const AnyModel& model) {
  write_text(path, serialize_model(model));
}

AnyModel load_model(const fs::path& path) { return deserialize_model(read_text(path)); }

void write_spectrum_csv(const fs::path& path, const Vector& eigenvalues, int lag) {
  auto out = open_out(path);
  out << "mode,eigenvalue,timescale\n";
  for (Index i = 0; i < eigenvalues.size(); ++i) {
    write_csv_row(out, {std::to_string(i + 1), format_double(eigenvalues[i]),
                        format_double(implied_timescale(eigenvalues[i], lag).value)});
  }
  if (!out) throw IoError("write failed for " + path.string());
}

void write_projection_csv(const fs::path& path, const std::vector<Projection>& projections) {
  auto out = open_out(path);
  out << "mode,signed,absolute\n";
  for (std::size_t i = 0; i < projections.size(); ++i) {
    write_csv_row(out, {std::to_string(i + 1), format_double(projections[i].signed_value),
                        format_double(projections[i].absolute)});
  }
  if (!out) throw IoError("write failed for " + path.string());
}

void write_ck_csv(const fs::path& path, const CkReport& report) {
  auto out = open_out(path);
  out << "mode,k,predicted_t,estimated_t,rel_dev\n";
  for (const auto& r : report.rows) {
    write_csv_row(out, {std::to_string(r.mode), std::to_string(r.k), format_double(r.predicted_t),
                        format_double(r.estimated_t), format_double(r.rel_dev)});
  }
  if (!out) throw IoError("write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace slowmodes::io
