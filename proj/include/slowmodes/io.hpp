#pragma once

#include "slowmodes/diagnostics.hpp"
#include "slowmodes/estimation.hpp"
#include "slowmodes/ktica.hpp"
#include "slowmodes/srv.hpp"
#include "slowmodes/toy_models.hpp"

#include <filesystem>
#include <string>
#include <variant>
#include <vector>

namespace slowmodes::io {

namespace fs = std::filesystem;

/// Shortest text with 17 significant digits, independent of locale.
std::string format_double(double value);

/// CSV with header t,x0[,x1,...]; one frame per row.
void write_trajectory_csv(const fs::path& path, const Trajectory& trajectory);
Trajectory read_trajectory_csv(const fs::path& path);

/// CSV with header bin,pi,psi0,psi1,...
void write_oracle_csv(const fs::path& path, const SpectrumOracle& oracle);
/// Eigenvalues are not stored in the oracle file and come back empty.
SpectrumOracle read_oracle_csv(const fs::path& path);

/// Dense little-endian matrix: bytes "SLOW", u32 dimension, row-major f64.
void write_transition_binary(const fs::path& path, const Matrix& P);
Matrix read_transition_binary(const fs::path& path);

using AnyModel = std::variant<LinearModel, KticaModel, SrvModel>;

std::string method_name(const AnyModel& model);
int model_lag(const AnyModel& model);
Vector model_eigenvalues(const AnyModel& model);
int model_input_dim(const AnyModel& model);
/// Mode values of every row of X.
Matrix transform(const AnyModel& model, const Matrix& X);

/// Structured-text (JSON) model documents; doubles round-trip exactly.
std::string serialize_model(const AnyModel& model);
AnyModel deserialize_model(const std::string& text);
void save_model(const fs::path& path, const AnyModel& model);
AnyModel load_model(const fs::path& path);

/// mode,eigenvalue,timescale
void write_spectrum_csv(const fs::path& path, const Vector& eigenvalues, int lag);
/// mode,signed,absolute
void write_projection_csv(const fs::path& path, const std::vector<Projection>& projections);
/// mode,k,predicted_t,estimated_t,rel_dev
void write_ck_csv(const fs::path& path, const CkReport& report);

std::string read_text(const fs::path& path);
void write_text(const fs::path& path, const std::string& text);

}  // namespace slowmodes::io
