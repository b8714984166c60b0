#pragma once

#include "slowmodes/common.hpp"
#include "slowmodes/ktica.hpp"
#include "slowmodes/srv.hpp"

#include <array>
#include <iosfwd>
#include <string>
#include <vector>

namespace slowmodes::cli {

/// Stable process exit codes.
enum ExitCode : int { kOk = 0, kConfigError = 2, kIoError = 3, kNumericError = 4 };

struct SystemSection {
  std::string kind = "fourwell";  // fourwell | ring | file
  int bins = 100;                 // per axis
  std::array<double, 2> domain{-1.0, 1.0};
};

struct DataSection {
  int lag = 100;
  Index trajectory_length = 500000;
  std::uint64_t seed = 1;
};

struct MethodSection {
  std::string kind = "srv";  // tica | ktica | srv
  int n_modes = 3;
};

struct TicaSection {
  double epsilon = 0.0;
};

struct KticaSection {
  double bandwidth = 0.05;
  int landmarks = 200;
  std::uint64_t seed = 0;
  double epsilon = kDefaultRegularization;
};

struct SrvSection {
  std::vector<int> layers{1, 100, 100, 3};
  std::string activation = "tanh";  // tanh | linear
  TrainConfig training;             // lag and n_modes come from data and method
};

struct SweepSection {
  std::vector<double> bandwidths{0.02, 0.05, 0.2, 1.0};
  std::vector<int> landmarks{100, 400, 1000};
  Index test_length = 1000000;
  std::uint64_t test_seed = 2;
};

struct OutputSection {
  std::string directory = ".";
};

struct RunConfig {
  SystemSection system;
  DataSection data;
  MethodSection method;
  TicaSection tica;
  KticaSection ktica;
  SrvSection srv;
  SweepSection sweep;
  OutputSection output;
};

/// Parses a JSON document over the defaults. Unknown keys, wrong types and
/// out-of-range values raise InvalidArgument naming the offending key.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);
void validate_config(const RunConfig& config);
std::string dump_config(const RunConfig& config);

/// Runs one command line (args excludes the program name) and returns the exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace slowmodes::cli
