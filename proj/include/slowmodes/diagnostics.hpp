#pragma once

#include "slowmodes/common.hpp"
#include "slowmodes/estimation.hpp"
#include "slowmodes/toy_models.hpp"

#include <functional>
#include <span>
#include <vector>

namespace slowmodes {

/// Exact C and Q of a feature map tabulated on the bins of a discrete model:
/// Q = Z^T D Z, C = Z^T D P(lag) Z with D = diag(pi) and Z the pi-centered
/// features (bins x k).
CorrelationPair exact_correlations(const TransitionMatrix& propagator, const Vector& stationary,
                                   const Matrix& features);

struct Projection {
  double signed_value = 0.0;
  double absolute = 0.0;
};

/// <psi|psi_ref>_pi after pi-normalizing both modes.
Projection weighted_projection(const Vector& mode, const Vector& reference, const Vector& pi);

/// Maps frames (rows) to mode values (rows).
using ModeTransform = std::function<Matrix(const Matrix&)>;

/// Test loss -sum lambda^2 of a fixed transform on fresh trajectories. The
/// transform is evaluated once per distinct frame.
double held_out_vamp2(const ModeTransform& transform, std::span<const Trajectory> trajectories,
                      int lag, int n_modes, double epsilon = kDefaultRegularization);

struct CkRow {
  int mode = 0;  // 1-based nontrivial mode index
  int k = 1;
  double predicted_t = 0.0;
  double estimated_t = 0.0;
  double rel_dev = 0.0;
};

struct CkReport {
  int lag = 1;
  std::vector<int> multipliers;
  std::vector<CkRow> rows;
  std::vector<int> excluded_modes;  // modes with a non-positive eigenvalue
};

/// Eigenvalues of a model estimated at the given lag.
using EigenvalueFactory = std::function<Vector(int lag)>;

/// Chapman-Kolmogorov comparison. The prediction side -k tau / ln(lambda^k)
/// is evaluated in its reduced form -tau / ln(lambda), so it does not depend on
/// k; the estimate side comes from models refit at k * tau. For k = 1 the base
/// eigenvalues are reused.
CkReport ck_test(const Vector& base_eigenvalues, int lag, const EigenvalueFactory& factory,
                 std::span<const int> multipliers);

struct EmpiricalMsm {
  std::vector<Index> assignments;
  Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> counts;
  TransitionMatrix estimate;
  std::vector<Index> active;  // largest strongly connected set
  SpectrumOracle spectrum;    // on all bins; zero outside the active set
};

EmpiricalMsm fit_empirical_msm(const Trajectory& trajectory, const PotentialGrid& grid, int lag,
                               int n_modes);

double pearson_correlation(const Vector& a, const Vector& b);

}  // namespace slowmodes
