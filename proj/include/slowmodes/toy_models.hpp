#pragma once

#include "slowmodes/common.hpp"

#include <array>
#include <functional>
#include <vector>

namespace slowmodes {

/// Axis-aligned uniform grid with a potential tabulated at bin centers.
///
/// Bins are flattened with the x index running fastest: for a 2D grid of
/// shape (nx, ny) the bin (ix, iy) has flat index ix + nx * iy.
struct PotentialGrid {
  int dimension = 1;
  std::vector<int> shape;                         // bins per axis
  std::vector<std::array<double, 2>> bounds;      // [lo, hi] per axis
  Matrix centers;                                 // n_bins x dimension
  Vector potential;                               // k_BT units, per bin

  Index size() const { return centers.rows(); }
  double spacing(int axis) const {
    return (bounds[axis][1] - bounds[axis][0]) / shape[axis];
  }
  /// Flat index of the bin containing x (clamped to the domain).
  Index locate(const Eigen::Ref<const Eigen::RowVectorXd>& x) const;
};

struct TransitionMatrix {
  Matrix P;  // row-stochastic, P(i, j) = probability of moving i -> j
  int lag = 1;
  PotentialGrid grid;
};

/// Exact spectral data of a transition matrix. Column i of eigenfunctions is
/// psi_i evaluated on every bin; column 0 is the constant mode.
struct SpectrumOracle {
  Vector eigenvalues;
  Vector stationary;
  Matrix eigenfunctions;
  int lag = 1;
};

/// Ordered frames of one trajectory, one chain step per row.
struct Trajectory {
  Matrix frames;  // N x dimension
  std::uint64_t seed = 0;

  Index length() const { return frames.rows(); }
  int dimension() const { return static_cast<int>(frames.cols()); }
};

double potential_1d(double x);
double potential_ring(double x, double y);

/// Uniform grid on [lo, hi] with midpoint bin centers.
PotentialGrid make_grid_1d(int bins, double lo, double hi,
                           const std::function<double(double)>& potential);
PotentialGrid make_grid_2d(int bins_x, int bins_y, std::array<double, 2> x_bounds,
                           std::array<double, 2> y_bounds,
                           const std::function<double(double, double)>& potential);

PotentialGrid fourwell_grid(int bins = 100);
PotentialGrid ring_grid(int bins = 50);

TransitionMatrix build_transition_matrix_1d(const PotentialGrid& grid);
TransitionMatrix build_transition_matrix_2d(const PotentialGrid& grid);
/// Dispatches on grid.dimension.
TransitionMatrix build_transition_matrix(const PotentialGrid& grid);

TransitionMatrix matrix_power(const TransitionMatrix& tm, int k);

/// Top n_modes nontrivial eigenpairs plus the stationary one.
SpectrumOracle reference_spectrum(const TransitionMatrix& tm, int n_modes);

/// Stationary distribution of an irreducible row-stochastic matrix.
Vector stationary_distribution(const Matrix& P);

/// True when every state reaches every other through nonzero entries.
bool is_irreducible(const Matrix& P);

/// Starts in a uniformly random bin and propagates under tm (must be lag 1).
Trajectory sample_trajectory(const TransitionMatrix& tm, Index n_steps, std::uint64_t seed);

/// Bin index of every frame (nearest bin center).
std::vector<Index> assign_bins(const PotentialGrid& grid, const Matrix& frames);

}  // namespace slowmodes
