#include "slowmodes/toy_models.hpp"

#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

namespace slowmodes {

namespace {

constexpr double kRowSumTol = 1e-10;
constexpr double kBalanceTol = 1e-10;

void check_row_stochastic(const Matrix& P, double tol) {
  for (Index i = 0; i < P.rows(); ++i) {
    const double s = P.row(i).sum();
    if (std::abs(s - 1.0) > tol) {
      throw NumericalError("transition matrix row " + std::to_string(i) + " sums to " +
                           std::to_string(s));
    }
  }
}

// Normalizes each row of the weight matrix in place.
void normalize_rows(Matrix& W) {
  for (Index i = 0; i < W.rows(); ++i) W.row(i) /= W.row(i).sum();
}

std::vector<Index> sorted_descending(const Vector& values) {
  std::vector<Index> order(values.size());
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return values[a] > values[b]; });
  return order;
}

bool reaches_all(const Matrix& P, bool transpose) {
  const Index n = P.rows();
  std::vector<char> seen(n, 0);
  std::vector<Index> stack{0};
  seen[0] = 1;
  Index visited = 1;
  while (!stack.empty()) {
    const Index i = stack.back();
    stack.pop_back();
    for (Index j = 0; j < n; ++j) {
      const double w = transpose ? P(j, i) : P(i, j);
      if (w > 0.0 && !seen[j]) {
        seen[j] = 1;
        ++visited;
        stack.push_back(j);
      }
    }
  }
  return visited == n;
}

}  // namespace

double potential_1d(double x) {
  const double x2 = x * x;
  const double x8 = x2 * x2 * x2 * x2;
  return 2.0 * (x8 + 0.8 * std::exp(-80.0 * x2) + 0.2 * std::exp(-80.0 * (x - 0.5) * (x - 0.5)) +
                0.5 * std::exp(-40.0 * (x + 0.5) * (x + 0.5)));
}

double potential_ring(double x, double y) {
  using std::numbers::pi;
  const double r = std::hypot(x, y);
  double theta = std::atan2(y, x);
  if (theta < 0.0) theta += 2.0 * pi;
  const double dr = std::abs(r - 0.8);

  // Cases in printed order; the first match wins.
  if (dr > 0.05) return 2.5 + 9.0 * (r - 0.8) * (r - 0.8);
  if (dr < 0.05 && std::abs(theta - pi / 2.0) < 0.25) return 0.5;
  if (dr < 0.05 && std::abs(theta - pi) < 0.25) return 1.3;
  if (dr < 0.05 && std::abs(theta - 3.0 * pi / 2.0) < 0.25) return 1.0;
  if (r > 0.4 && (theta < 0.05 || theta > 2.0 * pi - 0.05)) return 8.0;
  return 0.0;
}

Index PotentialGrid::locate(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
  Index flat = 0;
  Index stride = 1;
  for (int axis = 0; axis < dimension; ++axis) {
    const double h = spacing(axis);
    auto i = static_cast<Index>(std::floor((x[axis] - bounds[axis][0]) / h));
    i = std::clamp<Index>(i, 0, shape[axis] - 1);
    flat += i * stride;
    stride *= shape[axis];
  }
  return flat;
}

PotentialGrid make_grid_1d(int bins, double lo, double hi,
                           const std::function<double(double)>& potential) {
  if (bins < 2) throw InvalidArgument("bins must be >= 2, got " + std::to_string(bins));
  if (!(hi > lo)) throw InvalidArgument("domain upper bound must exceed lower bound");
  PotentialGrid grid;
  grid.dimension = 1;
  grid.shape = {bins};
  grid.bounds = {{lo, hi}};
  grid.centers.resize(bins, 1);
  grid.potential.resize(bins);
  const double h = (hi - lo) / bins;
  for (int i = 0; i < bins; ++i) {
    const double x = lo + (i + 0.5) * h;
    grid.centers(i, 0) = x;
    grid.potential[i] = potential(x);
    if (!std::isfinite(grid.potential[i])) {
      throw InvalidArgument("potential is not finite at bin " + std::to_string(i));
    }
  }
  return grid;
}

PotentialGrid make_grid_2d(int bins_x, int bins_y, std::array<double, 2> x_bounds,
                           std::array<double, 2> y_bounds,
                           const std::function<double(double, double)>& potential) {
  if (bins_x < 2 || bins_y < 2) {
    throw InvalidArgument("bins must be >= 2 per axis, got " + std::to_string(bins_x) + "x" +
                          std::to_string(bins_y));
  }
  if (!(x_bounds[1] > x_bounds[0]) || !(y_bounds[1] > y_bounds[0])) {
    throw InvalidArgument("domain upper bound must exceed lower bound");
  }
  PotentialGrid grid;
  grid.dimension = 2;
  grid.shape = {bins_x, bins_y};
  grid.bounds = {x_bounds, y_bounds};
  const Index n = Index{bins_x} * bins_y;
  grid.centers.resize(n, 2);
  grid.potential.resize(n);
  const double hx = (x_bounds[1] - x_bounds[0]) / bins_x;
  const double hy = (y_bounds[1] - y_bounds[0]) / bins_y;
  for (int iy = 0; iy < bins_y; ++iy) {
    for (int ix = 0; ix < bins_x; ++ix) {
      const Index b = ix + Index{bins_x} * iy;
      const double x = x_bounds[0] + (ix + 0.5) * hx;
      const double y = y_bounds[0] + (iy + 0.5) * hy;
      grid.centers(b, 0) = x;
      grid.centers(b, 1) = y;
      grid.potential[b] = potential(x, y);
      if (!std::isfinite(grid.potential[b])) {
        throw InvalidArgument("potential is not finite at bin " + std::to_string(b));
      }
    }
  }
  return grid;
}

PotentialGrid fourwell_grid(int bins) { return make_grid_1d(bins, -1.0, 1.0, potential_1d); }

PotentialGrid ring_grid(int bins) {
  return make_grid_2d(bins, bins, {-1.0, 1.0}, {-1.0, 1.0}, potential_ring);
}

TransitionMatrix build_transition_matrix_1d(const PotentialGrid& grid) {
  if (grid.dimension != 1) throw InvalidArgument("build_transition_matrix_1d needs a 1D grid");
  const Index n = grid.size();
  if (n < 2) throw InvalidArgument("bins must be >= 2");
  const Vector& v = grid.potential;
  Matrix W = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = std::max<Index>(0, i - 1); j <= std::min<Index>(n - 1, i + 1); ++j) {
      W(i, j) = (i == j) ? 1.0 : std::exp(-(v[j] - v[i]));
    }
  }
  normalize_rows(W);
  return {std::move(W), 1, grid};
}

TransitionMatrix build_transition_matrix_2d(const PotentialGrid& grid) {
  if (grid.dimension != 2 || grid.shape.size() != 2) {
    throw InvalidArgument("build_transition_matrix_2d needs a 2D grid");
  }
  const int nx = grid.shape[0];
  const int ny = grid.shape[1];
  if (grid.size() != Index{nx} * ny || grid.potential.size() != grid.size()) {
    throw InvalidArgument("grid is not rectangular: " + std::to_string(grid.size()) +
                          " bins for shape " + std::to_string(nx) + "x" + std::to_string(ny));
  }
  if (nx < 2 || ny < 2) throw InvalidArgument("bins must be >= 2 per axis");
  const Vector& v = grid.potential;
  const Index n = grid.size();
  Matrix W = Matrix::Zero(n, n);
  constexpr std::array<std::array<int, 2>, 4> kMoves{{{1, 0}, {-1, 0}, {0, 1}, {0, -1}}};
  for (int iy = 0; iy < ny; ++iy) {
    for (int ix = 0; ix < nx; ++ix) {
      const Index i = ix + Index{nx} * iy;
      W(i, i) = 1.0;
      for (const auto& [dx, dy] : kMoves) {
        const int jx = ix + dx;
        const int jy = iy + dy;
        if (jx < 0 || jx >= nx || jy < 0 || jy >= ny) continue;
        const Index j = jx + Index{nx} * jy;
        W(i, j) = std::exp(-(v[j] - v[i]));
      }
    }
  }
  normalize_rows(W);
  return {std::move(W), 1, grid};
}

TransitionMatrix build_transition_matrix(const PotentialGrid& grid) {
  return grid.dimension == 1 ? build_transition_matrix_1d(grid) : build_transition_matrix_2d(grid);
}

TransitionMatrix matrix_power(const TransitionMatrix& tm, int k) {
  if (k < 1) throw InvalidArgument("matrix power exponent must be >= 1, got " + std::to_string(k));
  const Index n = tm.P.rows();
  const Index nnz = (tm.P.array() != 0.0).count();
  // Local-move chains have a handful of entries per row; k sparse products
  // (k n nnz flops) then beat log2(k) dense squarings (~2 log2(k) n^3 flops).
  const double sparse_cost = static_cast<double>(k) * static_cast<double>(n) * static_cast<double>(nnz);
  const double dense_cost = 2.0 * std::log2(static_cast<double>(k) + 1.0) * std::pow(static_cast<double>(n), 3);
  if (k > 1 && sparse_cost < dense_cost) {
    const Eigen::SparseMatrix<double> sparse = tm.P.sparseView();
    Matrix result = tm.P;
    for (int step = 1; step < k; ++step) result = (result * sparse).eval();
    check_row_stochastic(result, kRowSumTol);
    return {std::move(result), tm.lag * k, tm.grid};
  }

  // Square-and-multiply over the bits of k.
  Matrix result;
  Matrix base = tm.P;
  bool have_result = false;
  for (int e = k;;) {
    if (e & 1) {
      if (have_result) {
        result = (result * base).eval();
      } else {
        result = base;
        have_result = true;
      }
    }
    e >>= 1;
    if (e == 0) break;
    base = (base * base).eval();
  }
  check_row_stochastic(result, kRowSumTol);
  return {std::move(result), tm.lag * k, tm.grid};
}

bool is_irreducible(const Matrix& P) {
  if (P.rows() == 0) return false;
  return reaches_all(P, false) && reaches_all(P, true);
}

Vector stationary_distribution(const Matrix& P) {
  const Index n = P.rows();
  // Solve pi^T (P - I) = 0 with sum(pi) = 1 replacing the last equation.
  Matrix A = P.transpose() - Matrix::Identity(n, n);
  A.row(n - 1).setOnes();
  Vector rhs = Vector::Zero(n);
  rhs[n - 1] = 1.0;
  Vector pi = A.partialPivLu().solve(rhs);
  if (!pi.allFinite()) throw NumericalError("stationary distribution solve failed");
  pi = pi.cwiseMax(0.0);
  pi /= pi.sum();
  return pi;
}

SpectrumOracle reference_spectrum(const TransitionMatrix& tm, int n_modes) {
  const Matrix& P = tm.P;
  const Index n = P.rows();
  if (P.cols() != n) throw InvalidArgument("transition matrix must be square");
  if (n_modes < 0 || n_modes + 1 > n) {
    throw InvalidArgument("n_modes must be in [0, " + std::to_string(n - 1) + "]");
  }
  check_row_stochastic(P, kRowSumTol);
  if (!is_irreducible(P)) throw NumericalError("transition matrix is reducible");

  const Vector pi = stationary_distribution(P);
  const Index keep = n_modes + 1;

  double imbalance = 0.0;
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) {
      imbalance = std::max(imbalance, std::abs(pi[i] * P(i, j) - pi[j] * P(j, i)));
    }
  }

  SpectrumOracle out;
  out.lag = tm.lag;
  out.stationary = pi;
  out.eigenvalues.resize(keep);
  out.eigenfunctions.resize(n, keep);

  if (imbalance < kBalanceTol) {
    // Detailed balance: D^{1/2} P D^{-1/2} is symmetric.
    const Vector sq = pi.cwiseSqrt();
    const Vector inv_sq = sq.cwiseInverse();
    Matrix M = sq.asDiagonal() * P * inv_sq.asDiagonal();
    M = (0.5 * (M + M.transpose())).eval();
    Eigen::SelfAdjointEigenSolver<Matrix> es(M);
    if (es.info() != Eigen::Success) throw NumericalError("symmetric eigensolver did not converge");
    const auto order = sorted_descending(es.eigenvalues());
    for (Index c = 0; c < keep; ++c) {
      out.eigenvalues[c] = es.eigenvalues()[order[c]];
      out.eigenfunctions.col(c) = inv_sq.asDiagonal() * es.eigenvectors().col(order[c]);
    }
  } else {
    Eigen::EigenSolver<Matrix> es(P);
    if (es.info() != Eigen::Success) throw NumericalError("eigensolver did not converge");
    const Vector re = es.eigenvalues().real();
    const auto order = sorted_descending(re);
    for (Index c = 0; c < keep; ++c) {
      out.eigenvalues[c] = re[order[c]];
      Vector psi = es.eigenvectors().col(order[c]).real();
      const double norm = std::sqrt((pi.array() * psi.array().square()).sum());
      if (norm == 0.0) throw NumericalError("degenerate eigenvector in non-reversible spectrum");
      out.eigenfunctions.col(c) = psi / norm;
    }
  }

  for (Index c = 0; c < keep; ++c) {
    Index arg = 0;
    (pi.array() * out.eigenfunctions.col(c).array()).abs().maxCoeff(&arg);
    if (out.eigenfunctions(arg, c) < 0.0) out.eigenfunctions.col(c) *= -1.0;
  }
  return out;
}

Trajectory sample_trajectory(const TransitionMatrix& tm, Index n_steps, std::uint64_t seed) {
  if (n_steps < 2) throw InvalidArgument("n_steps must be >= 2");
  if (tm.lag != 1) throw InvalidArgument("trajectories are sampled from the lag-1 matrix");
  const Matrix& P = tm.P;
  const Index n = P.rows();
  if (tm.grid.size() != n) throw InvalidArgument("transition matrix and grid disagree in size");

  // Sparse cumulative rows for inverse-CDF draws.
  std::vector<std::vector<Index>> targets(n);
  std::vector<std::vector<double>> cumulative(n);
  for (Index i = 0; i < n; ++i) {
    double acc = 0.0;
    for (Index j = 0; j < n; ++j) {
      if (P(i, j) > 0.0) {
        acc += P(i, j);
        targets[i].push_back(j);
        cumulative[i].push_back(acc);
      }
    }
  }

  Rng rng(seed);
  std::vector<Index> states(n_steps);
  states[0] = static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));
  for (Index t = 1; t < n_steps; ++t) {
    const Index i = states[t - 1];
    const double u = rng.uniform();
    const auto& cdf = cumulative[i];
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    const auto k = std::min<std::ptrdiff_t>(it - cdf.begin(),
                                            static_cast<std::ptrdiff_t>(cdf.size()) - 1);
    states[t] = targets[i][k];
  }

  Trajectory traj;
  traj.seed = seed;
  traj.frames.resize(n_steps, tm.grid.dimension);
  for (Index t = 0; t < n_steps; ++t) traj.frames.row(t) = tm.grid.centers.row(states[t]);
  return traj;
}

std::vector<Index> assign_bins(const PotentialGrid& grid, const Matrix& frames) {
  if (frames.cols() != grid.dimension) {
    throw InvalidArgument("frame dimension does not match grid dimension");
  }
  std::vector<Index> bins(frames.rows());
  for (Index t = 0; t < frames.rows(); ++t) bins[t] = grid.locate(frames.row(t));
  return bins;
}

}  // namespace slowmodes
