#pragma once

#include "slowmodes/common.hpp"
#include "slowmodes/toy_models.hpp"

#include <span>
#include <vector>

namespace slowmodes {

/// Time-lagged pairs (x_t, x_{t+lag}); row k of heads pairs with row k of tails.
struct LaggedDataset {
  Matrix heads;
  Matrix tails;
  int lag = 1;
  int n_trajectories = 0;

  Index size() const { return heads.rows(); }
};

/// Pairs from every trajectory in order, never crossing trajectory boundaries.
LaggedDataset make_lagged_pairs(std::span<const Trajectory> trajectories, int lag);

/// Lagged (C) and instantaneous (Q) covariances of mean-free features.
struct CorrelationPair {
  Matrix C;
  Matrix Q;
  Vector mean;  // pooled over heads and tails
  Index n_samples = 0;
  bool symmetrized = false;
};

/// Biased (1/N) estimator. With symmetrize set, C is (C0 + C0^T)/2 and Q pools
/// the head and tail second moments, which is the reversible estimator.
CorrelationPair estimate_correlations(const Matrix& heads, const Matrix& tails, bool symmetrize);
CorrelationPair estimate_correlations(const LaggedDataset& data, bool symmetrize);

/// Paired data compressed to its distinct rows.
///
/// Trajectories sampled from a discrete model revisit the same few thousand
/// coordinates, so evaluating a feature map once per distinct row and
/// weighting by pair counts is exact and far cheaper than a per-frame pass.
struct TabulatedPairs {
  Matrix states;             // distinct rows, in first-seen order
  std::vector<Index> heads;  // state index of each head
  std::vector<Index> tails;  // state index of each tail

  Index size() const { return static_cast<Index>(heads.size()); }
};

TabulatedPairs tabulate_pairs(const Matrix& heads, const Matrix& tails);

/// Distinct rows of X (first-seen order) and the state index of every row.
struct TabulatedRows {
  Matrix states;
  std::vector<Index> index;
  std::vector<Index> counts;  // occurrences of each state
};

TabulatedRows tabulate_rows(const Matrix& X);

/// Same estimator as estimate_correlations, given features of every distinct
/// state (features.rows() == pairs.states.rows()).
CorrelationPair estimate_correlations(const TabulatedPairs& pairs, const Matrix& features,
                                      bool symmetrize);

constexpr double kDefaultRegularization = 1e-6;

struct GevSolution {
  Vector eigenvalues;        // top n_modes, non-ascending
  Matrix S;                  // d x n_modes, column i is s_i
  Matrix L;                  // lower Cholesky factor of the regularized Q
  Matrix whitened;           // d x n_modes, column i is L^T s_i
  Vector spectrum;           // all d whitened eigenvalues, non-ascending
  double epsilon = 0.0;      // relative regularization requested
  double shift = 0.0;        // absolute diagonal shift applied to Q
  std::vector<Index> flagged;  // indices with eigenvalue < 0 or > 1 + 1e-6
};

/// Solves C s = lambda Q_reg s through Cholesky whitening of Q_reg.
///
/// Q_reg = Q + epsilon * (trace(Q) / d) * I, falling back to epsilon * I when
/// Q has zero trace. In every column of S the entry of largest magnitude is
/// positive. Throws NumericalError when Q_reg is not positive definite.
GevSolution solve_gev(const Matrix& C, const Matrix& Q, int n_modes,
                      double epsilon = kDefaultRegularization);
GevSolution solve_gev(const CorrelationPair& corr, int n_modes,
                      double epsilon = kDefaultRegularization);

/// Linear TICA model: psi_i(x) = a_i . (x - mean).
struct LinearModel {
  Vector mean;
  Matrix coefficients;  // n_modes x d, row i is a_i
  Vector eigenvalues;
  int lag = 1;

  Matrix transform(const Matrix& X) const;
};

LinearModel fit_tica(std::span<const Trajectory> trajectories, int lag, int n_modes,
                     double epsilon = 0.0);

enum class TimescaleKind { Finite, Infinite, Undefined };

struct Timescale {
  double value = 0.0;  // +inf for Infinite, NaN for Undefined
  TimescaleKind kind = TimescaleKind::Finite;

  bool negative_eigenvalue() const { return kind == TimescaleKind::Undefined; }
};

/// t = -lag / ln(lambda).
Timescale implied_timescale(double eigenvalue, double lag);
std::vector<Timescale> implied_timescales(const Vector& eigenvalues, double lag);

}  // namespace slowmodes
