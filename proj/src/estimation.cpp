#include "slowmodes/estimation.hpp"

#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>
#include <unordered_map>

namespace slowmodes {

namespace {

void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw InvalidArgument(std::string(what) + " contains non-finite values");
}

Matrix symmetrized(const Matrix& m) { return 0.5 * (m + m.transpose()); }

std::string row_key(const Matrix& X, Index r) {
  std::string key(static_cast<std::size_t>(X.cols()) * sizeof(double), '\0');
  for (Index c = 0; c < X.cols(); ++c) {
    const double v = X(r, c);
    std::memcpy(key.data() + c * sizeof(double), &v, sizeof(double));
  }
  return key;
}

}  // namespace

LaggedDataset make_lagged_pairs(std::span<const Trajectory> trajectories, int lag) {
  if (lag < 1) throw InvalidArgument("lag must be >= 1, got " + std::to_string(lag));
  if (trajectories.empty()) throw InvalidArgument("no trajectories given");
  const int dim = trajectories.front().dimension();
  Index total = 0;
  for (const auto& traj : trajectories) {
    if (traj.dimension() != dim) throw InvalidArgument("trajectories differ in dimension");
    total += std::max<Index>(0, traj.length() - lag);
  }
  if (total == 0) {
    throw InvalidArgument("no trajectory is longer than the lag time " + std::to_string(lag));
  }

  LaggedDataset data;
  data.lag = lag;
  data.n_trajectories = static_cast<int>(trajectories.size());
  data.heads.resize(total, dim);
  data.tails.resize(total, dim);
  Index row = 0;
  for (const auto& traj : trajectories) {
    const Index n = traj.length() - lag;
    if (n <= 0) continue;
    data.heads.middleRows(row, n) = traj.frames.topRows(n);
    data.tails.middleRows(row, n) = traj.frames.bottomRows(n);
    row += n;
  }
  return data;
}

CorrelationPair estimate_correlations(const Matrix& heads, const Matrix& tails, bool symmetrize) {
  if (heads.rows() != tails.rows() || heads.cols() != tails.cols()) {
    throw InvalidArgument("heads and tails differ in shape");
  }
  const Index n = heads.rows();
  if (n < 2) throw InvalidArgument("at least two pairs are needed to estimate correlations");
  require_finite(heads, "heads");
  require_finite(tails, "tails");

  CorrelationPair out;
  out.n_samples = n;
  out.symmetrized = symmetrize;
  out.mean = (heads.colwise().sum() + tails.colwise().sum()).transpose() / (2.0 * n);
  const Matrix a = heads.rowwise() - out.mean.transpose();
  const Matrix b = tails.rowwise() - out.mean.transpose();
  const Matrix c0 = a.transpose() * b / static_cast<double>(n);
  if (symmetrize) {
    out.C = symmetrized(c0);
    out.Q = symmetrized((a.transpose() * a + b.transpose() * b) / (2.0 * n));
  } else {
    out.C = c0;
    out.Q = symmetrized(a.transpose() * a / static_cast<double>(n));
  }
  return out;
}

CorrelationPair estimate_correlations(const LaggedDataset& data, bool symmetrize) {
  return estimate_correlations(data.heads, data.tails, symmetrize);
}

TabulatedRows tabulate_rows(const Matrix& X) {
  TabulatedRows out;
  out.index.resize(X.rows());
  std::unordered_map<std::string, Index> lookup;
  std::vector<Index> first_row;
  for (Index r = 0; r < X.rows(); ++r) {
    auto [it, inserted] = lookup.try_emplace(row_key(X, r), static_cast<Index>(first_row.size()));
    if (inserted) {
      first_row.push_back(r);
      out.counts.push_back(0);
    }
    out.index[r] = it->second;
    ++out.counts[it->second];
  }
  out.states.resize(static_cast<Index>(first_row.size()), X.cols());
  for (std::size_t s = 0; s < first_row.size(); ++s) {
    out.states.row(static_cast<Index>(s)) = X.row(first_row[s]);
  }
  return out;
}

TabulatedPairs tabulate_pairs(const Matrix& heads, const Matrix& tails) {
  if (heads.rows() != tails.rows() || heads.cols() != tails.cols()) {
    throw InvalidArgument("heads and tails differ in shape");
  }
  Matrix stacked(heads.rows() + tails.rows(), heads.cols());
  stacked << heads, tails;
  TabulatedRows rows = tabulate_rows(stacked);
  TabulatedPairs out;
  out.states = std::move(rows.states);
  out.heads.assign(rows.index.begin(), rows.index.begin() + heads.rows());
  out.tails.assign(rows.index.begin() + heads.rows(), rows.index.end());
  return out;
}

CorrelationPair estimate_correlations(const TabulatedPairs& pairs, const Matrix& features,
                                      bool symmetrize) {
  const Index n = pairs.size();
  const Index states = pairs.states.rows();
  if (features.rows() != states) {
    throw InvalidArgument("features must have one row per tabulated state");
  }
  if (n < 2) throw InvalidArgument("at least two pairs are needed to estimate correlations");
  require_finite(features, "features");

  Vector head_counts = Vector::Zero(states);
  Vector tail_counts = Vector::Zero(states);
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(static_cast<std::size_t>(n));
  for (Index k = 0; k < n; ++k) {
    head_counts[pairs.heads[k]] += 1.0;
    tail_counts[pairs.tails[k]] += 1.0;
    triplets.emplace_back(pairs.heads[k], pairs.tails[k], 1.0);
  }
  Eigen::SparseMatrix<double> counts(states, states);
  counts.setFromTriplets(triplets.begin(), triplets.end());

  CorrelationPair out;
  out.n_samples = n;
  out.symmetrized = symmetrize;
  out.mean = features.transpose() * (head_counts + tail_counts) / (2.0 * n);
  const Matrix centered = features.rowwise() - out.mean.transpose();
  const Matrix c0 = centered.transpose() * (counts * centered) / static_cast<double>(n);
  const Matrix qh = centered.transpose() * head_counts.asDiagonal() * centered;
  if (symmetrize) {
    const Matrix qt = centered.transpose() * tail_counts.asDiagonal() * centered;
    out.C = symmetrized(c0);
    out.Q = symmetrized((qh + qt) / (2.0 * n));
  } else {
    out.C = c0;
    out.Q = symmetrized(qh / static_cast<double>(n));
  }
  return out;
}

GevSolution solve_gev(const Matrix& C, const Matrix& Q, int n_modes, double epsilon) {
  const Index d = C.rows();
  if (C.cols() != d || Q.rows() != d || Q.cols() != d) {
    throw InvalidArgument("C and Q must be square matrices of equal size");
  }
  if (n_modes < 1 || n_modes > d) {
    throw InvalidArgument("n_modes must be in [1, " + std::to_string(d) + "], got " +
                          std::to_string(n_modes));
  }
  if (!(epsilon >= 0.0)) throw InvalidArgument("regularization must be non-negative");
  require_finite(C, "C");
  require_finite(Q, "Q");

  GevSolution out;
  out.epsilon = epsilon;
  double scale = Q.trace() / static_cast<double>(d);
  if (!(scale > 0.0)) scale = 1.0;
  out.shift = epsilon * scale;
  Matrix q_reg = Q;
  q_reg.diagonal().array() += out.shift;

  Eigen::LLT<Matrix> llt(q_reg);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("Cholesky factorization of Q failed after regularization (ill-conditioned Q)");
  }
  out.L = llt.matrixL();
  const auto lower = out.L.triangularView<Eigen::Lower>();

  // C~ = L^-1 C L^-T
  const Matrix left = lower.solve(C);
  Matrix whitened_c = lower.solve(left.transpose()).transpose();
  whitened_c = symmetrized(whitened_c);

  Eigen::SelfAdjointEigenSolver<Matrix> es(whitened_c);
  if (es.info() != Eigen::Success) throw NumericalError("symmetric eigensolver did not converge");

  out.spectrum = es.eigenvalues().reverse();
  out.eigenvalues = out.spectrum.head(n_modes);
  out.whitened = es.eigenvectors().rowwise().reverse().leftCols(n_modes);
  out.S = out.L.transpose().triangularView<Eigen::Upper>().solve(out.whitened);

  for (Index i = 0; i < n_modes; ++i) {
    Index arg = 0;
    out.S.col(i).cwiseAbs().maxCoeff(&arg);
    if (out.S(arg, i) < 0.0) {
      out.S.col(i) *= -1.0;
      out.whitened.col(i) *= -1.0;
    }
    const double lambda = out.eigenvalues[i];
    if (lambda < 0.0 || lambda > 1.0 + 1e-6) out.flagged.push_back(i);
  }
  return out;
}

GevSolution solve_gev(const CorrelationPair& corr, int n_modes, double epsilon) {
  if (!corr.symmetrized) throw InvalidArgument("solve_gev needs symmetrized correlations");
  return solve_gev(corr.C, corr.Q, n_modes, epsilon);
}

Matrix LinearModel::transform(const Matrix& X) const {
  if (X.cols() != mean.size()) throw InvalidArgument("input dimension does not match TICA model");
  return (X.rowwise() - mean.transpose()) * coefficients.transpose();
}

LinearModel fit_tica(std::span<const Trajectory> trajectories, int lag, int n_modes,
                     double epsilon) {
  const LaggedDataset data = make_lagged_pairs(trajectories, lag);
  const CorrelationPair corr = estimate_correlations(data, true);
  const GevSolution gev = solve_gev(corr, n_modes, epsilon);
  LinearModel model;
  model.mean = corr.mean;
  model.coefficients = gev.S.transpose();
  model.eigenvalues = gev.eigenvalues;
  model.lag = lag;
  return model;
}

Timescale implied_timescale(double eigenvalue, double lag) {
  if (!(lag > 0.0)) throw InvalidArgument("lag must be positive");
  if (eigenvalue >= 1.0) return {std::numeric_limits<double>::infinity(), TimescaleKind::Infinite};
  if (!(eigenvalue > 0.0)) {
    return {std::numeric_limits<double>::quiet_NaN(), TimescaleKind::Undefined};
  }
  return {-lag / std::log(eigenvalue), TimescaleKind::Finite};
}

std::vector<Timescale> implied_timescales(const Vector& eigenvalues, double lag) {
  std::vector<Timescale> out;
  out.reserve(static_cast<std::size_t>(eigenvalues.size()));
  for (Index i = 0; i < eigenvalues.size(); ++i) out.push_back(implied_timescale(eigenvalues[i], lag));
  return out;
}

}  // namespace slowmodes
