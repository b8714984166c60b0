#include "slowmodes/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace slowmodes {

namespace {

// Kosaraju over a dense adjacency; returns the members of the largest
// strongly connected component in ascending order.
// Largest strongly connected set of the transition graph; ties go to the set
// with the most visits.
std::vector<Index> largest_strong_component(const Matrix& adjacency, const Vector& visits) {
  const Index n = adjacency.rows();
  std::vector<char> seen(n, 0);
  std::vector<Index> finish;
  finish.reserve(n);
  for (Index root = 0; root < n; ++root) {
    if (seen[root]) continue;
    // Iterative DFS recording finish order.
    std::vector<std::pair<Index, Index>> stack{{root, 0}};
    seen[root] = 1;
    while (!stack.empty()) {
      auto& [v, next] = stack.back();
      bool descended = false;
      for (; next < n; ++next) {
        if (adjacency(v, next) > 0.0 && !seen[next]) {
          seen[next] = 1;
          const Index w = next++;
          stack.emplace_back(w, 0);
          descended = true;
          break;
        }
      }
      if (!descended) {
        finish.push_back(v);
        stack.pop_back();
      }
    }
  }
  std::vector<Index> component(n, -1);
  Index n_components = 0;
  for (auto it = finish.rbegin(); it != finish.rend(); ++it) {
    if (component[*it] >= 0) continue;
    std::vector<Index> stack{*it};
    component[*it] = n_components;
    while (!stack.empty()) {
      const Index v = stack.back();
      stack.pop_back();
      for (Index u = 0; u < n; ++u) {
        if (adjacency(u, v) > 0.0 && component[u] < 0) {
          component[u] = n_components;
          stack.push_back(u);
        }
      }
    }
    ++n_components;
  }
  std::vector<std::pair<Index, double>> rank(n_components, {0, 0.0});
  for (Index v = 0; v < n; ++v) {
    ++rank[component[v]].first;
    rank[component[v]].second += visits[v];
  }
  const auto best = std::max_element(rank.begin(), rank.end()) - rank.begin();
  std::vector<Index> members;
  for (Index v = 0; v < n; ++v) {
    if (component[v] == best) members.push_back(v);
  }
  return members;
}

}  // namespace

CorrelationPair exact_correlations(const TransitionMatrix& propagator, const Vector& stationary,
                                   const Matrix& features) {
  const Index n = propagator.P.rows();
  if (stationary.size() != n || features.rows() != n) {
    throw InvalidArgument("feature map must be defined on every bin");
  }
  CorrelationPair out;
  out.symmetrized = true;
  out.n_samples = 0;
  out.mean = features.transpose() * stationary;
  const Matrix centered = features.rowwise() - out.mean.transpose();
  const Matrix weighted = stationary.asDiagonal() * centered;
  out.Q = weighted.transpose() * centered;
  out.Q = 0.5 * (out.Q + out.Q.transpose());
  const Matrix c = weighted.transpose() * (propagator.P * centered);
  out.C = 0.5 * (c + c.transpose());
  return out;
}

Projection weighted_projection(const Vector& mode, const Vector& reference, const Vector& pi) {
  if (mode.size() != reference.size() || mode.size() != pi.size()) {
    throw InvalidArgument("weighted_projection: length mismatch");
  }
  const double a = std::sqrt((pi.array() * mode.array().square()).sum());
  const double b = std::sqrt((pi.array() * reference.array().square()).sum());
  if (!(a > 0.0) || !(b > 0.0)) throw InvalidArgument("weighted_projection: zero-norm mode");
  const double value = (pi.array() * mode.array() * reference.array()).sum() / (a * b);
  const double clamped = std::clamp(value, -1.0, 1.0);
  return {clamped, std::abs(clamped)};
}

double held_out_vamp2(const ModeTransform& transform, std::span<const Trajectory> trajectories,
                      int lag, int n_modes, double epsilon) {
  const LaggedDataset data = make_lagged_pairs(trajectories, lag);
  const TabulatedPairs pairs = tabulate_pairs(data.heads, data.tails);
  const Matrix modes = transform(pairs.states);
  if (modes.rows() != pairs.states.rows()) {
    throw InvalidArgument("transform returned the wrong number of rows");
  }
  const CorrelationPair corr = estimate_correlations(pairs, modes, true);
  const GevSolution gev = solve_gev(corr, n_modes, epsilon);
  return -gev.eigenvalues.squaredNorm();
}

CkReport ck_test(const Vector& base_eigenvalues, int lag, const EigenvalueFactory& factory,
                 std::span<const int> multipliers) {
  if (lag < 1) throw InvalidArgument("lag must be >= 1");
  CkReport report;
  report.lag = lag;
  report.multipliers.assign(multipliers.begin(), multipliers.end());
  for (int k : multipliers) {
    if (k < 1) throw InvalidArgument("Chapman-Kolmogorov multipliers must be >= 1");
  }
  for (Index i = 0; i < base_eigenvalues.size(); ++i) {
    if (!(base_eigenvalues[i] > 0.0)) report.excluded_modes.push_back(static_cast<int>(i) + 1);
  }
  for (int k : multipliers) {
    const Vector estimated = k == 1 ? base_eigenvalues : factory(k * lag);
    const Index modes = std::min(base_eigenvalues.size(), estimated.size());
    for (Index i = 0; i < modes; ++i) {
      const int mode = static_cast<int>(i) + 1;
      if (std::find(report.excluded_modes.begin(), report.excluded_modes.end(), mode) !=
          report.excluded_modes.end()) {
        continue;
      }
      CkRow row;
      row.mode = mode;
      row.k = k;
      row.predicted_t = implied_timescale(base_eigenvalues[i], lag).value;
      const Timescale est = implied_timescale(estimated[i], static_cast<double>(k) * lag);
      if (est.kind == TimescaleKind::Undefined) {
        report.excluded_modes.push_back(mode);
        continue;
      }
      row.estimated_t = est.value;
      row.rel_dev = std::abs(row.estimated_t - row.predicted_t) / std::abs(row.predicted_t);
      report.rows.push_back(row);
    }
  }
  return report;
}

EmpiricalMsm fit_empirical_msm(const Trajectory& trajectory, const PotentialGrid& grid, int lag,
                               int n_modes) {
  if (lag < 1) throw InvalidArgument("lag must be >= 1");
  const Index n = grid.size();
  EmpiricalMsm msm;
  msm.assignments = assign_bins(grid, trajectory.frames);
  msm.counts.setZero(n, n);
  for (Index t = 0; t + lag < trajectory.length(); ++t) {
    ++msm.counts(msm.assignments[t], msm.assignments[t + lag]);
  }

  Matrix P = msm.counts.cast<double>();
  for (Index i = 0; i < n; ++i) {
    const double total = P.row(i).sum();
    if (total == 0.0) {
      P(i, i) = 1.0;
    } else {
      P.row(i) /= total;
    }
  }
  msm.estimate = {P, lag, grid};

  const Matrix transitions = msm.counts.cast<double>();
  msm.active = largest_strong_component(transitions, transitions.rowwise().sum());
  const auto m = static_cast<Index>(msm.active.size());
  Matrix sub(m, m);
  for (Index a = 0; a < m; ++a) {
    for (Index b = 0; b < m; ++b) sub(a, b) = P(msm.active[a], msm.active[b]);
    sub.row(a) /= sub.row(a).sum();
  }
  const int modes = static_cast<int>(std::min<Index>(n_modes, m - 1));
  const SpectrumOracle local = reference_spectrum({sub, lag, grid}, modes);

  msm.spectrum.lag = lag;
  msm.spectrum.eigenvalues = local.eigenvalues;
  msm.spectrum.stationary = Vector::Zero(n);
  msm.spectrum.eigenfunctions = Matrix::Zero(n, local.eigenfunctions.cols());
  for (Index a = 0; a < m; ++a) {
    msm.spectrum.stationary[msm.active[a]] = local.stationary[a];
    msm.spectrum.eigenfunctions.row(msm.active[a]) = local.eigenfunctions.row(a);
  }
  return msm;
}

double pearson_correlation(const Vector& a, const Vector& b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw InvalidArgument("pearson_correlation needs two series of equal length >= 2");
  }
  const Vector da = a.array() - a.mean();
  const Vector db = b.array() - b.mean();
  const double na = da.norm();
  const double nb = db.norm();
  if (na == 0.0 || nb == 0.0) throw InvalidArgument("pearson_correlation: zero variance series");
  return std::clamp(da.dot(db) / (na * nb), -1.0, 1.0);
}

}  // namespace slowmodes
