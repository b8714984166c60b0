#include "slowmodes/ktica.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace slowmodes {

namespace {

constexpr double kRankCutoff = 1e-10;

double squared_distance(const Eigen::Ref<const Eigen::RowVectorXd>& a,
                        const Eigen::Ref<const Eigen::RowVectorXd>& b) {
  return (a - b).squaredNorm();
}

Index weighted_draw(const Vector& weights, Rng& rng) {
  const double total = weights.sum();
  const double u = rng.uniform() * total;
  double acc = 0.0;
  Index last_positive = -1;
  for (Index i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    acc += weights[i];
    last_positive = i;
    if (u < acc) return i;
  }
  return last_positive;
}

Matrix stack_frames(std::span<const Trajectory> trajectories) {
  Index total = 0;
  for (const auto& t : trajectories) total += t.length();
  Matrix all(total, trajectories.front().dimension());
  Index row = 0;
  for (const auto& t : trajectories) {
    all.middleRows(row, t.length()) = t.frames;
    row += t.length();
  }
  return all;
}

}  // namespace

double KernelSpec::operator()(const Eigen::Ref<const Eigen::RowVectorXd>& x,
                              const Eigen::Ref<const Eigen::RowVectorXd>& y) const {
  return std::exp(-squared_distance(x, y) / (2.0 * bandwidth * bandwidth));
}

Matrix gram_matrix(const Matrix& X, const Matrix& Y, const KernelSpec& kernel) {
  if (X.cols() != Y.cols()) throw InvalidArgument("gram_matrix: dimension mismatch");
  if (!(kernel.bandwidth > 0.0) || !std::isfinite(kernel.bandwidth)) {
    throw InvalidArgument("kernel bandwidth must be finite and positive");
  }
  Matrix K(X.rows(), Y.rows());
  for (Index j = 0; j < Y.rows(); ++j) {
    for (Index i = 0; i < X.rows(); ++i) K(i, j) = kernel(X.row(i), Y.row(j));
  }
  return K;
}

LandmarkSet kmeans_landmarks(const Matrix& data, int m, std::uint64_t seed, int max_iterations) {
  const TabulatedRows rows = tabulate_rows(data);
  Vector weights(rows.states.rows());
  for (Index s = 0; s < weights.size(); ++s) weights[s] = static_cast<double>(rows.counts[s]);
  return kmeans_landmarks(rows.states, weights, m, seed, max_iterations);
}

LandmarkSet kmeans_landmarks(const Matrix& points, const Vector& weights, int m,
                             std::uint64_t seed, int max_iterations) {
  const Index n = points.rows();
  if (weights.size() != n) throw InvalidArgument("one weight per point is required");
  if (m < 1) throw InvalidArgument("number of landmarks must be >= 1");
  if (m > n) {
    throw InvalidArgument("number of landmarks (" + std::to_string(m) +
                          ") exceeds the number of distinct data points (" + std::to_string(n) +
                          ")");
  }
  if (!points.allFinite()) throw InvalidArgument("clustering data contains non-finite values");

  Rng rng(seed);
  Matrix centers(m, points.cols());
  Vector nearest(n);

  // k-means++ seeding.
  centers.row(0) = points.row(weighted_draw(weights, rng));
  for (Index i = 0; i < n; ++i) nearest[i] = squared_distance(points.row(i), centers.row(0));
  for (int c = 1; c < m; ++c) {
    const Vector score = weights.cwiseProduct(nearest);
    const Index pick = score.sum() > 0.0 ? weighted_draw(score, rng) : Index{c};
    centers.row(c) = points.row(pick);
    for (Index i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], squared_distance(points.row(i), centers.row(c)));
    }
  }

  std::vector<Index> assignment(n, -1);
  Vector distance(n);
  int iteration = 0;
  for (; iteration < max_iterations; ++iteration) {
    bool changed = false;
    for (Index i = 0; i < n; ++i) {
      Index best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (Index c = 0; c < m; ++c) {
        const double d = squared_distance(points.row(i), centers.row(c));
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      distance[i] = best_d;
      if (assignment[i] != best) {
        assignment[i] = best;
        changed = true;
      }
    }
    if (!changed && iteration > 0) break;

    Matrix sums = Matrix::Zero(m, points.cols());
    Vector mass = Vector::Zero(m);
    for (Index i = 0; i < n; ++i) {
      sums.row(assignment[i]) += weights[i] * points.row(i);
      mass[assignment[i]] += weights[i];
    }
    for (Index c = 0; c < m; ++c) {
      if (mass[c] > 0.0) {
        centers.row(c) = sums.row(c) / mass[c];
        continue;
      }
      // Empty cluster: move it onto the point currently worst served.
      Index far = 0;
      distance.maxCoeff(&far);
      centers.row(c) = points.row(far);
      distance[far] = 0.0;
      assignment[far] = c;
    }
  }

  LandmarkSet out;
  out.points = std::move(centers);
  out.seed = seed;
  out.iterations = iteration;
  double inertia = 0.0;
  for (Index i = 0; i < n; ++i) {
    double best_d = std::numeric_limits<double>::infinity();
    for (Index c = 0; c < m; ++c) {
      best_d = std::min(best_d, squared_distance(points.row(i), out.points.row(c)));
    }
    inertia += weights[i] * best_d;
  }
  out.inertia = inertia;
  return out;
}

Vector KticaModel::point_features(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
  if (x.size() != landmarks.points.cols()) {
    throw InvalidArgument("input dimension does not match kTICA landmarks");
  }
  Vector k(landmarks.size());
  for (Index j = 0; j < landmarks.size(); ++j) k[j] = kernel(x, landmarks.points.row(j));
  return projection.transpose() * k;
}

Matrix KticaModel::features(const Matrix& X) const {
  Matrix out(X.rows(), rank());
  for (Index i = 0; i < X.rows(); ++i) out.row(i) = point_features(X.row(i)).transpose();
  return out;
}

KticaModel fit_ktica(std::span<const Trajectory> trajectories, int lag,
                     const LandmarkSet& landmarks, const KernelSpec& kernel, int n_modes,
                     double epsilon) {
  if (landmarks.size() < n_modes) {
    throw InvalidArgument("number of landmarks must be >= n_modes");
  }
  const Matrix k_mm = gram_matrix(landmarks.points, landmarks.points, kernel);
  Eigen::SelfAdjointEigenSolver<Matrix> es(k_mm);
  if (es.info() != Eigen::Success) throw NumericalError("landmark Gram eigensolver failed");
  const Vector w = es.eigenvalues().reverse();
  const Matrix u = es.eigenvectors().rowwise().reverse();
  const double top = w[0];
  Index rank = 0;
  while (rank < w.size() && top > 0.0 && w[rank] > kRankCutoff * top) ++rank;
  if (rank == 0) throw NumericalError("landmark Gram matrix has no usable eigenvalues");
  if (rank < n_modes) {
    throw NumericalError("landmark Gram matrix rank " + std::to_string(rank) +
                         " is below the requested number of modes");
  }

  KticaModel model;
  model.landmarks = landmarks;
  model.kernel = kernel;
  model.lag = lag;
  model.projection = u.leftCols(rank) * w.head(rank).cwiseSqrt().cwiseInverse().asDiagonal();

  const LaggedDataset data = make_lagged_pairs(trajectories, lag);
  const TabulatedPairs pairs = tabulate_pairs(data.heads, data.tails);
  const Matrix feats = model.features(pairs.states);
  const CorrelationPair corr = estimate_correlations(pairs, feats, true);
  const GevSolution gev = solve_gev(corr, n_modes, epsilon);

  model.feature_mean = corr.mean;
  model.coefficients = gev.S.transpose();
  model.eigenvalues = gev.eigenvalues;
  return model;
}

KticaModel fit_ktica(std::span<const Trajectory> trajectories, int lag,
                     const KticaOptions& options) {
  if (trajectories.empty()) throw InvalidArgument("no trajectories given");
  if (options.landmarks < options.n_modes) {
    throw InvalidArgument("number of landmarks must be >= n_modes");
  }
  const Matrix frames = stack_frames(trajectories);
  if (options.landmarks > frames.rows()) {
    throw InvalidArgument("number of landmarks (" + std::to_string(options.landmarks) +
                          ") exceeds the number of frames (" + std::to_string(frames.rows()) + ")");
  }
  const TabulatedRows rows = tabulate_rows(frames);
  Vector weights(rows.states.rows());
  for (Index s = 0; s < weights.size(); ++s) weights[s] = static_cast<double>(rows.counts[s]);
  // Coincident landmarks add nothing to the Nystrom span, so the request is
  // capped at the number of distinct frames.
  const int m = static_cast<int>(std::min<Index>(options.landmarks, rows.states.rows()));
  if (m < options.n_modes) {
    throw InvalidArgument("data has fewer distinct frames than requested modes");
  }
  const LandmarkSet landmarks = kmeans_landmarks(rows.states, weights, m, options.seed);
  return fit_ktica(trajectories, lag, landmarks, options.kernel, options.n_modes,
                   options.epsilon);
}

Vector transform_ktica_point(const KticaModel& model,
                             const Eigen::Ref<const Eigen::RowVectorXd>& x) {
  return model.coefficients * (model.point_features(x) - model.feature_mean);
}

Matrix transform_ktica(const KticaModel& model, const Matrix& X) {
  Matrix out(X.rows(), model.coefficients.rows());
  for (Index i = 0; i < X.rows(); ++i) out.row(i) = transform_ktica_point(model, X.row(i)).transpose();
  return out;
}

}  // namespace slowmodes
