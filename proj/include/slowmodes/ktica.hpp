#pragma once

#include "slowmodes/common.hpp"
#include "slowmodes/estimation.hpp"

#include <span>

namespace slowmodes {

/// Gaussian kernel exp(-|x - y|^2 / (2 sigma^2)).
struct KernelSpec {
  double bandwidth = 0.05;

  double operator()(const Eigen::Ref<const Eigen::RowVectorXd>& x,
                    const Eigen::Ref<const Eigen::RowVectorXd>& y) const;
};

struct LandmarkSet {
  Matrix points;  // m x dimension
  std::uint64_t seed = 0;
  double inertia = 0.0;  // final K-means objective over the clustered data
  int iterations = 0;

  Index size() const { return points.rows(); }
};

/// K-means++ seeding followed by Lloyd iterations until assignments are stable
/// or max_iterations is reached. Empty clusters are reseeded at the point
/// farthest from its centroid.
LandmarkSet kmeans_landmarks(const Matrix& data, int m, std::uint64_t seed,
                             int max_iterations = 100);

/// Weighted variant over distinct points; equivalent to clustering the data
/// with every row repeated weights[i] times.
LandmarkSet kmeans_landmarks(const Matrix& points, const Vector& weights, int m,
                             std::uint64_t seed, int max_iterations = 100);

Matrix gram_matrix(const Matrix& X, const Matrix& Y, const KernelSpec& kernel);

struct KticaOptions {
  KernelSpec kernel;
  int landmarks = 200;
  int n_modes = 3;
  double epsilon = kDefaultRegularization;
  std::uint64_t seed = 0;
};

/// Landmark kernel TICA. More landmarks than distinct frames are capped at the
/// distinct count. Nystrom features phi(x) = W^{-1/2} U^T k(x) are
/// whitened against the landmark Gram matrix K_mm = U W U^T, then handed to
/// the linear VAC solve.
struct KticaModel {
  LandmarkSet landmarks;
  KernelSpec kernel;
  Matrix projection;    // m x r, U_r W_r^{-1/2}
  Vector feature_mean;  // r
  Matrix coefficients;  // n_modes x r
  Vector eigenvalues;
  int lag = 1;

  /// Nystrom features of one point.
  Vector point_features(const Eigen::Ref<const Eigen::RowVectorXd>& x) const;
  Matrix features(const Matrix& X) const;
  Index rank() const { return projection.cols(); }
};

KticaModel fit_ktica(std::span<const Trajectory> trajectories, int lag,
                     const KticaOptions& options);

/// Fit with a caller-supplied landmark set (nested-landmark studies, tests).
KticaModel fit_ktica(std::span<const Trajectory> trajectories, int lag,
                     const LandmarkSet& landmarks, const KernelSpec& kernel, int n_modes,
                     double epsilon);

Vector transform_ktica_point(const KticaModel& model,
                             const Eigen::Ref<const Eigen::RowVectorXd>& x);
/// Row-by-row; row i of the result equals transform_ktica_point(model, X.row(i)) bit for bit.
Matrix transform_ktica(const KticaModel& model, const Matrix& X);

}  // namespace slowmodes
