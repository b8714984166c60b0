#include "slowmodes/estimation.hpp"

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

using namespace slowmodes;

namespace {

Trajectory make_traj(const Matrix& frames) {
  Trajectory t;
  t.frames = frames;
  return t;
}

Matrix column(std::initializer_list<double> values) {
  Matrix m(static_cast<Index>(values.size()), 1);
  Index i = 0;
  for (double v : values) m(i++, 0) = v;
  return m;
}

Matrix gaussian(Index rows, Index cols, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd;
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j) {
    for (Index i = 0; i < rows; ++i) m(i, j) = nd(gen);
  }
  return m;
}

Matrix random_spd(int d, std::uint64_t seed) {
  const Matrix a = gaussian(d, d, seed);
  return a * a.transpose() + 0.5 * Matrix::Identity(d, d);
}

Matrix random_symmetric(int d, std::uint64_t seed) {
  const Matrix a = gaussian(d, d, seed);
  return 0.5 * (a + a.transpose());
}

// Eigenvalues of (C, Q) by the QZ algorithm, non-ascending.
Vector qz_eigenvalues(const Matrix& C, const Matrix& Q) {
  Eigen::GeneralizedEigenSolver<Matrix> ges(C, Q, false);
  Vector eig = ges.eigenvalues().real();
  std::sort(eig.data(), eig.data() + eig.size(), std::greater<>());
  return eig;
}

// Correlated AR(1) data: slow first coordinate, fast second.
Trajectory ar_trajectory(Index n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd;
  Matrix x(n, 2);
  x.row(0).setZero();
  for (Index t = 1; t < n; ++t) {
    x(t, 0) = 0.95 * x(t - 1, 0) + nd(gen);
    x(t, 1) = 0.3 * x(t - 1, 1) + 0.5 * x(t - 1, 0) + nd(gen);
  }
  return make_traj(x);
}

}  // namespace

TEST(LaggedPairs, SingleTrajectory) {
  const auto t = make_traj(column({0, 1, 2, 3, 4}));
  const std::vector<Trajectory> ts{t};
  const auto d = make_lagged_pairs(ts, 2);
  ASSERT_EQ(d.size(), 3);
  EXPECT_EQ(d.heads, column({0, 1, 2}));
  EXPECT_EQ(d.tails, column({2, 3, 4}));
  EXPECT_EQ(d.lag, 2);
}

TEST(LaggedPairs, LagEqualToLengthIsAnError) {
  const std::vector<Trajectory> ts{make_traj(column({0, 1, 2, 3, 4}))};
  EXPECT_THROW(make_lagged_pairs(ts, 5), InvalidArgument);
  EXPECT_THROW(make_lagged_pairs(ts, 0), InvalidArgument);
}

TEST(LaggedPairs, NeverCrossTrajectoryBoundaries) {
  Matrix a(10, 1), b(3, 1);
  for (int i = 0; i < 10; ++i) a(i, 0) = i;
  for (int i = 0; i < 3; ++i) b(i, 0) = 100 + i;
  const std::vector<Trajectory> ts{make_traj(a), make_traj(b)};
  const auto d = make_lagged_pairs(ts, 5);
  ASSERT_EQ(d.size(), 5);
  EXPECT_LT(d.heads.maxCoeff(), 10);
  EXPECT_LT(d.tails.maxCoeff(), 10);
  EXPECT_EQ(d.n_trajectories, 2);
}

TEST(Correlations, ConstantFeatureCentersToZero) {
  const Matrix heads = Matrix::Constant(20, 2, 3.5);
  const auto c = estimate_correlations(heads, heads, true);
  EXPECT_EQ(c.C.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(c.Q.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_DOUBLE_EQ(c.mean[0], 3.5);
}

TEST(Correlations, IdenticalHeadsAndTailsGiveCEqualQ) {
  const Matrix x = gaussian(500, 3, 4);
  for (bool sym : {true, false}) {
    const auto c = estimate_correlations(x, x, sym);
    EXPECT_EQ(c.C, c.Q);
  }
}

TEST(Correlations, WhiteNoiseStatistics) {
  const Matrix heads = gaussian(100000, 3, 21);
  const Matrix tails = gaussian(100000, 3, 22);
  const auto c = estimate_correlations(heads, tails, true);
  EXPECT_LT(c.C.cwiseAbs().maxCoeff(), 0.02);
  EXPECT_LT((c.Q - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff(), 0.02);
}

TEST(Correlations, SymmetrizedEstimatorDefinition) {
  const Matrix heads = gaussian(50, 2, 1);
  const Matrix tails = gaussian(50, 2, 2);
  const auto c = estimate_correlations(heads, tails, true);
  Matrix both(100, 2);
  both << heads, tails;
  const Vector mean = both.colwise().mean();
  const Matrix h = heads.rowwise() - mean.transpose();
  const Matrix t = tails.rowwise() - mean.transpose();
  const Matrix c0 = h.transpose() * t / 50.0;
  EXPECT_LT((c.C - 0.5 * (c0 + c0.transpose())).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LT((c.Q - 0.5 * (h.transpose() * h + t.transpose() * t) / 50.0).cwiseAbs().maxCoeff(),
            1e-14);
  EXPECT_TRUE(c.symmetrized);
  EXPECT_EQ(c.C, c.C.transpose());
}

TEST(Correlations, TabulatedMatchesDirect) {
  Matrix heads(6, 1), tails(6, 1);
  heads << 0, 1, 1, 2, 0, 2;
  tails << 1, 1, 2, 2, 0, 0;
  const auto pairs = tabulate_pairs(heads, tails);
  EXPECT_EQ(pairs.states.rows(), 3);
  Matrix feats(3, 2);
  for (Index s = 0; s < 3; ++s) {
    feats(s, 0) = std::sin(pairs.states(s, 0));
    feats(s, 1) = pairs.states(s, 0) * pairs.states(s, 0);
  }
  const auto tab = estimate_correlations(pairs, feats, true);
  Matrix fh(6, 2), ft(6, 2);
  for (Index i = 0; i < 6; ++i) {
    fh.row(i) = feats.row(pairs.heads[i]);
    ft.row(i) = feats.row(pairs.tails[i]);
  }
  const auto direct = estimate_correlations(fh, ft, true);
  EXPECT_LT((tab.C - direct.C).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LT((tab.Q - direct.Q).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LT((tab.mean - direct.mean).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Correlations, RejectsTooFewPairs) {
  EXPECT_THROW(estimate_correlations(Matrix::Zero(1, 2), Matrix::Zero(1, 2), true),
               InvalidArgument);
  EXPECT_THROW(estimate_correlations(Matrix::Zero(3, 2), Matrix::Zero(4, 2), true),
               InvalidArgument);
}

TEST(TabulateRows, FirstSeenOrderAndCounts) {
  const auto rows = tabulate_rows(column({3, 1, 3, 3, 2, 1}));
  ASSERT_EQ(rows.states.rows(), 3);
  EXPECT_EQ(rows.states, column({3, 1, 2}));
  EXPECT_EQ(rows.counts, (std::vector<Index>{3, 2, 1}));
  EXPECT_EQ(rows.index, (std::vector<Index>{0, 1, 0, 0, 2, 1}));
}

TEST(SolveGev, IdentityCase) {
  const Matrix I = Matrix::Identity(4, 4);
  const auto s = solve_gev(I, I, 4, 0.0);
  EXPECT_LT((s.eigenvalues - Vector::Ones(4)).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((s.S.transpose() * s.S - I).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_TRUE(s.flagged.empty());
}

TEST(SolveGev, DiagonalCase) {
  Matrix C = Matrix::Zero(2, 2);
  C.diagonal() << 0.5, 0.9;
  const auto s = solve_gev(C, Matrix::Identity(2, 2), 2, 0.0);
  EXPECT_NEAR(s.eigenvalues[0], 0.9, 1e-15);
  EXPECT_NEAR(s.eigenvalues[1], 0.5, 1e-15);
  EXPECT_NEAR(s.S(1, 0), 1.0, 1e-15);  // sign rule: largest entry positive
  EXPECT_NEAR(s.S(0, 1), 1.0, 1e-15);
  EXPECT_NEAR(s.S(0, 0), 0.0, 1e-15);
}

TEST(SolveGev, MatchesQzOracle) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const int d = 8;
    const Matrix C = random_symmetric(d, 1000 + seed);
    const Matrix Q = random_spd(d, 2000 + seed);
    const auto s = solve_gev(C, Q, d, 0.0);
    const Vector ref = qz_eigenvalues(C, Q);
    EXPECT_LT((s.eigenvalues - ref).cwiseAbs().maxCoeff(), 1e-10) << "seed " << seed;
    EXPECT_LT((s.S.transpose() * Q * s.S - Matrix::Identity(d, d)).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LT((C * s.S - Q * s.S * s.eigenvalues.asDiagonal()).cwiseAbs().maxCoeff(), 1e-9);
    for (Index j = 0; j < d; ++j) {
      Index arg = 0;
      s.S.col(j).cwiseAbs().maxCoeff(&arg);
      EXPECT_GT(s.S(arg, j), 0.0);
    }
  }
}

TEST(SolveGev, TraceScaledRegularization) {
  const Matrix C = random_symmetric(4, 5);
  const Matrix Q = random_spd(4, 6);
  const double eps = 1e-3;
  const auto s = solve_gev(C, Q, 4, eps);
  const double shift = eps * Q.trace() / 4.0;
  EXPECT_NEAR(s.shift, shift, 1e-15);
  const Vector ref = qz_eigenvalues(C, Q + shift * Matrix::Identity(4, 4));
  EXPECT_LT((s.eigenvalues - ref).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(SolveGev, ZeroQFallsBackToAbsoluteShift) {
  const Matrix Z = Matrix::Zero(3, 3);
  const auto s = solve_gev(Z, Z, 2, 1e-6);
  EXPECT_NEAR(s.shift, 1e-6, 1e-20);
  EXPECT_LT(s.eigenvalues.cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_THROW(solve_gev(Z, Z, 2, 0.0), NumericalError);
}

TEST(SolveGev, FlagsOutOfRangeEigenvalues) {
  Matrix C = Matrix::Zero(3, 3);
  C.diagonal() << 1.5, 0.5, -0.2;
  const auto s = solve_gev(C, Matrix::Identity(3, 3), 3, 0.0);
  EXPECT_EQ(s.flagged, (std::vector<Index>{0, 2}));
}

TEST(SolveGev, RejectsBadArguments) {
  const Matrix I = Matrix::Identity(3, 3);
  EXPECT_THROW(solve_gev(I, I, 0, 0.0), InvalidArgument);
  EXPECT_THROW(solve_gev(I, I, 4, 0.0), InvalidArgument);
  EXPECT_THROW(solve_gev(I, Matrix::Identity(2, 2), 1, 0.0), InvalidArgument);
  EXPECT_THROW(solve_gev(I, I, 1, -1.0), InvalidArgument);
  Matrix indefinite = I;
  indefinite(2, 2) = -1.0;
  EXPECT_THROW(solve_gev(I, indefinite, 1, 0.0), NumericalError);
  CorrelationPair raw;
  raw.C = I;
  raw.Q = I;
  raw.symmetrized = false;
  EXPECT_THROW(solve_gev(raw, 1, 0.0), InvalidArgument);
}

TEST(FitTica, OneDimensionalModeIsNormalizedCoordinate) {
  const auto t = ar_trajectory(2000, 3);
  const std::vector<Trajectory> ts{make_traj(t.frames.leftCols(1))};
  const auto m = fit_tica(ts, 1, 1);
  const Matrix modes = m.transform(ts[0].frames);
  const auto corr = estimate_correlations(make_lagged_pairs(ts, 1), true);
  EXPECT_NEAR(std::abs(m.coefficients(0, 0)), 1.0 / std::sqrt(corr.Q(0, 0)), 1e-12);
  EXPECT_GT(m.coefficients(0, 0), 0.0);
  EXPECT_NEAR(m.eigenvalues[0], corr.C(0, 0) / corr.Q(0, 0), 1e-12);
  EXPECT_LT(std::abs(modes.col(0).mean()), 0.1);
}

TEST(FitTica, InvariantUnderInvertibleLinearMaps) {
  const auto t = ar_trajectory(20000, 8);
  Matrix M(2, 2);
  M << 2.0, -0.7, 0.3, 1.5;
  const std::vector<Trajectory> plain{t};
  const std::vector<Trajectory> mapped{make_traj(t.frames * M.transpose())};
  const auto a = fit_tica(plain, 5, 2);
  const auto b = fit_tica(mapped, 5, 2);
  EXPECT_LT((a.eigenvalues - b.eigenvalues).cwiseAbs().maxCoeff(), 1e-8);
  // Same eigenfunctions, evaluated on corresponding frames.
  const Matrix ma = a.transform(plain[0].frames);
  const Matrix mb = b.transform(mapped[0].frames);
  for (int i = 0; i < 2; ++i) {
    const double sign = ma.col(i).dot(mb.col(i)) > 0 ? 1.0 : -1.0;
    EXPECT_LT((ma.col(i) - sign * mb.col(i)).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(FitTica, ModesAreUncorrelatedWithUnitVariance) {
  const auto t = ar_trajectory(20000, 9);
  const std::vector<Trajectory> ts{t};
  const auto m = fit_tica(ts, 3, 2);
  const auto data = make_lagged_pairs(ts, 3);
  const auto corr = estimate_correlations(m.transform(data.heads), m.transform(data.tails), true);
  EXPECT_LT((corr.Q - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_NEAR(corr.C(0, 0), m.eigenvalues[0], 1e-10);
  EXPECT_NEAR(corr.C(0, 1), 0.0, 1e-10);
}

TEST(ImpliedTimescale, Formula) {
  EXPECT_NEAR(implied_timescale(std::exp(-1.0), 100).value, 100.0, 1e-12);
  EXPECT_NEAR(implied_timescale(0.5, 20).value, 20.0 / std::log(2.0), 1e-12);
  EXPECT_NEAR(implied_timescale(0.5, 20).value, 28.8539, 1e-4);
  const auto one = implied_timescale(1.0, 10);
  EXPECT_EQ(one.kind, TimescaleKind::Infinite);
  EXPECT_TRUE(std::isinf(one.value));
  const auto neg = implied_timescale(-0.2, 10);
  EXPECT_TRUE(neg.negative_eigenvalue());
  EXPECT_TRUE(std::isnan(neg.value));
  EXPECT_THROW(implied_timescale(0.5, 0.0), InvalidArgument);
  Vector eig(2);
  eig << 0.9, 0.8;
  const auto all = implied_timescales(eig, 5);
  ASSERT_EQ(all.size(), 2u);
  EXPECT_GT(all[0].value, all[1].value);
}
