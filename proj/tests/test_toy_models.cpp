#include "slowmodes/estimation.hpp"
#include "slowmodes/toy_models.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace slowmodes;

namespace {

constexpr double kPi = std::numbers::pi;

// Reference eigenvalues of P(1)^100 from an independent dense NumPy
// eigendecomposition of the same discretization.
constexpr double kFourwellLambda[] = {0.9838945259590834, 0.8991297037897628,
                                      0.8134616438063281};
constexpr double kFourwellTimescale[] = {6158.933720763695, 940.4862263785649, 484.3635271045942};
constexpr double kRingLambda[] = {0.9894979357017798, 0.9720302783448073, 0.9470001694081646};

const SpectrumOracle& fourwell_oracle() {
  static const SpectrumOracle oracle = [] {
    const auto tm = build_transition_matrix(fourwell_grid());
    return reference_spectrum(matrix_power(tm, 100), 3);
  }();
  return oracle;
}

TransitionMatrix from_matrix(const Matrix& P) {
  TransitionMatrix tm;
  tm.P = P;
  tm.grid = make_grid_1d(static_cast<int>(P.rows()), 0.0, 1.0, [](double) { return 0.0; });
  return tm;
}

Matrix random_stochastic(int n, std::uint64_t seed) {
  Rng rng(seed);
  Matrix P(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) P(i, j) = rng.uniform(0.05, 1.0);
    P.row(i) /= P.row(i).sum();
  }
  return P;
}

}  // namespace

TEST(Potential1d, PrintedFormulaValues) {
  EXPECT_NEAR(potential_1d(0.5), 2.0 * (std::pow(0.5, 8) + 0.2), 1e-8);
  EXPECT_NEAR(potential_1d(0.5), 0.40781, 1e-5);
  const double at_zero = 1.6 + 2 * 0.5 * std::exp(-10.0) + 2 * 0.2 * std::exp(-20.0);
  EXPECT_NEAR(potential_1d(0.0), at_zero, 1e-14);
  EXPECT_NEAR(potential_1d(0.0), 1.60005, 1e-5);
  EXPECT_NEAR(potential_1d(1.0), 2.0, 1e-8);
}

TEST(Potential1d, NotSymmetric) { EXPECT_NE(potential_1d(-0.5), potential_1d(0.5)); }

TEST(PotentialRing, CasesInPrintedOrder) {
  const auto at = [](double r, double theta) {
    return potential_ring(r * std::cos(theta), r * std::sin(theta));
  };
  EXPECT_DOUBLE_EQ(at(0.8, kPi / 2), 0.5);
  EXPECT_DOUBLE_EQ(at(0.8, kPi), 1.3);
  EXPECT_DOUBLE_EQ(at(0.8, 3 * kPi / 2), 1.0);
  EXPECT_DOUBLE_EQ(at(0.8, 0.0), 8.0);
  EXPECT_NEAR(potential_ring(0.0, 0.0), 2.5 + 9 * 0.64, 1e-14);
  EXPECT_DOUBLE_EQ(at(0.8, kPi / 4), 0.0);
  EXPECT_DOUBLE_EQ(at(0.8, -0.02), 8.0);  // theta just below 2 pi
}

TEST(Grid, MidpointCentersAndLocate) {
  const auto g = fourwell_grid();
  ASSERT_EQ(g.size(), 100);
  EXPECT_NEAR(g.centers(0, 0), -0.99, 1e-15);
  EXPECT_NEAR(g.centers(99, 0), 0.99, 1e-15);
  for (Index b = 0; b < g.size(); ++b) EXPECT_EQ(g.locate(g.centers.row(b)), b);

  const auto r = ring_grid();
  ASSERT_EQ(r.size(), 2500);
  EXPECT_NEAR(r.centers(1, 0) - r.centers(0, 0), 0.04, 1e-15);  // x runs fastest
  EXPECT_NEAR(r.centers(50, 1) - r.centers(0, 1), 0.04, 1e-15);
  for (Index b = 0; b < r.size(); b += 37) EXPECT_EQ(r.locate(r.centers.row(b)), b);
}

TEST(Grid, RejectsDegenerateBins) {
  EXPECT_THROW(make_grid_1d(1, -1, 1, potential_1d), InvalidArgument);
  EXPECT_THROW(make_grid_2d(1, 50, {-1, 1}, {-1, 1}, potential_ring), InvalidArgument);
}

TEST(Transition1d, FlatPotential) {
  const auto g = make_grid_1d(5, 0.0, 1.0, [](double) { return 0.0; });
  const auto tm = build_transition_matrix_1d(g);
  EXPECT_DOUBLE_EQ(tm.P(2, 1), 1.0 / 3);
  EXPECT_DOUBLE_EQ(tm.P(2, 2), 1.0 / 3);
  EXPECT_DOUBLE_EQ(tm.P(2, 3), 1.0 / 3);
  EXPECT_DOUBLE_EQ(tm.P(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(tm.P(0, 1), 0.5);
  EXPECT_EQ(tm.P(0, 2), 0.0);
}

TEST(Transition1d, BoltzmannRatioAndRowSums) {
  const auto g = fourwell_grid();
  const auto tm = build_transition_matrix(g);
  for (Index i = 0; i < g.size(); ++i) {
    EXPECT_NEAR(tm.P.row(i).sum(), 1.0, 1e-12);
    if (i + 1 < g.size()) {
      EXPECT_NEAR(tm.P(i, i + 1) / tm.P(i, i), std::exp(-(g.potential[i + 1] - g.potential[i])),
                  1e-12);
    }
  }
}

TEST(Transition2d, FlatPotential) {
  const auto g = make_grid_2d(4, 4, {0, 1}, {0, 1}, [](double, double) { return 0.0; });
  const auto tm = build_transition_matrix_2d(g);
  const Index interior = 1 + 4 * 1;
  EXPECT_DOUBLE_EQ(tm.P(interior, interior), 0.2);
  for (Index j : {Index{4}, Index{6}, Index{1}, Index{9}}) EXPECT_DOUBLE_EQ(tm.P(interior, j), 0.2);
  EXPECT_DOUBLE_EQ(tm.P(0, 0), 1.0 / 3);
  EXPECT_DOUBLE_EQ(tm.P(0, 1), 1.0 / 3);
  EXPECT_DOUBLE_EQ(tm.P(0, 4), 1.0 / 3);
  EXPECT_EQ(tm.P(3, 4), 0.0);  // no wrap from the end of one row to the next
}

TEST(MatrixPower, HandComputed) {
  Matrix P(2, 2);
  P << 0.9, 0.1, 0.2, 0.8;
  const auto tm = from_matrix(P);
  EXPECT_EQ(matrix_power(tm, 1).P, P);
  const auto sq = matrix_power(tm, 2);
  EXPECT_NEAR(sq.P(0, 0), 0.83, 1e-15);
  EXPECT_NEAR(sq.P(0, 1), 0.17, 1e-15);
  EXPECT_NEAR(sq.P(1, 0), 0.34, 1e-15);
  EXPECT_NEAR(sq.P(1, 1), 0.66, 1e-15);
  EXPECT_EQ(sq.lag, 2);
  EXPECT_THROW(matrix_power(tm, 0), InvalidArgument);
}

TEST(MatrixPower, ExponentsAdd) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto tm = from_matrix(random_stochastic(6, seed));
    for (int a = 1; a <= 4; ++a) {
      for (int b = 1; b <= 4; ++b) {
        const Matrix lhs = matrix_power(tm, a + b).P;
        const Matrix rhs = matrix_power(tm, a).P * matrix_power(tm, b).P;
        EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-13);
      }
    }
  }
}

TEST(MatrixPower, SparsePathMatchesDense) {
  const auto tm = build_transition_matrix(fourwell_grid());
  Matrix dense = Matrix::Identity(100, 100);
  for (int i = 0; i < 7; ++i) dense = dense * tm.P;
  EXPECT_LT((matrix_power(tm, 7).P - dense).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(ReferenceSpectrum, TwoStateChain) {
  const double p = 0.15;
  Matrix P(2, 2);
  P << 1 - p, p, p, 1 - p;
  const auto o = reference_spectrum(from_matrix(P), 1);
  EXPECT_NEAR(o.eigenvalues[0], 1.0, 1e-14);
  EXPECT_NEAR(o.eigenvalues[1], 1 - 2 * p, 1e-14);
  EXPECT_NEAR(o.eigenfunctions(0, 0), 1.0, 1e-14);
  EXPECT_NEAR(o.eigenfunctions(1, 0), 1.0, 1e-14);
  EXPECT_NEAR(std::abs(o.eigenfunctions(0, 1)), 1.0, 1e-14);
  EXPECT_NEAR(o.eigenfunctions(0, 1), -o.eigenfunctions(1, 1), 1e-14);
}

TEST(ReferenceSpectrum, FourwellGoldenValues) {
  const auto& o = fourwell_oracle();
  EXPECT_NEAR(o.eigenvalues[0], 1.0, 1e-12);
  for (int i = 0; i < 3; ++i) {
    EXPECT_NEAR(o.eigenvalues[i + 1], kFourwellLambda[i], 1e-12);
    EXPECT_NEAR(implied_timescale(o.eigenvalues[i + 1], 100).value, kFourwellTimescale[i],
                kFourwellTimescale[i] * 1e-10);
  }
}

TEST(ReferenceSpectrum, FourwellInvariants) {
  const auto& o = fourwell_oracle();
  const auto n = o.stationary.size();
  EXPECT_NEAR(o.stationary.sum(), 1.0, 1e-12);
  EXPECT_GT(o.stationary.minCoeff(), 0.0);
  EXPECT_LT((o.eigenfunctions.col(0) - Vector::Ones(n)).cwiseAbs().maxCoeff(), 1e-10);
  const Matrix gram =
      o.eigenfunctions.transpose() * o.stationary.asDiagonal() * o.eigenfunctions;
  EXPECT_LT((gram - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-8);
  for (int i = 1; i < 4; ++i) EXPECT_GE(o.eigenvalues[i - 1], o.eigenvalues[i]);

  // Stationarity and the eigen-relation against the propagator itself.
  const auto tm = build_transition_matrix(fourwell_grid());
  const Matrix P100 = matrix_power(tm, 100).P;
  EXPECT_LT((P100.transpose() * o.stationary - o.stationary).cwiseAbs().maxCoeff(), 1e-12);
  for (int i = 1; i < 4; ++i) {
    const Vector lhs = P100 * o.eigenfunctions.col(i);
    EXPECT_LT((lhs - o.eigenvalues[i] * o.eigenfunctions.col(i)).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(ReferenceSpectrum, RingGoldenValues) {
  const auto tm = build_transition_matrix(ring_grid());
  const auto o = reference_spectrum(matrix_power(tm, 100), 3);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(o.eigenvalues[i + 1], kRingLambda[i], 1e-10);
}

TEST(ReferenceSpectrum, RejectsReducibleChain) {
  Matrix P = Matrix::Identity(3, 3);
  EXPECT_FALSE(is_irreducible(P));
  EXPECT_THROW(reference_spectrum(from_matrix(P), 1), NumericalError);
}

TEST(ReferenceSpectrum, NonReversibleChainStillOrdered) {
  Matrix P(3, 3);
  P << 0.1, 0.8, 0.1, 0.1, 0.1, 0.8, 0.8, 0.1, 0.1;
  const auto o = reference_spectrum(from_matrix(P), 1);
  EXPECT_NEAR(o.eigenvalues[0], 1.0, 1e-12);
  EXPECT_NEAR(o.stationary.sum(), 1.0, 1e-12);
}

TEST(SampleTrajectory, AbsorbingRowsStayPut) {
  const auto tm = from_matrix(Matrix::Identity(4, 4));
  const auto traj = sample_trajectory(tm, 50, 3);
  ASSERT_EQ(traj.length(), 50);
  EXPECT_TRUE((traj.frames.array() == traj.frames(0, 0)).all());
}

TEST(SampleTrajectory, Deterministic) {
  const auto tm = build_transition_matrix(fourwell_grid());
  const auto a = sample_trajectory(tm, 1000, 11);
  const auto b = sample_trajectory(tm, 1000, 11);
  const auto c = sample_trajectory(tm, 1000, 12);
  EXPECT_EQ(a.frames, b.frames);
  EXPECT_NE(a.frames, c.frames);
  EXPECT_EQ(a.seed, 11u);
}

TEST(SampleTrajectory, FramesAreBinCentersAndMovesAreLocal) {
  const auto g = fourwell_grid();
  const auto tm = build_transition_matrix(g);
  const auto traj = sample_trajectory(tm, 5000, 5);
  const auto bins = assign_bins(g, traj.frames);
  for (Index t = 0; t < traj.length(); ++t) {
    EXPECT_EQ(traj.frames(t, 0), g.centers(bins[t], 0));
    if (t > 0) {
      EXPECT_LE(std::abs(bins[t] - bins[t - 1]), 1);
    }
  }
}

TEST(SampleTrajectory, OccupancyMatchesStationaryDistribution) {
  const auto g = fourwell_grid();
  const auto tm = build_transition_matrix(g);
  // The slowest relaxation takes about 6000 steps, so the run must span many of them.
  const auto traj = sample_trajectory(tm, 5000000, 1);
  Vector hist = Vector::Zero(g.size());
  for (Index b : assign_bins(g, traj.frames)) hist[b] += 1.0;
  hist /= static_cast<double>(traj.length());
  const double tv = 0.5 * (hist - fourwell_oracle().stationary).cwiseAbs().sum();
  EXPECT_LT(tv, 0.02);
}

TEST(SampleTrajectory, FastMixingChainOccupancyMatchesStationary) {
  const auto g = make_grid_1d(10, 0.0, 1.0, [](double) { return 0.0; });
  const auto tm = build_transition_matrix(g);
  const auto traj = sample_trajectory(tm, 1000000, 2);
  Vector hist = Vector::Zero(10);
  for (Index b : assign_bins(g, traj.frames)) hist[b] += 1.0;
  hist /= static_cast<double>(traj.length());
  const Vector pi = reference_spectrum(tm, 1).stationary;
  EXPECT_LT(0.5 * (hist - pi).cwiseAbs().sum(), 0.01);
}

TEST(SampleTrajectory, RejectsBadArguments) {
  const auto tm = build_transition_matrix(fourwell_grid());
  EXPECT_THROW(sample_trajectory(tm, 0, 1), InvalidArgument);
  EXPECT_THROW(sample_trajectory(matrix_power(tm, 2), 10, 1), InvalidArgument);
}

TEST(StationaryDistribution, DetailedBalanceOnFourwell) {
  const auto g = fourwell_grid();
  const auto tm = build_transition_matrix(g);
  const Vector pi = stationary_distribution(tm.P);
  for (Index i = 0; i + 1 < g.size(); ++i) {
    EXPECT_NEAR(pi[i] * tm.P(i, i + 1), pi[i + 1] * tm.P(i + 1, i), 1e-15);
  }
}
