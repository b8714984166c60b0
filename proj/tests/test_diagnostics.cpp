#include "slowmodes/diagnostics.hpp"
#include "slowmodes/toy_models.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace slowmodes;

namespace {

struct FourwellFixture {
  TransitionMatrix one_step;
  TransitionMatrix propagator;
  SpectrumOracle oracle;
};

const FourwellFixture& fourwell() {
  static const FourwellFixture f = [] {
    FourwellFixture out;
    out.one_step = build_transition_matrix(fourwell_grid());
    out.propagator = matrix_power(out.one_step, 100);
    out.oracle = reference_spectrum(out.propagator, 3);
    return out;
  }();
  return f;
}

TransitionMatrix two_state(double p) {
  TransitionMatrix tm;
  tm.P.resize(2, 2);
  tm.P << 1 - p, p, p, 1 - p;
  tm.grid = make_grid_1d(2, -1.0, 1.0, [](double) { return 0.0; });
  return tm;
}

}  // namespace

TEST(ExactCorrelations, OracleEigenfunctionsDiagonalize) {
  const auto& f = fourwell();
  const Matrix psi = f.oracle.eigenfunctions.rightCols(3);
  const auto corr = exact_correlations(f.propagator, f.oracle.stationary, psi);
  Matrix expected = Matrix::Zero(3, 3);
  expected.diagonal() = f.oracle.eigenvalues.tail(3);
  EXPECT_LT((corr.C - expected).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((corr.Q - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ExactCorrelations, ConstantFeatureVanishes) {
  const auto& f = fourwell();
  const auto corr = exact_correlations(f.propagator, f.oracle.stationary, Matrix::Constant(100, 1, 2.0));
  EXPECT_LT(corr.C.cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT(corr.Q.cwiseAbs().maxCoeff(), 1e-15);
}

TEST(VariationalBound, IndicatorBasisRecoversSpectrum) {
  const auto& f = fourwell();
  const Matrix indicators = Matrix::Identity(100, 100);
  const auto corr = exact_correlations(f.propagator, f.oracle.stationary, indicators);
  // Centering removes the constant direction, so a tiny ridge keeps Q invertible.
  const auto gev = solve_gev(corr, 3, 1e-14);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(gev.eigenvalues[i], f.oracle.eigenvalues[i + 1], 1e-9);
}

TEST(VariationalBound, CoordinateBasisStaysBelow) {
  const auto& f = fourwell();
  const Matrix x = f.one_step.grid.centers;
  const auto corr = exact_correlations(f.propagator, f.oracle.stationary, x);
  const auto gev = solve_gev(corr, 1, 0.0);
  // Independent dense computation of the same Rayleigh quotient.
  EXPECT_NEAR(gev.eigenvalues[0], 0.9608785963643849, 1e-12);
  EXPECT_LT(gev.eigenvalues[0], f.oracle.eigenvalues[1]);
}

TEST(VariationalBound, RandomSmallBasesNeverExceedOracle) {
  const auto& f = fourwell();
  std::mt19937_64 gen(5);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 20; ++trial) {
    const int k = 3 + trial % 6;
    Matrix basis(100, k);
    for (Index i = 0; i < basis.size(); ++i) basis.data()[i] = nd(gen);
    const auto corr = exact_correlations(f.propagator, f.oracle.stationary, basis);
    const auto gev = solve_gev(corr, 3, 0.0);
    for (int i = 0; i < 3; ++i) EXPECT_LE(gev.eigenvalues[i], f.oracle.eigenvalues[i + 1] + 1e-10);
  }
}

TEST(WeightedProjection, IdentityAndOrthogonality) {
  const auto& f = fourwell();
  const Vector& pi = f.oracle.stationary;
  const Vector psi1 = f.oracle.eigenfunctions.col(1);
  const Vector psi2 = f.oracle.eigenfunctions.col(2);
  EXPECT_NEAR(weighted_projection(psi1, psi1, pi).signed_value, 1.0, 1e-12);
  EXPECT_NEAR(weighted_projection(-3.0 * psi1, psi1, pi).signed_value, -1.0, 1e-12);
  EXPECT_NEAR(weighted_projection(-3.0 * psi1, psi1, pi).absolute, 1.0, 1e-12);
  EXPECT_NEAR(weighted_projection(psi1, psi2, pi).absolute, 0.0, 1e-8);
  EXPECT_THROW(weighted_projection(Vector::Zero(100), psi1, pi), InvalidArgument);
}

TEST(HeldOutVamp2, SelfPairsGiveMinusNModes) {
  // Two-frame trajectories with repeated frames: every lag-1 pair is a self pair.
  std::mt19937_64 gen(1);
  std::normal_distribution<double> nd;
  std::vector<Trajectory> ts(500);
  for (auto& t : ts) {
    t.frames.resize(2, 2);
    t.frames(0, 0) = nd(gen);
    t.frames(0, 1) = nd(gen);
    t.frames.row(1) = t.frames.row(0);
  }
  const ModeTransform identity = [](const Matrix& X) { return X; };
  EXPECT_NEAR(held_out_vamp2(identity, ts, 1, 2, 0.0), -2.0, 1e-12);
  EXPECT_NEAR(held_out_vamp2(identity, ts, 1, 2), -2.0, 1e-5);
}

TEST(HeldOutVamp2, WhiteNoiseScoresNearZero) {
  Trajectory t;
  t.frames.resize(20000, 2);
  std::mt19937_64 gen(2);
  std::normal_distribution<double> nd;
  for (Index i = 0; i < t.frames.size(); ++i) t.frames.data()[i] = nd(gen);
  const std::vector<Trajectory> ts{t};
  const ModeTransform squash = [](const Matrix& X) { return Matrix(X.array().tanh()); };
  const double loss = held_out_vamp2(squash, ts, 1, 2);
  EXPECT_LE(std::abs(loss), 2 * 0.05 * 0.05);
}

TEST(CkTest, TwoStateChainIsExact) {
  const auto tm = two_state(0.1);
  const auto factory = [&](int lag) {
    return Vector(reference_spectrum(matrix_power(tm, lag), 1).eigenvalues.tail(1));
  };
  const std::vector<int> ks{1, 2, 5};
  const auto report = ck_test(factory(3), 3, factory, ks);
  ASSERT_EQ(report.rows.size(), 3u);
  for (const auto& r : report.rows) EXPECT_LT(r.rel_dev, 1e-12);
  EXPECT_TRUE(report.excluded_modes.empty());
}

TEST(CkTest, KOneReusesBaseModel) {
  Vector base(2);
  base << 0.9, 0.4;
  int calls = 0;
  const auto factory = [&](int) {
    ++calls;
    return base;
  };
  const std::vector<int> ks{1};
  const auto report = ck_test(base, 10, factory, ks);
  EXPECT_EQ(calls, 0);
  for (const auto& r : report.rows) EXPECT_EQ(r.rel_dev, 0.0);
}

TEST(CkTest, NonPositiveEigenvaluesAreExcluded) {
  Vector base(2);
  base << 0.9, -0.1;
  const std::vector<int> ks{2};
  const auto report = ck_test(base, 10, [&](int) { return Vector(base.array().square()); }, ks);
  EXPECT_EQ(report.excluded_modes, std::vector<int>{2});
  ASSERT_EQ(report.rows.size(), 1u);
  EXPECT_EQ(report.rows[0].mode, 1);
}

TEST(EmpiricalMsm, ConstantTrajectory) {
  const auto g = fourwell_grid();
  Trajectory t;
  t.frames = Matrix::Constant(50, 1, g.centers(10, 0));
  const auto msm = fit_empirical_msm(t, g, 1, 1);
  EXPECT_EQ(msm.estimate.P(10, 10), 1.0);
  EXPECT_EQ(msm.active, std::vector<Index>{10});
  EXPECT_EQ(msm.counts(10, 10), 49);
}

TEST(EmpiricalMsm, RecoversOneStepMatrix) {
  const auto& f = fourwell();
  const auto t = sample_trajectory(f.one_step, 500000, 3);
  const auto msm = fit_empirical_msm(t, f.one_step.grid, 1, 3);
  EXPECT_EQ(msm.active.size(), 100u);
  // Row i is a multinomial sample of size n_i: allow five binomial standard deviations.
  for (Index i = 0; i < 100; ++i) {
    const double n = static_cast<double>(msm.counts.row(i).sum());
    ASSERT_GT(n, 0.0);
    EXPECT_LT((msm.estimate.P.row(i) - f.one_step.P.row(i)).cwiseAbs().maxCoeff(), 2.5 / std::sqrt(n))
        << "row " << i;
  }
}

TEST(EmpiricalMsm, TimescalesNearOracle) {
  const auto& f = fourwell();
  const auto t = sample_trajectory(f.one_step, 5000000, 1);
  const auto msm = fit_empirical_msm(t, f.one_step.grid, 100, 3);
  for (int i = 1; i <= 3; ++i) {
    const double est = implied_timescale(msm.spectrum.eigenvalues[i], 100).value;
    const double ref = implied_timescale(f.oracle.eigenvalues[i], 100).value;
    EXPECT_NEAR(est, ref, 0.1 * ref) << "mode " << i;
  }
}

TEST(Pearson, KnownValues) {
  Vector a(4), b(4);
  a << 1, 2, 3, 4;
  b << 1, 2, 3, 5;
  EXPECT_NEAR(pearson_correlation(a, b), 0.9827076298239908, 1e-14);
  EXPECT_NEAR(pearson_correlation(a, a), 1.0, 1e-15);
  EXPECT_NEAR(pearson_correlation(a, -a), -1.0, 1e-15);
  EXPECT_THROW(pearson_correlation(a, Vector::Ones(4)), InvalidArgument);
}
