#include <gtest/gtest.h>

#include <cmath>

#include "dense_oracles.hpp"
#include "hsfuse/fusion.hpp"
#include "support.hpp"

using namespace hsfuse;
using hsfuse::testing::random_matrix;
using hsfuse::testing::random_orthonormal_rows;
using hsfuse::testing::relative_error;
using hsfuse::testing::two_region_coefficients;

namespace {

double orthonormality_error(const Eigen::MatrixXd& q)
{
  return (q * q.transpose() - Eigen::MatrixXd::Identity(q.rows(), q.rows())).norm();
}

}  // namespace

// ---- init_subspace ------------------------------------------------------------

TEST(InitSubspace, OrthogonalColumnsGiveCoordinateAxesInNormOrder)
{
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(6, 4);
  y(0, 0) = 1.0;
  y(1, 1) = -3.0;
  y(2, 2) = 2.0;
  y(3, 3) = 0.5;
  const Eigen::MatrixXd q = init_subspace(y, 3);
  Eigen::MatrixXd expected = Eigen::MatrixXd::Zero(3, 4);
  expected(0, 1) = 1.0;
  expected(1, 2) = 1.0;
  expected(2, 0) = 1.0;
  EXPECT_LT((q - expected).norm(), 1e-12);
}

TEST(InitSubspace, FullBasisIsOrthonormal)
{
  const Eigen::MatrixXd y = random_matrix(40, 7, 2);
  const Eigen::MatrixXd q = init_subspace(y, 7);
  EXPECT_LT(orthonormality_error(q), 1e-10);
  EXPECT_LT((q.transpose() * q - Eigen::MatrixXd::Identity(7, 7)).norm(), 1e-10);
}

TEST(InitSubspace, MatchesEigendecompositionUpToSign)
{
  const Eigen::MatrixXd y = random_matrix(50, 8, 3);
  const Eigen::MatrixXd q = init_subspace(y, 3);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(y.transpose() * y);
  for (int r = 0; r < 3; ++r) {
    const Eigen::VectorXd v = eig.eigenvectors().col(7 - r);
    EXPECT_NEAR(std::abs(q.row(r).dot(v)), 1.0, 1e-10);
    Eigen::Index arg = 0;
    q.row(r).cwiseAbs().maxCoeff(&arg);
    EXPECT_GT(q(r, arg), 0.0);
  }
  EXPECT_LT(orthonormality_error(q), 1e-10);
}

TEST(InitSubspace, RankDeficientStillOrthonormal)
{
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(10, 5);
  y.col(0).setOnes();
  const Eigen::MatrixXd q = init_subspace(y, 4);
  EXPECT_LT(orthonormality_error(q), 1e-10);
}

TEST(InitSubspace, TooManyComponentsRejected)
{
  EXPECT_THROW((void)init_subspace(random_matrix(10, 3, 1), 4), ParameterError);
  EXPECT_THROW((void)init_subspace(random_matrix(10, 3, 1), 0), ParameterError);
}

// ---- objective ----------------------------------------------------------------

TEST(Objective, ZeroEverythingIsZero)
{
  const GridShape g{8, 8};
  const ForwardOperators ops(g, build_gaussian_kernel(0.8, 1), Decimation(2));
  const Eigen::MatrixXd c = Eigen::MatrixXd::Zero(64, 2);
  const Eigen::MatrixXd q = random_orthonormal_rows(2, 5, 1);
  const Eigen::MatrixXd qmp = random_orthonormal_rows(2, 3, 2);
  EXPECT_EQ(objective_J(c, q, qmp, Eigen::MatrixXd::Zero(16, 5), Eigen::MatrixXd::Zero(64, 3), ops,
                        1.0, 0.3),
            0.0);
}

TEST(Objective, ExactLowRankDataHasZeroResidual)
{
  const GridShape g{8, 8};
  const ForwardOperators ops(g, build_gaussian_kernel(0.8, 1), Decimation(2));
  const Eigen::MatrixXd c = random_matrix(64, 2, 4);
  const Eigen::MatrixXd q = random_orthonormal_rows(2, 5, 5);
  const Eigen::MatrixXd qmp = random_orthonormal_rows(2, 3, 6);
  const double j = objective_J(c, q, qmp, ops.sk(c) * q, c * qmp, ops, 2.0, 0.0);
  EXPECT_LT(j, 1e-25);
}

TEST(Objective, TvTermMatchesHandSum)
{
  const GridShape g{6, 5};
  const ForwardOperators ops(g, BlurKernel::identity(), Decimation(1));
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(30, 2);
  for (int y = 0; y < g.height; ++y) c(g.index(3, y), 0) = 1.0;  // one-pixel-wide line
  for (int y = 0; y < g.height; ++y)
    for (int x = 0; x < g.width; ++x) c(g.index(x, y), 1) = 0.1 * x * x + 0.3 * y;

  double hand = 0.0;
  for (int j = 0; j < 2; ++j)
    for (int y = 0; y < g.height; ++y)
      for (int x = 0; x < g.width; ++x) {
        const double gx = c(g.index((x + 1) % g.width, y), j) - c(g.index(x, y), j);
        const double gy = c(g.index(x, (y + 1) % g.height), j) - c(g.index(x, y), j);
        hand += std::sqrt(gx * gx + gy * gy);
      }

  const Eigen::MatrixXd q = Eigen::MatrixXd::Identity(2, 2);
  const double lambda_tv = 0.7;
  const double j = objective_J(c, q, q, c, c, ops, 1.0, lambda_tv);
  EXPECT_NEAR(j, lambda_tv * hand, 1e-12);
  // the line alone contributes two unit jumps per row
  EXPECT_NEAR(tv_norm(ops.dh(c.col(0)), ops.dv(c.col(0))), 2.0 * g.height, 1e-12);
}

TEST(Objective, ShapeMismatchIsDimensionError)
{
  const ForwardOperators ops({4, 4}, BlurKernel::identity(), Decimation(1));
  const Eigen::MatrixXd q = Eigen::MatrixXd::Identity(2, 2);
  EXPECT_THROW((void)objective_J(Eigen::MatrixXd::Zero(15, 2), q, q, Eigen::MatrixXd::Zero(16, 2),
                                 Eigen::MatrixXd::Zero(16, 2), ops, 1.0, 0.0),
               DimensionError);
}

// ---- vect-soft ------------------------------------------------------------------

TEST(VectSoft, ZeroThresholdIsIdentity)
{
  Eigen::MatrixXd a = random_matrix(10, 3, 7);
  Eigen::MatrixXd b = random_matrix(10, 3, 8);
  const Eigen::MatrixXd a0 = a, b0 = b;
  vect_soft_threshold(a, b, 0.0);
  EXPECT_EQ(a, a0);
  EXPECT_EQ(b, b0);
}

TEST(VectSoft, SmallVectorsVanish)
{
  Eigen::MatrixXd a(3, 1), b(3, 1);
  a << 0.3, 0.0, -1.0;
  b << 0.4, 0.0, 0.0;
  vect_soft_threshold(a, b, 1.0);
  EXPECT_TRUE(a.isZero(0.0));
  EXPECT_TRUE(b.isZero(0.0));
}

TEST(VectSoft, ThreeFourFive)
{
  Eigen::MatrixXd a(1, 1), b(1, 1);
  a << 3.0;
  b << 4.0;
  vect_soft_threshold(a, b, 2.0);
  EXPECT_NEAR(a(0, 0), 1.8, 1e-15);
  EXPECT_NEAR(b(0, 0), 2.4, 1e-15);
}

TEST(VectSoft, IsTheProximalMapOfTheEuclideanNorm)
{
  // Minimizer of tau |u| + 1/2 |u - x|^2 lies on the ray through x; scan it finely.
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const double x1 = rng.normal() * 2.0;
    const double x2 = rng.normal() * 2.0;
    const double tau = rng.uniform(0.0, 3.0);
    Eigen::MatrixXd a(1, 1), b(1, 1);
    a << x1;
    b << x2;
    vect_soft_threshold(a, b, tau);

    const double norm = std::hypot(x1, x2);
    const auto f = [&](double t) { return tau * t * norm + 0.5 * (1.0 - t) * (1.0 - t) * norm * norm; };
    // coarse scan, then ternary refinement around the best grid point (f is convex)
    const int steps = 10000;
    int best_s = 0;
    for (int s = 1; s <= steps; ++s)
      if (f(static_cast<double>(s) / steps) < f(static_cast<double>(best_s) / steps)) best_s = s;
    double lo = std::max(0.0, (best_s - 1.0) / steps);
    double hi = std::min(1.0, (best_s + 1.0) / steps);
    for (int it = 0; it < 200; ++it) {
      const double m1 = lo + (hi - lo) / 3.0;
      const double m2 = hi - (hi - lo) / 3.0;
      if (f(m1) <= f(m2))
        hi = m2;
      else
        lo = m1;
    }
    const double best_t = 0.5 * (lo + hi);
    EXPECT_NEAR(a(0, 0), best_t * x1, 1e-6);
    EXPECT_NEAR(b(0, 0), best_t * x2, 1e-6);
  }
}

// ---- Procrustes -------------------------------------------------------------------

TEST(Procrustes, RecoversPlantedBasis)
{
  const GridShape g{8, 8};
  const ForwardOperators ops(g, build_gaussian_kernel(0.8, 1), Decimation(2));
  const Eigen::MatrixXd c = random_matrix(64, 3, 12);
  const Eigen::MatrixXd q0 = random_orthonormal_rows(3, 7, 13);
  const ProcrustesResult r = update_Q_procrustes(c, ops, ops.sk(c) * q0);
  EXPECT_LT((r.Q - q0).norm(), 1e-10);
  EXPECT_LT(orthonormality_error(r.Q), 1e-10);
  EXPECT_FALSE(r.degenerate);
}

TEST(Procrustes, RankOneIsNormalizedCrossProduct)
{
  const GridShape g{8, 8};
  const ForwardOperators ops(g, build_gaussian_kernel(0.8, 1), Decimation(2));
  const Eigen::MatrixXd c = random_matrix(64, 1, 14);
  const Eigen::MatrixXd y = random_matrix(16, 5, 15);
  const Eigen::MatrixXd cross = ops.sk(c).transpose() * y;
  const ProcrustesResult r = update_Q_procrustes(c, ops, y);
  EXPECT_LT((r.Q - cross / cross.norm()).norm(), 1e-12);
}

TEST(Procrustes, BeatsRandomOrthonormalSamples)
{
  const GridShape g{8, 4};
  const ForwardOperators ops(g, BlurKernel::identity(), Decimation(1));
  const Eigen::MatrixXd c = random_matrix(32, 3, 16);
  const Eigen::MatrixXd y = random_matrix(32, 6, 17);
  const ProcrustesResult r = update_Q_procrustes(c, ops, y);
  const double best = (ops.sk(c) * r.Q - y).norm();
  for (int s = 0; s < 1000; ++s) {
    const Eigen::MatrixXd q = random_orthonormal_rows(3, 6, 1000 + s);
    EXPECT_LE(best, (ops.sk(c) * q - y).norm() + 1e-12);
  }
}

TEST(Procrustes, NeverIncreasesTheHsResidual)
{
  const GridShape g{8, 8};
  const ForwardOperators ops(g, build_gaussian_kernel(1.0, 2), Decimation(4));
  for (int s = 0; s < 20; ++s) {
    const Eigen::MatrixXd c = random_matrix(64, 2, 100 + s);
    const Eigen::MatrixXd y = random_matrix(4, 5, 200 + s);
    const Eigen::MatrixXd q_old = random_orthonormal_rows(2, 5, 300 + s);
    const ProcrustesResult r = update_Q_procrustes(c, ops, y);
    EXPECT_LE((ops.sk(c) * r.Q - y).norm(), (ops.sk(c) * q_old - y).norm() + 1e-12);
  }
}

TEST(Procrustes, DegenerateCrossProductFlagged)
{
  const ForwardOperators ops({4, 4}, BlurKernel::identity(), Decimation(1));
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(16, 2);
  c.col(0).setOnes();
  const ProcrustesResult r = update_Q_procrustes(c, ops, random_matrix(16, 3, 1));
  EXPECT_TRUE(r.degenerate);
  EXPECT_LT(orthonormality_error(r.Q), 1e-10);
}

// ---- rho adaptation ---------------------------------------------------------------

TEST(AdaptRho, BalancedResidualsLeaveStateUnchanged)
{
  AdmmState s = AdmmState::zeros(4, 2, 1.5);
  s.G1 = random_matrix(4, 2, 1);
  s.r_res = s.s_res = 0.3;
  const AdmmState t = adapt_rho(s);
  EXPECT_EQ(t.rho, 1.5);
  EXPECT_EQ(t.G1, s.G1);
}

TEST(AdaptRho, LargePrimalResidualDoublesRho)
{
  AdmmState s = AdmmState::zeros(4, 2, 1.0);
  s.G1 = random_matrix(4, 2, 2);
  s.G2 = random_matrix(4, 2, 3);
  s.r_res = 100.0;
  s.s_res = 1.0;
  const AdmmState t = adapt_rho(s);
  EXPECT_EQ(t.rho, 2.0);
  EXPECT_LT((t.rho * t.G1 - s.rho * s.G1).norm(), 1e-15);
  EXPECT_LT((t.rho * t.G2 - s.rho * s.G2).norm(), 1e-15);
}

TEST(AdaptRho, LargeDualResidualHalvesRho)
{
  AdmmState s = AdmmState::zeros(4, 2, 1.0);
  s.G1 = random_matrix(4, 2, 4);
  s.r_res = 1.0;
  s.s_res = 20.0;
  const AdmmState t = adapt_rho(s);
  EXPECT_EQ(t.rho, 0.5);
  EXPECT_LT((t.rho * t.G1 - s.rho * s.G1).norm(), 1e-15);
}

TEST(AdaptRho, InvalidParametersRejected)
{
  EXPECT_THROW((void)adapt_rho(AdmmState::zeros(1, 1, 1.0), 1.0), ParameterError);
  EXPECT_THROW((void)adapt_rho(AdmmState::zeros(1, 1, 1.0), 10.0, 0.5), ParameterError);
}

// ---- ADMM -------------------------------------------------------------------------

namespace {

struct SmallProblem {
  GridShape grid{16, 16};
  ForwardOperators ops{grid, build_gaussian_kernel(0.85, 2), Decimation(2)};
  Eigen::MatrixXd y_h, y_mp, q, q_mp;
};

SmallProblem two_region_problem(double noise)
{
  SmallProblem p;
  const Eigen::MatrixXd c = two_region_coefficients(p.grid, 2);
  p.q = random_orthonormal_rows(2, 6, 21);
  p.q_mp = random_orthonormal_rows(2, 4, 22);
  p.y_h = p.ops.sk(c) * p.q + noise * random_matrix(p.ops.coarse().pixels(), 6, 23);
  p.y_mp = c * p.q_mp + noise * random_matrix(p.grid.pixels(), 4, 24);
  return p;
}

}  // namespace

TEST(Admm, WithoutTvMatchesClosedForm)
{
  const SmallProblem p = two_region_problem(0.1);
  const double lambda = 0.7;
  const FusionProblem prob{p.ops, p.y_h, p.y_mp, p.q_mp, lambda, 0.0};
  FusionConfig cfg;
  const AdmmResult r = admm_estimate_C(prob, p.q, AdmmState::zeros(256, 2, 1.0), cfg);

  const Eigen::MatrixXd dense = hsfuse::testing::dense_system(p.grid, p.ops.kernel(),
                                                              p.ops.decimation(), lambda, 0.0);
  const Eigen::MatrixXd closed = dense.ldlt().solve(data_rhs(prob, p.q));
  EXPECT_LT(relative_error(r.C, closed), 1e-8);
  EXPECT_EQ(r.iterations, 1);
  EXPECT_TRUE(r.converged);
  EXPECT_LT((r.state.U1 - p.ops.dh(r.C)).norm(), 1e-12);
  EXPECT_LT((r.state.U2 - p.ops.dv(r.C)).norm(), 1e-12);
  EXPECT_EQ(r.state.G1.norm(), 0.0);
}

TEST(Admm, ScalarCaseWithoutBlur)
{
  const GridShape g{6, 6};
  const ForwardOperators ops(g, BlurKernel::identity(), Decimation(1));
  const Eigen::MatrixXd y_h = random_matrix(36, 4, 30);
  const Eigen::MatrixXd y_mp = random_matrix(36, 3, 31);
  const Eigen::MatrixXd q = random_orthonormal_rows(2, 4, 32);
  const Eigen::MatrixXd q_mp = random_orthonormal_rows(2, 3, 33);
  const double lambda = 1.3;
  const FusionProblem prob{ops, y_h, y_mp, q_mp, lambda, 0.0};
  const AdmmResult r = admm_estimate_C(prob, q, AdmmState::zeros(36, 2, 1.0), FusionConfig{});
  const Eigen::MatrixXd expected = (y_h * q.transpose() + lambda * y_mp * q_mp.transpose()) / (1.0 + lambda);
  EXPECT_LT(relative_error(r.C, expected), 1e-12);
}

TEST(Admm, ConstantImageConvergesImmediately)
{
  const GridShape g{8, 8};
  const ForwardOperators ops(g, build_gaussian_kernel(0.8, 1), Decimation(2));
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(64, 2);
  c.col(0).setConstant(1.5);
  c.col(1).setConstant(-0.25);
  const Eigen::MatrixXd q = random_orthonormal_rows(2, 5, 40);
  const Eigen::MatrixXd q_mp = random_orthonormal_rows(2, 3, 41);
  const Eigen::MatrixXd y_h = ops.sk(c) * q;
  const Eigen::MatrixXd y_mp = c * q_mp;
  const FusionProblem prob{ops, y_h, y_mp, q_mp, 1.0, 0.05};
  const AdmmResult r = admm_estimate_C(prob, q, AdmmState::zeros(64, 2, 1.0), FusionConfig{});
  EXPECT_EQ(r.iterations, 1);
  EXPECT_TRUE(r.converged);
  EXPECT_EQ(r.state.r_res, 0.0);
  EXPECT_EQ(r.state.s_res, 0.0);
  EXPECT_LT(relative_error(r.C, c), 1e-12);
  EXPECT_LT(tv_norm(ops.dh(r.C), ops.dv(r.C)), 1e-10);
}

TEST(Admm, WarmStartResumesExactly)
{
  const SmallProblem p = two_region_problem(0.05);
  const FusionProblem prob{p.ops, p.y_h, p.y_mp, p.q_mp, 1.0, 0.05};
  FusionConfig cfg;
  cfg.eps_admm = 1e-300;  // never stop on residuals
  const int k = 7;

  cfg.max_admm_iters = 2 * k;
  const AdmmResult full = admm_estimate_C(prob, p.q, AdmmState::zeros(256, 2, 1.0), cfg);
  cfg.max_admm_iters = k;
  const AdmmResult first = admm_estimate_C(prob, p.q, AdmmState::zeros(256, 2, 1.0), cfg);
  const AdmmResult second = admm_estimate_C(prob, p.q, first.state, cfg);

  EXPECT_EQ(full.iterations, 2 * k);
  EXPECT_LE((full.C - second.C).norm(), 1e-12 * full.C.norm());
  EXPECT_LE((full.state.U1 - second.state.U1).norm(), 1e-12 * full.state.U1.norm());
  EXPECT_LE((full.state.G2 - second.state.G2).norm(), 1e-12 * full.state.G2.norm());
}

TEST(Admm, ResidualsConvergeOnNoiselessData)
{
  const SmallProblem p = two_region_problem(0.0);
  for (SolverBackend backend : {SolverBackend::fft, SolverBackend::cg}) {
    const FusionProblem prob{p.ops, p.y_h, p.y_mp, p.q_mp, 1.0, 0.05};
    FusionConfig cfg;
    cfg.backend = backend;
    const AdmmResult r = admm_estimate_C(prob, p.q, AdmmState::zeros(256, 2, 1.0), cfg);
    EXPECT_TRUE(r.converged) << to_string(backend);
    EXPECT_LE(r.iterations, 500);
    EXPECT_LT(r.state.r_res, 1e-4);
    EXPECT_LT(r.state.s_res, 1e-4);
  }
}

TEST(Admm, BackendsAgree)
{
  const SmallProblem p = two_region_problem(0.05);
  const FusionProblem prob{p.ops, p.y_h, p.y_mp, p.q_mp, 1.0, 0.05};
  FusionConfig cfg;
  cfg.eps_admm = 1e-300;
  cfg.max_admm_iters = 20;
  const AdmmResult a = admm_estimate_C(prob, p.q, AdmmState::zeros(256, 2, 1.0), cfg);
  cfg.backend = SolverBackend::cg;
  const AdmmResult b = admm_estimate_C(prob, p.q, AdmmState::zeros(256, 2, 1.0), cfg);
  EXPECT_LT(relative_error(a.C, b.C), 1e-8);
}

TEST(Admm, AdaptiveRhoStillConverges)
{
  const SmallProblem p = two_region_problem(0.05);
  const FusionProblem prob{p.ops, p.y_h, p.y_mp, p.q_mp, 1.0, 0.05};
  FusionConfig cfg;
  cfg.rho_adapt = true;
  cfg.rho0 = 50.0;
  const AdmmResult r = admm_estimate_C(prob, p.q, AdmmState::zeros(256, 2, cfg.rho0), cfg);
  EXPECT_TRUE(r.converged);
  EXPECT_GT(r.state.rho, 0.0);
}

TEST(Admm, ReachesReferenceObjective)
{
  const SmallProblem p = two_region_problem(0.05);
  const double lambda = 1.0;
  const double lambda_tv = 0.05;
  const FusionProblem prob{p.ops, p.y_h, p.y_mp, p.q_mp, lambda, lambda_tv};
  const AdmmResult r = admm_estimate_C(prob, p.q, AdmmState::zeros(256, 2, 1.0), FusionConfig{});
  ASSERT_TRUE(r.converged);

  const hsfuse::testing::ReferenceResult ref = hsfuse::testing::reference_tv_minimizer(
      p.grid, p.ops.kernel(), p.ops.decimation(), p.y_h, p.y_mp, p.q, p.q_mp, lambda, lambda_tv);
  const double j_admm = objective_J(r.C, p.q, p.q_mp, p.y_h, p.y_mp, p.ops, lambda, lambda_tv);
  const double j_ref = objective_J(ref.C, p.q, p.q_mp, p.y_h, p.y_mp, p.ops, lambda, lambda_tv);
  EXPECT_LE(std::abs(j_admm - j_ref), 1e-4 * j_ref) << "admm " << j_admm << " reference " << j_ref;
}

TEST(Admm, StateShapeChecked)
{
  const SmallProblem p = two_region_problem(0.0);
  const FusionProblem prob{p.ops, p.y_h, p.y_mp, p.q_mp, 1.0, 0.05};
  EXPECT_THROW((void)admm_estimate_C(prob, p.q, AdmmState::zeros(255, 2, 1.0), FusionConfig{}),
               DimensionError);
}

// ---- alternating optimization -----------------------------------------------------

TEST(AoFuse, HugeToleranceRunsOneIteration)
{
  const SmallProblem p = two_region_problem(0.05);
  FusionConfig cfg;
  cfg.ne = 2;
  cfg.eps_ao = 10.0;
  const FusionResult r = ao_fuse(p.y_h, p.y_mp, p.ops, cfg);
  EXPECT_EQ(r.objective_trace.size(), 1u);
  EXPECT_TRUE(r.converged);
}

TEST(AoFuse, AllZeroInputConvergesToZero)
{
  const GridShape g{8, 8};
  const ForwardOperators ops(g, build_gaussian_kernel(0.8, 1), Decimation(2));
  FusionConfig cfg;
  cfg.ne = 2;
  const FusionResult r =
      ao_fuse(Eigen::MatrixXd::Zero(16, 4), Eigen::MatrixXd::Zero(64, 3), ops, cfg);
  EXPECT_TRUE(r.converged);
  EXPECT_EQ(r.objective_trace.size(), 1u);
  EXPECT_EQ(r.factors.C.norm(), 0.0);
  EXPECT_LT(orthonormality_error(r.factors.Q), 1e-10);
}

TEST(AoFuse, RecoversPlantedLowRankProduct)
{
  const GridShape g{12, 12};
  const ForwardOperators ops(g, BlurKernel::identity(), Decimation(1));
  const Eigen::MatrixXd c_star = random_matrix(144, 3, 50);
  const Eigen::MatrixXd q_star = random_orthonormal_rows(3, 8, 51);
  const Eigen::MatrixXd qmp_star = random_orthonormal_rows(3, 5, 52);
  FusionConfig cfg;
  cfg.ne = 3;
  cfg.lambda_tv = 0.0;
  cfg.eps_ao = 1e-13;
  cfg.max_ao_iters = 2000;
  const FusionResult r = ao_fuse(c_star * q_star, c_star * qmp_star, ops, cfg);
  EXPECT_TRUE(r.converged);
  const Eigen::MatrixXd truth = c_star * q_star;
  EXPECT_LE(relative_error(r.factors.C * r.factors.Q, truth), 1e-6);
}

TEST(AoFuse, InvariantsHoldAlongTheRun)
{
  const SmallProblem p = two_region_problem(0.05);
  FusionConfig cfg;
  cfg.ne = 2;
  cfg.max_ao_iters = 15;
  const Eigen::MatrixXd qmp0 = init_subspace(p.y_mp, 2);
  std::vector<AoRecord> seen;
  const FusionResult r = ao_fuse(p.y_h, p.y_mp, p.ops, cfg, [&](const AoRecord& rec) { seen.push_back(rec); });
  EXPECT_EQ(seen.size(), r.records.size());
  EXPECT_LE(r.objective_trace.size(), 15u);
  EXPECT_EQ(r.factors.Q_mp, qmp0);
  EXPECT_LT(orthonormality_error(r.factors.Q), 1e-10);
  for (std::size_t t = 0; t < r.objective_trace.size(); ++t) {
    EXPECT_TRUE(std::isfinite(r.objective_trace[t]));
    if (t > 0) {
      EXPECT_LE(r.objective_trace[t], r.objective_trace[t - 1] * (1.0 + 1e-6));
    }
  }
  const SpectralCube features = fused_features(r, p.grid);
  EXPECT_EQ(features.bands(), 2);
  EXPECT_EQ(features.data(), r.factors.C);
}

TEST(AoFuse, RejectsBadInputs)
{
  const SmallProblem p = two_region_problem(0.0);
  FusionConfig cfg;
  cfg.ne = 5;  // exceeds the 4 profile columns
  EXPECT_THROW((void)ao_fuse(p.y_h, p.y_mp, p.ops, cfg), ParameterError);
  cfg.ne = 2;
  EXPECT_THROW((void)ao_fuse(p.y_h.topRows(10), p.y_mp, p.ops, cfg), DimensionError);
  Eigen::MatrixXd bad = p.y_mp;
  bad(3, 1) = std::nan("");
  EXPECT_THROW((void)ao_fuse(p.y_h, bad, p.ops, cfg), ParameterError);
  cfg.lambda = 0.0;
  EXPECT_THROW((void)ao_fuse(p.y_h, p.y_mp, p.ops, cfg), ParameterError);
}
