#include <gtest/gtest.h>

#include <random>

#include "ncimpute/data.hpp"
#include "ncimpute/impute.hpp"
#include "oracles.hpp"

using namespace ncimpute;

namespace {

const double inf = std::numeric_limits<double>::infinity();

SparseTriplets full_observation(const Eigen::MatrixXd& y) {
  std::vector<Triplet> t;
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    for (Eigen::Index j = 0; j < y.cols(); ++j) t.push_back({i, j, y(i, j)});
  }
  return SparseTriplets(y.rows(), y.cols(), std::move(t));
}

SparseTriplets random_observation(const Eigen::MatrixXd& y, double frac, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Triplet> t;
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    for (Eigen::Index j = 0; j < y.cols(); ++j) {
      if (u(rng) < frac) t.push_back({i, j, y(i, j)});
    }
  }
  return SparseTriplets(y.rows(), y.cols(), std::move(t));
}

double dense_objective(const Eigen::MatrixXd& x, const SparseTriplets& data, const PenaltySpec& p) {
  double fit = 0.0;
  for (std::size_t k = 0; k < data.nnz(); ++k) {
    const double r = x(data.row(k), data.col(k)) - data.value(k);
    fit += r * r;
  }
  const Eigen::VectorXd s = oracle::dense_singular_values(x);
  double pen = 0.0;
  for (Eigen::Index k = 0; k < s.size(); ++k) {
    if (s(k) > 1e-12 * std::max(1.0, s(0))) pen += penalty_value(p, s(k));
  }
  return 0.5 * fit + pen;
}

FitConfig tight() {
  FitConfig cfg;
  cfg.epsilon = 1e-12;
  cfg.max_outer_iters = 5000;
  return cfg;
}

}  // namespace

TEST(Objective, Examples) {
  SparseTriplets d(3, 3, {{0, 0, 1.0}, {1, 2, 3.0}});  // ||P(Y)||^2 = 10
  EXPECT_DOUBLE_EQ(objective(LowRankFactor::zero(3, 3), d, PenaltySpec::mcp(1.0, 2.0)), 5.0);

  Rng rng(1);
  const Eigen::MatrixXd y = gaussian_matrix(6, 5, rng);
  const SparseTriplets data = random_observation(y, 0.6, rng);
  const LowRankFactor x = spectral_threshold_dense(gaussian_matrix(6, 5, rng), PenaltySpec::soft(0.3));
  for (const PenaltySpec& p : {PenaltySpec::soft(0.0), PenaltySpec::mcp(0.4, 3.0), PenaltySpec{Family::SCAD, 0.4, 3.0}}) {
    EXPECT_NEAR(objective(x, data, p), dense_objective(x.dense(), data, p), 1e-10);
  }
  EXPECT_THROW(objective(LowRankFactor::zero(2, 3), d, PenaltySpec::soft(1)), input_error);
}

TEST(Objective, FactorDifferenceMatchesDense) {
  Rng rng(2);
  const Eigen::MatrixXd z = gaussian_matrix(9, 7, rng);
  const LowRankFactor a = spectral_threshold_dense(z, PenaltySpec::soft(0.5));
  const LowRankFactor b = spectral_threshold_dense(z + 0.1 * gaussian_matrix(9, 7, rng), PenaltySpec::soft(1.0));
  EXPECT_NEAR(factor_difference_sq(a, b), (a.dense() - b.dense()).squaredNorm(), 1e-10);
  EXPECT_NEAR(factor_difference_sq(a, a), 0.0, 1e-24);
  EXPECT_NEAR(factor_difference_sq(a, LowRankFactor::zero(9, 7)), a.dense().squaredNorm(), 1e-10);
}

TEST(Step, FullyObservedIsOneThreshold) {
  Rng rng(3);
  const Eigen::MatrixXd y = 2.0 * gaussian_matrix(8, 6, rng);
  const SparseTriplets data = full_observation(y);
  const PenaltySpec p = PenaltySpec::mcp(1.0, 3.0);
  const StepResult s = ncimpute_step(LowRankFactor::zero(8, 6), data, p, FitConfig{}, 6);
  const Eigen::MatrixXd expected = spectral_threshold_dense(y, p).dense();
  EXPECT_LT((s.next.dense() - expected).norm(), 1e-10);
}

TEST(Step, SufficientDecrease) {
  Rng rng(4);
  for (int t = 0; t < 20; ++t) {
    const Eigen::MatrixXd y = 2.0 * gaussian_matrix(10, 8, rng);
    const SparseTriplets data = random_observation(y, 0.6, rng);
    FitConfig cfg;
    cfg.ell = t % 2 ? 0.0 : 0.5;
    cfg.svd_backend = t % 3 == 0 ? SvdBackend::Iterative : SvdBackend::Dense;
    cfg.svd_tol = 1e-13;
    cfg.svd_max_iters = 5000;
    const PenaltySpec p = t % 4 == 1 ? PenaltySpec{Family::SCAD, 0.8, 3.0} : PenaltySpec::mcp(1.0, 2.0);
    LowRankFactor x = LowRankFactor::zero(10, 8);
    for (int k = 0; k < 15; ++k) {
      const StepResult s = ncimpute_step(x, data, p, cfg, 8);
      EXPECT_GE(s.delta, 0.0);
      EXPECT_LE(objective(s.next, data, p), objective(x, data, p) - s.delta + 1e-9) << "t=" << t << " k=" << k;
      EXPECT_NEAR(s.diff_sq, (s.next.dense() - x.dense()).squaredNorm(), 1e-9);
      x = s.next;
    }
  }
}

TEST(Step, FixedPointHasZeroDelta) {
  Rng rng(5);
  const Eigen::MatrixXd y = 3.0 * gaussian_matrix(12, 9, rng);
  const SparseTriplets full = full_observation(y);
  const PenaltySpec p = PenaltySpec::mcp(1.5, 4.0);
  const LowRankFactor star = spectral_threshold_dense(y, p);
  EXPECT_LE(ncimpute_step(star, full, p, FitConfig{}, 9).delta, 1e-12);

  const SyntheticInstance inst = gen_rom(12, 9, 2, 10.0, 0.3, 5);
  const PenaltySpec q = PenaltySpec::mcp(0.2 * lambda_max(inst.observed), 4.0);
  LowRankFactor x = LowRankFactor::zero(12, 9);
  double delta = inf;
  for (int k = 0; k < 20000 && delta > 1e-12; ++k) {
    const StepResult s = ncimpute_step(x, inst.observed, q, FitConfig{}, 9);
    delta = s.delta;
    x = s.next;
  }
  EXPECT_LE(delta, 1e-12);
}

TEST(Step, RankCapFlag) {
  Rng rng(6);
  const Eigen::MatrixXd y = 5.0 * gaussian_matrix(10, 8, rng);
  const SparseTriplets data = full_observation(y);
  const StepResult s = ncimpute_step(LowRankFactor::zero(10, 8), data, PenaltySpec::soft(0.1), FitConfig{}, 2);
  EXPECT_TRUE(s.rank_cap_hit);
  EXPECT_EQ(s.next.rank(), 2);
  const StepResult full = ncimpute_step(LowRankFactor::zero(10, 8), data, PenaltySpec::soft(0.1), FitConfig{}, 8);
  EXPECT_FALSE(full.rank_cap_hit);
}

TEST(FitSingle, AboveLambdaMaxGivesZero) {
  Rng rng(7);
  const SparseTriplets data = random_observation(gaussian_matrix(20, 15, rng), 0.5, rng);
  const double lmax = lambda_max(data);
  const FitResult fit = fit_single(data, PenaltySpec::soft(1.001 * lmax), FitConfig{}, LowRankFactor::zero(20, 15));
  EXPECT_EQ(fit.rank, 0);
  EXPECT_EQ(fit.outer_iters, 1);
  const FitResult below = fit_single(data, PenaltySpec::soft(0.95 * lmax), FitConfig{}, LowRankFactor::zero(20, 15));
  EXPECT_GE(below.rank, 1);
}

TEST(FitSingle, FullyObservedConvergesImmediately) {
  Rng rng(8);
  const Eigen::MatrixXd y = 2.0 * gaussian_matrix(10, 7, rng);
  const PenaltySpec p = PenaltySpec::mcp(1.0, 2.5);
  const FitResult fit = fit_single(full_observation(y), p, FitConfig{}, LowRankFactor::zero(10, 7));
  EXPECT_LE(fit.outer_iters, 2);
  EXPECT_LT((fit.factor.dense() - spectral_threshold_dense(y, p).dense()).norm(), 1e-10);
}

TEST(FitSingle, DescentAndRateOnSyntheticInstance) {
  const SyntheticInstance inst = gen_rom(50, 40, 3, 5.0, 0.5, 11);
  FitConfig cfg;
  cfg.epsilon = 1e-9;
  cfg.max_outer_iters = 2000;
  const double lmax = lambda_max(inst.observed);
  const FitResult fit = fit_single(inst.observed, PenaltySpec::mcp(0.1 * lmax, 20.0), cfg, LowRankFactor::zero(50, 40));
  ASSERT_GE(fit.objective_trace.size(), 3u);
  for (std::size_t k = 1; k < fit.objective_trace.size(); ++k) {
    EXPECT_LE(fit.objective_trace[k], fit.objective_trace[k - 1] + 1e-9);
  }
  for (double d : fit.delta_trace) EXPECT_GE(d, 0.0);
  // min_{k <= K} Delta_k <= (f(X_1) - f(X_{K+1})) / K, X_1 being the first iterate
  const auto& f = fit.objective_trace;
  double running_min = inf;
  for (std::size_t k = 1; k < fit.delta_trace.size(); ++k) {
    running_min = std::min(running_min, fit.delta_trace[k]);
    const double kk = double(k);
    EXPECT_LE(running_min, (f[1] - f[k + 1]) / kk + 1e-12);
  }
  EXPECT_EQ(fit.rank, fit.factor.rank());
  EXPECT_LT(fit.stationarity_residual, 1e-3);
}

TEST(FitSingle, SoftImputeRecursion) {
  Rng rng(9);
  const Eigen::MatrixXd y = 2.0 * gaussian_matrix(9, 7, rng);
  const SparseTriplets data = random_observation(y, 0.6, rng);
  const PenaltySpec p = PenaltySpec::soft(1.2);
  Eigen::MatrixXd mask = Eigen::MatrixXd::Zero(9, 7);
  for (std::size_t k = 0; k < data.nnz(); ++k) mask(data.row(k), data.col(k)) = 1.0;
  const Eigen::MatrixXd py = data.to_dense();
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(9, 7);
  LowRankFactor xf = LowRankFactor::zero(9, 7);
  for (int k = 0; k < 10; ++k) {
    x = spectral_threshold_dense(py + (Eigen::MatrixXd::Ones(9, 7) - mask).cwiseProduct(x), p).dense();
    xf = ncimpute_step(xf, data, p, FitConfig{}, 7).next;
    EXPECT_LT((xf.dense() - x).norm(), 1e-10);
  }
}

TEST(FitSingle, RankStabilisesForDiscontinuousOperator) {
  Rng rng(10);
  for (int t = 0; t < 5; ++t) {
    const SyntheticInstance inst = gen_rom(30, 25, 3, 5.0, 0.4, 100 + t);
    const double lmax = lambda_max(inst.observed);
    for (double ell : {0.0, 1.0}) {
      FitConfig cfg = tight();
      cfg.ell = ell;
      cfg.max_outer_iters = 3000;
      const double gamma = 0.9 / (ell + 1.0);
      const FitResult fit =
          fit_single(inst.observed, PenaltySpec::mcp(0.05 * lmax, gamma), cfg, LowRankFactor::zero(30, 25));
      if (fit.converged) {
        ASSERT_TRUE(fit.rank_stabilized_at.has_value());
        EXPECT_LE(*fit.rank_stabilized_at, fit.outer_iters);
      }
    }
  }
}

TEST(FitSingle, BackendsAgree) {
  const SyntheticInstance inst = gen_rom(40, 30, 3, 10.0, 0.5, 21);
  const double lmax = lambda_max(inst.observed);
  FitConfig dense = tight();
  dense.epsilon = 1e-14;
  dense.svd_backend = SvdBackend::Dense;
  FitConfig iter = dense;
  iter.svd_backend = SvdBackend::Iterative;
  iter.svd_tol = 1e-12;
  iter.svd_max_iters = 1000;
  const PenaltySpec p = PenaltySpec::mcp(0.2 * lmax, 10.0);
  const FitResult a = fit_single(inst.observed, p, dense, LowRankFactor::zero(40, 30));
  const FitResult b = fit_single(inst.observed, p, iter, LowRankFactor::zero(40, 30));
  EXPECT_EQ(a.rank, b.rank);
  EXPECT_NEAR(a.objective, b.objective, 1e-6 * a.objective);
  EXPECT_LT((a.factor.dense() - b.factor.dense()).norm(), 1e-4 * a.factor.frobenius_norm());
}

TEST(FitSingle, RankGrowsPastInitialOperatingRank) {
  const SyntheticInstance inst = gen_rom(40, 30, 12, inf, 0.3, 5);
  FitConfig cfg;
  cfg.rank_buffer = 1;
  cfg.svd_backend = SvdBackend::Iterative;
  cfg.epsilon = 1e-8;
  const double lmax = lambda_max(inst.observed);
  const FitResult fit = fit_single(inst.observed, PenaltySpec::soft(0.01 * lmax), cfg, LowRankFactor::zero(40, 30));
  EXPECT_GE(fit.rank, 12);
}

TEST(StationarityResidual, VanishesAtConvergedSoftFit) {
  Rng rng(12);
  const Eigen::MatrixXd y = 2.0 * gaussian_matrix(15, 10, rng);
  const SparseTriplets data = random_observation(y, 0.6, rng);
  const PenaltySpec p = PenaltySpec::soft(1.0);
  const FitResult fit = fit_single(data, p, tight(), LowRankFactor::zero(15, 10));
  ASSERT_TRUE(fit.converged);
  ASSERT_GT(fit.rank, 0);
  EXPECT_LT(fit.stationarity_residual, 1e-6);
  // away from the solution it does not
  LowRankFactor off = fit.factor;
  off.singvals *= 1.3;
  EXPECT_GT(stationarity_residual(off, data, p), 1e-3);
}

TEST(Grid, Validation) {
  GridSpec g{{3.0, 2.0}, {inf, 5.0}, Family::MCPlus};
  EXPECT_NO_THROW(g.validate());
  EXPECT_THROW((GridSpec{{2.0, 3.0}, {inf}}.validate()), input_error);
  EXPECT_THROW((GridSpec{{2.0}, {5.0}}.validate()), input_error);
  EXPECT_THROW((GridSpec{{2.0}, {inf, 2.0, 3.0}}.validate()), input_error);
  const auto l = GridSpec::linear_lambdas(10.0, 100, 0.001);
  ASSERT_EQ(l.size(), 100u);
  EXPECT_DOUBLE_EQ(l.front(), 10.0);
  EXPECT_NEAR(l.back(), 0.01, 1e-14);
  const auto gs = GridSpec::log_gammas(5000.0, 1.1, 25);
  ASSERT_EQ(gs.size(), 26u);
  EXPECT_TRUE(std::isinf(gs[0]));
  EXPECT_NEAR(gs[1], 5000.0, 1e-9);
  EXPECT_NEAR(gs[25], 1.1, 1e-12);
}

TEST(Surface, SingleCellIsSoftFit) {
  const SyntheticInstance inst = gen_rom(20, 15, 2, 5.0, 0.5, 3);
  const double lmax = lambda_max(inst.observed);
  const GridSpec grid{{0.3 * lmax}, {inf}, Family::MCPlus};
  const SolutionSurface s = fit_surface(inst.observed, grid, FitConfig{});
  const FitResult direct = fit_single(inst.observed, PenaltySpec::soft(0.3 * lmax), FitConfig{}, LowRankFactor::zero(20, 15));
  EXPECT_EQ(s.cell(0, 0).fit.rank, direct.rank);
  EXPECT_NEAR(s.cell(0, 0).fit.objective, direct.objective, 1e-12);
}

TEST(Surface, CellsBeatTheirWarmStarts) {
  const SyntheticInstance inst = gen_rom(30, 20, 3, 5.0, 0.5, 4);
  const double lmax = lambda_max(inst.observed);
  const GridSpec grid{GridSpec::linear_lambdas(lmax, 5, 0.05), {inf, 10.0, 2.0}, Family::MCPlus};
  SurfaceOptions opts;
  opts.test_error = [&](const LowRankFactor& x) { return *relative_error(x, inst.holdout); };
  const SolutionSurface s = fit_surface(inst.observed, grid, FitConfig{}, opts);
  for (std::size_t j = 0; j < 3; ++j) {
    for (std::size_t i = 0; i < 5; ++i) {
      const SurfaceCell& c = s.cell(i, j);
      ASSERT_FALSE(c.failed) << c.error;
      const PenaltySpec p = grid.spec(i, j);
      if (i > 0) EXPECT_LE(c.fit.objective, objective(s.cell(i - 1, j).fit.factor, inst.observed, p) + 1e-9);
      if (j > 0) EXPECT_LE(c.fit.objective, objective(s.cell(i, j - 1).fit.factor, inst.observed, p) + 1e-9);
      EXPECT_FALSE(std::isnan(c.test_err));
      EXPECT_FALSE(std::isnan(c.train_err));
    }
  }
  // soft path ranks grow as lambda decreases (statistical: allow one dip)
  int dips = 0;
  for (std::size_t i = 1; i < 5; ++i) dips += s.cell(i, 0).fit.rank < s.cell(i - 1, 0).fit.rank;
  EXPECT_LE(dips, 1);
  EXPECT_TRUE(s.best_test_cell(0, 1).has_value());
}

TEST(Surface, BestInitialPolicyRuns) {
  const SyntheticInstance inst = gen_rom(30, 20, 3, 5.0, 0.5, 4);
  const double lmax = lambda_max(inst.observed);
  const GridSpec grid{GridSpec::linear_lambdas(lmax, 4, 0.05), {inf, 3.0}, Family::MCPlus};
  SurfaceOptions opts;
  opts.policy = WarmStartPolicy::BestInitial;
  const SolutionSurface s = fit_surface(inst.observed, grid, FitConfig{}, opts);
  for (std::size_t i = 1; i < 4; ++i) {
    const PenaltySpec p = grid.spec(i, 1);
    const double f_lambda = objective(s.cell(i - 1, 1).fit.factor, inst.observed, p);
    const double f_gamma = objective(s.cell(i, 0).fit.factor, inst.observed, p);
    EXPECT_LE(s.cell(i, 1).fit.objective, std::min(f_lambda, f_gamma) + 1e-9);
  }
}
