#include <gtest/gtest.h>

#include <random>

#include "ncimpute/spectral.hpp"
#include "oracles.hpp"

using namespace ncimpute;

namespace {

std::vector<PenaltySpec> all_families() {
  return {PenaltySpec::soft(0.8),          {Family::L0, 0.6},        {Family::Lgamma, 0.5, 0.5},
          {Family::SCAD, 0.7, 3.7},        PenaltySpec::mcp(0.9, 2.0), PenaltySpec::mcp(0.9, 0.7),
          {Family::Log, 0.8, 3.0}};
}

// Separable scalar construction: minimize each singular value's subproblem
// with the 1-D oracle and map back through the SVD.
double scalar_oracle_objective(const Eigen::MatrixXd& z, const PenaltySpec& p) {
  const Eigen::VectorXd s = oracle::dense_singular_values(z);
  double total = 0.0;
  for (Eigen::Index k = 0; k < s.size(); ++k) {
    total += oracle::grid_minimize([&](double a) { return scalar_objective(p, a, s(k)); }, 0.0, s(k), 4001).f;
  }
  return total;
}

}  // namespace

TEST(Spectral, SoftThresholdExample) {
  Eigen::MatrixXd z = Eigen::MatrixXd::Zero(2, 2);
  z(0, 0) = 3.0;
  z(1, 1) = 0.5;
  const LowRankFactor f = spectral_threshold_dense(z, PenaltySpec::soft(1.0));
  ASSERT_EQ(f.rank(), 1);
  EXPECT_NEAR(f.singvals(0), 2.0, 1e-14);
  EXPECT_TRUE(f.satisfies_invariants());
}

TEST(Spectral, ZeroMatrixGivesEmptyFactor) {
  const LowRankFactor f = spectral_threshold_dense(Eigen::MatrixXd::Zero(4, 3), PenaltySpec::mcp(1.0, 2.0));
  EXPECT_EQ(f.rank(), 0);
  EXPECT_EQ(f.rows(), 4);
  EXPECT_EQ(f.cols(), 3);
}

TEST(Spectral, RejectsNonFinite) {
  Eigen::MatrixXd z = Eigen::MatrixXd::Ones(3, 3);
  z(1, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(spectral_threshold_dense(z, PenaltySpec::soft(1.0)), input_error);
}

TEST(Spectral, ObjectiveBasics) {
  std::mt19937_64 rng(1);
  const Eigen::MatrixXd z = gaussian_matrix(4, 3, rng);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(z, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const LowRankFactor own(svd.matrixU(), svd.singularValues(), svd.matrixV());
  EXPECT_NEAR(spectral_objective(own, z, PenaltySpec::soft(0.0)), 0.0, 1e-24 + 1e-28);
  EXPECT_NEAR(spectral_objective(LowRankFactor::zero(4, 3), z, PenaltySpec::mcp(1, 2)), 0.5 * z.squaredNorm(), 1e-14);
  // dense oracle
  const PenaltySpec p = PenaltySpec::mcp(0.7, 3.0);
  const double direct = 0.5 * (own.dense() * 0.5 - z).squaredNorm() +
                        [&] {
                          double acc = 0;
                          for (int k = 0; k < 3; ++k) acc += penalty_value(p, 0.5 * svd.singularValues()(k));
                          return acc;
                        }();
  LowRankFactor half = own;
  half.singvals *= 0.5;
  EXPECT_NEAR(spectral_objective(half, z, p), direct, 1e-12);
  EXPECT_THROW(spectral_objective(own, Eigen::MatrixXd::Zero(3, 3), p), input_error);
}

TEST(Spectral, MatchesSeparableScalarProblem) {
  std::mt19937_64 rng(2);
  for (const PenaltySpec& p : all_families()) {
    for (int t = 0; t < 5; ++t) {
      const Eigen::MatrixXd z = 1.5 * gaussian_matrix(6, 5, rng);
      const LowRankFactor f = spectral_threshold_dense(z, p);
      EXPECT_TRUE(f.satisfies_invariants());
      EXPECT_NEAR(spectral_objective(f, z, p), scalar_oracle_objective(z, p), 1e-8) << p.token();
    }
  }
}

TEST(Spectral, StochasticLocalOptimality) {
  std::mt19937_64 rng(3);
  const Eigen::MatrixXd z = gaussian_matrix(5, 4, rng);
  const PenaltySpec p = PenaltySpec::mcp(0.5, 2.0);
  const LowRankFactor f = spectral_threshold_dense(z, p);
  const double best = spectral_objective(f, z, p);
  const Eigen::MatrixXd x0 = f.dense();
  const auto dense_objective = [&](const Eigen::MatrixXd& x) {
    const Eigen::VectorXd s = oracle::dense_singular_values(x);
    double pen = 0.0;
    for (Eigen::Index k = 0; k < s.size(); ++k) pen += penalty_value(p, s(k));
    return 0.5 * (x - z).squaredNorm() + pen;
  };
  std::normal_distribution<double> normal(0.0, 1.0);
  int worse = 0;
  for (int t = 0; t < 100000; ++t) {
    const double scale = t % 2 ? 1e-2 : 1e-1;
    Eigen::MatrixXd x = x0;
    for (Eigen::Index k = 0; k < x.size(); ++k) x.data()[k] += scale * normal(rng);
    worse += dense_objective(x) >= best - 1e-12;
  }
  EXPECT_EQ(worse, 100000);
  EXPECT_LE(best, dense_objective(spectral_threshold_dense(z, PenaltySpec::soft(0.5)).dense()) + 1e-12);
  EXPECT_LE(best, dense_objective(spectral_threshold_dense(z, {Family::L0, 0.125}).dense()) + 1e-12);
}

TEST(Spectral, PreservesSingularVectors) {
  std::mt19937_64 rng(4);
  const Eigen::MatrixXd z = gaussian_matrix(7, 5, rng);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(z);
  const LowRankFactor f = spectral_threshold_dense(z, PenaltySpec::mcp(0.8, 3.0));
  ASSERT_GT(f.rank(), 0);
  for (Eigen::Index k = 0; k < f.rank(); ++k) {
    // f keeps the order of the input values for a monotone threshold
    const double sigma_in = svd.singularValues()(k);
    EXPECT_LT((z * f.right.col(k) - sigma_in * f.left.col(k)).norm(), 1e-10);
  }
}

TEST(Spectral, SoftLimitOfMcp) {
  std::mt19937_64 rng(5);
  const Eigen::MatrixXd z = 2.0 * gaussian_matrix(6, 6, rng);
  const Eigen::MatrixXd a = spectral_threshold_dense(z, PenaltySpec::mcp(1.0, 1e8)).dense();
  const Eigen::MatrixXd b = spectral_threshold_dense(z, PenaltySpec::soft(1.0)).dense();
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(Spectral, EllScaledOperatorMatchesScalarOracle) {
  std::mt19937_64 rng(6);
  const Eigen::MatrixXd z = gaussian_matrix(5, 5, rng);
  const PenaltySpec p = PenaltySpec::mcp(0.6, 1.5);
  const double ell = 0.7;
  const LowRankFactor f = spectral_threshold_dense(z, p, ell);
  const Eigen::VectorXd s = oracle::dense_singular_values(z);
  double oracle_total = 0.0;
  for (Eigen::Index k = 0; k < s.size(); ++k) {
    oracle_total +=
        oracle::grid_minimize([&](double a) { return scalar_objective(p, a, s(k), ell); }, 0.0, s(k), 4001).f;
  }
  const double mine = 0.5 * (ell + 1.0) * (f.dense() - z).squaredNorm() + spectral_penalty(f.singvals, p);
  EXPECT_NEAR(mine, oracle_total, 1e-8);
}

TEST(Spectral, LipschitzBound) {
  const LipschitzReport soft = lipschitz_check(PenaltySpec::soft(0.7), 200, {6, 5}, 7);
  EXPECT_DOUBLE_EQ(soft.bound, 1.0);
  EXPECT_FALSE(soft.violated());
  EXPECT_LE(soft.max_ratio, 1.0 + 1e-12);

  const LipschitzReport mcp = lipschitz_check(PenaltySpec::mcp(1.0, 2.0), 1000, {10, 8}, 8);
  EXPECT_DOUBLE_EQ(mcp.bound, 2.0);
  EXPECT_FALSE(mcp.violated()) << mcp.max_ratio;

  const Eigen::MatrixXd z = Eigen::MatrixXd::Ones(3, 3);
  EXPECT_EQ(lipschitz_ratio(PenaltySpec::mcp(1.0, 2.0), z, z), 0.0);
  EXPECT_THROW(lipschitz_check(PenaltySpec::mcp(1.0, 0.9), 10, {3, 3}, 1), domain_error);
  EXPECT_THROW(lipschitz_check({Family::L0, 1.0}, 10, {3, 3}, 1), domain_error);
}

TEST(Spectral, DenseSizeLimit) {
  EXPECT_THROW(spectral_threshold_dense(Eigen::MatrixXd::Zero(401, 401), PenaltySpec::soft(1.0)), input_error);
}
