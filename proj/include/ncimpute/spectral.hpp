#pragma once

// Spectral thresholding: S(Z) = U diag(s(sigma)) V' for Z = U diag(sigma) V'.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "ncimpute/error.hpp"
#include "ncimpute/penalty.hpp"
#include "ncimpute/rng.hpp"

namespace ncimpute {

/// Largest min(m, n) handled by a dense SVD; bigger operands go through
/// block_power_svd.
inline constexpr Eigen::Index dense_svd_max_dim = 400;

/// Relative cut below which thresholded singular values count as zero.
inline constexpr double zero_singular_value_cut = 1e-12;

/// X = U diag(sigma) V' with orthonormal U (m x r), V (n x r) and
/// nonincreasing positive sigma.
struct LowRankFactor {
  Eigen::MatrixXd left;
  Eigen::VectorXd singvals;
  Eigen::MatrixXd right;

  LowRankFactor() = default;
  LowRankFactor(Eigen::MatrixXd u, Eigen::VectorXd s, Eigen::MatrixXd v)
      : left(std::move(u)), singvals(std::move(s)), right(std::move(v)) {
    if (left.cols() != singvals.size() || right.cols() != singvals.size()) {
      throw input_error("LowRankFactor: rank mismatch between U, sigma and V");
    }
  }

  static LowRankFactor zero(Eigen::Index m, Eigen::Index n) {
    return {Eigen::MatrixXd(m, 0), Eigen::VectorXd(0), Eigen::MatrixXd(n, 0)};
  }

  Eigen::Index rows() const { return left.rows(); }
  Eigen::Index cols() const { return right.rows(); }
  Eigen::Index rank() const { return singvals.size(); }

  Eigen::MatrixXd dense() const { return left * singvals.asDiagonal() * right.transpose(); }

  double entry(Eigen::Index i, Eigen::Index j) const {
    double acc = 0.0;
    for (Eigen::Index k = 0; k < rank(); ++k) acc += left(i, k) * singvals(k) * right(j, k);
    return acc;
  }

  double frobenius_norm() const { return singvals.norm(); }

  /// Checks orthonormality (max-norm tolerance), ordering and positivity.
  bool satisfies_invariants(double tol = 1e-8) const {
    const Eigen::Index r = rank();
    if (r > std::min(rows(), cols())) return false;
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(r, r);
    if (r > 0) {
      if ((left.transpose() * left - eye).cwiseAbs().maxCoeff() > tol) return false;
      if ((right.transpose() * right - eye).cwiseAbs().maxCoeff() > tol) return false;
    }
    for (Eigen::Index k = 0; k < r; ++k) {
      if (!(singvals(k) > 0.0)) return false;
      if (k > 0 && singvals(k) > singvals(k - 1)) return false;
    }
    return true;
  }
};

/// Applies s^ell to each singular value of (u, sigma, v), drops zeros and
/// keeps at most `max_rank` components. The input sigma must be sorted
/// nonincreasing.
inline LowRankFactor threshold_singular_triplets(const Eigen::MatrixXd& u, const Eigen::VectorXd& sigma,
                                                 const Eigen::MatrixXd& v, const PenaltySpec& spec,
                                                 double ell,
                                                 Eigen::Index max_rank = Eigen::Index(-1)) {
  const Eigen::Index r = sigma.size();
  std::vector<std::pair<double, Eigen::Index>> kept;
  const double cut = r > 0 ? zero_singular_value_cut * sigma.maxCoeff() : 0.0;
  for (Eigen::Index k = 0; k < r; ++k) {
    const double s = scalar_threshold(spec, std::max(sigma(k), 0.0), ell);
    if (s > cut && s > 0.0) kept.emplace_back(s, k);
  }
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  if (max_rank >= 0 && static_cast<Eigen::Index>(kept.size()) > max_rank) kept.resize(max_rank);
  const auto out_rank = static_cast<Eigen::Index>(kept.size());
  LowRankFactor out{Eigen::MatrixXd(u.rows(), out_rank), Eigen::VectorXd(out_rank),
                    Eigen::MatrixXd(v.rows(), out_rank)};
  for (Eigen::Index k = 0; k < out_rank; ++k) {
    out.singvals(k) = kept[k].first;
    out.left.col(k) = u.col(kept[k].second);
    out.right.col(k) = v.col(kept[k].second);
  }
  return out;
}

inline void require_finite(const Eigen::MatrixXd& z, const char* what) {
  if (!z.allFinite()) throw input_error(std::string(what) + ": matrix has non-finite entries");
}

/// S^ell(Z) through a full SVD. Only for min(m, n) <= dense_svd_max_dim.
inline LowRankFactor spectral_threshold_dense(const Eigen::MatrixXd& z, const PenaltySpec& spec,
                                              double ell = 0.0) {
  require_finite(z, "spectral_threshold_dense");
  if (std::min(z.rows(), z.cols()) > dense_svd_max_dim) {
    throw input_error("spectral_threshold_dense: operand too large for a dense SVD, use block_power_svd");
  }
  if (z.size() == 0) return LowRankFactor::zero(z.rows(), z.cols());
  Eigen::BDCSVD<Eigen::MatrixXd> svd(z, Eigen::ComputeThinU | Eigen::ComputeThinV);
  return threshold_singular_triplets(svd.matrixU(), svd.singularValues(), svd.matrixV(), spec, ell);
}

/// Sum of P(sigma_i) over a vector of singular values.
inline double spectral_penalty(const Eigen::VectorXd& singvals, const PenaltySpec& spec) {
  double acc = 0.0;
  for (Eigen::Index k = 0; k < singvals.size(); ++k) acc += penalty_value(spec, singvals(k));
  return acc;
}

/// g(X) = 1/2 ||X - Z||_F^2 + sum_i P(sigma_i(X)).
inline double spectral_objective(const LowRankFactor& x, const Eigen::MatrixXd& z, const PenaltySpec& spec) {
  if (x.rows() != z.rows() || x.cols() != z.cols()) {
    throw input_error("spectral_objective: dimension mismatch");
  }
  return 0.5 * (x.dense() - z).squaredNorm() + spectral_penalty(x.singvals, spec);
}

struct LipschitzReport {
  double max_ratio = 0.0;
  double bound = 0.0;
  std::size_t trials = 0;
  std::size_t violations = 0;

  bool violated() const { return violations > 0; }
};

/// ||S(Z1) - S(Z2)||_F / ||Z1 - Z2||_F, defined as 0 when Z1 == Z2.
inline double lipschitz_ratio(const PenaltySpec& spec, const Eigen::MatrixXd& z1, const Eigen::MatrixXd& z2) {
  const double denom = (z1 - z2).norm();
  if (denom == 0.0) return 0.0;
  const Eigen::MatrixXd s1 = spectral_threshold_dense(z1, spec).dense();
  const Eigen::MatrixXd s2 = spectral_threshold_dense(z2, spec).dense();
  return (s1 - s2).norm() / denom;
}

/// Monte Carlo check of ||S(Z1) - S(Z2)||_F <= ||Z1 - Z2||_F / (1 + phi_P).
/// Half of the pairs are independent Gaussian draws, half are local
/// perturbations Z2 = Z1 + 0.05 E, which probe the operator's slope.
inline LipschitzReport lipschitz_check(const PenaltySpec& spec, std::size_t trials,
                                       std::pair<Eigen::Index, Eigen::Index> dims, std::uint64_t seed) {
  const double tau = spec.concavity().strong_convexity_tau();
  if (!(tau > 0.0)) throw domain_error("lipschitz_check requires 1 + phi_P > 0");
  LipschitzReport report;
  report.bound = 1.0 / tau;
  report.trials = trials;
  Rng rng(seed);
  const auto [m, n] = dims;
  for (std::size_t t = 0; t < trials; ++t) {
    const Eigen::MatrixXd z1 = gaussian_matrix(m, n, rng);
    Eigen::MatrixXd z2 = gaussian_matrix(m, n, rng);
    if (t % 2 == 1) z2 = z1 + 0.05 * z2;
    const double ratio = lipschitz_ratio(spec, z1, z2);
    report.max_ratio = std::max(report.max_ratio, ratio);
    if (ratio > report.bound * (1.0 + 1e-6)) ++report.violations;
  }
  return report;
}

}  // namespace ncimpute
