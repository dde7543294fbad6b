#pragma once

// Majorization-minimization fits of
//   f(X) = 1/2 ||P_Omega(X - Y)||_F^2 + sum_i P(sigma_i(X); lambda, gamma)
// at a single (lambda, gamma) and over a warm-started (lambda, gamma) lattice.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "ncimpute/error.hpp"
#include "ncimpute/lowrank.hpp"
#include "ncimpute/penalty.hpp"
#include "ncimpute/rng.hpp"
#include "ncimpute/spectral.hpp"

namespace ncimpute {

enum class SvdBackend { Auto, Dense, Iterative };

struct FitConfig {
  double ell = 0.0;
  double epsilon = 1e-3;
  int max_outer_iters = 500;
  Eigen::Index operating_rank_cap = 50;
  Eigen::Index rank_buffer = 5;
  double svd_tol = 1e-5;
  int svd_max_iters = 100;
  SvdBackend svd_backend = SvdBackend::Auto;
  std::uint64_t seed = 0x1a2b3c;

  void validate() const {
    if (!(ell >= 0.0) || !std::isfinite(ell)) throw input_error("FitConfig: ell must be finite and >= 0");
    if (!(epsilon > 0.0)) throw input_error("FitConfig: epsilon must be positive");
    if (max_outer_iters <= 0) throw input_error("FitConfig: max_outer_iters must be positive");
    if (operating_rank_cap <= 0) throw input_error("FitConfig: operating_rank_cap must be positive");
    if (rank_buffer < 0) throw input_error("FitConfig: rank_buffer must be >= 0");
    if (!(svd_tol > 0.0) || svd_max_iters <= 0) throw input_error("FitConfig: invalid SVD settings");
  }

  bool use_dense(Eigen::Index m, Eigen::Index n) const {
    switch (svd_backend) {
      case SvdBackend::Dense: return true;
      case SvdBackend::Iterative: return false;
      case SvdBackend::Auto: break;
    }
    return std::min(m, n) <= dense_svd_max_dim;
  }
};

/// f(X), with the data-fit term summed over Omega only.
inline double objective(const LowRankFactor& x, const SparseTriplets& data, const PenaltySpec& spec) {
  if (x.rows() != data.rows() || x.cols() != data.cols()) throw input_error("objective: dimension mismatch");
  const std::vector<double> fitted = factor_at(x, data);
  double fit = 0.0;
  for (std::size_t k = 0; k < data.nnz(); ++k) {
    const double r = fitted[k] - data.value(k);
    fit += r * r;
  }
  return 0.5 * fit + spectral_penalty(x.singvals, spec);
}

/// ||X1 - X0||_F^2 without forming either matrix. Splitting along span(U1)
/// keeps the result accurate when X1 and X0 nearly coincide.
inline double factor_difference_sq(const LowRankFactor& x1, const LowRankFactor& x0) {
  if (x1.rows() != x0.rows() || x1.cols() != x0.cols()) throw input_error("factor_difference_sq: shape mismatch");
  if (x0.rank() == 0) return x1.singvals.squaredNorm();
  if (x1.rank() == 0) return x0.singvals.squaredNorm();
  const Eigen::MatrixXd k = x1.left.transpose() * x0.left;                      // r1 x r0
  const Eigen::MatrixXd inside = x1.right * x1.singvals.asDiagonal()            // n x r1
                                 - x0.right * (x0.singvals.asDiagonal() * k.transpose());
  const Eigen::MatrixXd outside = (x0.left - x1.left * k) * x0.singvals.asDiagonal();  // m x r0
  return inside.squaredNorm() + outside.squaredNorm();
}

struct StepResult {
  LowRankFactor next;
  double delta = 0.0;
  double diff_sq = 0.0;          // ||X_{k+1} - X_k||_F^2
  std::vector<double> fitted;    // X_{k+1} on Omega, in entry order
  SvdWarmStart basis;            // singular bases of the step's SVD
  bool rank_cap_hit = false;
  bool svd_converged = true;
  int svd_iterations = 0;
};

/// Optional state carried between steps so that X_k on Omega and the SVD
/// subspace are not recomputed.
struct StepWorkspace {
  std::vector<double> fitted;
  SvdWarmStart warm;
  std::uint64_t counter = 0;
};

/// One update X_{k+1} = S^ell(Xt_k) with
/// Xt_k = P_Omega(Y - X_k) / (ell + 1) + X_k.
inline StepResult ncimpute_step(const LowRankFactor& xk, const SparseTriplets& data, const PenaltySpec& spec,
                                const FitConfig& cfg, Eigen::Index operating_rank, StepWorkspace* ws = nullptr) {
  if (xk.rows() != data.rows() || xk.cols() != data.cols()) throw input_error("ncimpute_step: dimension mismatch");
  const Eigen::Index m = data.rows();
  const Eigen::Index n = data.cols();
  const Eigen::Index full = std::min(m, n);
  operating_rank = std::clamp<Eigen::Index>(operating_rank, 1, full);
  const double c = cfg.ell + 1.0;

  std::vector<double> fitted_k;
  const std::vector<double>* fk = nullptr;
  if (ws && ws->fitted.size() == data.nnz()) {
    fk = &ws->fitted;
  } else {
    fitted_k = factor_at(xk, data);
    fk = &fitted_k;
  }
  std::vector<double> resid(data.nnz());
  for (std::size_t k = 0; k < data.nnz(); ++k) resid[k] = data.value(k) - (*fk)[k];

  StepResult out;
  Eigen::MatrixXd u;
  Eigen::VectorXd sigma;
  Eigen::MatrixXd v;
  if (cfg.use_dense(m, n)) {
    Eigen::MatrixXd xt = xk.rank() > 0 ? xk.dense() : Eigen::MatrixXd::Zero(m, n);
    for (std::size_t k = 0; k < data.nnz(); ++k) xt(data.row(k), data.col(k)) += resid[k] / c;
    require_finite(xt, "ncimpute_step");
    Eigen::BDCSVD<Eigen::MatrixXd> svd(xt, Eigen::ComputeThinU | Eigen::ComputeThinV);
    u = svd.matrixU();
    sigma = svd.singularValues();
    v = svd.matrixV();
  } else {
    const SparsePlusLowRank op(data.with_values(std::move(resid)), xk, 1.0 / c);
    BlockSvdOptions opts;
    opts.tol = cfg.svd_tol;
    opts.max_iters = cfg.svd_max_iters;
    opts.seed = derive_seed(cfg.seed, ws ? ws->counter++ : 0);
    SvdWarmStart warm;
    if (ws && !ws->warm.empty()) {
      warm = ws->warm;
    } else {
      warm.right = xk.right;
    }
    BlockSvdResult svd = block_power_svd(op, operating_rank, warm, opts);
    out.svd_converged = svd.converged;
    out.svd_iterations = svd.iterations;
    if (!std::isfinite(svd.ritz_values.sum())) throw numerical_error("ncimpute_step: SVD produced non-finite values");
    u = std::move(svd.left_basis);
    sigma = std::move(svd.ritz_values);
    v = std::move(svd.right_basis);
  }

  out.next = threshold_singular_triplets(u, sigma, v, spec, cfg.ell, operating_rank);
  out.rank_cap_hit = out.next.rank() == operating_rank && operating_rank < full;
  const Eigen::Index keep = std::min<Eigen::Index>(operating_rank, sigma.size());
  out.basis.left = u.leftCols(keep);
  out.basis.right = v.leftCols(keep);

  out.fitted = factor_at(out.next, data);
  out.diff_sq = factor_difference_sq(out.next, xk);
  double observed_sq = 0.0;
  for (std::size_t k = 0; k < data.nnz(); ++k) {
    const double d = out.fitted[k] - (*fk)[k];
    observed_sq += d * d;
  }
  const double unobserved_sq = std::max(out.diff_sq - observed_sq, 0.0);
  const double phi = spec.concavity().phi_p;
  const double nu = std::max(1.0 + phi + cfg.ell, 0.0);
  out.delta = 0.5 * (nu + cfg.ell) * out.diff_sq + 0.5 * unobserved_sq;
  return out;
}

/// Tangent-space part of the first-order condition,
///   ||P_T(P_Omega(X - Y) + U diag(P'(sigma)) V')||_F / (1 + ||P_Omega(Y)||_F),
/// where T is the tangent space of the rank-r manifold at X. The component
/// orthogonal to T is a subgradient term and carries no stationarity signal.
inline double stationarity_residual(const LowRankFactor& x, const SparseTriplets& data, const PenaltySpec& spec) {
  const double scale = 1.0 + std::sqrt(data.squared_norm());
  if (x.rank() == 0) return 0.0;
  const std::vector<double> fitted = factor_at(x, data);
  std::vector<double> resid(data.nnz());
  for (std::size_t k = 0; k < data.nnz(); ++k) resid[k] = fitted[k] - data.value(k);
  const auto s = data.csr(resid.data());
  Eigen::VectorXd grad(x.rank());
  for (Eigen::Index k = 0; k < x.rank(); ++k) grad(k) = penalty_derivative(spec, x.singvals(k));
  // G = S + U D V'
  const Eigen::MatrixXd ug = (s.transpose() * x.left).transpose() + grad.asDiagonal() * x.right.transpose();  // r x n
  const Eigen::MatrixXd gv = s * x.right + x.left * grad.asDiagonal();                                        // m x r
  const Eigen::MatrixXd ugv = ug * x.right;                                                                   // r x r
  const double sq = ug.squaredNorm() + gv.squaredNorm() - ugv.squaredNorm();
  return std::sqrt(std::max(sq, 0.0)) / scale;
}

struct FitResult {
  LowRankFactor factor;
  PenaltySpec spec = PenaltySpec::soft(0.0);
  double objective = 0.0;
  std::vector<double> objective_trace;  // f(X_0), f(X_1), ...
  std::vector<double> delta_trace;      // Delta_ell(X_k; X_{k+1}) for k = 0, 1, ...
  std::vector<Eigen::Index> rank_trace;
  Eigen::Index rank = 0;
  int outer_iters = 0;
  bool converged = false;
  std::optional<int> rank_stabilized_at;
  double stationarity_residual = 0.0;
  double wall_time = 0.0;
  int svd_warnings = 0;

  double lambda() const { return spec.lambda(); }
  double gamma() const { return spec.gamma(); }
  double delta_final() const { return delta_trace.empty() ? 0.0 : delta_trace.back(); }
};

/// Runs ncimpute_step from `init` until ||X_new - X_old||^2 < eps ||X_old||^2
/// (or ||X_new||^2 < eps when X_old = 0).
inline FitResult fit_single(const SparseTriplets& data, const PenaltySpec& spec, const FitConfig& cfg,
                            const LowRankFactor& init) {
  cfg.validate();
  if (init.rows() != data.rows() || init.cols() != data.cols()) throw input_error("fit_single: init has wrong shape");
  const auto t0 = std::chrono::steady_clock::now();
  const Eigen::Index limit = std::min({cfg.operating_rank_cap, data.rows(), data.cols()});

  FitResult res;
  res.spec = spec;
  LowRankFactor x = init;
  StepWorkspace ws;
  ws.fitted = factor_at(x, data);
  ws.warm.right = x.right;
  res.objective_trace.push_back(objective(x, data, spec));
  res.rank_trace.push_back(x.rank());

  Eigen::Index op_rank = std::clamp<Eigen::Index>(x.rank() + cfg.rank_buffer, 1, limit);
  for (int it = 1; it <= cfg.max_outer_iters; ++it) {
    StepResult step = ncimpute_step(x, data, spec, cfg, op_rank, &ws);
    while (step.rank_cap_hit && op_rank < limit) {
      op_rank = std::min(2 * op_rank, limit);
      ws.warm = step.basis;
      step = ncimpute_step(x, data, spec, cfg, op_rank, &ws);
    }
    if (!step.svd_converged) ++res.svd_warnings;

    const double old_sq = x.singvals.squaredNorm();
    const bool done = old_sq > 0.0 ? step.diff_sq < cfg.epsilon * old_sq
                                   : step.next.singvals.squaredNorm() < cfg.epsilon;
    x = std::move(step.next);
    ws.fitted = std::move(step.fitted);
    ws.warm = std::move(step.basis);
    res.delta_trace.push_back(step.delta);
    res.rank_trace.push_back(x.rank());
    double fit = 0.0;
    for (std::size_t k = 0; k < data.nnz(); ++k) {
      const double r = ws.fitted[k] - data.value(k);
      fit += r * r;
    }
    res.objective_trace.push_back(0.5 * fit + spectral_penalty(x.singvals, spec));
    res.outer_iters = it;
    op_rank = std::clamp<Eigen::Index>(x.rank() + cfg.rank_buffer, 1, limit);
    if (done) {
      res.converged = true;
      break;
    }
  }

  res.rank = x.rank();
  res.objective = res.objective_trace.back();
  // first iteration after which the rank never changes
  int stable = static_cast<int>(res.rank_trace.size()) - 1;
  while (stable > 0 && res.rank_trace[stable - 1] == res.rank) --stable;
  if (res.converged) res.rank_stabilized_at = stable;
  res.stationarity_residual = stationarity_residual(x, data, spec);
  res.factor = std::move(x);
  res.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

struct GridSpec {
  std::vector<double> lambdas;  // strictly decreasing
  std::vector<double> gammas;   // strictly decreasing, gammas[0] = inf
  Family family = Family::MCPlus;

  void validate() const {
    if (lambdas.empty() || gammas.empty()) throw input_error("GridSpec: empty grid");
    for (std::size_t i = 0; i < lambdas.size(); ++i) {
      if (!(lambdas[i] > 0.0) || !std::isfinite(lambdas[i])) throw input_error("GridSpec: lambdas must be positive");
      if (i > 0 && !(lambdas[i] < lambdas[i - 1])) throw input_error("GridSpec: lambdas must strictly decrease");
    }
    if (!std::isinf(gammas[0])) throw input_error("GridSpec: first gamma must be inf (the soft row)");
    for (std::size_t j = 1; j < gammas.size(); ++j) {
      if (!(gammas[j] < gammas[j - 1])) throw input_error("GridSpec: gammas must strictly decrease");
    }
    for (std::size_t j = 1; j < gammas.size(); ++j) PenaltySpec(family, 1.0, gammas[j]);
  }

  std::size_t n_lambda() const { return lambdas.size(); }
  std::size_t n_gamma() const { return gammas.size(); }

  PenaltySpec spec(std::size_t i, std::size_t j) const {
    if (j == 0) return PenaltySpec::soft(lambdas[i]);
    return {family, lambdas[i], gammas[j]};
  }

  /// N lambdas equally spaced from lambda_max down to ratio * lambda_max.
  static std::vector<double> linear_lambdas(double lambda_max, std::size_t count, double ratio) {
    if (count == 0 || !(lambda_max > 0.0) || !(ratio > 0.0 && ratio < 1.0)) {
      throw input_error("linear_lambdas: need count > 0, lambda_max > 0, 0 < ratio < 1");
    }
    std::vector<double> out(count);
    const double lo = ratio * lambda_max;
    for (std::size_t i = 0; i < count; ++i) {
      out[i] = count == 1 ? lambda_max : lambda_max - (lambda_max - lo) * double(i) / double(count - 1);
    }
    return out;
  }

  /// inf followed by `count` log-spaced values from hi down to lo.
  static std::vector<double> log_gammas(double hi, double lo, std::size_t count) {
    if (!(hi > lo) || !(lo > 0.0)) throw input_error("log_gammas: need hi > lo > 0");
    std::vector<double> out{std::numeric_limits<double>::infinity()};
    for (std::size_t j = 0; j < count; ++j) {
      const double t = count == 1 ? 0.0 : double(j) / double(count - 1);
      out.push_back(std::exp(std::log(hi) + t * (std::log(lo) - std::log(hi))));
    }
    return out;
  }
};

enum class WarmStartPolicy {
  BestFinal,    // fit from both neighbours, keep the smaller final objective
  BestInitial,  // fit once from the neighbour with the smaller objective at this cell
};

enum class Provenance { Zero, LambdaNeighbor, GammaNeighbor };

inline std::string_view provenance_name(Provenance p) {
  switch (p) {
    case Provenance::Zero: return "zero";
    case Provenance::LambdaNeighbor: return "lambda";
    case Provenance::GammaNeighbor: return "gamma";
  }
  return "?";
}

struct SurfaceCell {
  FitResult fit;
  Provenance provenance = Provenance::Zero;
  double train_err = std::numeric_limits<double>::quiet_NaN();
  double test_err = std::numeric_limits<double>::quiet_NaN();
  bool failed = false;
  std::string error;
};

struct SurfaceOptions {
  WarmStartPolicy policy = WarmStartPolicy::BestFinal;
  /// Test error of a fitted factor; unset means no holdout.
  std::function<double(const LowRankFactor&)> test_error;
  /// Called after each cell, e.g. for logging.
  std::function<void(std::size_t, std::size_t, const SurfaceCell&)> on_cell;
  /// When false, a row's factors are released once the next row is done
  /// (scalar results stay); use on_cell to copy any factor worth keeping.
  bool keep_factors = true;
};

class SolutionSurface {
public:
  SolutionSurface(GridSpec grid) : grid_(std::move(grid)), cells_(grid_.n_lambda() * grid_.n_gamma()) {}

  const GridSpec& grid() const { return grid_; }
  SurfaceCell& cell(std::size_t i, std::size_t j) { return cells_.at(j * grid_.n_lambda() + i); }
  const SurfaceCell& cell(std::size_t i, std::size_t j) const { return cells_.at(j * grid_.n_lambda() + i); }

  /// (i, j) minimizing test error over rows j in [j_begin, j_end).
  std::optional<std::pair<std::size_t, std::size_t>> best_test_cell(std::size_t j_begin, std::size_t j_end) const {
    std::optional<std::pair<std::size_t, std::size_t>> best;
    double best_err = std::numeric_limits<double>::infinity();
    for (std::size_t j = j_begin; j < std::min(j_end, grid_.n_gamma()); ++j) {
      for (std::size_t i = 0; i < grid_.n_lambda(); ++i) {
        const SurfaceCell& c = cell(i, j);
        if (!c.failed && c.test_err < best_err) {
          best_err = c.test_err;
          best = {i, j};
        }
      }
    }
    return best;
  }

private:
  GridSpec grid_;
  std::vector<SurfaceCell> cells_;
};

/// ||P_Omega(Y - X)||^2 / ||P_Omega(Y)||^2.
inline double training_error(const LowRankFactor& x, const SparseTriplets& data) {
  const double denom = data.squared_norm();
  if (!(denom > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  const std::vector<double> fitted = factor_at(x, data);
  double num = 0.0;
  for (std::size_t k = 0; k < data.nnz(); ++k) num += (data.value(k) - fitted[k]) * (data.value(k) - fitted[k]);
  return num / denom;
}

/// Lattice traversal: the soft row down the lambda path first, then each
/// gamma row from large to small lambda, warm-started from the (i-1, j) and
/// (i, j-1) solutions.
inline SolutionSurface fit_surface(const SparseTriplets& data, const GridSpec& grid, const FitConfig& cfg,
                                   const SurfaceOptions& opts = {}) {
  grid.validate();
  cfg.validate();
  SolutionSurface surface(grid);
  const LowRankFactor zero = LowRankFactor::zero(data.rows(), data.cols());

  for (std::size_t j = 0; j < grid.n_gamma(); ++j) {
    for (std::size_t i = 0; i < grid.n_lambda(); ++i) {
      SurfaceCell& cell = surface.cell(i, j);
      try {
        const PenaltySpec spec = grid.spec(i, j);
        std::vector<std::pair<const LowRankFactor*, Provenance>> candidates;
        if (i > 0 && !surface.cell(i - 1, j).failed) {
          candidates.emplace_back(&surface.cell(i - 1, j).fit.factor, Provenance::LambdaNeighbor);
        }
        if (j > 0 && !surface.cell(i, j - 1).failed) {
          candidates.emplace_back(&surface.cell(i, j - 1).fit.factor, Provenance::GammaNeighbor);
        }
        if (candidates.empty()) candidates.emplace_back(&zero, Provenance::Zero);

        if (opts.policy == WarmStartPolicy::BestInitial && candidates.size() > 1) {
          const double f0 = objective(*candidates[0].first, data, spec);
          const double f1 = objective(*candidates[1].first, data, spec);
          if (f1 < f0) std::swap(candidates[0], candidates[1]);
          candidates.resize(1);
        }
        bool have = false;
        for (const auto& [init, prov] : candidates) {
          FitResult fit = fit_single(data, spec, cfg, *init);
          if (!have || fit.objective < cell.fit.objective) {
            const double spent = have ? cell.fit.wall_time : 0.0;
            cell.fit = std::move(fit);
            cell.fit.wall_time += spent;
            cell.provenance = prov;
            have = true;
          } else {
            cell.fit.wall_time += fit.wall_time;
          }
        }
        cell.train_err = training_error(cell.fit.factor, data);
        if (opts.test_error) cell.test_err = opts.test_error(cell.fit.factor);
      } catch (const std::exception& e) {
        cell.failed = true;
        cell.error = e.what();
      }
      if (opts.on_cell) opts.on_cell(i, j, cell);
    }
    if (!opts.keep_factors && j > 0) {
      for (std::size_t i = 0; i < grid.n_lambda(); ++i) {
        LowRankFactor& f = surface.cell(i, j - 1).fit.factor;
        f = LowRankFactor::zero(f.rows(), f.cols());
      }
    }
  }
  return surface;
}

}  // namespace ncimpute
