#pragma once

// Degrees of freedom of spectral thresholding operators under the null
// model Z_ij ~ N(0, 1): the divergence formula, Monte Carlo averages,
// the Marchenko-Pastur limit and (lambda, gamma) calibration against the
// soft-thresholding path.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "ncimpute/error.hpp"
#include "ncimpute/penalty.hpp"
#include "ncimpute/rng.hpp"

namespace ncimpute {

/// Threads to use when the caller passes 0: NCIMPUTE_THREADS, else the
/// hardware concurrency.
inline unsigned default_thread_count() {
  if (const char* env = std::getenv("NCIMPUTE_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs body(k) for k in [0, count) over `threads` workers with a static
/// partition; results must be written to per-k slots.
template <class Body>
void parallel_for(std::size_t count, unsigned threads, Body&& body) {
  if (threads == 0) threads = default_thread_count();
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(count, 1)));
  if (threads <= 1) {
    for (std::size_t k = 0; k < count; ++k) body(k);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t k = t; k < count; k += threads) body(k);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

inline constexpr double df_tie_tolerance = 1e-10;
inline constexpr double df_tie_jitter = 1e-9;

/// The quantity inside the expectation of the df formula for one draw:
///   sum_i (s'(sigma_i) + |m - n| s(sigma_i) / sigma_i)
///   + 2 sum_{i != j} sigma_i s(sigma_i) / (sigma_i^2 - sigma_j^2).
/// Pairs are combined as (sigma_i s_i - sigma_j s_j) / (sigma_i^2 - sigma_j^2).
inline double df_integrand(const Eigen::VectorXd& singvals, Eigen::Index m, Eigen::Index n, const PenaltySpec& spec,
                           double ell = 0.0) {
  if (!(spec.concavity().strong_convexity_tau() > 0.0)) {
    throw domain_error("df_integrand requires 1 + phi_P > 0 (continuous thresholding operator)");
  }
  if (singvals.size() != std::min(m, n)) throw input_error("df_integrand: expected min(m, n) singular values");
  std::vector<double> sig(singvals.data(), singvals.data() + singvals.size());
  std::sort(sig.begin(), sig.end(), std::greater<>());
  for (std::size_t i = 0; i < sig.size(); ++i) {
    if (!(sig[i] >= 0.0) || !std::isfinite(sig[i])) throw input_error("df_integrand: invalid singular value");
    if (i > 0 && sig[i - 1] - sig[i] <= df_tie_tolerance) {
      throw input_error("df_integrand: tied singular values; perturb them before evaluating");
    }
  }
  const std::size_t k = sig.size();
  const double gap = static_cast<double>(m > n ? m - n : n - m);
  std::vector<double> s(k);
  double diag = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    s[i] = scalar_threshold(spec, sig[i], ell);
    if (s[i] > 0.0) diag += threshold_derivative(spec, sig[i], ell) + gap * s[i] / sig[i];
  }
  double pairs = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double ai = sig[i] * s[i];
    const double qi = sig[i] * sig[i];
    for (std::size_t j = i + 1; j < k; ++j) {
      const double aj = sig[j] * s[j];
      if (ai == 0.0 && aj == 0.0) break;  // sorted, so every later s_j is 0 as well
      pairs += (ai - aj) / (qi - sig[j] * sig[j]);
    }
  }
  return diag + 2.0 * pairs;
}

/// Singular values of an m x n standard Gaussian draw, with ties broken by
/// uniform jitter.
inline Eigen::VectorXd null_singular_values(Eigen::Index m, Eigen::Index n, Rng& rng) {
  const Eigen::MatrixXd z = gaussian_matrix(m, n, rng);
  Eigen::VectorXd sig = std::min(m, n) <= 32 ? Eigen::JacobiSVD<Eigen::MatrixXd>(z).singularValues()
                                               : Eigen::BDCSVD<Eigen::MatrixXd>(z).singularValues();
  std::uniform_real_distribution<double> jitter(-df_tie_jitter, df_tie_jitter);
  for (int attempt = 0; attempt < 8; ++attempt) {
    bool tied = false;
    for (Eigen::Index i = 1; i < sig.size(); ++i) tied = tied || std::abs(sig(i - 1) - sig(i)) <= df_tie_tolerance;
    if (!tied) break;
    for (Eigen::Index i = 0; i < sig.size(); ++i) sig(i) = std::abs(sig(i) + jitter(rng));
    std::sort(sig.data(), sig.data() + sig.size(), std::greater<>());
  }
  return sig;
}

/// A fixed set of null-model singular-value draws. Evaluating several specs
/// on the same sample gives common random numbers.
struct NullSample {
  Eigen::Index m = 0;
  Eigen::Index n = 0;
  std::vector<Eigen::VectorXd> draws;

  static NullSample draw(Eigen::Index m, Eigen::Index n, std::size_t reps, std::uint64_t seed, unsigned threads = 0) {
    if (m <= 0 || n <= 0) throw input_error("NullSample: dimensions must be positive");
    if (reps == 0) throw input_error("NullSample: reps must be positive");
    NullSample out{m, n, std::vector<Eigen::VectorXd>(reps)};
    parallel_for(reps, threads, [&](std::size_t r) {
      Rng rng(derive_seed(seed, r));
      out.draws[r] = null_singular_values(m, n, rng);
    });
    return out;
  }
};

enum class DofMethod { ExactMC, DivergenceFD, MPAsymptotic };

inline std::string_view dof_method_name(DofMethod d) {
  switch (d) {
    case DofMethod::ExactMC: return "exact-mc";
    case DofMethod::DivergenceFD: return "divergence-fd";
    case DofMethod::MPAsymptotic: return "mp-asymptotic";
  }
  return "?";
}

struct DofEstimate {
  double value = 0.0;
  double std_error = 0.0;
  DofMethod method = DofMethod::ExactMC;
  Eigen::Index m = 0;
  Eigen::Index n = 0;
  PenaltySpec spec = PenaltySpec::soft(0.0);
  std::size_t reps = 0;
};

/// Mean and standard error of df_integrand over a fixed sample.
inline DofEstimate df_on_sample(const NullSample& sample, const PenaltySpec& spec, double ell = 0.0,
                                unsigned threads = 1) {
  std::vector<double> vals(sample.draws.size());
  parallel_for(vals.size(), threads,
               [&](std::size_t r) { vals[r] = df_integrand(sample.draws[r], sample.m, sample.n, spec, ell); });
  DofEstimate est;
  est.method = DofMethod::ExactMC;
  est.m = sample.m;
  est.n = sample.n;
  est.spec = spec;
  est.reps = vals.size();
  double sum = 0.0;
  for (double v : vals) sum += v;
  est.value = sum / double(vals.size());
  if (vals.size() > 1) {
    double ss = 0.0;
    for (double v : vals) ss += (v - est.value) * (v - est.value);
    est.std_error = std::sqrt(ss / double(vals.size() - 1) / double(vals.size()));
  }
  return est;
}

/// Monte Carlo df. Replication r uses the stream derive_seed(seed, r), so
/// the result does not depend on the thread count.
inline DofEstimate df_montecarlo(Eigen::Index m, Eigen::Index n, const PenaltySpec& spec, std::size_t reps,
                                 std::uint64_t seed, unsigned threads = 0, double ell = 0.0) {
  if (!(spec.concavity().strong_convexity_tau() > 0.0)) {
    throw domain_error("df_montecarlo requires 1 + phi_P > 0");
  }
  const NullSample sample = NullSample::draw(m, n, reps, seed, threads);
  return df_on_sample(sample, spec, ell, threads);
}

/// Marchenko-Pastur law with ratio alpha in (0, 1].
class MPDistribution {
public:
  static constexpr std::size_t table_size = 10000;

  explicit MPDistribution(double alpha) : alpha_(alpha) {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw domain_error("MPDistribution: alpha must lie in (0, 1]");
    lo_ = (1.0 - std::sqrt(alpha)) * (1.0 - std::sqrt(alpha));
    hi_ = (1.0 + std::sqrt(alpha)) * (1.0 + std::sqrt(alpha));
    build_table();
  }

  double alpha() const { return alpha_; }
  double lower() const { return lo_; }
  double upper() const { return hi_; }

  double density(double x) const {
    if (!(x >= lo_ && x <= hi_) || x <= 0.0) return 0.0;
    return std::sqrt((hi_ - x) * (x - lo_)) / (2.0 * std::numbers::pi * alpha_ * x);
  }

  /// Total mass from the quadrature before normalization (should be 1).
  double quadrature_mass() const { return mass_; }

  double cdf(double x) const {
    if (x <= lo_) return 0.0;
    if (x >= hi_) return 1.0;
    const double theta = std::acos(std::clamp(1.0 - 2.0 * (x - lo_) / (hi_ - lo_), -1.0, 1.0));
    const double pos = theta / std::numbers::pi * double(table_size);
    const auto k = std::min<std::size_t>(static_cast<std::size_t>(pos), table_size - 1);
    const double w = pos - double(k);
    return (1.0 - w) * cdf_[k] + w * cdf_[k + 1];
  }

  double quantile(double u) const {
    u = std::clamp(u, 0.0, 1.0);
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    std::size_t k = it == cdf_.begin() ? 0 : static_cast<std::size_t>(it - cdf_.begin()) - 1;
    k = std::min(k, table_size - 1);
    const double span = cdf_[k + 1] - cdf_[k];
    const double w = span > 0.0 ? (u - cdf_[k]) / span : 0.0;
    const double theta = (double(k) + w) / double(table_size) * std::numbers::pi;
    return x_of(theta);
  }

  double sample(Rng& rng) const {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    return quantile(unif(rng));
  }

private:
  double x_of(double theta) const { return lo_ + (hi_ - lo_) * (1.0 - std::cos(theta)) / 2.0; }

  // density in the variable theta, x = lo + (hi - lo)(1 - cos theta)/2
  double theta_density(double theta) const {
    const double x = x_of(theta);
    const double half = (hi_ - lo_) / 2.0;
    const double st = std::sin(theta);
    if (x <= 0.0) {
      // alpha = 1 at theta = 0: x ~ theta^2, sin^2 ~ theta^2; take the limit
      return half * half / (2.0 * std::numbers::pi * alpha_ * half / 2.0);
    }
    return half * half * st * st / (2.0 * std::numbers::pi * alpha_ * x);
  }

  void build_table() {
    // composite Simpson over each table cell
    cdf_.assign(table_size + 1, 0.0);
    const double h = std::numbers::pi / double(table_size);
    for (std::size_t k = 0; k < table_size; ++k) {
      const double a = double(k) * h;
      cdf_[k + 1] = cdf_[k] + h / 6.0 * (theta_density(a) + 4.0 * theta_density(a + h / 2.0) + theta_density(a + h));
    }
    mass_ = cdf_.back();
    for (double& c : cdf_) c /= mass_;
    cdf_.back() = 1.0;
  }

  double alpha_;
  double lo_ = 0.0;
  double hi_ = 0.0;
  double mass_ = 0.0;
  std::vector<double> cdf_;
};

inline double mp_density(const MPDistribution& dist, double x) { return dist.density(x); }
inline double mp_sample(const MPDistribution& dist, Rng& rng) { return dist.sample(rng); }

/// g(beta) = s(sqrt(beta)) / sqrt(beta) for MC+ with threshold zeta.
inline double mp_g(double zeta, double gamma, double beta) {
  const double r = std::sqrt(beta);
  if (r <= zeta) return 0.0;
  if (std::isinf(gamma)) return 1.0 - zeta / r;
  if (r <= zeta * gamma) return gamma / (gamma - 1.0) * (1.0 - zeta / r);
  return 1.0;
}

/// Pairs (T1, T2) of independent MP draws, reusable across (zeta, gamma).
struct MPPairSample {
  double alpha = 1.0;
  std::vector<double> t1;
  std::vector<double> t2;

  static MPPairSample draw(double alpha, std::size_t reps, std::uint64_t seed) {
    if (reps == 0) throw input_error("MPPairSample: reps must be positive");
    const MPDistribution dist(alpha);
    MPPairSample out{alpha, std::vector<double>(reps), std::vector<double>(reps)};
    Rng rng(seed);
    for (std::size_t r = 0; r < reps; ++r) {
      out.t1[r] = dist.sample(rng);
      out.t2[r] = dist.sample(rng);
    }
    return out;
  }
};

struct AsymptoticValue {
  double value = 0.0;
  double std_error = 0.0;
};

/// Limit of df / (mn) for MC+ at lambda = zeta sqrt(m), evaluated on a fixed
/// MP pair sample. zeta = 0 gives 1 and zeta = inf gives 0.
inline AsymptoticValue df_asymptotic_on_sample(const MPPairSample& sample, double zeta, double gamma) {
  if (!(gamma > 1.0)) throw domain_error("df_asymptotic requires gamma > 1");
  if (!(zeta >= 0.0)) throw domain_error("df_asymptotic requires zeta >= 0");
  if (zeta == 0.0) return {1.0, 0.0};
  if (std::isinf(zeta)) return {0.0, 0.0};
  const double a = sample.alpha;
  double sum = 0.0;
  double ss = 0.0;
  std::size_t used = 0;
  for (std::size_t r = 0; r < sample.t1.size(); ++r) {
    const double x1 = sample.t1[r];
    const double x2 = sample.t2[r];
    const double g1 = mp_g(zeta, gamma, x1);
    double term = (1.0 - a) * g1;
    if (x1 != x2) term += a * (x1 * g1 - x2 * mp_g(zeta, gamma, x2)) / (x1 - x2);
    sum += term;
    ss += term * term;
    ++used;
  }
  const double mean = sum / double(used);
  const double var = used > 1 ? std::max(ss / double(used) - mean * mean, 0.0) * double(used) / double(used - 1) : 0.0;
  return {mean, std::sqrt(var / double(used))};
}

inline double df_asymptotic(double zeta, double gamma, double alpha, std::size_t mc_reps, std::uint64_t seed) {
  if (!(gamma > 1.0)) throw domain_error("df_asymptotic requires gamma > 1");
  if (zeta == 0.0) return 1.0;
  if (std::isinf(zeta)) return 0.0;
  return df_asymptotic_on_sample(MPPairSample::draw(alpha, mc_reps, seed), zeta, gamma).value;
}

struct CalibrationCell {
  double lambda_tilde = 0.0;
  double gamma = 0.0;
  double lambda_calibrated = std::numeric_limits<double>::quiet_NaN();
  double df_target = 0.0;
  double df_achieved = std::numeric_limits<double>::quiet_NaN();
  double std_error = 0.0;
  bool ok = false;
};

struct CalibrationTable {
  std::vector<double> lambda_tilde;
  std::vector<double> gammas;
  DofMethod method = DofMethod::ExactMC;
  std::vector<CalibrationCell> cells;  // row-major in lambda_tilde

  const CalibrationCell& at(std::size_t i, std::size_t j) const { return cells.at(i * gammas.size() + j); }
};

struct CalibrationOptions {
  int bisection_iters = 60;
  unsigned threads = 0;
  std::size_t mp_reps = 200000;
  Eigen::Index mp_min_dim = 500;  // MP limit when min(m, n) exceeds this
};

/// For each lambda_tilde the soft-thresholding df is the target; for each
/// gamma the lambda matching that df is found by bisection on
/// [0, 2 (sqrt(m) + sqrt(n))]. All evaluations share one sample.
inline CalibrationTable calibrate_grid(const std::vector<double>& lambda_tilde, const std::vector<double>& gammas,
                                       Eigen::Index m, Eigen::Index n, Family family, std::size_t reps,
                                       std::uint64_t seed, const CalibrationOptions& opts = {}) {
  if (lambda_tilde.empty() || gammas.empty()) throw input_error("calibrate_grid: empty grid");
  for (double l : lambda_tilde) {
    if (!(l >= 0.0) || !std::isfinite(l)) throw input_error("calibrate_grid: lambda_tilde must be finite and >= 0");
  }
  CalibrationTable table;
  table.lambda_tilde = lambda_tilde;
  table.gammas = gammas;
  const double lambda_hi = 2.0 * (std::sqrt(double(m)) + std::sqrt(double(n)));
  const auto make_spec = [&](double lambda, double gamma) {
    return std::isinf(gamma) ? PenaltySpec::soft(lambda) : PenaltySpec(family, lambda, gamma);
  };
  for (double g : gammas) {
    if (!std::isinf(g) && !(make_spec(lambda_hi, g).concavity().strong_convexity_tau() > 0.0)) {
      throw domain_error("calibrate_grid: every gamma must give 1 + phi_P > 0");
    }
  }

  const bool use_mp = std::min(m, n) > opts.mp_min_dim;
  std::optional<NullSample> sample;
  std::optional<MPPairSample> pairs;
  const double mn = double(m) * double(n);
  const double big = double(std::max(m, n));
  if (use_mp) {
    if (family != Family::MCPlus) throw input_error("calibrate_grid: the MP limit is available for MC+ only");
    table.method = DofMethod::MPAsymptotic;
    pairs = MPPairSample::draw(double(std::min(m, n)) / big, opts.mp_reps, seed);
  } else {
    table.method = DofMethod::ExactMC;
    sample = NullSample::draw(m, n, reps, seed, opts.threads);
  }
  const auto evaluate = [&](double lambda, double gamma) -> std::pair<double, double> {
    if (use_mp) {
      const auto v = df_asymptotic_on_sample(*pairs, lambda / std::sqrt(big), gamma);
      return {mn * v.value, mn * v.std_error};
    }
    const auto est = df_on_sample(*sample, make_spec(lambda, gamma), 0.0, opts.threads);
    return {est.value, est.std_error};
  };

  for (double lt : lambda_tilde) {
    const auto [target, target_se] = evaluate(lt, std::numeric_limits<double>::infinity());
    for (double g : gammas) {
      CalibrationCell cell;
      cell.lambda_tilde = lt;
      cell.gamma = g;
      cell.df_target = target;
      if (std::isinf(g)) {
        cell.lambda_calibrated = lt;
        cell.df_achieved = target;
        cell.std_error = target_se;
        cell.ok = true;
        table.cells.push_back(cell);
        continue;
      }
      double lo = 0.0;
      double hi = lambda_hi;
      auto df_lo = evaluate(lo, g);
      auto df_hi = evaluate(hi, g);
      if (!(df_hi.first <= target && df_lo.first >= target)) {
        table.cells.push_back(cell);  // not bracketed
        continue;
      }
      for (int it = 0; it < opts.bisection_iters; ++it) {
        const double mid = 0.5 * (lo + hi);
        const auto df_mid = evaluate(mid, g);
        if (df_mid.first > target) {
          lo = mid;
          df_lo = df_mid;
        } else {
          hi = mid;
          df_hi = df_mid;
        }
      }
      const bool take_lo = std::abs(df_lo.first - target) < std::abs(df_hi.first - target);
      cell.lambda_calibrated = take_lo ? lo : hi;
      cell.df_achieved = take_lo ? df_lo.first : df_hi.first;
      cell.std_error = take_lo ? df_lo.second : df_hi.second;
      cell.ok = true;
      table.cells.push_back(cell);
    }
  }
  return table;
}

}  // namespace ncimpute
