#pragma once

// Scalar nonconvex penalties P(sigma; lambda, gamma) and the thresholding
// operators they induce:
//
//   s^ell(sigma) in argmin_{alpha >= 0} (ell + 1)/2 (alpha - sigma)^2 + P(alpha).
//
// Every function here is pure and safe to call concurrently.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>

#include "ncimpute/error.hpp"

namespace ncimpute {

enum class Family { L1, L0, Lgamma, SCAD, MCPlus, Log };

inline std::string_view family_name(Family f) {
  switch (f) {
    case Family::L1: return "l1";
    case Family::L0: return "l0";
    case Family::Lgamma: return "lgamma";
    case Family::SCAD: return "scad";
    case Family::MCPlus: return "mcp";
    case Family::Log: return "log";
  }
  return "?";
}

inline Family parse_family(std::string_view name) {
  constexpr std::array<Family, 6> all{Family::L1, Family::L0, Family::Lgamma,
                                      Family::SCAD, Family::MCPlus, Family::Log};
  for (Family f : all) {
    if (family_name(f) == name) return f;
  }
  if (name == "soft" || name == "nuclear") return Family::L1;
  if (name == "mc+" || name == "mcplus") return Family::MCPlus;
  throw input_error("unknown penalty family '" + std::string(name) + "'");
}

/// Concavity of a penalty: phi_p = inf_{a != a' > 0} (P'(a) - P'(a')) / (a - a').
/// phi_p = -inf marks penalties with unbounded concavity (l_gamma, l0).
struct ConcavityInfo {
  double phi_p = 0.0;

  bool unbounded() const { return std::isinf(phi_p); }
  /// Strong convexity modulus of 1/2 (a - s)^2 + P(a); -inf when unbounded.
  double strong_convexity_tau() const { return 1.0 + phi_p; }
};

class PenaltySpec {
public:
  static constexpr double infinity = std::numeric_limits<double>::infinity();

  PenaltySpec(Family family, double lambda, double gamma = infinity)
      : family_(family), lambda_(lambda), gamma_(gamma) {
    validate();
    concavity_ = compute_concavity();
  }

  static PenaltySpec soft(double lambda) { return {Family::L1, lambda}; }
  static PenaltySpec mcp(double lambda, double gamma) { return {Family::MCPlus, lambda, gamma}; }

  /// Parses `family:lambda[:gamma]`, e.g. `mcp:1.5:10` or `l1:2`.
  static PenaltySpec parse(std::string_view token);

  Family family() const { return family_; }
  double lambda() const { return lambda_; }
  double gamma() const { return gamma_; }
  const ConcavityInfo& concavity() const { return concavity_; }

  /// True when the penalty is the nuclear norm (l1 or MC+ with gamma = inf).
  bool is_soft() const {
    return family_ == Family::L1 || (family_ == Family::MCPlus && std::isinf(gamma_));
  }

  PenaltySpec with_lambda(double lambda) const { return {family_, lambda, gamma_}; }
  PenaltySpec with_gamma(double gamma) const { return {family_, lambda_, gamma}; }

  std::string token() const;

private:
  void validate() const;
  ConcavityInfo compute_concavity() const;

  Family family_;
  double lambda_;
  double gamma_;
  ConcavityInfo concavity_{};
};

namespace detail {

inline std::string format_number(double x) {
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os.precision(17);
  os << x;
  return os.str();
}

inline double parse_number(std::string_view s) {
  if (s == "inf" || s == "Inf" || s == "infinity") return PenaltySpec::infinity;
  double value = 0.0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw input_error("cannot parse number '" + std::string(s) + "'");
  }
  return value;
}

}  // namespace detail

inline PenaltySpec PenaltySpec::parse(std::string_view token) {
  std::array<std::string_view, 3> parts{};
  std::size_t count = 0;
  std::size_t start = 0;
  while (true) {
    const auto pos = token.find(':', start);
    if (count == parts.size()) throw input_error("too many fields in penalty token");
    parts[count++] = token.substr(start, pos == std::string_view::npos ? pos : pos - start);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  if (count < 2) {
    throw input_error("penalty token must look like family:lambda[:gamma], got '" +
                      std::string(token) + "'");
  }
  const Family family = parse_family(parts[0]);
  const double lambda = detail::parse_number(parts[1]);
  const double gamma = count == 3 ? detail::parse_number(parts[2]) : infinity;
  if (count == 2 && (family == Family::SCAD || family == Family::Lgamma || family == Family::Log)) {
    throw input_error("penalty family '" + std::string(parts[0]) + "' needs a gamma");
  }
  return {family, lambda, gamma};
}

inline std::string PenaltySpec::token() const {
  std::string out(family_name(family_));
  out += ':' + detail::format_number(lambda_);
  if (family_ != Family::L1 && family_ != Family::L0) out += ':' + detail::format_number(gamma_);
  return out;
}

inline void PenaltySpec::validate() const {
  if (!(lambda_ >= 0.0) || !std::isfinite(lambda_)) {
    throw domain_error("penalty lambda must be finite and nonnegative");
  }
  switch (family_) {
    case Family::L1:
    case Family::L0:
      break;
    case Family::Lgamma:
      if (!(gamma_ >= 0.0 && gamma_ < 1.0)) throw domain_error("l_gamma needs 0 <= gamma < 1");
      break;
    case Family::SCAD:
      if (!(gamma_ > 2.0) || std::isinf(gamma_)) throw domain_error("SCAD needs finite gamma > 2");
      break;
    case Family::MCPlus:
      if (!(gamma_ > 0.0)) throw domain_error("MC+ needs gamma > 0");
      break;
    case Family::Log:
      if (!(gamma_ > 0.0) || std::isinf(gamma_)) throw domain_error("log penalty needs finite gamma > 0");
      break;
  }
}

inline ConcavityInfo PenaltySpec::compute_concavity() const {
  constexpr double neg_inf = -std::numeric_limits<double>::infinity();
  switch (family_) {
    case Family::L1: return {0.0};
    case Family::L0: return {neg_inf};
    case Family::Lgamma: return {neg_inf};
    case Family::SCAD: return {-1.0 / (gamma_ - 1.0)};
    case Family::MCPlus: return {std::isinf(gamma_) ? 0.0 : -1.0 / gamma_};
    case Family::Log: return {-lambda_ * gamma_ * gamma_ / std::log1p(gamma_)};
  }
  return {};
}

inline ConcavityInfo concavity(const PenaltySpec& spec) { return spec.concavity(); }

inline double penalty_value(const PenaltySpec& spec, double sigma) {
  if (!(sigma >= 0.0)) throw domain_error("penalty_value: sigma must be nonnegative");
  const double lam = spec.lambda();
  const double gam = spec.gamma();
  if (sigma == 0.0) return 0.0;
  switch (spec.family()) {
    case Family::L1:
      return lam * sigma;
    case Family::L0:
      return lam;
    case Family::Lgamma:
      return gam == 0.0 ? lam : lam * std::pow(sigma, gam);
    case Family::SCAD:
      if (sigma <= lam) return lam * sigma;
      if (sigma <= gam * lam) return (2.0 * gam * lam * sigma - sigma * sigma - lam * lam) / (2.0 * (gam - 1.0));
      return lam * lam * (gam + 1.0) / 2.0;
    case Family::MCPlus:
      if (std::isinf(gam)) return lam * sigma;
      if (sigma < lam * gam) return lam * (sigma - sigma * sigma / (2.0 * lam * gam));
      return lam * lam * gam / 2.0;
    case Family::Log:
      return lam * std::log1p(gam * sigma) / std::log1p(gam);
  }
  return 0.0;
}

/// dP/dsigma. At sigma = 0 the right derivative is returned, except for
/// l_gamma where it is unbounded.
inline double penalty_derivative(const PenaltySpec& spec, double sigma) {
  if (!(sigma >= 0.0)) throw domain_error("penalty_derivative: sigma must be nonnegative");
  const double lam = spec.lambda();
  const double gam = spec.gamma();
  switch (spec.family()) {
    case Family::L1:
      return lam;
    case Family::L0:
      return 0.0;
    case Family::Lgamma:
      if (sigma == 0.0) throw domain_error("l_gamma derivative is unbounded at 0");
      return gam == 0.0 ? 0.0 : lam * gam * std::pow(sigma, gam - 1.0);
    case Family::SCAD:
      if (sigma <= lam) return lam;
      return std::max(gam * lam - sigma, 0.0) / (gam - 1.0);
    case Family::MCPlus:
      if (std::isinf(gam)) return lam;
      return std::max(lam - sigma / gam, 0.0);
    case Family::Log:
      return lam * gam / ((gam * sigma + 1.0) * std::log1p(gam));
  }
  return 0.0;
}

/// (ell + 1)/2 (alpha - sigma)^2 + P(alpha).
inline double scalar_objective(const PenaltySpec& spec, double alpha, double sigma, double ell = 0.0) {
  const double d = alpha - sigma;
  return 0.5 * (ell + 1.0) * d * d + penalty_value(spec, alpha);
}

namespace detail {

// Picks the candidate with the smallest objective. Zero wins ties, so the
// operator prefers the sparser answer at discontinuities.
template <std::size_t N>
double best_candidate(const PenaltySpec& spec, double sigma, double ell,
                      const std::array<double, N>& candidates) {
  double best = 0.0;
  double best_obj = scalar_objective(spec, 0.0, sigma, ell);
  for (double a : candidates) {
    if (!(a > 0.0) || !std::isfinite(a)) continue;
    const double obj = scalar_objective(spec, a, sigma, ell);
    if (obj < best_obj) {
      best_obj = obj;
      best = a;
    }
  }
  return best;
}

inline double threshold_mcp(double lam, double gam, double sigma, double c) {
  // (c/2)(a - s)^2 + P(a; lam, gam) == c * [1/2 (a - s)^2 + P(a; lam/c, gam*c)]
  const double lam_c = lam / c;
  const double gam_c = gam * c;
  const double knot = lam * gam;
  if (gam_c > 1.0) {
    if (sigma <= lam_c) return 0.0;
    if (sigma <= knot) return std::min((sigma - lam_c) / (1.0 - 1.0 / gam_c), knot);
    return sigma;
  }
  // concave on [0, lam*gam): the minimum sits at an end point
  const double far = std::max(sigma, knot);
  const double obj0 = 0.5 * sigma * sigma;
  const double d = far - sigma;
  const double obj_far = 0.5 * d * d + lam_c * lam_c * gam_c / 2.0;
  return obj_far < obj0 ? far : 0.0;
}

inline double threshold_scad(const PenaltySpec& spec, double sigma, double c) {
  const double lam = spec.lambda();
  const double gam = spec.gamma();
  const double p1 = std::clamp(sigma - lam / c, 0.0, lam);
  const double curvature = c - 1.0 / (gam - 1.0);
  double p2 = lam;
  double p2b = gam * lam;
  if (curvature > 0.0) {
    p2 = std::clamp((c * sigma - gam * lam / (gam - 1.0)) / curvature, lam, gam * lam);
    p2b = p2;
  }
  const double p3 = std::max(sigma, gam * lam);
  return best_candidate<4>(spec, sigma, c - 1.0, {p1, p2, p2b, p3});
}

inline double threshold_log(const PenaltySpec& spec, double sigma, double c) {
  // stationarity times (gam a + 1): c gam a^2 + c (1 - gam s) a + (lam gam / L - c s) = 0
  const double lam = spec.lambda();
  const double gam = spec.gamma();
  const double qa = c * gam;
  const double qb = c * (1.0 - gam * sigma);
  const double qc = lam * gam / std::log1p(gam) - c * sigma;
  const double disc = qb * qb - 4.0 * qa * qc;
  if (disc < 0.0) return 0.0;
  const double sq = std::sqrt(disc);
  // numerically stable pair of roots
  const double q = -0.5 * (qb + std::copysign(sq, qb));
  const double r1 = q / qa;
  const double r2 = q != 0.0 ? qc / q : r1;
  return best_candidate<2>(spec, sigma, c - 1.0, {std::min(r1, sigma), std::min(r2, sigma)});
}

inline double threshold_lgamma(const PenaltySpec& spec, double sigma, double c) {
  const double lam = spec.lambda();
  const double gam = spec.gamma();
  if (gam == 0.0) {
    return 0.5 * c * sigma * sigma > lam ? sigma : 0.0;
  }
  // h(a) = c (a - s) + lam gam a^(gam-1) is convex on (0, inf) with minimum at a_star
  const auto h = [&](double a) { return c * (a - sigma) + lam * gam * std::pow(a, gam - 1.0); };
  const double a_star = std::pow(lam * gam * (1.0 - gam) / c, 1.0 / (2.0 - gam));
  if (!(a_star < sigma) || h(a_star) >= 0.0) return 0.0;
  // the local minimiser is the larger root, bracketed by [a_star, sigma] since h(sigma) > 0
  double lo = a_star;
  double hi = sigma;
  for (int it = 0; it < 200 && hi - lo > 4.0 * std::numeric_limits<double>::epsilon() * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (h(mid) < 0.0 ? lo : hi) = mid;
  }
  return best_candidate<2>(spec, sigma, c - 1.0, {lo, hi});
}

}  // namespace detail

/// Global minimiser of (ell + 1)/2 (alpha - sigma)^2 + P(alpha) over alpha >= 0.
inline double scalar_threshold(const PenaltySpec& spec, double sigma, double ell = 0.0) {
  if (!(sigma >= 0.0)) throw domain_error("scalar_threshold: sigma must be nonnegative");
  if (!(ell >= 0.0)) throw domain_error("scalar_threshold: ell must be nonnegative");
  if (sigma == 0.0) return 0.0;
  const double c = ell + 1.0;
  const double lam = spec.lambda();
  switch (spec.family()) {
    case Family::L1:
      return std::max(sigma - lam / c, 0.0);
    case Family::L0:
      return 0.5 * c * sigma * sigma > lam ? sigma : 0.0;
    case Family::MCPlus:
      if (std::isinf(spec.gamma())) return std::max(sigma - lam / c, 0.0);
      return detail::threshold_mcp(lam, spec.gamma(), sigma, c);
    case Family::SCAD:
      return detail::threshold_scad(spec, sigma, c);
    case Family::Log:
      return detail::threshold_log(spec, sigma, c);
    case Family::Lgamma:
      return detail::threshold_lgamma(spec, sigma, c);
  }
  return 0.0;
}

/// d s^ell / d sigma. Closed form for l1 and MC+, central differences with
/// step 1e-6 sigma otherwise.
inline double threshold_derivative(const PenaltySpec& spec, double sigma, double ell = 0.0) {
  if (!(sigma > 0.0)) throw domain_error("threshold_derivative: sigma must be positive");
  const double c = ell + 1.0;
  const double lam = spec.lambda();
  if (spec.is_soft()) return sigma > lam / c ? 1.0 : 0.0;
  if (spec.family() == Family::MCPlus && spec.gamma() * c > 1.0) {
    const double lam_c = lam / c;
    const double gam_c = spec.gamma() * c;
    if (sigma <= lam_c) return 0.0;
    if (sigma <= lam * spec.gamma()) return 1.0 / (1.0 - 1.0 / gam_c);
    return 1.0;
  }
  const double h = 1e-6 * sigma;
  return (scalar_threshold(spec, sigma + h, ell) - scalar_threshold(spec, sigma - h, ell)) / (2.0 * h);
}

}  // namespace ncimpute
