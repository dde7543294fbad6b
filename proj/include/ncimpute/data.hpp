#pragma once

// Synthetic instances, MovieLens ingestion, centering and error metrics.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "ncimpute/error.hpp"
#include "ncimpute/lowrank.hpp"
#include "ncimpute/rng.hpp"
#include "ncimpute/spectral.hpp"

namespace ncimpute {

enum class Regime { ROM, Coherent, NonUniform };

inline std::string_view regime_name(Regime r) {
  switch (r) {
    case Regime::ROM: return "rom";
    case Regime::Coherent: return "coherent";
    case Regime::NonUniform: return "nonuniform";
  }
  return "?";
}

inline Regime parse_regime(std::string_view s) {
  if (s == "rom") return Regime::ROM;
  if (s == "coherent") return Regime::Coherent;
  if (s == "nonuniform") return Regime::NonUniform;
  throw input_error("unknown regime '" + std::string(s) + "' (expected rom, coherent or nonuniform)");
}

struct SyntheticInstance {
  LowRankFactor truth;      // M = L Phi R'
  SparseTriplets observed;  // P_Omega(Y)
  SparseTriplets holdout;   // noiseless M on the complement of Omega
  double snr = std::numeric_limits<double>::infinity();
  double noise_sd = 0.0;
  std::uint64_t seed = 0;
  Regime regime = Regime::ROM;
};

namespace detail {

inline Eigen::MatrixXd orthonormal_columns(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  const Eigen::MatrixXd g = gaussian_matrix(rows, cols, rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  return qr.householderQ() * Eigen::MatrixXd::Identity(rows, cols);
}

// Uniform(0, 100) singular values, sorted nonincreasing together with the
// columns of l and r.
inline LowRankFactor with_uniform_singvals(Eigen::MatrixXd l, Eigen::MatrixXd r, Rng& rng) {
  const Eigen::Index k = l.cols();
  std::uniform_real_distribution<double> unif(0.0, 100.0);
  std::vector<std::pair<double, Eigen::Index>> phi(k);
  for (Eigen::Index j = 0; j < k; ++j) phi[j] = {unif(rng), j};
  std::sort(phi.begin(), phi.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  LowRankFactor f{Eigen::MatrixXd(l.rows(), k), Eigen::VectorXd(k), Eigen::MatrixXd(r.rows(), k)};
  for (Eigen::Index j = 0; j < k; ++j) {
    f.singvals(j) = phi[j].first;
    f.left.col(j) = l.col(phi[j].second);
    f.right.col(j) = r.col(phi[j].second);
  }
  return f;
}

// Adds noise on `mask` (true = observed) and assembles the instance.
inline SyntheticInstance assemble(LowRankFactor truth, const std::vector<char>& mask, double snr, Regime regime,
                                  std::uint64_t seed, Rng& rng) {
  const Eigen::Index m = truth.rows();
  const Eigen::Index n = truth.cols();
  if (!(snr > 0.0)) throw input_error("snr must be positive (or inf)");
  const Eigen::MatrixXd mat = truth.dense();
  const double mean = mat.mean();
  const double var = (mat.array() - mean).square().sum() / double(mat.size());
  const double noise_sd = std::isinf(snr) ? 0.0 : std::sqrt(var / snr);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Triplet> obs;
  std::vector<Triplet> hold;
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (mask[static_cast<std::size_t>(i * n + j)]) {
        const double eps = noise_sd > 0.0 ? noise_sd * normal(rng) : 0.0;
        obs.push_back({i, j, mat(i, j) + eps});
      } else {
        hold.push_back({i, j, mat(i, j)});
      }
    }
  }
  SyntheticInstance out;
  out.truth = std::move(truth);
  out.observed = SparseTriplets(m, n, std::move(obs));
  out.holdout = SparseTriplets(m, n, std::move(hold));
  out.snr = snr;
  out.noise_sd = noise_sd;
  out.seed = seed;
  out.regime = regime;
  return out;
}

// Row-major mask with exactly `count` observed cells chosen uniformly.
inline std::vector<char> uniform_mask(Eigen::Index m, Eigen::Index n, std::size_t count, Rng& rng) {
  const auto total = static_cast<std::size_t>(m * n);
  std::vector<std::size_t> idx(total);
  for (std::size_t k = 0; k < total; ++k) idx[k] = k;
  // partial Fisher-Yates
  for (std::size_t k = 0; k < count; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, total - 1);
    std::swap(idx[k], idx[pick(rng)]);
  }
  std::vector<char> mask(total, 0);
  for (std::size_t k = 0; k < count; ++k) mask[idx[k]] = 1;
  return mask;
}

inline void check_miss_frac(double miss_frac) {
  if (!(miss_frac > 0.0 && miss_frac < 1.0)) throw input_error("miss_frac must lie in (0, 1)");
}

}  // namespace detail

/// Random orthogonal model: orthonormalized Gaussian factors, uniform Omega.
inline SyntheticInstance gen_rom(Eigen::Index m, Eigen::Index n, Eigen::Index r, double snr, double miss_frac,
                                 std::uint64_t seed) {
  if (m <= 0 || n <= 0 || r <= 0 || r > std::min(m, n)) throw input_error("gen_rom: need 0 < r <= min(m, n)");
  detail::check_miss_frac(miss_frac);
  Rng rng(seed);
  Eigen::MatrixXd l = detail::orthonormal_columns(m, r, rng);
  Eigen::MatrixXd rr = detail::orthonormal_columns(n, r, rng);
  LowRankFactor truth = detail::with_uniform_singvals(std::move(l), std::move(rr), rng);
  const auto count = static_cast<std::size_t>(std::llround((1.0 - miss_frac) * double(m) * double(n)));
  const auto mask = detail::uniform_mask(m, n, count, rng);
  return detail::assemble(std::move(truth), mask, snr, Regime::ROM, seed, rng);
}

inline constexpr int coherent_blocks = 5;

/// Block-diagonal factors: 5 blocks of (m/5 x r/5) and (n/5 x r/5), each
/// column-orthonormalized, uniform Omega.
inline SyntheticInstance gen_coherent(Eigen::Index m, Eigen::Index n, Eigen::Index r, double snr, double miss_frac,
                                      std::uint64_t seed) {
  const int b = coherent_blocks;
  if (m <= 0 || n <= 0 || r <= 0 || m % b || n % b || r % b) {
    throw input_error("gen_coherent: m, n and r must be positive multiples of 5");
  }
  if (r / b > std::min(m, n) / b) throw input_error("gen_coherent: r/5 exceeds the block size");
  detail::check_miss_frac(miss_frac);
  Rng rng(seed);
  const Eigen::Index mb = m / b;
  const Eigen::Index nb = n / b;
  const Eigen::Index rb = r / b;
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(m, r);
  Eigen::MatrixXd rr = Eigen::MatrixXd::Zero(n, r);
  for (int k = 0; k < b; ++k) l.block(k * mb, k * rb, mb, rb) = detail::orthonormal_columns(mb, rb, rng);
  for (int k = 0; k < b; ++k) rr.block(k * nb, k * rb, nb, rb) = detail::orthonormal_columns(nb, rb, rng);
  LowRankFactor truth = detail::with_uniform_singvals(std::move(l), std::move(rr), rng);
  const auto count = static_cast<std::size_t>(std::llround((1.0 - miss_frac) * double(m) * double(n)));
  const auto mask = detail::uniform_mask(m, n, count, rng);
  return detail::assemble(std::move(truth), mask, snr, Regime::Coherent, seed, rng);
}

/// ROM truth with the upper-right block (rows < m/2, cols >= n/2) missing.
inline SyntheticInstance gen_nonuniform(double snr, std::uint64_t seed, Eigen::Index m = 100, Eigen::Index n = 100,
                                        Eigen::Index r = 10) {
  if (m < 2 || n < 2 || r <= 0 || r > std::min(m, n)) throw input_error("gen_nonuniform: invalid dimensions");
  Rng rng(seed);
  Eigen::MatrixXd l = detail::orthonormal_columns(m, r, rng);
  Eigen::MatrixXd rr = detail::orthonormal_columns(n, r, rng);
  LowRankFactor truth = detail::with_uniform_singvals(std::move(l), std::move(rr), rng);
  std::vector<char> mask(static_cast<std::size_t>(m * n), 1);
  for (Eigen::Index i = 0; i < m / 2; ++i) {
    for (Eigen::Index j = n / 2; j < n; ++j) mask[static_cast<std::size_t>(i * n + j)] = 0;
  }
  return detail::assemble(std::move(truth), mask, snr, Regime::NonUniform, seed, rng);
}

/// sum (v - xhat)^2 / sum v^2 over the entries of `ref`; nullopt when the
/// denominator vanishes.
inline std::optional<double> relative_error(const LowRankFactor& estimate, const SparseTriplets& ref) {
  if (estimate.rows() != ref.rows() || estimate.cols() != ref.cols()) {
    throw input_error("relative_error: dimension mismatch");
  }
  double den = 0.0;
  for (double v : ref.values()) den += v * v;
  if (!(den > 0.0)) return std::nullopt;
  const std::vector<double> fit = factor_at(estimate, ref);
  double num = 0.0;
  for (std::size_t k = 0; k < ref.nnz(); ++k) num += (ref.value(k) - fit[k]) * (ref.value(k) - fit[k]);
  return num / den;
}

inline std::optional<double> rmse(const LowRankFactor& estimate, const SparseTriplets& ref) {
  if (ref.empty()) return std::nullopt;
  const std::vector<double> fit = factor_at(estimate, ref);
  double num = 0.0;
  for (std::size_t k = 0; k < ref.nnz(); ++k) num += (ref.value(k) - fit[k]) * (ref.value(k) - fit[k]);
  return std::sqrt(num / double(ref.nnz()));
}

struct Metrics {
  std::optional<double> train_error;
  std::optional<double> test_error;
};

inline Metrics metrics(const LowRankFactor& estimate, const SyntheticInstance& instance) {
  return {relative_error(estimate, instance.observed), relative_error(estimate, instance.holdout)};
}

/// Top singular value of P_Omega(Y): the smallest lambda at which the
/// nuclear-norm solution is zero.
inline double lambda_max(const SparseTriplets& data) {
  if (data.empty()) throw input_error("lambda_max: no observed entries");
  BlockSvdOptions opts;
  opts.tol = 1e-12;
  opts.max_iters = 5000;
  const auto svd = block_power_svd(SparseOperator(data), 1, {}, opts);
  return svd.ritz_values(0);
}

struct CenteringInfo {
  Eigen::VectorXd row_means;
  Eigen::VectorXd col_means;
  double grand_mean = 0.0;
  int sweeps = 0;

  double offset(Eigen::Index i, Eigen::Index j) const { return grand_mean + row_means(i) + col_means(j); }
};

struct Centered {
  SparseTriplets data;
  CenteringInfo info;
};

/// Alternating removal of row and column means on the observed entries until
/// the largest update falls below tol.
inline Centered center(const SparseTriplets& train, double tol = 1e-8, int max_sweeps = 10000) {
  if (train.empty()) throw input_error("center: no observed entries");
  const Eigen::Index m = train.rows();
  const Eigen::Index n = train.cols();
  CenteringInfo info;
  info.row_means = Eigen::VectorXd::Zero(m);
  info.col_means = Eigen::VectorXd::Zero(n);
  double sum = 0.0;
  for (double v : train.values()) sum += v;
  info.grand_mean = sum / double(train.nnz());
  std::vector<double> resid(train.nnz());
  for (std::size_t k = 0; k < train.nnz(); ++k) resid[k] = train.value(k) - info.grand_mean;

  Eigen::VectorXd row_count = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd col_count = Eigen::VectorXd::Zero(n);
  for (std::size_t k = 0; k < train.nnz(); ++k) {
    row_count(train.row(k)) += 1.0;
    col_count(train.col(k)) += 1.0;
  }
  Eigen::VectorXd acc;
  for (int sweep = 1; sweep <= max_sweeps; ++sweep) {
    double change = 0.0;
    acc = Eigen::VectorXd::Zero(m);
    for (std::size_t k = 0; k < train.nnz(); ++k) acc(train.row(k)) += resid[k];
    for (Eigen::Index i = 0; i < m; ++i) {
      acc(i) = row_count(i) > 0.0 ? acc(i) / row_count(i) : 0.0;
      info.row_means(i) += acc(i);
      change = std::max(change, std::abs(acc(i)));
    }
    for (std::size_t k = 0; k < train.nnz(); ++k) resid[k] -= acc(train.row(k));
    acc = Eigen::VectorXd::Zero(n);
    for (std::size_t k = 0; k < train.nnz(); ++k) acc(train.col(k)) += resid[k];
    for (Eigen::Index j = 0; j < n; ++j) {
      acc(j) = col_count(j) > 0.0 ? acc(j) / col_count(j) : 0.0;
      info.col_means(j) += acc(j);
      change = std::max(change, std::abs(acc(j)));
    }
    for (std::size_t k = 0; k < train.nnz(); ++k) resid[k] -= acc(train.col(k));
    info.sweeps = sweep;
    if (change < tol) break;
  }
  return {train.with_values(std::move(resid)), info};
}

/// Subtracts the centering offsets from any triplets on the same grid (e.g. a test set).
inline SparseTriplets apply_centering(const SparseTriplets& data, const CenteringInfo& info) {
  std::vector<double> vals(data.nnz());
  for (std::size_t k = 0; k < data.nnz(); ++k) vals[k] = data.value(k) - info.offset(data.row(k), data.col(k));
  return data.with_values(std::move(vals));
}

/// Adds the offsets back to centered values.
inline SparseTriplets uncenter(const SparseTriplets& centered, const CenteringInfo& info) {
  std::vector<double> vals(centered.nnz());
  for (std::size_t k = 0; k < centered.nnz(); ++k) {
    vals[k] = centered.value(k) + info.offset(centered.row(k), centered.col(k));
  }
  return centered.with_values(std::move(vals));
}

/// Prediction of entry (i, j) on the raw scale.
inline double predict(const LowRankFactor& x, const CenteringInfo& info, Eigen::Index i, Eigen::Index j) {
  return x.entry(i, j) + info.offset(i, j);
}

enum class MovieLensFormat { ML100K, ML1M };

inline MovieLensFormat parse_movielens_format(std::string_view s) {
  if (s == "ml100k") return MovieLensFormat::ML100K;
  if (s == "ml1m") return MovieLensFormat::ML1M;
  throw input_error("unknown MovieLens format '" + std::string(s) + "' (expected ml100k or ml1m)");
}

struct Ratings {
  Eigen::Index users = 0;
  Eigen::Index items = 0;
  std::vector<std::int64_t> user_ids;  // dense index -> original id
  std::vector<std::int64_t> item_ids;
  std::vector<Triplet> entries;        // file order, duplicates resolved
  std::size_t duplicates = 0;
};

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line, MovieLensFormat fmt) {
  std::vector<std::string_view> out;
  if (fmt == MovieLensFormat::ML1M) {
    std::size_t start = 0;
    while (true) {
      const std::size_t pos = line.find("::", start);
      out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
      if (pos == std::string_view::npos) break;
      start = pos + 2;
    }
  } else {
    std::size_t k = 0;
    while (k < line.size()) {
      while (k < line.size() && (line[k] == '\t' || line[k] == ' ')) ++k;
      if (k >= line.size()) break;
      const std::size_t b = k;
      while (k < line.size() && line[k] != '\t' && line[k] != ' ') ++k;
      out.push_back(line.substr(b, k - b));
    }
  }
  return out;
}

template <class T>
bool parse_field(std::string_view s, T& out) {
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

}  // namespace detail

/// Parses user/item/rating[/timestamp] lines; ids are remapped to dense
/// 0-based indices in increasing id order. For repeated (user, item) pairs
/// the last rating wins.
inline Ratings read_movielens(std::istream& in, MovieLensFormat fmt, std::ostream* warn = &std::cerr) {
  struct Raw {
    std::int64_t user, item;
    double rating;
  };
  std::vector<Raw> raw;
  std::map<std::pair<std::int64_t, std::int64_t>, std::size_t> seen;
  std::string line;
  std::size_t lineno = 0;
  std::size_t dups = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto f = detail::split_fields(line, fmt);
    Raw r{};
    if (f.size() < 3 || f.size() > 4 || !detail::parse_field(f[0], r.user) || !detail::parse_field(f[1], r.item) ||
        !detail::parse_field(f[2], r.rating) || !std::isfinite(r.rating)) {
      throw io_error("malformed rating at line " + std::to_string(lineno) + ": '" + line + "'");
    }
    const auto [it, inserted] = seen.emplace(std::make_pair(r.user, r.item), raw.size());
    if (inserted) {
      raw.push_back(r);
    } else {
      raw[it->second].rating = r.rating;
      ++dups;
    }
  }
  if (dups > 0 && warn) *warn << "warning: " << dups << " duplicate (user, item) ratings; kept the last\n";

  Ratings out;
  out.duplicates = dups;
  for (const auto& r : raw) {
    out.user_ids.push_back(r.user);
    out.item_ids.push_back(r.item);
  }
  for (auto* ids : {&out.user_ids, &out.item_ids}) {
    std::sort(ids->begin(), ids->end());
    ids->erase(std::unique(ids->begin(), ids->end()), ids->end());
  }
  out.users = static_cast<Eigen::Index>(out.user_ids.size());
  out.items = static_cast<Eigen::Index>(out.item_ids.size());
  const auto index_of = [](const std::vector<std::int64_t>& ids, std::int64_t id) {
    return static_cast<Eigen::Index>(std::lower_bound(ids.begin(), ids.end(), id) - ids.begin());
  };
  out.entries.reserve(raw.size());
  for (const auto& r : raw) out.entries.push_back({index_of(out.user_ids, r.user), index_of(out.item_ids, r.item), r.rating});
  return out;
}

struct TrainTestSplit {
  SparseTriplets train;
  SparseTriplets test;
};

/// Shuffled split with |test| = round(test_frac * N).
inline TrainTestSplit split_ratings(const Ratings& ratings, double test_frac, std::uint64_t seed) {
  if (!(test_frac >= 0.0 && test_frac < 1.0)) throw input_error("test_frac must lie in [0, 1)");
  const std::size_t total = ratings.entries.size();
  std::vector<std::size_t> order(total);
  for (std::size_t k = 0; k < total; ++k) order[k] = k;
  Rng rng(seed);
  for (std::size_t k = total; k > 1; --k) {
    std::uniform_int_distribution<std::size_t> pick(0, k - 1);
    std::swap(order[k - 1], order[pick(rng)]);
  }
  const auto n_test = static_cast<std::size_t>(std::llround(test_frac * double(total)));
  std::vector<Triplet> test;
  std::vector<Triplet> train;
  for (std::size_t k = 0; k < total; ++k) (k < n_test ? test : train).push_back(ratings.entries[order[k]]);
  return {SparseTriplets(ratings.users, ratings.items, std::move(train)),
          SparseTriplets(ratings.users, ratings.items, std::move(test))};
}

inline TrainTestSplit load_movielens(const std::string& path, MovieLensFormat fmt, double test_frac,
                                     std::uint64_t seed, std::ostream* warn = &std::cerr) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open ratings file '" + path + "'");
  return split_ratings(read_movielens(in, fmt, warn), test_frac, seed);
}

}  // namespace ncimpute
