#pragma once

// Subcommands of the ncimpute executable. Everything goes through run(), so
// the tests drive the same code path as main().

#include <algorithm>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ncimpute/ncimpute.hpp"

namespace ncimpute::cli {

enum ExitCode : int { ok = 0, usage = 1, io = 2, numerical = 3 };

namespace detail {

inline std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    out.push_back(ncimpute::detail::parse_number(item));
  }
  if (out.empty()) throw input_error("empty list '" + text + "'");
  return out;
}

inline double parse_real(const std::string& text) { return ncimpute::detail::parse_number(text); }

inline bool has_suffix(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

inline void write_triplets_any(const std::string& path, const SparseTriplets& data) {
  if (has_suffix(path, ".mtx")) write_matrix_market(path, data);
  else write_triplets_csv(path, data);
}

inline SparseTriplets with_dims(const SparseTriplets& s, Eigen::Index rows, Eigen::Index cols) {
  if (s.rows() == rows && s.cols() == cols) return s;
  return SparseTriplets(rows, cols, s.triplets());
}

inline nlohmann::json number(double x) {
  if (std::isfinite(x)) return x;
  return format_double(x);
}

inline SvdBackend parse_backend(const std::string& s) {
  if (s == "auto") return SvdBackend::Auto;
  if (s == "dense") return SvdBackend::Dense;
  if (s == "iterative") return SvdBackend::Iterative;
  throw input_error("unknown SVD backend '" + s + "' (expected auto, dense or iterative)");
}

inline void write_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot open '" + path + "' for writing");
  out << j.dump(2) << '\n';
  if (!out) throw io_error("write failed for '" + path + "'");
}

}  // namespace detail

/// Training data plus optional holdout, on a shared shape.
struct Problem {
  SparseTriplets train;
  std::optional<SparseTriplets> test;
  std::optional<CenteringInfo> centering;
  std::string metric = "relative";

  /// Test error of a factor fitted on the (possibly centered) training data.
  double test_error(const LowRankFactor& x) const {
    const SparseTriplets& t = *test;
    std::vector<double> pred = factor_at(x, t);
    if (centering) {
      for (std::size_t k = 0; k < t.nnz(); ++k) pred[k] += centering->offset(t.row(k), t.col(k));
    }
    double num = 0.0;
    double den = 0.0;
    for (std::size_t k = 0; k < t.nnz(); ++k) {
      num += (t.value(k) - pred[k]) * (t.value(k) - pred[k]);
      den += t.value(k) * t.value(k);
    }
    if (metric == "rmse") return t.nnz() ? std::sqrt(num / double(t.nnz())) : std::numeric_limits<double>::quiet_NaN();
    return den > 0.0 ? num / den : std::numeric_limits<double>::quiet_NaN();
  }
};

struct InputOptions {
  std::string train;
  std::string test;
  std::string ratings;
  std::string format = "ml100k";
  double test_frac = 0.2;
  Eigen::Index rows = -1;
  Eigen::Index cols = -1;
  bool center = false;
  std::string metric;

  void add_to(CLI::App& app) {
    app.add_option("--train", train, "training triplets (.csv row,col,value 0-based, or .mtx)");
    app.add_option("--test", test, "holdout triplets in the same format");
    app.add_option("--ratings", ratings, "MovieLens ratings file, split into train/test");
    app.add_option("--format", format, "MovieLens format for --ratings: ml100k or ml1m");
    app.add_option("--test-frac", test_frac, "holdout fraction for --ratings");
    app.add_option("--rows", rows, "number of rows (default: inferred)");
    app.add_option("--cols", cols, "number of columns (default: inferred)");
    app.add_flag("--center", center, "remove row and column means before fitting");
    app.add_option("--metric", metric, "test metric: relative or rmse (default: rmse for --ratings)");
  }

  Problem load(std::uint64_t seed) const {
    Problem p;
    if (!ratings.empty() == !train.empty()) throw input_error("give exactly one of --train or --ratings");
    if (!ratings.empty()) {
      TrainTestSplit split = load_movielens(ratings, parse_movielens_format(format), test_frac, seed);
      p.train = std::move(split.train);
      if (split.test.nnz() > 0) p.test = std::move(split.test);
      p.metric = "rmse";
    } else {
      p.train = read_triplets(train, rows, cols);
      if (!test.empty()) {
        SparseTriplets t = read_triplets(test, rows, cols);
        const Eigen::Index r = std::max(p.train.rows(), t.rows());
        const Eigen::Index c = std::max(p.train.cols(), t.cols());
        p.train = detail::with_dims(p.train, r, c);
        p.test = detail::with_dims(t, r, c);
      }
    }
    if (!metric.empty()) {
      if (metric != "relative" && metric != "rmse") throw input_error("--metric must be relative or rmse");
      p.metric = metric;
    }
    if (p.train.empty()) throw input_error("training data has no entries");
    if (center) {
      Centered c = ncimpute::center(p.train);
      p.train = std::move(c.data);
      p.centering = std::move(c.info);
    }
    return p;
  }
};

struct FitOptions {
  double ell = 0.0;
  double epsilon = 1e-3;
  int max_iters = 500;
  Eigen::Index rank_cap = 50;
  Eigen::Index rank_buffer = 5;
  double svd_tol = 1e-5;
  int svd_max_iters = 100;
  std::string backend = "auto";

  void add_to(CLI::App& app) {
    app.add_option("--ell", ell, "extra majorizer curvature (>= 0)");
    app.add_option("--epsilon", epsilon, "relative convergence tolerance");
    app.add_option("--max-iters", max_iters, "outer iteration limit per fit");
    app.add_option("--rank-cap", rank_cap, "upper limit on the operating rank");
    app.add_option("--rank-buffer", rank_buffer, "extra singular triplets computed beyond the current rank");
    app.add_option("--svd-tol", svd_tol, "block power SVD tolerance");
    app.add_option("--svd-max-iters", svd_max_iters, "block power SVD iteration limit");
    app.add_option("--svd", backend, "SVD backend: auto, dense or iterative");
  }

  FitConfig config(std::uint64_t seed) const {
    FitConfig cfg;
    cfg.ell = ell;
    cfg.epsilon = epsilon;
    cfg.max_outer_iters = max_iters;
    cfg.operating_rank_cap = rank_cap;
    cfg.rank_buffer = rank_buffer;
    cfg.svd_tol = svd_tol;
    cfg.svd_max_iters = svd_max_iters;
    cfg.svd_backend = detail::parse_backend(backend);
    cfg.seed = seed;
    cfg.validate();
    return cfg;
  }
};

struct Context {
  std::ostream& out;
  std::ostream& err;
  std::uint64_t seed = 1;
  unsigned threads = 0;
  bool verbose = false;
};

// ---- simulate -------------------------------------------------------------

struct SimulateOptions {
  std::string regime = "rom";
  Eigen::Index m = 200;
  Eigen::Index n = 100;
  Eigen::Index rank = 5;
  std::string snr = "5";
  double miss = 0.8;
  std::string out;
};

inline int cmd_simulate(const SimulateOptions& o, Context& ctx) {
  if (o.out.empty()) throw input_error("simulate needs --out PREFIX");
  const double snr = detail::parse_real(o.snr);
  const Regime regime = parse_regime(o.regime);
  SyntheticInstance inst;
  switch (regime) {
    case Regime::ROM: inst = gen_rom(o.m, o.n, o.rank, snr, o.miss, ctx.seed); break;
    case Regime::Coherent: inst = gen_coherent(o.m, o.n, o.rank, snr, o.miss, ctx.seed); break;
    case Regime::NonUniform: inst = gen_nonuniform(snr, ctx.seed, o.m, o.n, o.rank); break;
  }
  write_triplets_csv(o.out + ".train.csv", inst.observed);
  write_triplets_csv(o.out + ".test.csv", inst.holdout);
  save_factor(o.out + ".truth", inst.truth);
  nlohmann::json meta{{"regime", regime_name(regime)},
                      {"rows", inst.truth.rows()},
                      {"cols", inst.truth.cols()},
                      {"rank", inst.truth.rank()},
                      {"snr", detail::number(inst.snr)},
                      {"noise_sd", inst.noise_sd},
                      {"miss_frac", regime == Regime::NonUniform ? 0.25 : o.miss},
                      {"observed", inst.observed.nnz()},
                      {"holdout", inst.holdout.nnz()},
                      {"seed", ctx.seed}};
  detail::write_json(o.out + ".json", meta);
  ctx.out << "wrote " << o.out << ".{train.csv,test.csv,truth.*.bin,json}: " << inst.observed.nnz()
          << " observed, " << inst.holdout.nnz() << " held out\n";
  return ok;
}

// ---- fit ------------------------------------------------------------------

struct SingleFitOptions {
  InputOptions input;
  FitOptions fit;
  std::string penalty;
  std::string out;
  std::string save_factors;
};

inline int cmd_fit(const SingleFitOptions& o, Context& ctx) {
  const PenaltySpec spec = PenaltySpec::parse(o.penalty);
  const Problem p = o.input.load(ctx.seed);
  const FitConfig cfg = o.fit.config(ctx.seed);
  const FitResult fit = fit_single(p.train, spec, cfg, LowRankFactor::zero(p.train.rows(), p.train.cols()));
  SurfaceCell cell;
  cell.fit = fit;
  cell.train_err = training_error(fit.factor, p.train);
  if (p.test) cell.test_err = p.test_error(fit.factor);

  std::ostringstream text;
  text << surface_csv_header << '\n';
  write_surface_row(text, spec.lambda(), spec.gamma(), cell);
  if (o.out.empty()) {
    ctx.out << text.str();
  } else {
    std::ofstream f(o.out);
    if (!f) throw io_error("cannot open '" + o.out + "' for writing");
    f << text.str();
    if (!f) throw io_error("write failed for '" + o.out + "'");
  }
  if (!o.save_factors.empty()) save_factor(o.save_factors, fit.factor);
  ctx.err << spec.token() << ": rank " << fit.rank << ", " << fit.outer_iters << " iterations"
          << (fit.converged ? "" : " (not converged)") << ", objective " << format_double(fit.objective) << '\n';
  if (!fit.converged) return numerical;
  return ok;
}

// ---- surface --------------------------------------------------------------

struct SurfaceCommandOptions {
  InputOptions input;
  FitOptions fit;
  std::size_t n_lambda = 100;
  double lambda_min_ratio = 0.001;
  std::string gammas;
  std::size_t n_gamma = 25;
  double gamma_max = 5000.0;
  double gamma_min = 1.1;
  std::string family = "mcp";
  std::string policy = "best-final";
  std::string out;
  std::string summary;
  std::string save_factors;
};

inline std::vector<double> surface_gammas(const SurfaceCommandOptions& o) {
  if (o.gammas.empty()) return GridSpec::log_gammas(o.gamma_max, o.gamma_min, o.n_gamma);
  std::vector<double> g = detail::parse_list(o.gammas);
  std::sort(g.begin(), g.end(), std::greater<>());
  g.erase(std::unique(g.begin(), g.end()), g.end());
  if (!std::isinf(g.front())) g.insert(g.begin(), std::numeric_limits<double>::infinity());
  return g;
}

inline int cmd_surface(const SurfaceCommandOptions& o, Context& ctx) {
  const Problem p = o.input.load(ctx.seed);
  const FitConfig cfg = o.fit.config(ctx.seed);
  const double lmax = lambda_max(p.train);
  GridSpec grid{GridSpec::linear_lambdas(lmax, o.n_lambda, o.lambda_min_ratio), surface_gammas(o),
                parse_family(o.family)};
  if (grid.family != Family::MCPlus && grid.family != Family::SCAD && grid.family != Family::Log) {
    throw input_error("surface family must be mcp, scad or log");
  }
  grid.validate();

  SurfaceOptions sopts;
  if (o.policy == "best-final") sopts.policy = WarmStartPolicy::BestFinal;
  else if (o.policy == "best-initial") sopts.policy = WarmStartPolicy::BestInitial;
  else throw input_error("--policy must be best-final or best-initial");
  if (p.test) sopts.test_error = [&](const LowRankFactor& x) { return p.test_error(x); };
  sopts.keep_factors = false;

  // the best test cell of each kind, with its factor
  struct Best {
    double err = std::numeric_limits<double>::infinity();
    std::size_t i = 0, j = 0;
    LowRankFactor factor;
    bool set = false;
  } best_soft, best_other;
  sopts.on_cell = [&](std::size_t i, std::size_t j, const SurfaceCell& c) {
    if (ctx.verbose) {
      ctx.err << "cell lambda=" << format_double(grid.lambdas[i]) << " gamma=" << format_double(grid.gammas[j])
              << (c.failed ? " FAILED: " + c.error : " rank=" + std::to_string(c.fit.rank) +
                                                          " iters=" + std::to_string(c.fit.outer_iters) +
                                                          " test=" + format_double(c.test_err))
              << '\n';
    }
    if (c.failed || !(c.test_err < std::numeric_limits<double>::infinity())) return;
    Best& b = j == 0 ? best_soft : best_other;
    if (c.test_err < b.err) {
      b = {c.test_err, i, j, c.fit.factor, true};
    }
  };
  const SolutionSurface s = fit_surface(p.train, grid, cfg, sopts);

  if (o.out.empty()) {
    write_surface_csv(ctx.out, s);
  } else {
    std::ofstream f(o.out);
    if (!f) throw io_error("cannot open '" + o.out + "' for writing");
    write_surface_csv(f, s);
    if (!f) throw io_error("write failed for '" + o.out + "'");
  }

  std::size_t failed = 0;
  for (std::size_t j = 0; j < grid.n_gamma(); ++j) {
    for (std::size_t i = 0; i < grid.n_lambda(); ++i) failed += s.cell(i, j).failed;
  }
  nlohmann::json summary{{"lambda_max", lmax},
                         {"n_lambda", grid.n_lambda()},
                         {"n_gamma", grid.n_gamma()},
                         {"family", family_name(grid.family)},
                         {"metric", p.metric},
                         {"failed_cells", failed},
                         {"seed", ctx.seed}};
  const auto describe = [&](const char* key, const Best& b) {
    if (!b.set) return;
    const SurfaceCell& c = s.cell(b.i, b.j);
    summary[key] = {{"lambda", grid.lambdas[b.i]}, {"gamma", detail::number(grid.gammas[b.j])},
                    {"rank", c.fit.rank},          {"test_err", c.test_err},
                    {"train_err", c.train_err},    {"provenance", provenance_name(c.provenance)}};
    ctx.err << key << ": lambda=" << format_double(grid.lambdas[b.i]) << " gamma=" << format_double(grid.gammas[b.j])
            << " rank=" << c.fit.rank << " " << p.metric << "=" << format_double(c.test_err) << '\n';
  };
  describe("best_soft", best_soft);
  describe("best_nonconvex", best_other);
  if (!o.summary.empty()) detail::write_json(o.summary, summary);
  if (!o.save_factors.empty()) {
    if (best_soft.set) save_factor(o.save_factors + ".best_soft", best_soft.factor);
    if (best_other.set) save_factor(o.save_factors + ".best_nonconvex", best_other.factor);
    if (!best_soft.set && !best_other.set) ctx.err << "no holdout: nothing to save\n";
  }
  if (failed > 0) {
    ctx.err << failed << " cell(s) failed\n";
    return numerical;
  }
  return ok;
}

// ---- dof ------------------------------------------------------------------

struct DofOptions {
  Eigen::Index m = 10;
  Eigen::Index n = 10;
  std::string penalty;
  std::size_t reps = 2000;
  double ell = 0.0;
  std::string method = "exact-mc";
  std::size_t mp_reps = 200000;
  bool json = false;
};

/// Divergence of the thresholding map by central differences, averaged over
/// the same null draws the exact route uses.
inline DofEstimate df_divergence_fd(Eigen::Index m, Eigen::Index n, const PenaltySpec& spec, std::size_t reps,
                                    std::uint64_t seed, double ell, unsigned threads) {
  std::vector<double> vals(reps);
  const double h = 1e-5;
  parallel_for(reps, threads, [&](std::size_t r) {
    Rng rng(derive_seed(seed, r));
    Eigen::MatrixXd z = gaussian_matrix(m, n, rng);
    double div = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      for (Eigen::Index i = 0; i < m; ++i) {
        const double keep = z(i, j);
        z(i, j) = keep + h;
        const double up = spectral_threshold_dense(z, spec, ell).dense()(i, j);
        z(i, j) = keep - h;
        const double down = spectral_threshold_dense(z, spec, ell).dense()(i, j);
        z(i, j) = keep;
        div += (up - down) / (2.0 * h);
      }
    }
    vals[r] = div;
  });
  DofEstimate est;
  est.method = DofMethod::DivergenceFD;
  est.m = m;
  est.n = n;
  est.spec = spec;
  est.reps = reps;
  double sum = 0.0;
  for (double v : vals) sum += v;
  est.value = sum / double(reps);
  if (reps > 1) {
    double ss = 0.0;
    for (double v : vals) ss += (v - est.value) * (v - est.value);
    est.std_error = std::sqrt(ss / double(reps - 1) / double(reps));
  }
  return est;
}

inline int cmd_dof(const DofOptions& o, Context& ctx) {
  const PenaltySpec spec = PenaltySpec::parse(o.penalty);
  DofEstimate est;
  if (o.method == "exact-mc") {
    est = df_montecarlo(o.m, o.n, spec, o.reps, ctx.seed, ctx.threads, o.ell);
  } else if (o.method == "divergence-fd") {
    if (std::min(o.m, o.n) > dense_svd_max_dim) throw input_error("divergence-fd needs min(m, n) <= 400");
    est = df_divergence_fd(o.m, o.n, spec, o.reps, ctx.seed, o.ell, ctx.threads);
  } else if (o.method == "mp-asymptotic") {
    if (spec.family() != Family::MCPlus && spec.family() != Family::L1) {
      throw input_error("mp-asymptotic is available for mcp and l1 only");
    }
    const double big = double(std::max(o.m, o.n));
    const double alpha = double(std::min(o.m, o.n)) / big;
    const MPPairSample pairs = MPPairSample::draw(alpha, o.mp_reps, ctx.seed);
    const auto v = df_asymptotic_on_sample(pairs, spec.lambda() / std::sqrt(big),
                                           spec.family() == Family::L1 ? std::numeric_limits<double>::infinity()
                                                                       : spec.gamma());
    const double mn = double(o.m) * double(o.n);
    est.value = mn * v.value;
    est.std_error = mn * v.std_error;
    est.method = DofMethod::MPAsymptotic;
    est.m = o.m;
    est.n = o.n;
    est.spec = spec;
    est.reps = o.mp_reps;
  } else {
    throw input_error("--method must be exact-mc, divergence-fd or mp-asymptotic");
  }
  if (o.json) {
    nlohmann::json j{{"penalty", spec.token()}, {"m", o.m},          {"n", o.n},
                     {"method", dof_method_name(est.method)},     {"df", est.value},
                     {"std_error", est.std_error},                {"reps", est.reps},
                     {"seed", ctx.seed}};
    ctx.out << j.dump() << '\n';
  } else {
    ctx.out << "df = " << format_double(est.value) << " +/- " << format_double(est.std_error) << " ("
            << dof_method_name(est.method) << ", " << spec.token() << ", " << o.m << "x" << o.n << ", reps "
            << est.reps << ")\n";
  }
  return ok;
}

// ---- calibrate --------------------------------------------------------------

struct CalibrateOptions {
  Eigen::Index m = 10;
  Eigen::Index n = 10;
  std::string lambda_tilde;
  std::size_t n_lambda = 10;
  std::string gammas;
  std::size_t n_gamma = 25;
  double gamma_max = 5000.0;
  double gamma_min = 1.1;
  std::string family = "mcp";
  std::size_t reps = 500;
  std::size_t mp_reps = 200000;
  std::string out;
};

inline int cmd_calibrate(const CalibrateOptions& o, Context& ctx) {
  std::vector<double> lt;
  if (!o.lambda_tilde.empty()) {
    lt = detail::parse_list(o.lambda_tilde);
  } else {
    // from near the top of the null spectrum down to a small threshold
    const double top = std::sqrt(double(o.m)) + std::sqrt(double(o.n));
    lt = GridSpec::linear_lambdas(top, o.n_lambda, 0.05);
  }
  std::vector<double> g;
  if (o.gammas.empty()) {
    g = GridSpec::log_gammas(o.gamma_max, o.gamma_min, o.n_gamma);
  } else {
    g = detail::parse_list(o.gammas);
    std::sort(g.begin(), g.end(), std::greater<>());
    if (!std::isinf(g.front())) g.insert(g.begin(), std::numeric_limits<double>::infinity());
  }
  CalibrationOptions copts;
  copts.threads = ctx.threads;
  copts.mp_reps = o.mp_reps;
  const CalibrationTable t = calibrate_grid(lt, g, o.m, o.n, parse_family(o.family), o.reps, ctx.seed, copts);
  if (o.out.empty()) {
    write_calibration_csv(ctx.out, t);
  } else {
    std::ofstream f(o.out);
    if (!f) throw io_error("cannot open '" + o.out + "' for writing");
    write_calibration_csv(f, t);
    if (!f) throw io_error("write failed for '" + o.out + "'");
  }
  std::size_t gaps = 0;
  for (const auto& c : t.cells) gaps += !c.ok;
  if (gaps > 0) ctx.err << gaps << " cell(s) could not be bracketed and are left as nan\n";
  return ok;
}

// ---- convert ----------------------------------------------------------------

struct ConvertOptions {
  std::string in;
  std::string format = "csv";
  std::string out;
  double test_frac = 0.0;
  std::string test_out;
  Eigen::Index rows = -1;
  Eigen::Index cols = -1;
};

inline int cmd_convert(const ConvertOptions& o, Context& ctx) {
  if (o.in.empty() || o.out.empty()) throw input_error("convert needs --in and --out");
  if (o.test_frac > 0.0 && o.test_out.empty()) throw input_error("--test-frac needs --test-out");
  SparseTriplets train;
  SparseTriplets test;
  if (o.format == "ml100k" || o.format == "ml1m") {
    TrainTestSplit split = load_movielens(o.in, parse_movielens_format(o.format), o.test_frac, ctx.seed, &ctx.err);
    train = std::move(split.train);
    test = std::move(split.test);
  } else if (o.format == "csv" || o.format == "mtx") {
    const SparseTriplets all = o.format == "mtx" ? read_matrix_market(o.in) : read_triplets_csv(o.in, o.rows, o.cols);
    if (o.test_frac > 0.0) {
      Ratings r;
      r.users = all.rows();
      r.items = all.cols();
      r.entries = all.triplets();
      TrainTestSplit split = split_ratings(r, o.test_frac, ctx.seed);
      train = std::move(split.train);
      test = std::move(split.test);
    } else {
      train = all;
    }
  } else {
    throw input_error("--format must be ml100k, ml1m, csv or mtx");
  }
  detail::write_triplets_any(o.out, train);
  if (o.test_frac > 0.0) detail::write_triplets_any(o.test_out, test);
  ctx.out << "wrote " << train.nnz() << " entries (" << train.rows() << "x" << train.cols() << ") to " << o.out;
  if (o.test_frac > 0.0) ctx.out << " and " << test.nnz() << " to " << o.test_out;
  ctx.out << '\n';
  return ok;
}

// ---- entry point ------------------------------------------------------------

inline int run(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Nonconvex spectral-penalty matrix completion"};
  app.require_subcommand(1);
  Context ctx{out, err};
  app.add_option("--seed", ctx.seed, "root seed for all randomness");
  app.add_option("--threads", ctx.threads, "worker threads (0: NCIMPUTE_THREADS or hardware)");
  app.add_flag("-v,--verbose", ctx.verbose, "log progress to stderr");

  SimulateOptions sim;
  auto* s_sim = app.add_subcommand("simulate", "generate a synthetic instance");
  s_sim->add_option("--regime", sim.regime, "rom, coherent or nonuniform");
  s_sim->add_option("--m", sim.m, "rows");
  s_sim->add_option("--n", sim.n, "columns");
  s_sim->add_option("--rank", sim.rank, "rank of the truth");
  s_sim->add_option("--snr", sim.snr, "signal-to-noise ratio (inf for no noise)");
  s_sim->add_option("--miss", sim.miss, "fraction of missing entries");
  s_sim->add_option("--out", sim.out, "output prefix")->required();

  SingleFitOptions fit;
  auto* s_fit = app.add_subcommand("fit", "fit one penalty");
  fit.input.add_to(*s_fit);
  fit.fit.add_to(*s_fit);
  s_fit->add_option("--penalty", fit.penalty, "family:lambda[:gamma], e.g. mcp:2.5:10")->required();
  s_fit->add_option("--out", fit.out, "CSV output (default stdout)");
  s_fit->add_option("--save-factors", fit.save_factors, "write the fitted factor to PREFIX.{U,sigma,V}.bin");

  SurfaceCommandOptions surf;
  auto* s_surf = app.add_subcommand("surface", "fit the (lambda, gamma) solution surface");
  surf.input.add_to(*s_surf);
  surf.fit.add_to(*s_surf);
  s_surf->add_option("--n-lambda", surf.n_lambda, "number of lambda values");
  s_surf->add_option("--lambda-min-ratio", surf.lambda_min_ratio, "smallest lambda as a fraction of lambda_max");
  s_surf->add_option("--gammas", surf.gammas, "comma-separated gamma values (the inf row is always added)");
  s_surf->add_option("--n-gamma", surf.n_gamma, "number of log-spaced gamma values");
  s_surf->add_option("--gamma-max", surf.gamma_max, "largest finite gamma");
  s_surf->add_option("--gamma-min", surf.gamma_min, "smallest gamma");
  s_surf->add_option("--family", surf.family, "nonconvex family: mcp, scad or log");
  s_surf->add_option("--policy", surf.policy, "warm starts: best-final or best-initial");
  s_surf->add_option("--out", surf.out, "per-cell CSV (default stdout)");
  s_surf->add_option("--summary", surf.summary, "JSON summary of the best cells");
  s_surf->add_option("--save-factors", surf.save_factors, "write the best cells' factors under PREFIX");

  DofOptions dof;
  auto* s_dof = app.add_subcommand("dof", "degrees of freedom of a thresholding operator");
  s_dof->add_option("--m", dof.m, "rows");
  s_dof->add_option("--n", dof.n, "columns");
  s_dof->add_option("--penalty", dof.penalty, "family:lambda[:gamma]")->required();
  s_dof->add_option("--reps", dof.reps, "Monte Carlo replications");
  s_dof->add_option("--ell", dof.ell, "extra curvature of the scaled operator");
  s_dof->add_option("--method", dof.method, "exact-mc, divergence-fd or mp-asymptotic");
  s_dof->add_option("--mp-reps", dof.mp_reps, "MP pair draws for mp-asymptotic");
  s_dof->add_flag("--json", dof.json, "print JSON");

  CalibrateOptions cal;
  auto* s_cal = app.add_subcommand("calibrate", "match df across gamma to the soft-thresholding df");
  s_cal->add_option("--m", cal.m, "rows");
  s_cal->add_option("--n", cal.n, "columns");
  s_cal->add_option("--lambda-tilde", cal.lambda_tilde, "comma-separated soft thresholds");
  s_cal->add_option("--n-lambda", cal.n_lambda, "number of default soft thresholds");
  s_cal->add_option("--gammas", cal.gammas, "comma-separated gamma values");
  s_cal->add_option("--n-gamma", cal.n_gamma, "number of log-spaced gamma values");
  s_cal->add_option("--gamma-max", cal.gamma_max, "largest finite gamma");
  s_cal->add_option("--gamma-min", cal.gamma_min, "smallest gamma");
  s_cal->add_option("--family", cal.family, "penalty family");
  s_cal->add_option("--reps", cal.reps, "null draws shared by all cells");
  s_cal->add_option("--mp-reps", cal.mp_reps, "MP pair draws when min(m, n) > 500");
  s_cal->add_option("--out", cal.out, "CSV output (default stdout)");

  ConvertOptions conv;
  auto* s_conv = app.add_subcommand("convert", "convert ratings or triplet files");
  s_conv->add_option("--in", conv.in, "input file")->required();
  s_conv->add_option("--format", conv.format, "ml100k, ml1m, csv or mtx");
  s_conv->add_option("--out", conv.out, "output (.csv or .mtx)")->required();
  s_conv->add_option("--test-frac", conv.test_frac, "fraction written to --test-out");
  s_conv->add_option("--test-out", conv.test_out, "holdout output");
  s_conv->add_option("--rows", conv.rows, "rows for csv input");
  s_conv->add_option("--cols", conv.cols, "columns for csv input");

  try {
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? ok : usage;
  }

  try {
    if (ctx.threads == 0) ctx.threads = default_thread_count();
    if (*s_sim) return cmd_simulate(sim, ctx);
    if (*s_fit) return cmd_fit(fit, ctx);
    if (*s_surf) return cmd_surface(surf, ctx);
    if (*s_dof) return cmd_dof(dof, ctx);
    if (*s_cal) return cmd_calibrate(cal, ctx);
    if (*s_conv) return cmd_convert(conv, ctx);
  } catch (const io_error& e) {
    err << "error: " << e.what() << '\n';
    return io;
  } catch (const numerical_error& e) {
    err << "error: " << e.what() << '\n';
    return numerical;
  } catch (const input_error& e) {
    err << "error: " << e.what() << '\n';
    return usage;
  } catch (const domain_error& e) {
    err << "error: " << e.what() << '\n';
    return usage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return numerical;
  }
  return usage;
}

}  // namespace ncimpute::cli
