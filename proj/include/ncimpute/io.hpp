#pragma once

// File formats: CSV and MatrixMarket triplets, the three-file binary factor
// container, and the result tables.

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ncimpute/dof.hpp"
#include "ncimpute/error.hpp"
#include "ncimpute/impute.hpp"
#include "ncimpute/lowrank.hpp"
#include "ncimpute/spectral.hpp"

namespace ncimpute {

/// Shortest text that round-trips a double.
inline std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[40];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, x);
    if (std::strtod(buf, nullptr) == x) break;
  }
  return buf;
}

namespace detail {

inline std::ifstream open_in(const std::string& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw io_error("cannot open '" + path + "' for reading");
  return in;
}

inline std::ofstream open_out(const std::string& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(path, mode);
  if (!out) throw io_error("cannot open '" + path + "' for writing");
  return out;
}

inline bool parse_index(std::string_view s, long long& out) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

inline bool parse_real(std::string_view s, double& out) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

}  // namespace detail

/// Headerless `row,col,value` lines with 0-based indices. Dimensions default
/// to one past the largest index seen.
inline SparseTriplets read_triplets_csv(std::istream& in, Eigen::Index nrows = -1, Eigen::Index ncols = -1) {
  std::vector<Triplet> entries;
  std::string line;
  std::size_t lineno = 0;
  Eigen::Index max_r = -1;
  Eigen::Index max_c = -1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string_view sv(line);
    const auto c1 = sv.find(',');
    const auto c2 = c1 == std::string_view::npos ? c1 : sv.find(',', c1 + 1);
    long long r = 0;
    long long c = 0;
    double v = 0.0;
    if (c2 == std::string_view::npos || sv.find(',', c2 + 1) != std::string_view::npos ||
        !detail::parse_index(sv.substr(0, c1), r) || !detail::parse_index(sv.substr(c1 + 1, c2 - c1 - 1), c) ||
        !detail::parse_real(sv.substr(c2 + 1), v) || r < 0 || c < 0) {
      throw io_error("malformed triplet at line " + std::to_string(lineno) + ": '" + line + "'");
    }
    max_r = std::max<Eigen::Index>(max_r, r);
    max_c = std::max<Eigen::Index>(max_c, c);
    entries.push_back({static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c), v});
  }
  return SparseTriplets(nrows >= 0 ? nrows : max_r + 1, ncols >= 0 ? ncols : max_c + 1, std::move(entries));
}

inline SparseTriplets read_triplets_csv(const std::string& path, Eigen::Index nrows = -1, Eigen::Index ncols = -1) {
  auto in = detail::open_in(path);
  return read_triplets_csv(in, nrows, ncols);
}

inline void write_triplets_csv(std::ostream& out, const SparseTriplets& data) {
  for (std::size_t k = 0; k < data.nnz(); ++k) {
    out << data.row(k) << ',' << data.col(k) << ',' << format_double(data.value(k)) << '\n';
  }
}

inline void write_triplets_csv(const std::string& path, const SparseTriplets& data) {
  auto out = detail::open_out(path);
  write_triplets_csv(out, data);
  if (!out) throw io_error("write failed for '" + path + "'");
}

/// MatrixMarket `coordinate real general` (1-based indices).
inline SparseTriplets read_matrix_market(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("%%MatrixMarket", 0) != 0) {
    throw io_error("MatrixMarket: missing %%MatrixMarket banner");
  }
  std::istringstream banner(line);
  std::string tag, object, format, field, symmetry;
  banner >> tag >> object >> format >> field >> symmetry;
  for (auto* s : {&object, &format, &field, &symmetry}) {
    for (auto& ch : *s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  }
  if (object != "matrix" || format != "coordinate" || (field != "real" && field != "integer" && field != "double") ||
      symmetry != "general") {
    throw io_error("MatrixMarket: only 'matrix coordinate real general' is supported");
  }
  std::size_t lineno = 1;
  long long m = -1, n = -1, nnz = -1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '%') continue;
    std::istringstream size_line(line);
    if (!(size_line >> m >> n >> nnz) || m < 0 || n < 0 || nnz < 0) {
      throw io_error("MatrixMarket: malformed size line " + std::to_string(lineno));
    }
    break;
  }
  if (m < 0) throw io_error("MatrixMarket: missing size line");
  std::vector<Triplet> entries;
  entries.reserve(static_cast<std::size_t>(nnz));
  while (static_cast<long long>(entries.size()) < nnz && std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '%') continue;
    std::istringstream entry(line);
    long long r = 0, c = 0;
    double v = 0.0;
    if (!(entry >> r >> c >> v) || r < 1 || c < 1 || r > m || c > n) {
      throw io_error("MatrixMarket: malformed entry at line " + std::to_string(lineno));
    }
    entries.push_back({static_cast<Eigen::Index>(r - 1), static_cast<Eigen::Index>(c - 1), v});
  }
  if (static_cast<long long>(entries.size()) != nnz) throw io_error("MatrixMarket: fewer entries than declared");
  return SparseTriplets(m, n, std::move(entries));
}

inline SparseTriplets read_matrix_market(const std::string& path) {
  auto in = detail::open_in(path);
  return read_matrix_market(in);
}

inline void write_matrix_market(std::ostream& out, const SparseTriplets& data) {
  out << "%%MatrixMarket matrix coordinate real general\n";
  out << data.rows() << ' ' << data.cols() << ' ' << data.nnz() << '\n';
  for (std::size_t k = 0; k < data.nnz(); ++k) {
    out << data.row(k) + 1 << ' ' << data.col(k) + 1 << ' ' << format_double(data.value(k)) << '\n';
  }
}

inline void write_matrix_market(const std::string& path, const SparseTriplets& data) {
  auto out = detail::open_out(path);
  write_matrix_market(out, data);
  if (!out) throw io_error("write failed for '" + path + "'");
}

/// Triplets by extension: .mtx is MatrixMarket, anything else CSV.
inline SparseTriplets read_triplets(const std::string& path, Eigen::Index nrows = -1, Eigen::Index ncols = -1) {
  if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".mtx") == 0) {
    SparseTriplets s = read_matrix_market(path);
    if ((nrows >= 0 && nrows != s.rows()) || (ncols >= 0 && ncols != s.cols())) {
      throw input_error("'" + path + "' has dimensions that disagree with the requested ones");
    }
    return s;
  }
  return read_triplets_csv(path, nrows, ncols);
}

// Binary dense matrices: one text header line followed by rows*cols
// float64 values in column-major order.
inline constexpr const char* dense_magic = "ncimpute-dense";

inline void write_dense_binary(std::ostream& out, const Eigen::MatrixXd& a) {
  static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);
  out << dense_magic << " v1 rows=" << a.rows() << " cols=" << a.cols()
      << " endian=" << (std::endian::native == std::endian::little ? "little" : "big") << '\n';
  out.write(reinterpret_cast<const char*>(a.data()), static_cast<std::streamsize>(a.size() * sizeof(double)));
}

inline Eigen::MatrixXd read_dense_binary(std::istream& in) {
  std::string header;
  if (!std::getline(in, header)) throw io_error("dense container: missing header");
  std::istringstream hs(header);
  std::string magic, version, rows_kv, cols_kv, endian_kv;
  hs >> magic >> version >> rows_kv >> cols_kv >> endian_kv;
  if (magic != dense_magic || version != "v1" || rows_kv.rfind("rows=", 0) != 0 || cols_kv.rfind("cols=", 0) != 0 ||
      endian_kv.rfind("endian=", 0) != 0) {
    throw io_error("dense container: unrecognized header '" + header + "'");
  }
  long long rows = 0, cols = 0;
  if (!detail::parse_index(rows_kv.substr(5), rows) || !detail::parse_index(cols_kv.substr(5), cols) || rows < 0 ||
      cols < 0) {
    throw io_error("dense container: bad dimensions in header");
  }
  const std::string endian = endian_kv.substr(7);
  const bool little = std::endian::native == std::endian::little;
  if (endian != "little" && endian != "big") {
    throw io_error("dense container: unknown endianness tag '" + endian + "'");
  }
  Eigen::MatrixXd a(rows, cols);
  in.read(reinterpret_cast<char*>(a.data()), static_cast<std::streamsize>(a.size() * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(a.size() * sizeof(double))) {
    throw io_error("dense container: truncated payload");
  }
  if ((endian == "little") != little) {
    for (Eigen::Index k = 0; k < a.size(); ++k) {
      auto bits = std::bit_cast<std::uint64_t>(a.data()[k]);
      bits = __builtin_bswap64(bits);
      a.data()[k] = std::bit_cast<double>(bits);
    }
  }
  return a;
}

/// Writes <prefix>.U.bin, <prefix>.sigma.bin and <prefix>.V.bin.
inline void save_factor(const std::string& prefix, const LowRankFactor& f) {
  const std::pair<const char*, Eigen::MatrixXd> parts[] = {
      {".U.bin", f.left}, {".sigma.bin", Eigen::MatrixXd(f.singvals)}, {".V.bin", f.right}};
  for (const auto& [suffix, mat] : parts) {
    auto out = detail::open_out(prefix + suffix, std::ios::out | std::ios::binary);
    write_dense_binary(out, mat);
    if (!out) throw io_error("write failed for '" + prefix + suffix + "'");
  }
}

inline LowRankFactor load_factor(const std::string& prefix) {
  auto read = [&](const char* suffix) {
    auto in = detail::open_in(prefix + suffix, std::ios::in | std::ios::binary);
    return read_dense_binary(in);
  };
  Eigen::MatrixXd u = read(".U.bin");
  Eigen::MatrixXd s = read(".sigma.bin");
  Eigen::MatrixXd v = read(".V.bin");
  if (s.cols() != 1 && s.size() != 0) throw io_error("factor container: sigma must be a column");
  return LowRankFactor(std::move(u), Eigen::VectorXd(s.col(0)), std::move(v));
}

inline constexpr const char* surface_csv_header =
    "lambda,gamma,rank,objective,train_err,test_err,outer_iters,delta_final,stationarity_residual,wall_time_s";

inline void write_surface_row(std::ostream& out, double lambda, double gamma, const SurfaceCell& c) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  out << format_double(lambda) << ',' << format_double(gamma) << ','
      << (c.failed ? std::string("nan") : std::to_string(c.fit.rank)) << ','
      << format_double(c.failed ? nan : c.fit.objective) << ',' << format_double(c.train_err) << ','
      << format_double(c.test_err) << ',' << (c.failed ? 0 : c.fit.outer_iters) << ','
      << format_double(c.failed ? nan : c.fit.delta_final()) << ','
      << format_double(c.failed ? nan : c.fit.stationarity_residual) << ',' << format_double(c.fit.wall_time)
      << '\n';
}

/// One row per cell, soft row first, lambda decreasing within a row. Failed
/// cells are written with nan values.
inline void write_surface_csv(std::ostream& out, const SolutionSurface& s) {
  out << surface_csv_header << '\n';
  const GridSpec& g = s.grid();
  for (std::size_t j = 0; j < g.n_gamma(); ++j) {
    for (std::size_t i = 0; i < g.n_lambda(); ++i) write_surface_row(out, g.lambdas[i], g.gammas[j], s.cell(i, j));
  }
}

inline constexpr const char* calibration_csv_header =
    "lambda_tilde,gamma,lambda_calibrated,df_target,df_achieved,stderr";

inline void write_calibration_csv(std::ostream& out, const CalibrationTable& t) {
  out << calibration_csv_header << '\n';
  for (const auto& c : t.cells) {
    out << format_double(c.lambda_tilde) << ',' << format_double(c.gamma) << ','
        << format_double(c.lambda_calibrated) << ',' << format_double(c.df_target) << ','
        << format_double(c.df_achieved) << ',' << format_double(c.std_error) << '\n';
  }
}

}  // namespace ncimpute
