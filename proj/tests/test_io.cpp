#include <gtest/gtest.h>

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ncimpute/data.hpp"
#include "ncimpute/io.hpp"

using namespace ncimpute;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "ncimpute_test_io";
  fs::create_directories(dir);
  return dir / name;
}

void expect_same(const SparseTriplets& a, const SparseTriplets& b) {
  ASSERT_EQ(a.rows(), b.rows());
  ASSERT_EQ(a.cols(), b.cols());
  ASSERT_EQ(a.nnz(), b.nnz());
  for (std::size_t k = 0; k < a.nnz(); ++k) {
    EXPECT_EQ(a.row(k), b.row(k));
    EXPECT_EQ(a.col(k), b.col(k));
    EXPECT_EQ(a.value(k), b.value(k));
  }
}

}  // namespace

TEST(FormatDouble, RoundTrips) {
  Rng rng(1);
  std::normal_distribution<double> normal(0.0, 1e3);
  for (int k = 0; k < 1000; ++k) {
    const double x = normal(rng) * std::pow(10.0, k % 20 - 10);
    EXPECT_EQ(std::stod(format_double(x)), x);
  }
  EXPECT_EQ(format_double(0.1), "0.1");
  EXPECT_EQ(format_double(std::numeric_limits<double>::infinity()), "inf");
  EXPECT_EQ(format_double(-std::numeric_limits<double>::infinity()), "-inf");
  EXPECT_EQ(format_double(std::numeric_limits<double>::quiet_NaN()), "nan");
}

TEST(TripletsCsv, RoundTripAndDims) {
  const SyntheticInstance inst = gen_rom(20, 15, 2, 3.0, 0.5, 2);
  std::stringstream ss;
  write_triplets_csv(ss, inst.observed);
  expect_same(read_triplets_csv(ss, 20, 15), inst.observed);

  std::istringstream inferred("0,0,1.5\n3,1,-2\n\n2,4,1e-3\n");
  const SparseTriplets t = read_triplets_csv(inferred);
  EXPECT_EQ(t.rows(), 4);
  EXPECT_EQ(t.cols(), 5);
  EXPECT_EQ(t.nnz(), 3u);

  const fs::path p = scratch("obs.csv");
  write_triplets_csv(p.string(), inst.observed);
  expect_same(read_triplets(p.string(), 20, 15), inst.observed);
}

TEST(TripletsCsv, Errors) {
  std::istringstream bad("0,0,1\n1,x,2\n");
  try {
    read_triplets_csv(bad);
    FAIL();
  } catch (const io_error& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  std::istringstream neg("-1,0,1\n");
  EXPECT_THROW(read_triplets_csv(neg), io_error);
  std::istringstream extra("0,0,1,4\n");
  EXPECT_THROW(read_triplets_csv(extra), io_error);
  std::istringstream dup("0,0,1\n0,0,2\n");
  EXPECT_THROW(read_triplets_csv(dup), input_error);
  std::istringstream out_of_range("5,0,1\n");
  EXPECT_THROW(read_triplets_csv(out_of_range, 3, 3), input_error);
  EXPECT_THROW(read_triplets_csv(std::string("/nonexistent/x.csv")), io_error);
}

TEST(MatrixMarket, RoundTrip) {
  const SyntheticInstance inst = gen_rom(12, 9, 2, 3.0, 0.6, 3);
  std::stringstream ss;
  write_matrix_market(ss, inst.observed);
  const std::string text = ss.str();
  EXPECT_EQ(text.rfind("%%MatrixMarket matrix coordinate real general", 0), 0u);
  expect_same(read_matrix_market(ss), inst.observed);
  const fs::path p = scratch("obs.mtx");
  write_matrix_market(p.string(), inst.observed);
  expect_same(read_triplets(p.string()), inst.observed);

  std::istringstream one_based("%%MatrixMarket matrix coordinate real general\n% comment\n2 3 1\n2 3 4.5\n");
  const SparseTriplets t = read_matrix_market(one_based);
  EXPECT_EQ(t.row(0), 1);
  EXPECT_EQ(t.col(0), 2);
  std::istringstream pattern("%%MatrixMarket matrix coordinate pattern general\n2 2 1\n1 1\n");
  EXPECT_THROW(read_matrix_market(pattern), io_error);
  std::istringstream short_body("%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1\n");
  EXPECT_THROW(read_matrix_market(short_body), io_error);
}

TEST(DenseBinary, RoundTripBothEndiannessTags) {
  Rng rng(4);
  const Eigen::MatrixXd a = gaussian_matrix(7, 3, rng);
  std::stringstream ss;
  write_dense_binary(ss, a);
  EXPECT_EQ(ss.str().rfind("ncimpute-dense v1 rows=7 cols=3 endian=", 0), 0u);
  EXPECT_EQ(read_dense_binary(ss), a);

  // the same payload written by a machine of the other byte order
  std::string swapped = "ncimpute-dense v1 rows=7 cols=3 endian=";
  swapped += std::endian::native == std::endian::little ? "big\n" : "little\n";
  for (Eigen::Index k = 0; k < a.size(); ++k) {
    char bytes[8];
    std::memcpy(bytes, a.data() + k, 8);
    std::reverse(bytes, bytes + 8);
    swapped.append(bytes, 8);
  }
  std::istringstream other(swapped);
  EXPECT_EQ(read_dense_binary(other), a);

  std::istringstream truncated("ncimpute-dense v1 rows=2 cols=2 endian=little\nabc");
  EXPECT_THROW(read_dense_binary(truncated), io_error);
  std::istringstream garbage("not a header\n");
  EXPECT_THROW(read_dense_binary(garbage), io_error);
}

TEST(FactorContainer, RoundTrip) {
  Rng rng(5);
  const LowRankFactor f = spectral_threshold_dense(gaussian_matrix(9, 6, rng), PenaltySpec::soft(0.5));
  const std::string prefix = scratch("fit").string();
  save_factor(prefix, f);
  const LowRankFactor g = load_factor(prefix);
  EXPECT_EQ(g.left, f.left);
  EXPECT_EQ(g.singvals, f.singvals);
  EXPECT_EQ(g.right, f.right);
  EXPECT_THROW(load_factor(scratch("missing").string()), io_error);
}

TEST(ResultTables, SurfaceCsvColumnsAndRows) {
  const SyntheticInstance inst = gen_rom(20, 15, 2, 5.0, 0.5, 6);
  const double lmax = lambda_max(inst.observed);
  const GridSpec grid{GridSpec::linear_lambdas(lmax, 5, 0.1), {std::numeric_limits<double>::infinity(), 10.0, 2.0},
                      Family::MCPlus};
  SurfaceOptions opts;
  opts.test_error = [&](const LowRankFactor& x) { return *relative_error(x, inst.holdout); };
  const SolutionSurface s = fit_surface(inst.observed, grid, FitConfig{}, opts);
  std::stringstream ss;
  write_surface_csv(ss, s);
  std::string line;
  std::getline(ss, line);
  EXPECT_EQ(line,
            "lambda,gamma,rank,objective,train_err,test_err,outer_iters,delta_final,stationarity_residual,wall_time_s");
  int rows = 0;
  while (std::getline(ss, line)) {
    ++rows;
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 9);
  }
  EXPECT_EQ(rows, 15);
  std::stringstream again;
  write_surface_csv(again, s);
  std::getline(again, line);
  std::getline(again, line);
  EXPECT_EQ(line.rfind(format_double(lmax) + ",inf,0,", 0), 0u) << line;
}

TEST(ResultTables, CalibrationCsv) {
  const CalibrationTable t =
      calibrate_grid({3.0, 1.0}, {std::numeric_limits<double>::infinity(), 2.0}, 6, 5, Family::MCPlus, 50, 7);
  std::stringstream ss;
  write_calibration_csv(ss, t);
  std::string line;
  std::getline(ss, line);
  EXPECT_EQ(line, "lambda_tilde,gamma,lambda_calibrated,df_target,df_achieved,stderr");
  int rows = 0;
  while (std::getline(ss, line)) ++rows;
  EXPECT_EQ(rows, 4);
}
