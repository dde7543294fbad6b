#pragma once

// Structured operators and the warm-started block power SVD.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <Eigen/SparseCore>

#include "ncimpute/error.hpp"
#include "ncimpute/rng.hpp"
#include "ncimpute/spectral.hpp"

namespace ncimpute {

struct Triplet {
  Eigen::Index row = 0;
  Eigen::Index col = 0;
  double value = 0.0;
};

/// Observed entries P_Omega(Y). Entries are kept sorted row-major with unique
/// coordinates, which doubles as a CSR layout.
class SparseTriplets {
public:
  using StorageIndex = int;
  using CsrMap = Eigen::Map<const Eigen::SparseMatrix<double, Eigen::RowMajor, StorageIndex>>;

  SparseTriplets() = default;
  SparseTriplets(Eigen::Index nrows, Eigen::Index ncols, std::vector<Triplet> entries);

  Eigen::Index rows() const { return nrows_; }
  Eigen::Index cols() const { return ncols_; }
  std::size_t nnz() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  StorageIndex row(std::size_t k) const { return row_idx_[k]; }
  StorageIndex col(std::size_t k) const { return col_idx_[k]; }
  double value(std::size_t k) const { return values_[k]; }
  const std::vector<double>& values() const { return values_; }
  const std::vector<StorageIndex>& row_indices() const { return row_idx_; }
  const std::vector<StorageIndex>& col_indices() const { return col_idx_; }

  /// Same pattern, new values (in entry order).
  SparseTriplets with_values(std::vector<double> values) const;

  std::vector<Triplet> triplets() const;
  double squared_norm() const;
  Eigen::MatrixXd to_dense() const;

  /// Zero-copy CSR view of the pattern carrying `values` (defaults to own values).
  CsrMap csr(const double* values = nullptr) const {
    return CsrMap(nrows_, ncols_, static_cast<Eigen::Index>(nnz()), row_ptr_.data(), col_idx_.data(),
                  values ? values : values_.data());
  }

private:
  Eigen::Index nrows_ = 0;
  Eigen::Index ncols_ = 0;
  std::vector<StorageIndex> row_idx_;
  std::vector<StorageIndex> col_idx_;
  std::vector<double> values_;
  std::vector<StorageIndex> row_ptr_{0};
};

inline SparseTriplets::SparseTriplets(Eigen::Index nrows, Eigen::Index ncols, std::vector<Triplet> entries)
    : nrows_(nrows), ncols_(ncols) {
  if (nrows < 0 || ncols < 0) throw input_error("SparseTriplets: negative dimensions");
  if (nrows > std::numeric_limits<StorageIndex>::max() || ncols > std::numeric_limits<StorageIndex>::max()) {
    throw input_error("SparseTriplets: dimensions exceed index range");
  }
  for (const auto& t : entries) {
    if (t.row < 0 || t.row >= nrows || t.col < 0 || t.col >= ncols) {
      throw input_error("SparseTriplets: index (" + std::to_string(t.row) + ", " + std::to_string(t.col) +
                        ") out of range");
    }
    if (!std::isfinite(t.value)) throw input_error("SparseTriplets: non-finite value");
  }
  std::sort(entries.begin(), entries.end(),
            [](const Triplet& a, const Triplet& b) { return a.row != b.row ? a.row < b.row : a.col < b.col; });
  for (std::size_t k = 1; k < entries.size(); ++k) {
    if (entries[k].row == entries[k - 1].row && entries[k].col == entries[k - 1].col) {
      throw input_error("SparseTriplets: duplicate coordinate (" + std::to_string(entries[k].row) + ", " +
                        std::to_string(entries[k].col) + ")");
    }
  }
  row_idx_.reserve(entries.size());
  col_idx_.reserve(entries.size());
  values_.reserve(entries.size());
  row_ptr_.assign(static_cast<std::size_t>(nrows) + 1, 0);
  for (const auto& t : entries) {
    row_idx_.push_back(static_cast<StorageIndex>(t.row));
    col_idx_.push_back(static_cast<StorageIndex>(t.col));
    values_.push_back(t.value);
    ++row_ptr_[static_cast<std::size_t>(t.row) + 1];
  }
  std::partial_sum(row_ptr_.begin(), row_ptr_.end(), row_ptr_.begin());
}

inline SparseTriplets SparseTriplets::with_values(std::vector<double> values) const {
  if (values.size() != nnz()) throw input_error("SparseTriplets::with_values: size mismatch");
  SparseTriplets out = *this;
  out.values_ = std::move(values);
  return out;
}

inline std::vector<Triplet> SparseTriplets::triplets() const {
  std::vector<Triplet> out;
  out.reserve(nnz());
  for (std::size_t k = 0; k < nnz(); ++k) out.push_back({row_idx_[k], col_idx_[k], values_[k]});
  return out;
}

inline double SparseTriplets::squared_norm() const {
  double acc = 0.0;
  for (double v : values_) acc += v * v;
  return acc;
}

inline Eigen::MatrixXd SparseTriplets::to_dense() const {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(nrows_, ncols_);
  for (std::size_t k = 0; k < nnz(); ++k) out(row_idx_[k], col_idx_[k]) = values_[k];
  return out;
}

/// Values of a low-rank factor at the coordinates of `pattern`.
inline std::vector<double> factor_at(const LowRankFactor& x, const SparseTriplets& pattern) {
  std::vector<double> out(pattern.nnz(), 0.0);
  if (x.rank() == 0) return out;
  // row-major copies keep the inner loop contiguous
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> us = x.left * x.singvals.asDiagonal();
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> v = x.right;
  for (std::size_t k = 0; k < pattern.nnz(); ++k) {
    out[k] = us.row(pattern.row(k)).dot(v.row(pattern.col(k)));
  }
  return out;
}

template <class Op>
concept LinearOperator = requires(const Op& op, const Eigen::MatrixXd& block) {
  { op.rows() } -> std::convertible_to<Eigen::Index>;
  { op.cols() } -> std::convertible_to<Eigen::Index>;
  { op.apply(block) } -> std::convertible_to<Eigen::MatrixXd>;
  { op.apply_adjoint(block) } -> std::convertible_to<Eigen::MatrixXd>;
};

class DenseOperator {
public:
  explicit DenseOperator(const Eigen::MatrixXd& a) : a_(&a) {}
  Eigen::Index rows() const { return a_->rows(); }
  Eigen::Index cols() const { return a_->cols(); }
  Eigen::MatrixXd apply(const Eigen::MatrixXd& b) const { return *a_ * b; }
  Eigen::MatrixXd apply_adjoint(const Eigen::MatrixXd& b) const { return a_->transpose() * b; }

private:
  const Eigen::MatrixXd* a_;
};

class SparseOperator {
public:
  explicit SparseOperator(const SparseTriplets& s) : s_(&s) {}
  Eigen::Index rows() const { return s_->rows(); }
  Eigen::Index cols() const { return s_->cols(); }
  Eigen::MatrixXd apply(const Eigen::MatrixXd& b) const { return s_->csr() * b; }
  Eigen::MatrixXd apply_adjoint(const Eigen::MatrixXd& b) const { return s_->csr().transpose() * b; }

private:
  const SparseTriplets* s_;
};

/// scale * sparse + lowrank, applied without forming the dense matrix.
/// Cost of a product with a p-column block: O(p (|Omega| + r (m + n))).
class SparsePlusLowRank {
public:
  SparsePlusLowRank(SparseTriplets sparse, LowRankFactor lowrank, double scale = 1.0)
      : sparse_(std::move(sparse)), lowrank_(std::move(lowrank)), scale_(scale) {
    if (sparse_.rows() != lowrank_.rows() || sparse_.cols() != lowrank_.cols()) {
      throw input_error("SparsePlusLowRank: sparse and low-rank parts disagree in shape");
    }
    if (!(scale_ > 0.0)) throw input_error("SparsePlusLowRank: scale must be positive");
  }

  Eigen::Index rows() const { return sparse_.rows(); }
  Eigen::Index cols() const { return sparse_.cols(); }
  const SparseTriplets& sparse() const { return sparse_; }
  const LowRankFactor& lowrank() const { return lowrank_; }
  double scale() const { return scale_; }

  Eigen::MatrixXd apply(const Eigen::MatrixXd& b) const {
    if (b.rows() != cols()) throw input_error("SparsePlusLowRank::apply: dimension mismatch");
    Eigen::MatrixXd out = scale_ * (sparse_.csr() * b);
    if (lowrank_.rank() > 0) {
      out.noalias() += lowrank_.left * (lowrank_.singvals.asDiagonal() * (lowrank_.right.transpose() * b));
    }
    return out;
  }

  Eigen::MatrixXd apply_adjoint(const Eigen::MatrixXd& b) const {
    if (b.rows() != rows()) throw input_error("SparsePlusLowRank::apply_adjoint: dimension mismatch");
    Eigen::MatrixXd out = scale_ * (sparse_.csr().transpose() * b);
    if (lowrank_.rank() > 0) {
      out.noalias() += lowrank_.right * (lowrank_.singvals.asDiagonal() * (lowrank_.left.transpose() * b));
    }
    return out;
  }

  Eigen::VectorXd matvec(const Eigen::VectorXd& x) const { return apply(x); }
  Eigen::VectorXd rmatvec(const Eigen::VectorXd& y) const { return apply_adjoint(y); }

  Eigen::MatrixXd to_dense() const { return scale_ * sparse_.to_dense() + lowrank_.dense(); }

private:
  SparseTriplets sparse_;
  LowRankFactor lowrank_;
  double scale_;
};

static_assert(LinearOperator<DenseOperator>);
static_assert(LinearOperator<SparseOperator>);
static_assert(LinearOperator<SparsePlusLowRank>);

struct BlockSvdOptions {
  double tol = 1e-5;
  int max_iters = 100;
  std::uint64_t seed = 0x5eed;
};

/// Initial subspace for block_power_svd. Either side may be empty; when both
/// are given the right basis is used.
struct SvdWarmStart {
  Eigen::MatrixXd left;
  Eigen::MatrixXd right;

  bool empty() const { return left.cols() == 0 && right.cols() == 0; }
};

struct BlockSvdResult {
  /// Top singular triplets (values > 0 only).
  LowRankFactor factor;
  /// Full r-column bases, including directions with zero Ritz value; feed
  /// back as a warm start for the next call.
  Eigen::MatrixXd left_basis;
  Eigen::MatrixXd right_basis;
  Eigen::VectorXd ritz_values;
  int iterations = 0;
  bool converged = false;
};

namespace detail {

// Two passes of Cholesky QR; empty when w is too ill conditioned for it.
inline std::optional<Eigen::MatrixXd> cholesky_qr2(const Eigen::MatrixXd& w) {
  Eigen::MatrixXd q = w;
  for (int pass = 0; pass < 2; ++pass) {
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(q.cols(), q.cols());
    gram.selfadjointView<Eigen::Lower>().rankUpdate(q.transpose());
    Eigen::LLT<Eigen::MatrixXd> llt(gram);
    if (llt.info() != Eigen::Success) return std::nullopt;
    const Eigen::VectorXd d = llt.matrixLLT().diagonal();
    if (!(d.minCoeff() > 1e-6 * d.maxCoeff())) return std::nullopt;
    llt.matrixU().solveInPlace<Eigen::OnTheRight>(q);
  }
  return q;
}

// Orthonormal basis for range(w) padded with random directions when w is
// numerically rank deficient.
inline Eigen::MatrixXd orthonormalize(const Eigen::MatrixXd& w, Rng& rng) {
  const Eigen::Index m = w.rows();
  const Eigen::Index p = w.cols();
  if (p == 0) return Eigen::MatrixXd(m, 0);
  if (p <= m) {
    if (auto q = cholesky_qr2(w)) return *std::move(q);
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(w);
  const double scale = w.cwiseAbs().maxCoeff();
  qr.setThreshold(1e-12);
  const Eigen::Index rank = scale > 0.0 ? qr.rank() : 0;
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(m, p);
  for (Eigen::Index k = rank; k < p; ++k) {
    Eigen::VectorXd v = gaussian_matrix(m, 1, rng);
    for (int pass = 0; pass < 2; ++pass) {
      if (k > 0) v -= q.leftCols(k) * (q.leftCols(k).transpose() * v);
    }
    q.col(k) = v.normalized();
  }
  return q;
}

inline Eigen::MatrixXd fit_columns(const Eigen::MatrixXd& basis, Eigen::Index rows, Eigen::Index p, Rng& rng) {
  Eigen::MatrixXd out(rows, p);
  const Eigen::Index keep = std::min<Eigen::Index>(basis.cols(), p);
  if (keep > 0) out.leftCols(keep) = basis.leftCols(keep);
  if (p > keep) out.rightCols(p - keep) = gaussian_matrix(rows, p - keep, rng);
  return out;
}

}  // namespace detail

/// Top-`rank` SVD of `op` by block power (alternating least squares)
/// iterations:  V <- orth(A' U),  U <- orth(A V).
/// Stops when ||ritz - ritz_prev||_2 <= tol * ||ritz||_2.
template <LinearOperator Op>
BlockSvdResult block_power_svd(const Op& op, Eigen::Index rank, const SvdWarmStart& warm = {},
                               const BlockSvdOptions& opts = {}) {
  const Eigen::Index m = op.rows();
  const Eigen::Index n = op.cols();
  if (rank < 0 || rank > std::min(m, n)) {
    throw input_error("block_power_svd: target rank " + std::to_string(rank) + " exceeds min(m, n)");
  }
  if (warm.right.cols() > 0 && warm.right.rows() != n) throw input_error("block_power_svd: warm V has wrong rows");
  if (warm.left.cols() > 0 && warm.left.rows() != m) throw input_error("block_power_svd: warm U has wrong rows");

  BlockSvdResult result;
  if (rank == 0) {
    result.factor = LowRankFactor::zero(m, n);
    result.left_basis = Eigen::MatrixXd(m, 0);
    result.right_basis = Eigen::MatrixXd(n, 0);
    result.converged = true;
    return result;
  }

  Rng rng(opts.seed);
  Eigen::MatrixXd v;
  if (warm.right.cols() > 0 || warm.left.cols() == 0) {
    v = detail::orthonormalize(detail::fit_columns(warm.right, n, rank, rng), rng);
  } else {
    const Eigen::MatrixXd u0 = detail::orthonormalize(detail::fit_columns(warm.left, m, rank, rng), rng);
    v = detail::orthonormalize(op.apply_adjoint(u0), rng);
  }

  Eigen::MatrixXd u;
  Eigen::MatrixXd small;
  Eigen::VectorXd ritz;
  Eigen::VectorXd prev_ritz;
  for (int it = 1; it <= opts.max_iters; ++it) {
    u = detail::orthonormalize(op.apply(v), rng);
    const Eigen::MatrixXd z = op.apply_adjoint(u);  // = A' U
    v = detail::orthonormalize(z, rng);
    small = (v.transpose() * z).transpose();  // = U' A V
    ritz = Eigen::BDCSVD<Eigen::MatrixXd>(small).singularValues();
    result.iterations = it;
    if (prev_ritz.size() == ritz.size()) {
      if ((ritz - prev_ritz).norm() <= opts.tol * ritz.norm()) {
        result.converged = true;
        break;
      }
    }
    prev_ritz = ritz;
  }

  Eigen::BDCSVD<Eigen::MatrixXd> svd(small, Eigen::ComputeFullU | Eigen::ComputeFullV);
  result.left_basis = u * svd.matrixU();
  result.right_basis = v * svd.matrixV();
  result.ritz_values = svd.singularValues();
  const double cut = zero_singular_value_cut * std::max(result.ritz_values(0), 0.0);
  Eigen::Index positive = 0;
  while (positive < rank && result.ritz_values(positive) > cut) ++positive;
  result.factor = LowRankFactor(result.left_basis.leftCols(positive), result.ritz_values.head(positive),
                                result.right_basis.leftCols(positive));
  return result;
}

struct SubspaceDistance {
  double rho = 0.0;
};

/// ||sin Theta(S1, S2)||_2 for orthonormal bases with equal column counts,
/// from the residual of projecting S2 onto span(S1).
inline double max_sin_theta(const Eigen::MatrixXd& s1, const Eigen::MatrixXd& s2) {
  if (s1.rows() != s2.rows() || s1.cols() != s2.cols()) throw input_error("max_sin_theta: shape mismatch");
  if (s1.cols() == 0) return 0.0;
  const Eigen::MatrixXd residual = s2 - s1 * (s1.transpose() * s2);
  const double s = Eigen::JacobiSVD<Eigen::MatrixXd>(residual).singularValues()(0);
  return std::clamp(s, 0.0, 1.0);
}

/// Same quantity through the cosines: sqrt(1 - sigma_min(S1' S2)^2).
inline double max_sin_theta_from_cosines(const Eigen::MatrixXd& s1, const Eigen::MatrixXd& s2) {
  if (s1.cols() == 0) return 0.0;
  const Eigen::VectorXd cosines = Eigen::JacobiSVD<Eigen::MatrixXd>(s1.transpose() * s2).singularValues();
  const double c = std::clamp(cosines(cosines.size() - 1), 0.0, 1.0);
  return std::sqrt(1.0 - c * c);
}

/// rho_p = max of the left and right canonical-angle distances between the
/// top-p singular subspaces of two factors.
inline SubspaceDistance subspace_distance(const LowRankFactor& f1, const LowRankFactor& f2, Eigen::Index p) {
  if (f1.rows() != f2.rows() || f1.cols() != f2.cols()) {
    throw input_error("subspace_distance: factors live in different spaces");
  }
  if (p < 0 || p > f1.rank() || p > f2.rank()) throw input_error("subspace_distance: p exceeds factor rank");
  const double left = max_sin_theta(f1.left.leftCols(p), f2.left.leftCols(p));
  const double right = max_sin_theta(f1.right.leftCols(p), f2.right.leftCols(p));
  return {std::max(left, right)};
}

struct StewartReport {
  bool applicable = false;
  double rho = 0.0;
  double bound = 0.0;
  double delta = 0.0;

  bool violated() const { return applicable && rho > bound + 1e-12; }
};

/// Verifies rho_r1(A, At) <= max(||R||_2, ||Q||_2) / delta with
/// R = A Vt1 - Ut1 St1 and Q = A' Ut1 - Vt1 St1, using the widest gap
/// delta = min(St1) - max(S2(A)).
inline StewartReport stewart_bound_check(const Eigen::MatrixXd& a, const Eigen::MatrixXd& at, Eigen::Index r1) {
  if (a.rows() != at.rows() || a.cols() != at.cols()) throw input_error("stewart_bound_check: shape mismatch");
  const Eigen::Index k = std::min(a.rows(), a.cols());
  if (r1 <= 0 || r1 > k) throw input_error("stewart_bound_check: r1 out of range");
  Eigen::JacobiSVD<Eigen::MatrixXd> sa(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Eigen::JacobiSVD<Eigen::MatrixXd> st(at, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const double alpha = r1 < k ? sa.singularValues()(r1) : 0.0;
  StewartReport report;
  report.delta = st.singularValues()(r1 - 1) - alpha;
  if (!(report.delta > 0.0)) return report;
  report.applicable = true;
  const Eigen::MatrixXd u1 = sa.matrixU().leftCols(r1);
  const Eigen::MatrixXd v1 = sa.matrixV().leftCols(r1);
  const Eigen::MatrixXd ut = st.matrixU().leftCols(r1);
  const Eigen::MatrixXd vt = st.matrixV().leftCols(r1);
  const auto sig = st.singularValues().head(r1).asDiagonal();
  const Eigen::MatrixXd r = a * vt - ut * sig;
  const Eigen::MatrixXd q = a.transpose() * ut - vt * sig;
  const auto spectral_norm = [](const Eigen::MatrixXd& x) {
    return Eigen::JacobiSVD<Eigen::MatrixXd>(x).singularValues()(0);
  };
  report.bound = std::max(spectral_norm(r), spectral_norm(q)) / report.delta;
  report.rho = std::max(max_sin_theta(u1, ut), max_sin_theta(v1, vt));
  return report;
}

}  // namespace ncimpute
