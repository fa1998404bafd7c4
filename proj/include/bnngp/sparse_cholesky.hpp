#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/OrderingMethods>
#include <Eigen/SparseCore>

#include "bnngp/error.hpp"

namespace bnngp {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::ColMajor, int>;

enum class Ordering { Amd, Natural };

/// Sparse LDL' factorization of a symmetric positive definite matrix given by its
/// lower triangle, with a fill-reducing symmetric permutation.
///
/// The symbolic analysis (ordering, elimination tree, column counts) depends only on
/// the sparsity pattern, so `factorize` can be called repeatedly on matrices that
/// share the pattern passed to `analyze`. This is what the samplers do when the
/// covariance parameters change but the block structure does not.
class SparseCholesky {
 public:
  SparseCholesky() = default;

  explicit SparseCholesky(const SparseMatrix& lower, Ordering ordering = Ordering::Amd) {
    analyze(lower, ordering);
    factorize(lower);
  }

  void analyze(const SparseMatrix& lower, Ordering ordering = Ordering::Amd) {
    if (lower.rows() != lower.cols()) throw Error("sparse cholesky: matrix is not square");
    n_ = static_cast<int>(lower.rows());
    factored_ = false;
    const auto nu = static_cast<std::size_t>(n_);

    perm_.resize(nu);
    if (ordering == Ordering::Amd && n_ > 1) {
      Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, int> p;
      Eigen::AMDOrdering<int> amd;
      amd(lower, p);
      for (int k = 0; k < n_; ++k) perm_[static_cast<std::size_t>(k)] = p.indices()(k);
    } else {
      std::iota(perm_.begin(), perm_.end(), 0);
    }
    iperm_.resize(nu);
    for (int k = 0; k < n_; ++k) iperm_[static_cast<std::size_t>(perm_[static_cast<std::size_t>(k)])] = k;

    // permuted upper triangle in CSC; remember where each input value lands
    if (!lower.isCompressed()) throw Error("sparse cholesky: matrix must be compressed");
    input_nnz_ = static_cast<int>(lower.nonZeros());
    const int* outer = lower.outerIndexPtr();
    const int* inner = lower.innerIndexPtr();
    ap_.assign(nu + 1, 0);
    for (int j = 0; j < n_; ++j) {
      for (int q = outer[j]; q < outer[j + 1]; ++q) {
        if (inner[q] < j) continue;
        const int r = iperm_[static_cast<std::size_t>(inner[q])];
        const int c = iperm_[static_cast<std::size_t>(j)];
        ++ap_[static_cast<std::size_t>(std::max(r, c)) + 1];
      }
    }
    for (std::size_t k = 0; k < nu; ++k) ap_[k + 1] += ap_[k];
    ai_.assign(static_cast<std::size_t>(ap_[nu]), 0);
    ax_.assign(ai_.size(), 0.0);
    slot_.assign(static_cast<std::size_t>(input_nnz_), -1);
    std::vector<int> next(ap_.begin(), ap_.end() - 1);
    for (int j = 0; j < n_; ++j) {
      for (int q = outer[j]; q < outer[j + 1]; ++q) {
        if (inner[q] < j) continue;
        const int r = iperm_[static_cast<std::size_t>(inner[q])];
        const int c = iperm_[static_cast<std::size_t>(j)];
        const int pos = next[static_cast<std::size_t>(std::max(r, c))]++;
        ai_[static_cast<std::size_t>(pos)] = std::min(r, c);
        slot_[static_cast<std::size_t>(q)] = pos;
      }
    }

    // elimination tree and column counts of L
    parent_.assign(nu, -1);
    lnz_.assign(nu, 0);
    std::vector<int> flag(nu, -1);
    for (int k = 0; k < n_; ++k) {
      flag[static_cast<std::size_t>(k)] = k;
      for (int p = ap_[static_cast<std::size_t>(k)]; p < ap_[static_cast<std::size_t>(k) + 1]; ++p) {
        int i = ai_[static_cast<std::size_t>(p)];
        if (i >= k) continue;
        for (; flag[static_cast<std::size_t>(i)] != k; i = parent_[static_cast<std::size_t>(i)]) {
          if (parent_[static_cast<std::size_t>(i)] == -1) parent_[static_cast<std::size_t>(i)] = k;
          ++lnz_[static_cast<std::size_t>(i)];
          flag[static_cast<std::size_t>(i)] = k;
        }
      }
    }
    lp_.assign(nu + 1, 0);
    for (std::size_t k = 0; k < nu; ++k) lp_[k + 1] = lp_[k] + lnz_[k];
    li_.assign(static_cast<std::size_t>(lp_[nu]), 0);
    lx_.assign(li_.size(), 0.0);
    d_.assign(nu, 0.0);
    analyzed_ = true;
  }

  /// Numeric factorization. `lower` must have the pattern given to analyze().
  /// Throws NotPositiveDefinite naming the failing row in the caller's indexing.
  void factorize(const SparseMatrix& lower) {
    if (!analyzed_) analyze(lower);
    if (lower.rows() != n_ || lower.nonZeros() != input_nnz_ || !lower.isCompressed())
      throw Error("sparse cholesky: pattern differs from the analyzed one");
    factored_ = false;
    std::fill(ax_.begin(), ax_.end(), 0.0);
    const double* values = lower.valuePtr();
    for (int p = 0; p < input_nnz_; ++p) {
      const int s = slot_[static_cast<std::size_t>(p)];
      if (s >= 0) ax_[static_cast<std::size_t>(s)] += values[p];
    }

    const auto nu = static_cast<std::size_t>(n_);
    std::vector<double> y(nu, 0.0);
    std::vector<int> pattern(nu), flag(nu, -1);
    std::fill(lnz_.begin(), lnz_.end(), 0);
    for (int k = 0; k < n_; ++k) {
      const auto ku = static_cast<std::size_t>(k);
      int top = n_;
      flag[ku] = k;
      for (int p = ap_[ku]; p < ap_[ku + 1]; ++p) {
        int i = ai_[static_cast<std::size_t>(p)];
        y[static_cast<std::size_t>(i)] += ax_[static_cast<std::size_t>(p)];
        int len = 0;
        for (; flag[static_cast<std::size_t>(i)] != k; i = parent_[static_cast<std::size_t>(i)]) {
          pattern[static_cast<std::size_t>(len++)] = i;
          flag[static_cast<std::size_t>(i)] = k;
        }
        while (len > 0) pattern[static_cast<std::size_t>(--top)] = pattern[static_cast<std::size_t>(--len)];
      }
      double dk = y[ku];
      y[ku] = 0.0;
      for (; top < n_; ++top) {
        const auto i = static_cast<std::size_t>(pattern[static_cast<std::size_t>(top)]);
        const double yi = y[i];
        y[i] = 0.0;
        const int p2 = lp_[i] + lnz_[i];
        for (int p = lp_[i]; p < p2; ++p)
          y[static_cast<std::size_t>(li_[static_cast<std::size_t>(p)])] -= lx_[static_cast<std::size_t>(p)] * yi;
        const double l_ki = yi / d_[i];
        dk -= l_ki * yi;
        li_[static_cast<std::size_t>(p2)] = k;
        lx_[static_cast<std::size_t>(p2)] = l_ki;
        ++lnz_[i];
      }
      if (!(dk > 0.0) || !std::isfinite(dk)) {
        const int row = perm_[ku];
        throw NotPositiveDefinite("matrix not positive definite (pivot at row " + std::to_string(row) + ")", row);
      }
      d_[ku] = dk;
    }
    log_det_ = 0.0;
    for (double v : d_) log_det_ += std::log(v);
    factored_ = true;
  }

  int rows() const { return n_; }
  bool factored() const { return factored_; }
  double log_det() const { return log_det_; }
  long factor_nonzeros() const { return static_cast<long>(lp_.empty() ? 0 : lp_.back()) + n_; }
  const std::vector<int>& permutation() const { return perm_; }

  /// x = A^{-1} b
  Eigen::VectorXd solve(const Eigen::VectorXd& b) const {
    check_ready(b.size());
    std::vector<double> x(static_cast<std::size_t>(n_));
    for (int k = 0; k < n_; ++k) x[static_cast<std::size_t>(k)] = b(perm_[static_cast<std::size_t>(k)]);
    lower_solve(x);
    for (int k = 0; k < n_; ++k) x[static_cast<std::size_t>(k)] /= d_[static_cast<std::size_t>(k)];
    upper_solve(x);
    Eigen::VectorXd out(n_);
    for (int k = 0; k < n_; ++k) out(perm_[static_cast<std::size_t>(k)]) = x[static_cast<std::size_t>(k)];
    return out;
  }

  Eigen::MatrixXd solve(const Eigen::MatrixXd& b) const {
    Eigen::MatrixXd out(b.rows(), b.cols());
    for (Eigen::Index j = 0; j < b.cols(); ++j) out.col(j) = solve(Eigen::VectorXd(b.col(j)));
    return out;
  }

  /// diag(A^{-1}) by the Takahashi recurrence over the pattern of L; no dense inverse.
  Eigen::VectorXd inverse_diagonal() const {
    check_ready(n_);
    const auto nu = static_cast<std::size_t>(n_);
    std::vector<double> zx(lx_.size(), 0.0), zd(nu, 0.0);
    auto z_at = [&](int r, int c) {
      if (r == c) return zd[static_cast<std::size_t>(r)];
      if (r < c) std::swap(r, c);
      const int* first = li_.data() + lp_[static_cast<std::size_t>(c)];
      const int* last = li_.data() + lp_[static_cast<std::size_t>(c) + 1];
      const int* it = std::lower_bound(first, last, r);
      return zx[static_cast<std::size_t>(it - li_.data())];
    };
    for (int j = n_ - 1; j >= 0; --j) {
      const auto ju = static_cast<std::size_t>(j);
      double diag = 1.0 / d_[ju];
      for (int p = lp_[ju]; p < lp_[ju + 1]; ++p) {
        const int i = li_[static_cast<std::size_t>(p)];
        double acc = 0.0;
        for (int q = lp_[ju]; q < lp_[ju + 1]; ++q) acc -= lx_[static_cast<std::size_t>(q)] * z_at(i, li_[static_cast<std::size_t>(q)]);
        zx[static_cast<std::size_t>(p)] = acc;
      }
      for (int p = lp_[ju]; p < lp_[ju + 1]; ++p) diag -= lx_[static_cast<std::size_t>(p)] * zx[static_cast<std::size_t>(p)];
      zd[ju] = diag;
    }
    Eigen::VectorXd out(n_);
    for (int k = 0; k < n_; ++k) out(perm_[static_cast<std::size_t>(k)]) = zd[static_cast<std::size_t>(k)];
    return out;
  }

  /// Maps z ~ N(0, I) to x ~ N(0, A^{-1}).
  Eigen::VectorXd sample(const Eigen::VectorXd& z) const {
    check_ready(z.size());
    std::vector<double> x(static_cast<std::size_t>(n_));
    for (int k = 0; k < n_; ++k) x[static_cast<std::size_t>(k)] = z(k) / std::sqrt(d_[static_cast<std::size_t>(k)]);
    upper_solve(x);
    Eigen::VectorXd out(n_);
    for (int k = 0; k < n_; ++k) out(perm_[static_cast<std::size_t>(k)]) = x[static_cast<std::size_t>(k)];
    return out;
  }

 private:
  void check_ready(Eigen::Index size) const {
    if (!factored_) throw Error("sparse cholesky: not factorized");
    if (size != n_) throw Error("sparse cholesky: dimension mismatch");
  }

  // L x = b, L unit lower triangular stored by columns
  void lower_solve(std::vector<double>& x) const {
    for (int j = 0; j < n_; ++j) {
      const auto ju = static_cast<std::size_t>(j);
      const double xj = x[ju];
      for (int p = lp_[ju]; p < lp_[ju + 1]; ++p)
        x[static_cast<std::size_t>(li_[static_cast<std::size_t>(p)])] -= lx_[static_cast<std::size_t>(p)] * xj;
    }
  }

  // L' x = b
  void upper_solve(std::vector<double>& x) const {
    for (int j = n_ - 1; j >= 0; --j) {
      const auto ju = static_cast<std::size_t>(j);
      double acc = x[ju];
      for (int p = lp_[ju]; p < lp_[ju + 1]; ++p)
        acc -= lx_[static_cast<std::size_t>(p)] * x[static_cast<std::size_t>(li_[static_cast<std::size_t>(p)])];
      x[ju] = acc;
    }
  }

  int n_ = 0;
  int input_nnz_ = 0;
  bool analyzed_ = false;
  bool factored_ = false;
  double log_det_ = 0.0;
  std::vector<int> perm_, iperm_;
  std::vector<int> ap_, ai_, slot_;
  std::vector<double> ax_;
  std::vector<int> parent_, lnz_, lp_, li_;
  std::vector<double> lx_, d_;
};

inline SparseCholesky sparse_cholesky(const SparseMatrix& lower, Ordering ordering = Ordering::Amd) {
  return SparseCholesky(lower, ordering);
}

/// y = A x for symmetric A stored as its lower triangle.
inline Eigen::VectorXd symmetric_multiply(const SparseMatrix& lower, const Eigen::VectorXd& x) {
  if (x.size() != lower.cols()) throw Error("dimension mismatch in symmetric product");
  return lower.selfadjointView<Eigen::Lower>() * x;
}

}  // namespace bnngp
