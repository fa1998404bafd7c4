#pragma once

#include <algorithm>
#include <cmath>
#include <exception>
#include <memory>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include "bnngp/blockgraph.hpp"
#include "bnngp/covariance.hpp"
#include "bnngp/error.hpp"
#include "bnngp/geometry.hpp"
#include "bnngp/parallel.hpp"
#include "bnngp/sparse_cholesky.hpp"

namespace bnngp {

/// Index lists that drive every per-block computation: the members of block k and
/// the locations of its neighbor blocks (the conditioning set), in neighbor order.
struct BlockLayout {
  int n = 0;
  std::vector<std::vector<int>> members;
  std::vector<std::vector<int>> conditioning;

  int blocks() const { return static_cast<int>(members.size()); }
};

inline std::shared_ptr<const BlockLayout> make_layout(const BlockPartition& part, const BlockGraph& graph) {
  if (graph.size() != part.size()) throw Error("graph and partition disagree on the number of blocks");
  auto layout = std::make_shared<BlockLayout>();
  layout->n = static_cast<int>(part.block_of.size());
  layout->members = part.members;
  layout->conditioning.reserve(static_cast<std::size_t>(part.size()));
  for (int k = 0; k < part.size(); ++k) layout->conditioning.push_back(neighbor_locations(graph, part, k));
  return layout;
}

/// w_k | w_N(k) ~ N(B w_N(k), F) for one block.
struct BlockFactor {
  Eigen::MatrixXd B;       // n_k x N_k
  Eigen::MatrixXd F;       // n_k x n_k
  Eigen::MatrixXd chol_F;  // lower Cholesky factor of F
  double logdet_F = 0.0;
};

struct BlockFactors {
  std::shared_ptr<const BlockLayout> layout;
  std::vector<BlockFactor> blocks;

  int size() const { return static_cast<int>(blocks.size()); }
  const BlockFactor& operator[](int k) const { return blocks[static_cast<std::size_t>(k)]; }
};

/// log|C~| = sum_k log|F_k|; B is unit lower triangular so |Q~| = prod_k |F_k|^-1.
inline double log_det_ctilde(const BlockFactors& factors) {
  double acc = 0.0;
  for (const auto& b : factors.blocks) acc += b.logdet_F;
  return acc;
}

/// Lower triangle of Q~ = B' F^-1 B plus its log-determinant.
struct SparsePrecision {
  SparseMatrix lower;
  double log_det = 0.0;

  int size() const { return static_cast<int>(lower.rows()); }

  Eigen::VectorXd multiply(const Eigen::VectorXd& x) const { return symmetric_multiply(lower, x); }

  Eigen::MatrixXd dense() const {
    Eigen::MatrixXd full = Eigen::MatrixXd(lower);
    full.triangularView<Eigen::StrictlyUpper>() = full.transpose().triangularView<Eigen::StrictlyUpper>();
    return full;
  }

  /// Structural off-diagonal non-zeros counted on both triangles.
  long offdiagonal_nonzeros() const { return 2L * (static_cast<long>(lower.nonZeros()) - lower.rows()); }
};

inline double quadratic_form(const SparsePrecision& q, const Eigen::VectorXd& w) {
  if (w.size() != q.size()) throw Error("quadratic form: dimension mismatch");
  return w.dot(q.multiply(w));
}

/// Residual w_k - B_k w_N(k) for block k.
inline Eigen::VectorXd block_residual(const BlockLayout& layout, const BlockFactor& f, int k,
                                      const Eigen::VectorXd& w) {
  const auto& m = layout.members[static_cast<std::size_t>(k)];
  const auto& c = layout.conditioning[static_cast<std::size_t>(k)];
  Eigen::VectorXd r(static_cast<Eigen::Index>(m.size()));
  for (std::size_t a = 0; a < m.size(); ++a) r(static_cast<Eigen::Index>(a)) = w(m[a]);
  if (!c.empty()) {
    Eigen::VectorXd wn(static_cast<Eigen::Index>(c.size()));
    for (std::size_t a = 0; a < c.size(); ++a) wn(static_cast<Eigen::Index>(a)) = w(c[a]);
    r.noalias() -= f.B * wn;
  }
  return r;
}

/// w' Q~ w evaluated block by block, without assembling Q~.
inline double quadratic_form(const BlockFactors& factors, const Eigen::VectorXd& w) {
  if (w.size() != factors.layout->n) throw Error("quadratic form: dimension mismatch");
  double acc = 0.0;
  for (int k = 0; k < factors.size(); ++k) {
    Eigen::VectorXd r = block_residual(*factors.layout, factors[k], k, w);
    factors[k].chol_F.triangularView<Eigen::Lower>().solveInPlace(r);
    acc += r.squaredNorm();
  }
  return acc;
}

/// log N(w; 0, C~) evaluated block by block.
inline double log_density(const BlockFactors& factors, const Eigen::VectorXd& w) {
  return -0.5 * (static_cast<double>(w.size()) * std::log(2.0 * std::numbers::pi) + log_det_ctilde(factors) +
                 quadratic_form(factors, w));
}

/// log N(w; 0, Q~^-1) from the assembled precision.
inline double log_density(const SparsePrecision& q, const Eigen::VectorXd& w) {
  return -0.5 * (static_cast<double>(w.size()) * std::log(2.0 * std::numbers::pi) - q.log_det + quadratic_form(q, w));
}

/// Evaluates per-block conditional factors for a covariance, reusing the distance
/// sub-matrices of every block across calls.
class FactorEngine {
 public:
  FactorEngine() = default;

  FactorEngine(const LocationSet& locs, std::shared_ptr<const BlockLayout> layout) : layout_(std::move(layout)) {
    const int m = layout_->blocks();
    dist_.resize(static_cast<std::size_t>(m));
    for (int k = 0; k < m; ++k) {
      const auto& mem = layout_->members[static_cast<std::size_t>(k)];
      const auto& cond = layout_->conditioning[static_cast<std::size_t>(k)];
      auto& d = dist_[static_cast<std::size_t>(k)];
      d.bb = distances(locs, mem, mem);
      d.nb = distances(locs, cond, mem);
      d.nn = distances(locs, cond, cond);
    }
  }

  const std::shared_ptr<const BlockLayout>& layout() const { return layout_; }

  BlockFactors compute(const CovarianceSpec& spec, int threads = 1) const {
    BlockFactors out;
    out.layout = layout_;
    out.blocks.resize(dist_.size());
    parallel_for(static_cast<int>(dist_.size()), threads, [&](int k) { out.blocks[static_cast<std::size_t>(k)] = block(spec, k); });
    return out;
  }

  BlockFactor block(const CovarianceSpec& spec, int k) const {
    const auto& d = dist_[static_cast<std::size_t>(k)];
    auto kernel = [&](double r) { return spec(r); };
    BlockFactor f;
    f.F = d.bb.unaryExpr(kernel);
    const Eigen::Index nk = f.F.rows();
    const Eigen::Index nn = d.nn.rows();
    if (nn == 0) {
      f.B.resize(nk, 0);
    } else {
      Eigen::LLT<Eigen::MatrixXd> cn(d.nn.unaryExpr(kernel));
      if (cn.info() != Eigen::Success) throw Error("covariance not PD at block " + std::to_string(k));
      Eigen::MatrixXd v = d.nb.unaryExpr(kernel);  // C_{N,b}
      cn.matrixL().solveInPlace(v);                // L^-1 C_{N,b}
      f.F.selfadjointView<Eigen::Lower>().rankUpdate(v.transpose(), -1.0);
      Eigen::MatrixXd bt = cn.matrixU().solve(v);  // C_N^-1 C_{N,b}
      f.B = bt.transpose();
    }
    f.F.triangularView<Eigen::StrictlyUpper>() = f.F.transpose().triangularView<Eigen::StrictlyUpper>();
    Eigen::LLT<Eigen::MatrixXd> cf(f.F);
    if (cf.info() != Eigen::Success) throw Error("covariance not PD at block " + std::to_string(k));
    f.chol_F = cf.matrixL();
    f.logdet_F = 2.0 * f.chol_F.diagonal().array().log().sum();
    return f;
  }

 private:
  struct Distances {
    Eigen::MatrixXd bb, nb, nn;
  };

  static Eigen::MatrixXd distances(const LocationSet& locs, const std::vector<int>& rows, const std::vector<int>& cols) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
    for (Eigen::Index j = 0; j < out.cols(); ++j)
      for (Eigen::Index i = 0; i < out.rows(); ++i)
        out(i, j) = distance(locs[rows[static_cast<std::size_t>(i)]], locs[cols[static_cast<std::size_t>(j)]]);
    return out;
  }

  std::shared_ptr<const BlockLayout> layout_;
  std::vector<Distances> dist_;
};

/// Scatters per-block contributions B*_k' F_k^-1 B*_k into the fixed sparsity
/// pattern of Q~. The pattern is the union, over blocks, of the cliques formed by
/// each block together with its conditioning set.
class PrecisionAssembler {
 public:
  PrecisionAssembler() = default;

  explicit PrecisionAssembler(std::shared_ptr<const BlockLayout> layout) : layout_(std::move(layout)) {
    const int n = layout_->n;
    std::vector<Eigen::Triplet<double, int>> trip;
    for (int k = 0; k < layout_->blocks(); ++k) {
      const auto g = local_indices(k);
      for (std::size_t b = 0; b < g.size(); ++b)
        for (std::size_t a = b; a < g.size(); ++a)
          trip.emplace_back(std::max(g[a], g[b]), std::min(g[a], g[b]), 0.0);
    }
    pattern_.resize(n, n);
    pattern_.setFromTriplets(trip.begin(), trip.end());
    pattern_.makeCompressed();

    diagonal_slot_.resize(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) diagonal_slot_[static_cast<std::size_t>(j)] = slot_of(j, j);

    slots_.resize(static_cast<std::size_t>(layout_->blocks()));
    for (int k = 0; k < layout_->blocks(); ++k) {
      const auto g = local_indices(k);
      auto& s = slots_[static_cast<std::size_t>(k)];
      s.reserve(g.size() * (g.size() + 1) / 2);
      for (std::size_t b = 0; b < g.size(); ++b)
        for (std::size_t a = b; a < g.size(); ++a) s.push_back(slot_of(std::max(g[a], g[b]), std::min(g[a], g[b])));
    }
  }

  const SparseMatrix& pattern() const { return pattern_; }
  const std::shared_ptr<const BlockLayout>& layout() const { return layout_; }

  /// Position of the diagonal entry (j, j) in the value array of assembled matrices.
  int diagonal_slot(int j) const { return diagonal_slot_[static_cast<std::size_t>(j)]; }

  SparsePrecision assemble(const BlockFactors& factors, int threads = 1) const {
    if (factors.size() != layout_->blocks()) throw Error("factors do not match the assembler layout");
    const int m = layout_->blocks();
    std::vector<Eigen::MatrixXd> local(static_cast<std::size_t>(m));
    parallel_for(m, threads, [&](int k) { local[static_cast<std::size_t>(k)] = contribution(factors[k]); });

    SparsePrecision q;
    q.lower = pattern_;
    double* values = q.lower.valuePtr();
    std::fill(values, values + q.lower.nonZeros(), 0.0);
    for (int k = 0; k < m; ++k) {
      const auto& g = local[static_cast<std::size_t>(k)];
      const auto& s = slots_[static_cast<std::size_t>(k)];
      std::size_t t = 0;
      for (Eigen::Index b = 0; b < g.cols(); ++b)
        for (Eigen::Index a = b; a < g.rows(); ++a) values[s[t++]] += g(a, b);
    }
    q.log_det = -log_det_ctilde(factors);
    return q;
  }

 private:
  std::vector<int> local_indices(int k) const {
    std::vector<int> g = layout_->members[static_cast<std::size_t>(k)];
    const auto& c = layout_->conditioning[static_cast<std::size_t>(k)];
    g.insert(g.end(), c.begin(), c.end());
    return g;
  }

  int slot_of(int row, int col) const {
    const int* outer = pattern_.outerIndexPtr();
    const int* inner = pattern_.innerIndexPtr();
    const int* it = std::lower_bound(inner + outer[col], inner + outer[col + 1], row);
    return static_cast<int>(it - inner);
  }

  // [I, -B]' F^-1 [I, -B] over (members, conditioning)
  static Eigen::MatrixXd contribution(const BlockFactor& f) {
    const Eigen::Index nk = f.F.rows();
    Eigen::MatrixXd w(nk, nk + f.B.cols());
    w.leftCols(nk).setIdentity();
    w.rightCols(f.B.cols()) = -f.B;
    f.chol_F.triangularView<Eigen::Lower>().solveInPlace(w);
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(w.cols(), w.cols());
    g.selfadjointView<Eigen::Lower>().rankUpdate(w.transpose());
    return g;
  }

  std::shared_ptr<const BlockLayout> layout_;
  SparseMatrix pattern_;
  std::vector<int> diagonal_slot_;
  std::vector<std::vector<int>> slots_;
};

/// A block-NNGP over a fixed location set, partition, and block graph. Everything
/// that does not depend on the covariance parameters is computed once here.
class BlockNngp {
 public:
  BlockNngp(LocationSet locs, BlockPartition part, BlockGraph graph)
      : locs_(std::move(locs)), part_(std::move(part)), graph_(std::move(graph)) {
    if (static_cast<int>(part_.block_of.size()) != locs_.size())
      throw Error("partition does not cover the location set");
    layout_ = make_layout(part_, graph_);
    engine_ = FactorEngine(locs_, layout_);
    assembler_ = PrecisionAssembler(layout_);
  }

  const LocationSet& locations() const { return locs_; }
  const BlockPartition& partition() const { return part_; }
  const BlockGraph& graph() const { return graph_; }
  const BlockLayout& layout() const { return *layout_; }
  const PrecisionAssembler& assembler() const { return assembler_; }
  int size() const { return locs_.size(); }

  BlockFactors factors(const CovarianceSpec& spec, int threads = 1) const { return engine_.compute(spec, threads); }

  SparsePrecision precision(const BlockFactors& factors, int threads = 1) const {
    return assembler_.assemble(factors, threads);
  }

  SparsePrecision precision(const CovarianceSpec& spec, int threads = 1) const {
    return precision(factors(spec, threads), threads);
  }

 private:
  LocationSet locs_;
  BlockPartition part_;
  BlockGraph graph_;
  std::shared_ptr<const BlockLayout> layout_;
  FactorEngine engine_;
  PrecisionAssembler assembler_;
};

inline BlockFactors compute_block_factors(const CovarianceSpec& spec, const LocationSet& locs,
                                          const BlockPartition& part, const BlockGraph& graph, int threads = 1) {
  return FactorEngine(locs, make_layout(part, graph)).compute(spec, threads);
}

inline SparsePrecision assemble_precision(const BlockFactors& factors, int threads = 1) {
  return PrecisionAssembler(factors.layout).assemble(factors, threads);
}

}  // namespace bnngp
