#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <variant>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "bnngp/blockgraph.hpp"
#include "bnngp/covariance.hpp"
#include "bnngp/error.hpp"
#include "bnngp/factors.hpp"
#include "bnngp/geometry.hpp"
#include "bnngp/sparse_cholesky.hpp"

namespace bnngp {

/// Largest n for which dense n x n covariance work is allowed by default.
inline constexpr int default_dense_cap = 10000;

enum class Provenance { FullGP, BlockNngp };

struct GaussianFieldSample {
  Eigen::VectorXd values;
  std::uint64_t seed = 0;
  Provenance provenance = Provenance::FullGP;
};

inline Eigen::VectorXd standard_normals(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> z;
  Eigen::VectorXd out(n);
  for (int i = 0; i < n; ++i) out(i) = z(rng);
  return out;
}

inline void check_dense_cap(int n, int cap) {
  if (n > cap)
    throw Error("n = " + std::to_string(n) + " exceeds the dense cap of " + std::to_string(cap));
}

/// w = L z with L the dense Cholesky factor of C_S.
inline Eigen::VectorXd full_gp_from_normals(const CovarianceSpec& spec, const LocationSet& locs,
                                            const Eigen::VectorXd& z, int cap = default_dense_cap) {
  check_dense_cap(locs.size(), cap);
  if (z.size() != locs.size()) throw Error("normal vector has the wrong length");
  Eigen::LLT<Eigen::MatrixXd> llt(cov_matrix(spec, locs));
  if (llt.info() != Eigen::Success) throw Error("covariance matrix not positive definite");
  return llt.matrixL() * z;
}

inline GaussianFieldSample simulate_full_gp(const CovarianceSpec& spec, const LocationSet& locs, std::uint64_t seed,
                                            int cap = default_dense_cap) {
  check_dense_cap(locs.size(), cap);
  std::mt19937_64 rng(seed);
  return {full_gp_from_normals(spec, locs, standard_normals(locs.size(), rng), cap), seed, Provenance::FullGP};
}

/// Ancestral draw in block order: w_k = B_k w_N(k) + chol(F_k) z_k. The normals are
/// consumed block by block, members in ascending index order.
inline Eigen::VectorXd block_nngp_from_normals(const BlockFactors& factors, const Eigen::VectorXd& z) {
  const auto& layout = *factors.layout;
  if (z.size() != layout.n) throw Error("normal vector has the wrong length");
  Eigen::VectorXd w = Eigen::VectorXd::Zero(layout.n);
  Eigen::Index used = 0;
  for (int k = 0; k < factors.size(); ++k) {
    const auto& mem = layout.members[static_cast<std::size_t>(k)];
    const auto& cond = layout.conditioning[static_cast<std::size_t>(k)];
    const auto nk = static_cast<Eigen::Index>(mem.size());
    Eigen::VectorXd wk = factors[k].chol_F.triangularView<Eigen::Lower>() * z.segment(used, nk);
    used += nk;
    if (!cond.empty()) {
      Eigen::VectorXd wn(static_cast<Eigen::Index>(cond.size()));
      for (std::size_t a = 0; a < cond.size(); ++a) wn(static_cast<Eigen::Index>(a)) = w(cond[a]);
      wk.noalias() += factors[k].B * wn;
    }
    for (std::size_t a = 0; a < mem.size(); ++a) w(mem[a]) = wk(static_cast<Eigen::Index>(a));
  }
  return w;
}

inline GaussianFieldSample simulate_block_nngp(const BlockFactors& factors, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return {block_nngp_from_normals(factors, standard_normals(factors.layout->n, rng)), seed, Provenance::BlockNngp};
}

/// A point of the domain: either an observed location (by index) or an arbitrary coordinate.
using Site = std::variant<int, Coord>;

/// Covariance of the block-NNGP process between any two sites. Observed locations
/// use Q~^-1; a site u outside S is the regression B_u w_N(u) plus independent noise
/// with variance F_u, where N(u) is the block containing u.
class ImpliedCovariance {
 public:
  ImpliedCovariance(const BlockNngp& model, const CovarianceSpec& spec)
      : locs_(&model.locations()), part_(&model.partition()), spec_(spec) {
    chol_.analyze(model.assembler().pattern());
    chol_.factorize(model.precision(spec).lower);
  }

  ImpliedCovariance(const SparsePrecision& q, const LocationSet& locs, const BlockPartition& part,
                    const CovarianceSpec& spec)
      : locs_(&locs), part_(&part), spec_(spec), chol_(q.lower) {}

  double operator()(const Site& a, const Site& b) const {
    const Loading la = loading(a), lb = loading(b);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(locs_->size());
    for (std::size_t t = 0; t < lb.index.size(); ++t) x(lb.index[t]) += lb.weight(static_cast<Eigen::Index>(t));
    x = chol_.solve(x);
    double out = 0.0;
    for (std::size_t t = 0; t < la.index.size(); ++t) out += la.weight(static_cast<Eigen::Index>(t)) * x(la.index[t]);
    if (std::holds_alternative<Coord>(a) && std::holds_alternative<Coord>(b) && std::get<Coord>(a) == std::get<Coord>(b))
      out += la.noise;
    return out;
  }

  /// Column j of C~_S = Q~^-1.
  Eigen::VectorXd column(int j) const { return chol_.solve(Eigen::VectorXd(Eigen::VectorXd::Unit(locs_->size(), j))); }

  Eigen::VectorXd diagonal() const { return chol_.inverse_diagonal(); }

  const SparseCholesky& factorization() const { return chol_; }

 private:
  struct Loading {
    std::vector<int> index;
    Eigen::VectorXd weight;
    double noise = 0.0;
  };

  Loading loading(const Site& s) const {
    Loading out;
    if (const int* i = std::get_if<int>(&s)) {
      if (*i < 0 || *i >= locs_->size()) throw Error("site index out of range");
      out.index = {*i};
      out.weight = Eigen::VectorXd::Ones(1);
      return out;
    }
    const Coord u = std::get<Coord>(s);
    out.index = neighbor_set_for_site(u, *part_).indices;
    const Eigen::MatrixXd cnn = cov_matrix(spec_, out.index, out.index, *locs_);
    const Eigen::VectorXd cun = cov_vector(spec_, u, out.index, *locs_);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(cnn);
    out.weight = ldlt.solve(cun);
    out.noise = std::max(0.0, spec_.sigma2 - cun.dot(out.weight));
    return out;
  }

  const LocationSet* locs_;
  const BlockPartition* part_;
  CovarianceSpec spec_;
  SparseCholesky chol_;
};

inline double implied_cross_covariance(const BlockFactors& factors, const BlockPartition& part, const Site& v1,
                                       const Site& v2, const CovarianceSpec& spec, const LocationSet& locs) {
  return ImpliedCovariance(assemble_precision(factors), locs, part, spec)(v1, v2);
}

/// KL( N(0, C_S) || N(0, Q~^-1) ) = 1/2 [tr(Q~ C_S) - n - log|C_S| - log|Q~|].
/// The trace runs over the stored entries of Q~ only.
inline double kld_vs_full_gp(const SparsePrecision& q, const CovarianceSpec& spec, const LocationSet& locs,
                             int cap = default_dense_cap) {
  const int n = locs.size();
  check_dense_cap(n, cap);
  if (q.size() != n) throw Error("precision and location set differ in size");
  double trace = 0.0;
  for (int j = 0; j < n; ++j) {
    for (SparseMatrix::InnerIterator it(q.lower, j); it; ++it) {
      const double c = it.row() == j ? spec.sigma2 : spec(distance(locs[it.row()], locs[j]));
      trace += (it.row() == j ? 1.0 : 2.0) * it.value() * c;
    }
  }
  Eigen::LLT<Eigen::MatrixXd> llt(cov_matrix(spec, locs));
  if (llt.info() != Eigen::Success) throw Error("covariance matrix not positive definite");
  const double logdet_c = 2.0 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
  return 0.5 * (trace - n - logdet_c - q.log_det);
}

inline double kld_vs_full_gp(const BlockFactors& factors, const CovarianceSpec& spec, const LocationSet& locs,
                             int cap = default_dense_cap) {
  return kld_vs_full_gp(assemble_precision(factors), spec, locs, cap);
}

struct CorrelationPoint {
  double dist = 0.0;
  double true_corr = 0.0;
  double approx_corr = 0.0;
};

struct CurveOptions {
  int bins = 40;
  long max_pairs = 200000;
  std::uint64_t seed = 1;
  int cap = default_dense_cap;
};

/// Implied correlation C~_ij / sqrt(C~_ii C~_jj) against distance, averaged in
/// equal-width distance bins together with the kernel correlation and the distance
/// over the same pairs, so both curves see identical binning. All pairs are used
/// when there are at most max_pairs of them; otherwise a seeded random set of anchor
/// columns supplies the pairs. The first row is the d = 0 point with correlation 1.
inline std::vector<CorrelationPoint> empirical_correlation_curve(const ImpliedCovariance& implied,
                                                                 const CovarianceSpec& spec, const LocationSet& locs,
                                                                 const CurveOptions& opt = {}) {
  const int n = locs.size();
  check_dense_cap(n, opt.cap);
  if (opt.bins < 1) throw Error("need at least one bin");
  std::vector<CorrelationPoint> out{{0.0, 1.0, 1.0}};
  if (n < 2) return out;

  std::vector<int> anchors(static_cast<std::size_t>(n));
  std::iota(anchors.begin(), anchors.end(), 0);
  const long all_pairs = static_cast<long>(n) * (n - 1) / 2;
  bool all = all_pairs <= opt.max_pairs;
  if (!all) {
    std::mt19937_64 rng(opt.seed);
    std::shuffle(anchors.begin(), anchors.end(), rng);
    const long keep = std::max(1L, opt.max_pairs / (n - 1));
    anchors.resize(static_cast<std::size_t>(std::min<long>(keep, n)));
  }

  const Eigen::VectorXd diag = implied.diagonal();
  const auto box = locs.bounding_box();
  const double dmax = std::hypot(box.xmax - box.xmin, box.ymax - box.ymin);
  if (!(dmax > 0.0)) return out;
  const double width = dmax / opt.bins;
  std::vector<double> sum(static_cast<std::size_t>(opt.bins), 0.0), sum_true(sum), sum_d(sum);
  std::vector<long> count(static_cast<std::size_t>(opt.bins), 0);
  for (int j : anchors) {
    const Eigen::VectorXd col = implied.column(j);
    for (int i = 0; i < n; ++i) {
      if (i == j || (all && i < j)) continue;
      const double d = distance(locs[i], locs[j]);
      const int b = std::min(opt.bins - 1, static_cast<int>(d / width));
      sum[static_cast<std::size_t>(b)] += col(i) / std::sqrt(diag(i) * diag(j));
      sum_true[static_cast<std::size_t>(b)] += spec.correlation(d);
      sum_d[static_cast<std::size_t>(b)] += d;
      ++count[static_cast<std::size_t>(b)];
    }
  }
  for (int b = 0; b < opt.bins; ++b) {
    const auto k = static_cast<std::size_t>(b);
    if (count[k] == 0) continue;
    const double c = static_cast<double>(count[k]);
    out.push_back({sum_d[k] / c, sum_true[k] / c, sum[k] / c});
  }
  return out;
}

inline std::vector<CorrelationPoint> empirical_correlation_curve(const BlockNngp& model, const CovarianceSpec& spec,
                                                                 const CurveOptions& opt = {}) {
  check_dense_cap(model.size(), opt.cap);
  return empirical_correlation_curve(ImpliedCovariance(model, spec), spec, model.locations(), opt);
}

}  // namespace bnngp
