#pragma once

// Brute-force dense references used only by the tests. Nothing here calls into the
// block factor engine or the sparse factorization.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "bnngp/blockgraph.hpp"
#include "bnngp/covariance.hpp"
#include "bnngp/geometry.hpp"

namespace oracle {

inline bnngp::LocationSet uniform_locations(int n, unsigned seed, double lo = 0.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<bnngp::Coord> c;
  for (int i = 0; i < n; ++i) c.push_back({u(rng), u(rng)});
  return bnngp::LocationSet(std::move(c));
}

inline Eigen::MatrixXd dense_cov(const bnngp::CovarianceSpec& spec, const bnngp::LocationSet& locs) {
  const int n = locs.size();
  Eigen::MatrixXd c(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) c(i, j) = spec(bnngp::distance(locs[i], locs[j]));
  return c;
}

inline std::vector<int> conditioning_of(const bnngp::BlockPartition& part, const bnngp::BlockGraph& graph, int k) {
  std::vector<int> out;
  for (int p : graph.of(k))
    for (int i : part.members[static_cast<std::size_t>(p)]) out.push_back(i);
  return out;
}

using MatrixXl = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;

template <class Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> sub(const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& c,
                                                          const std::vector<int>& r, const std::vector<int>& s) {
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> out(r.size(), s.size());
  for (std::size_t i = 0; i < r.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) out(i, j) = c(r[i], s[j]);
  return out;
}

/// Precision of prod_k pi(w_k | w_N(k)) from pi(w_k | w_N) = pi(w_k, w_N) / pi(w_N):
/// each factor contributes inv(C_{k u N}) minus inv(C_N), embedded at its indices.
/// Accumulated in extended precision so the reference itself adds no visible roundoff.
inline Eigen::MatrixXd conditional_product_precision(const Eigen::MatrixXd& c, const bnngp::BlockPartition& part,
                                                     const bnngp::BlockGraph& graph) {
  const MatrixXl cl = c.cast<long double>();
  const Eigen::Index n = c.rows();
  MatrixXl q = MatrixXl::Zero(n, n);
  for (int k = 0; k < part.size(); ++k) {
    std::vector<int> joint = part.members[static_cast<std::size_t>(k)];
    const std::vector<int> cond = conditioning_of(part, graph, k);
    joint.insert(joint.end(), cond.begin(), cond.end());
    const MatrixXl pj = sub(cl, joint, joint).inverse();
    for (std::size_t a = 0; a < joint.size(); ++a)
      for (std::size_t b = 0; b < joint.size(); ++b) q(joint[a], joint[b]) += pj(a, b);
    if (!cond.empty()) {
      const MatrixXl pn = sub(cl, cond, cond).inverse();
      for (std::size_t a = 0; a < cond.size(); ++a)
        for (std::size_t b = 0; b < cond.size(); ++b) q(cond[a], cond[b]) -= pn(a, b);
    }
  }
  return q.cast<double>();
}

/// Conditional covariance of block k given its neighbor blocks, via the Schur
/// complement of the inverse of the joint covariance.
inline Eigen::MatrixXd conditional_cov(const Eigen::MatrixXd& c, const bnngp::BlockPartition& part,
                                       const bnngp::BlockGraph& graph, int k) {
  std::vector<int> joint = part.members[static_cast<std::size_t>(k)];
  const auto nk = static_cast<Eigen::Index>(joint.size());
  const std::vector<int> cond = conditioning_of(part, graph, k);
  joint.insert(joint.end(), cond.begin(), cond.end());
  const Eigen::MatrixXd pj = sub(c, joint, joint).inverse();
  return pj.topLeftCorner(nk, nk).inverse();
}

inline double logdet_sym(const Eigen::MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a, Eigen::EigenvaluesOnly);
  return es.eigenvalues().array().log().sum();
}

inline double min_eigenvalue(const Eigen::MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

/// NNGP built directly from per-location conditionals in a given visiting order:
/// location order[t] conditions on its nb nearest predecessors in that order.
inline Eigen::MatrixXd nngp_precision(const bnngp::CovarianceSpec& spec, const bnngp::LocationSet& locs,
                                      const std::vector<int>& order, int nb) {
  const int n = locs.size();
  MatrixXl a = MatrixXl::Identity(n, n);
  Eigen::Matrix<long double, Eigen::Dynamic, 1> d(n);
  const MatrixXl c = dense_cov(spec, locs).cast<long double>();
  for (int t = 0; t < n; ++t) {
    const int i = order[static_cast<std::size_t>(t)];
    std::vector<std::pair<double, int>> prev;
    for (int s = 0; s < t; ++s) {
      const int j = order[static_cast<std::size_t>(s)];
      prev.emplace_back(bnngp::distance(locs[i], locs[j]), s);
    }
    std::sort(prev.begin(), prev.end());
    std::vector<int> nbr;
    for (int s = 0; s < std::min<int>(nb, static_cast<int>(prev.size())); ++s)
      nbr.push_back(order[static_cast<std::size_t>(prev[static_cast<std::size_t>(s)].second)]);
    if (nbr.empty()) {
      d(i) = c(i, i);
      continue;
    }
    const MatrixXl ci = sub(c, {i}, nbr);
    const MatrixXl coef = ci * sub(c, nbr, nbr).inverse();
    d(i) = c(i, i) - (coef * ci.transpose())(0, 0);
    for (std::size_t s = 0; s < nbr.size(); ++s) a(i, nbr[s]) = -coef(0, static_cast<Eigen::Index>(s));
  }
  return MatrixXl(a.transpose() * d.cwiseInverse().asDiagonal() * a).cast<double>();
}

}  // namespace oracle
