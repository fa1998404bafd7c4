#pragma once

#include <cmath>
#include <span>
#include <string>
#include <string_view>

#include <Eigen/Dense>

#include "bnngp/error.hpp"
#include "bnngp/geometry.hpp"

namespace bnngp {

enum class CovarianceKind { Exponential, Matern32 };

inline std::string_view to_string(CovarianceKind kind) {
  return kind == CovarianceKind::Exponential ? "exponential" : "matern32";
}

inline CovarianceKind parse_covariance_kind(std::string_view name) {
  if (name == "exponential" || name == "exp") return CovarianceKind::Exponential;
  if (name == "matern32" || name == "matern1.5" || name == "matern") return CovarianceKind::Matern32;
  throw Error("unknown covariance kind '" + std::string(name) + "'");
}

/// Isotropic stationary covariance C(d) with marginal variance sigma2 and decay phi.
struct CovarianceSpec {
  CovarianceKind kind = CovarianceKind::Exponential;
  double sigma2 = 1.0;
  double phi = 1.0;

  CovarianceSpec() = default;
  CovarianceSpec(CovarianceKind k, double s2, double p) : kind(k), sigma2(s2), phi(p) {
    if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) throw Error("sigma2 must be positive");
    if (!(phi > 0.0) || !std::isfinite(phi)) throw Error("phi must be positive");
  }

  double operator()(double d) const {
    const double t = phi * d;
    switch (kind) {
      case CovarianceKind::Exponential:
        return sigma2 * std::exp(-t);
      case CovarianceKind::Matern32:
        return sigma2 * (1.0 + t) * std::exp(-t);
    }
    return 0.0;
  }

  double correlation(double d) const { return (*this)(d) / sigma2; }
};

inline double cov(const CovarianceSpec& spec, double d) { return spec(d); }

/// Decay for a given effective range, using the phi = 2 / r convention.
inline double effective_range_to_phi(double range) {
  if (!(range > 0.0)) throw Error("effective range must be positive");
  return 2.0 / range;
}

/// Dense covariance between locs[rows[i]] and locs[cols[j]].
inline Eigen::MatrixXd cov_matrix(const CovarianceSpec& spec, std::span<const int> rows,
                                  std::span<const int> cols, const LocationSet& locs) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (Eigen::Index j = 0; j < out.cols(); ++j)
    for (Eigen::Index i = 0; i < out.rows(); ++i)
      out(i, j) = spec(distance(locs[rows[static_cast<std::size_t>(i)]], locs[cols[static_cast<std::size_t>(j)]]));
  return out;
}

/// Full n x n covariance of a location set.
inline Eigen::MatrixXd cov_matrix(const CovarianceSpec& spec, const LocationSet& locs) {
  const Eigen::Index n = locs.size();
  Eigen::MatrixXd out(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    out(j, j) = spec.sigma2;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      out(i, j) = spec(distance(locs[static_cast<int>(i)], locs[static_cast<int>(j)]));
      out(j, i) = out(i, j);
    }
  }
  return out;
}

/// Covariance vector between an arbitrary point and locs[cols[j]].
inline Eigen::VectorXd cov_vector(const CovarianceSpec& spec, const Coord& at, std::span<const int> cols,
                                  const LocationSet& locs) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(cols.size()));
  for (Eigen::Index j = 0; j < out.size(); ++j) out(j) = spec(distance(at, locs[cols[static_cast<std::size_t>(j)]]));
  return out;
}

}  // namespace bnngp
