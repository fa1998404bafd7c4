#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "bnngp/blockgraph.hpp"
#include "bnngp/covariance.hpp"
#include "bnngp/error.hpp"
#include "bnngp/geometry.hpp"
#include "bnngp/inference.hpp"
#include "bnngp/parallel.hpp"

namespace bnngp {

/// w(u) | w_S, theta ~ N(m, v).
struct Kriged {
  double m = 0.0;
  double v = 0.0;
};

/// Kriging from one fixed neighbor set at one covariance. Sites that share the
/// neighbor set (all sites falling in the same block) reuse the factorization.
class NeighborKriging {
 public:
  NeighborKriging(const CovarianceSpec& spec, const LocationSet& locs, std::vector<int> neighbors)
      : spec_(spec), locs_(&locs), nbr_(std::move(neighbors)) {
    if (nbr_.empty()) throw Error("empty neighbor set");
    ldlt_.compute(cov_matrix(spec_, nbr_, nbr_, locs));
    if (ldlt_.info() != Eigen::Success || !ldlt_.isPositive() ||
        ldlt_.vectorD().minCoeff() <= 1e-13 * ldlt_.vectorD().maxCoeff())
      throw Error("degenerate neighbor configuration");
  }

  const std::vector<int>& neighbors() const { return nbr_; }

  /// Regression weights C_{N,N}^-1 C_{N,u}.
  Eigen::VectorXd weights(const Coord& u) const { return ldlt_.solve(cov_vector(spec_, u, nbr_, *locs_)); }

  Kriged operator()(const Coord& u, const Eigen::VectorXd& w) const {
    const Eigen::VectorXd c = cov_vector(spec_, u, nbr_, *locs_);
    const Eigen::VectorXd b = ldlt_.solve(c);
    double m = 0.0;
    for (std::size_t a = 0; a < nbr_.size(); ++a) m += b(static_cast<Eigen::Index>(a)) * w(nbr_[a]);
    const double v = std::clamp(spec_.sigma2 - c.dot(b), 0.0, spec_.sigma2);
    return {m, v};
  }

 private:
  CovarianceSpec spec_;
  const LocationSet* locs_;
  std::vector<int> nbr_;
  Eigen::LDLT<Eigen::MatrixXd> ldlt_;
};

/// m = C_{u,N} C_N^-1 w_N and v = sigma2 - C_{u,N} C_N^-1 C_{N,u} with N = N(u).
inline Kriged predict_w(const Coord& u, const Eigen::VectorXd& w, const CovarianceSpec& spec, const LocationSet& locs,
                        const BlockPartition& part) {
  return NeighborKriging(spec, locs, neighbor_set_for_site(u, part).indices)(u, w);
}

struct SitePrediction {
  Coord at;
  double w_mean = 0.0;
  double pred_mean = 0.0;
  double pred_var = 0.0;
  bool outside = false;
};

struct PredictionResult {
  std::vector<SitePrediction> sites;
  Eigen::MatrixXd samples;  // sites x draws of y(u), only when requested
  int draws = 0;
};

struct PredictOptions {
  int threads = 1;
  std::optional<std::uint64_t> sample_seed;  // also draw y(u) per posterior draw
};

/// Posterior predictive summaries at new sites from the retained draws that carry w.
/// Per draw, y(u) | draw ~ N(x_u'beta + m, v + tau2); the reported mean and variance
/// are those of the mixture over draws.
inline PredictionResult predict_y(const std::vector<Coord>& sites, const Eigen::MatrixXd& Xu,
                                  const PosteriorSamples& samples, const ModelSpec& model,
                                  const PredictOptions& opt = {}) {
  const auto& nngp = *model.nngp;
  if (Xu.rows() != static_cast<Eigen::Index>(sites.size()) || Xu.cols() != model.p())
    throw Error("missing covariates for prediction sites");
  const auto draws = samples.draws_with_w();
  if (draws.empty()) throw Error("no posterior draws of w to predict from");
  const auto ns = sites.size();

  PredictionResult out;
  out.draws = static_cast<int>(draws.size());
  out.sites.resize(ns);
  if (opt.sample_seed) out.samples.resize(static_cast<Eigen::Index>(ns), out.draws);

  // group sites by the block whose members they condition on
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t s = 0; s < ns; ++s) {
    const auto nb = neighbor_set_for_site(sites[s], nngp.partition());
    out.sites[s].at = sites[s];
    out.sites[s].outside = nb.outside;
    groups[nb.block].push_back(s);
  }
  std::vector<std::pair<int, std::vector<std::size_t>>> work(groups.begin(), groups.end());

  parallel_for(static_cast<int>(work.size()), opt.threads, [&](int g) {
    const auto& [block, members] = work[static_cast<std::size_t>(g)];
    const auto& nbr = nngp.partition().members[static_cast<std::size_t>(block)];
    std::vector<double> sum_m(members.size(), 0.0), sum_mu(members.size(), 0.0), sum_mu2(members.size(), 0.0),
        sum_var(members.size(), 0.0);
    std::mt19937_64 rng(opt.sample_seed.value_or(0) + static_cast<std::uint64_t>(block));
    std::normal_distribution<double> z;
    for (std::size_t d = 0; d < draws.size(); ++d) {
      const Draw& dr = *draws[d];
      NeighborKriging krig(model.covariance(dr.theta), nngp.locations(), nbr);
      for (std::size_t t = 0; t < members.size(); ++t) {
        const std::size_t s = members[t];
        const Kriged k = krig(sites[s], dr.w);
        const double mu = Xu.row(static_cast<Eigen::Index>(s)).dot(dr.beta) + k.m;
        sum_m[t] += k.m;
        sum_mu[t] += mu;
        sum_mu2[t] += mu * mu;
        sum_var[t] += k.v + dr.theta.tau2;
        if (opt.sample_seed) {
          const double wu = k.m + std::sqrt(k.v) * z(rng);
          out.samples(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(d)) =
              Xu.row(static_cast<Eigen::Index>(s)).dot(dr.beta) + wu + std::sqrt(dr.theta.tau2) * z(rng);
        }
      }
    }
    const double nd = static_cast<double>(draws.size());
    for (std::size_t t = 0; t < members.size(); ++t) {
      auto& r = out.sites[members[t]];
      r.w_mean = sum_m[t] / nd;
      r.pred_mean = sum_mu[t] / nd;
      const double spread = std::max(0.0, sum_mu2[t] / nd - r.pred_mean * r.pred_mean);
      r.pred_var = sum_var[t] / nd + spread;
    }
  });
  return out;
}

/// Root mean square prediction error against held-out responses.
inline double rmsp(const PredictionResult& pred, const Eigen::VectorXd& y_holdout) {
  Eigen::VectorXd m(static_cast<Eigen::Index>(pred.sites.size()));
  for (std::size_t s = 0; s < pred.sites.size(); ++s) m(static_cast<Eigen::Index>(s)) = pred.sites[s].pred_mean;
  return rmse(m, y_holdout);
}

}  // namespace bnngp
