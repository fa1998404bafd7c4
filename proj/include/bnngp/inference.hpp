#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "bnngp/blockgraph.hpp"
#include "bnngp/covariance.hpp"
#include "bnngp/error.hpp"
#include "bnngp/factors.hpp"
#include "bnngp/geometry.hpp"
#include "bnngp/parallel.hpp"
#include "bnngp/sparse_cholesky.hpp"

namespace bnngp {

inline constexpr double neg_inf = -std::numeric_limits<double>::infinity();

struct InverseGamma {
  double a = 2.0;
  double b = 1.0;

  double log_density(double x) const {
    if (!(x > 0.0)) return neg_inf;
    return a * std::log(b) - std::lgamma(a) - (a + 1.0) * std::log(x) - b / x;
  }
};

struct Uniform {
  double a = 1.0;
  double b = 30.0;

  double log_density(double x) const { return x > a && x < b ? -std::log(b - a) : neg_inf; }
};

/// beta ~ N(beta_mean, beta_precision^-1); an empty precision means a flat prior.
struct PriorSpec {
  Eigen::VectorXd beta_mean;
  Eigen::MatrixXd beta_precision;
  Uniform phi{1.0, 30.0};
  InverseGamma sigma2{2.0, 1.0};
  InverseGamma tau2{2.0, 1.0};

  void validate() const {
    if (!(phi.a < phi.b) || !std::isfinite(phi.a) || !std::isfinite(phi.b))
      throw Error("phi prior needs finite a < b");
    for (const auto& g : {sigma2, tau2})
      if (!(g.a > 0.0 && g.b > 0.0) || !std::isfinite(g.a) || !std::isfinite(g.b))
        throw Error("inverse gamma prior needs finite positive a, b");
    if (!beta_mean.allFinite() || !beta_precision.allFinite()) throw Error("beta prior must be finite");
  }
};

struct Theta {
  double sigma2 = 1.0;
  double phi = 1.0;
  double tau2 = 1.0;
};

/// Y = X beta + w + eps over a block-NNGP for w.
struct ModelSpec {
  std::shared_ptr<const BlockNngp> nngp;
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  CovarianceKind kind = CovarianceKind::Exponential;
  PriorSpec prior;

  int n() const { return static_cast<int>(y.size()); }
  int p() const { return static_cast<int>(X.cols()); }

  CovarianceSpec covariance(const Theta& t) const { return {kind, t.sigma2, t.phi}; }

  Eigen::VectorXd prior_mean() const { return prior.beta_mean.size() ? prior.beta_mean : Eigen::VectorXd::Zero(p()); }
  Eigen::MatrixXd prior_precision() const {
    return prior.beta_precision.size() ? prior.beta_precision : Eigen::MatrixXd::Zero(p(), p());
  }

  void validate() const {
    if (!nngp) throw Error("model has no block-NNGP");
    if (X.rows() != y.size() || nngp->size() != n()) throw Error("X, y and locations disagree on n");
    if (p() < 1) throw Error("X needs at least one column");
    if (!X.allFinite() || !y.allFinite()) throw Error("X and y must be finite");
    prior.validate();
    if (prior.beta_mean.size() && prior.beta_mean.size() != p()) throw Error("beta prior mean has the wrong length");
    if (prior.beta_precision.size() && (prior.beta_precision.rows() != p() || prior.beta_precision.cols() != p()))
      throw Error("beta prior precision has the wrong shape");
  }
};

inline ModelSpec make_model(LocationSet locs, Eigen::MatrixXd X, Eigen::VectorXd y, CovarianceKind kind,
                            const Blocking& blocking, int nb, PriorSpec prior = {}) {
  auto part = make_partition(locs, blocking);
  auto graph = build_graph(part, nb);
  ModelSpec m;
  m.nngp = std::make_shared<const BlockNngp>(std::move(locs), std::move(part), std::move(graph));
  m.X = std::move(X);
  m.y = std::move(y);
  m.kind = kind;
  m.prior = std::move(prior);
  m.validate();
  return m;
}

/// log Delta(theta): the prior density of (sigma2, phi, tau2).
inline double log_prior_theta(const Theta& t, const PriorSpec& prior) {
  return prior.sigma2.log_density(t.sigma2) + prior.phi.log_density(t.phi) + prior.tau2.log_density(t.tau2);
}

/// Unconstrained coordinates (log sigma2, logit of rescaled phi, log tau2).
inline Eigen::Vector3d to_unconstrained(const Theta& t, const PriorSpec& prior) {
  const double u = (t.phi - prior.phi.a) / (prior.phi.b - prior.phi.a);
  return {std::log(t.sigma2), std::log(u / (1.0 - u)), std::log(t.tau2)};
}

inline Theta from_unconstrained(const Eigen::Vector3d& e, const PriorSpec& prior) {
  const double u = 1.0 / (1.0 + std::exp(-e(1)));
  return {std::exp(e(0)), prior.phi.a + (prior.phi.b - prior.phi.a) * u, std::exp(e(2))};
}

/// log |d theta / d eta| for the transform above.
inline double log_jacobian(const Theta& t, const PriorSpec& prior) {
  return std::log(t.sigma2) + std::log((t.phi - prior.phi.a) * (prior.phi.b - t.phi) / (prior.phi.b - prior.phi.a)) +
         std::log(t.tau2);
}

/// log Delta(theta) - 1/2 log|D| - 1/2 log|C~| - 1/2 r'D^-1 r - 1/2 w'Q~w, r = y - X beta - w.
inline double log_target_theta_full(const Theta& t, const Eigen::VectorXd& beta, const Eigen::VectorXd& w,
                                    const ModelSpec& model, const BlockFactors& factors) {
  const double lp = log_prior_theta(t, model.prior);
  if (!std::isfinite(lp)) return neg_inf;
  const Eigen::VectorXd r = model.y - model.X * beta - w;
  return lp - 0.5 * model.n() * std::log(t.tau2) - 0.5 * log_det_ctilde(factors) - 0.5 * r.squaredNorm() / t.tau2 -
         0.5 * quadratic_form(factors, w);
}

struct GaussianConditional {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
};

namespace detail {

inline Eigen::LLT<Eigen::MatrixXd> factor_beta_precision(const Eigen::MatrixXd& a) {
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) throw Error("design matrix rank deficient");
  const Eigen::VectorXd d = Eigen::MatrixXd(llt.matrixL()).diagonal();
  if (d.minCoeff() <= 1e-7 * d.maxCoeff()) throw Error("design matrix rank deficient");
  return llt;
}

/// N(A^-1 b, A^-1) draw through the Cholesky factor of A.
inline Eigen::VectorXd draw_from_precision(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, std::mt19937_64& rng) {
  const auto llt = factor_beta_precision(a);
  std::normal_distribution<double> z;
  Eigen::VectorXd e(a.rows());
  for (Eigen::Index i = 0; i < e.size(); ++i) e(i) = z(rng);
  return llt.solve(b) + llt.matrixU().solve(e);
}

inline GaussianConditional conditional_from_precision(const Eigen::MatrixXd& a, const Eigen::VectorXd& b) {
  const auto llt = factor_beta_precision(a);
  return {llt.solve(b), llt.solve(Eigen::MatrixXd::Identity(a.rows(), a.cols()))};
}

}  // namespace detail

/// beta | y, w, theta ~ N(Bb, B), B = (Sigma_beta^-1 + X'D^-1 X)^-1, b = Sigma_beta^-1 mu + X'D^-1 (y - w).
inline GaussianConditional beta_conditional_full(const ModelSpec& model, const Eigen::VectorXd& w, const Theta& t) {
  const Eigen::MatrixXd a = model.prior_precision() + model.X.transpose() * model.X / t.tau2;
  const Eigen::VectorXd b = model.prior_precision() * model.prior_mean() + model.X.transpose() * (model.y - w) / t.tau2;
  return detail::conditional_from_precision(a, b);
}

inline Eigen::VectorXd gibbs_beta_full(const ModelSpec& model, const Eigen::VectorXd& w, const Theta& t,
                                       std::mt19937_64& rng) {
  const Eigen::MatrixXd a = model.prior_precision() + model.X.transpose() * model.X / t.tau2;
  const Eigen::VectorXd b = model.prior_precision() * model.prior_mean() + model.X.transpose() * (model.y - w) / t.tau2;
  return detail::draw_from_precision(a, b, rng);
}

/// Factorization of Q~ + D^-1 for one theta, reusing a symbolic analysis.
class LatentPosterior {
 public:
  LatentPosterior() = default;
  explicit LatentPosterior(const PrecisionAssembler& assembler) : assembler_(&assembler) {
    chol_.analyze(assembler.pattern());
  }

  void factor(const SparsePrecision& q, double tau2) {
    SparseMatrix p = q.lower;
    double* v = p.valuePtr();
    for (int j = 0; j < q.size(); ++j) v[assembler_->diagonal_slot(j)] += 1.0 / tau2;
    chol_.factorize(p);
    tau2_ = tau2;
  }

  const SparseCholesky& cholesky() const { return chol_; }
  double tau2() const { return tau2_; }

  /// (Q~ + D^-1)^-1 D^-1 (y - X beta)
  Eigen::VectorXd mean(const Eigen::VectorXd& resid) const { return chol_.solve(Eigen::VectorXd(resid / tau2_)); }

  Eigen::VectorXd draw(const Eigen::VectorXd& resid, std::mt19937_64& rng) const {
    std::normal_distribution<double> z;
    Eigen::VectorXd e(chol_.rows());
    for (Eigen::Index i = 0; i < e.size(); ++i) e(i) = z(rng);
    return mean(resid) + chol_.sample(e);
  }

 private:
  const PrecisionAssembler* assembler_ = nullptr;
  SparseCholesky chol_;
  double tau2_ = 1.0;
};

inline Eigen::VectorXd w_conditional_mean(const ModelSpec& model, const Eigen::VectorXd& beta, const Theta& t,
                                          const SparsePrecision& q) {
  LatentPosterior lp(model.nngp->assembler());
  lp.factor(q, t.tau2);
  return lp.mean(model.y - model.X * beta);
}

/// w | y, beta, theta ~ N(F f, F), F = (Q~ + D^-1)^-1, f = D^-1 (y - X beta).
inline Eigen::VectorXd gibbs_w_full(const ModelSpec& model, const Eigen::VectorXd& beta, const Theta& t,
                                    const SparsePrecision& q, std::mt19937_64& rng) {
  LatentPosterior lp(model.nngp->assembler());
  lp.factor(q, t.tau2);
  return lp.draw(model.y - model.X * beta, rng);
}

/// Everything the collapsed sampler needs at one theta. With V = [y, X] it keeps
/// G = V' Sigma^-1 V, Sigma = C~ + D, so that the marginal likelihood and the beta
/// full conditional cost O(p^2) for any beta.
class CollapsedState {
 public:
  CollapsedState() = default;
  explicit CollapsedState(const ModelSpec& model) : model_(&model), latent_(model.nngp->assembler()) {
    v_.resize(model.n(), model.p() + 1);
    v_.col(0) = model.y;
    v_.rightCols(model.p()) = model.X;
  }

  /// Returns false if theta is outside the prior support or the factorization fails.
  bool set_theta(const Theta& t, int threads = 1) {
    theta_ = t;
    log_prior_ = log_prior_theta(t, model_->prior);
    if (!std::isfinite(log_prior_)) return false;
    try {
      factors_ = model_->nngp->factors(model_->covariance(t), threads);
      q_ = model_->nngp->precision(factors_, threads);
      latent_.factor(q_, t.tau2);
    } catch (const Error&) {
      return false;
    }
    // Sigma^-1 V = D^-1 V - D^-1 (Q~ + D^-1)^-1 D^-1 V
    const Eigen::MatrixXd dv = v_ / t.tau2;
    const Eigen::MatrixXd siv = dv - latent_.cholesky().solve(dv) / t.tau2;
    g_ = v_.transpose() * siv;
    log_det_sigma_ = latent_.cholesky().log_det() - q_.log_det + model_->n() * std::log(t.tau2);
    return true;
  }

  const Theta& theta() const { return theta_; }
  const BlockFactors& factors() const { return factors_; }
  const SparsePrecision& precision() const { return q_; }
  const LatentPosterior& latent() const { return latent_; }
  double log_det_sigma() const { return log_det_sigma_; }

  /// r' Sigma^-1 r with r = y - X beta.
  double quadratic(const Eigen::VectorXd& beta) const {
    const int p = model_->p();
    return g_(0, 0) - 2.0 * beta.dot(g_.block(1, 0, p, 1).col(0)) + beta.dot(g_.bottomRightCorner(p, p) * beta);
  }

  double log_target(const Eigen::VectorXd& beta) const {
    if (!std::isfinite(log_prior_)) return neg_inf;
    return log_prior_ - 0.5 * log_det_sigma_ - 0.5 * quadratic(beta);
  }

  /// Precision and linear term of beta | y, theta.
  std::pair<Eigen::MatrixXd, Eigen::VectorXd> beta_system() const {
    const int p = model_->p();
    const Eigen::MatrixXd a = model_->prior_precision() + g_.bottomRightCorner(p, p);
    const Eigen::VectorXd b = model_->prior_precision() * model_->prior_mean() + g_.block(1, 0, p, 1).col(0);
    return {a, b};
  }

 private:
  const ModelSpec* model_ = nullptr;
  LatentPosterior latent_;
  Eigen::MatrixXd v_, g_;
  Theta theta_;
  BlockFactors factors_;
  SparsePrecision q_;
  double log_prior_ = neg_inf;
  double log_det_sigma_ = 0.0;
};

/// log Delta(theta) - 1/2 log|Sigma| - 1/2 r'Sigma^-1 r with Sigma = C~ + D, r = y - X beta.
inline double log_target_theta_collapsed(const Theta& t, const Eigen::VectorXd& beta, const ModelSpec& model) {
  CollapsedState s(model);
  if (!s.set_theta(t)) return neg_inf;
  return s.log_target(beta);
}

/// beta | y, theta ~ N(Bb, B), B = (Sigma_beta^-1 + X'Sigma^-1 X)^-1.
inline GaussianConditional beta_conditional_collapsed(const ModelSpec& model, const Theta& t) {
  CollapsedState s(model);
  if (!s.set_theta(t)) throw Error("theta outside the prior support or covariance not positive definite");
  auto [a, b] = s.beta_system();
  return detail::conditional_from_precision(a, b);
}

// ---------------------------------------------------------------------------
// samplers

enum class Sampler { Full, Collapsed };

inline std::string_view to_string(Sampler s) { return s == Sampler::Full ? "full" : "collapsed"; }

inline Sampler parse_sampler(std::string_view name) {
  if (name == "full") return Sampler::Full;
  if (name == "collapsed") return Sampler::Collapsed;
  throw Error("unknown sampler '" + std::string(name) + "'");
}

struct McmcConfig {
  int n_iter = 5000;
  int burn_in = 1000;
  int n_chains = 3;
  int thin = 1;
  std::uint64_t seed = 1;
  std::array<double, 3> proposal_scale{0.3, 0.3, 0.3};
  bool adapt = true;
  int chain_threads = 1;  // chains run concurrently
  int block_threads = 1;  // per-block factor work inside a chain
  int w_every = 1;        // keep w for every k-th retained draw; 0 keeps none
  std::optional<Theta> initial;

  int retained() const { return thin > 0 && n_iter > burn_in ? (n_iter - burn_in) / thin : 0; }

  void validate() const {
    if (n_iter < 1 || burn_in < 0 || thin < 1 || n_chains < 1) throw Error("invalid MCMC configuration");
    if (retained() == 0) throw Error("no retained draws");
    for (double s : proposal_scale)
      if (!(s > 0.0)) throw Error("proposal scales must be positive");
    if (w_every < 0) throw Error("w_every must be >= 0");
  }
};

/// Per-observation log-likelihood summaries accumulated over draws without storing
/// them: log-sum-exp of l and -l, and a running mean/variance of l.
struct PointwiseStats {
  long draws = 0;
  Eigen::VectorXd lse_pos, lse_neg, mean, m2;
  Eigen::VectorXd fitted_sum;  // sum of x'beta + w

  void reset(int n) {
    draws = 0;
    lse_pos = Eigen::VectorXd::Constant(n, neg_inf);
    lse_neg = Eigen::VectorXd::Constant(n, neg_inf);
    mean = Eigen::VectorXd::Zero(n);
    m2 = Eigen::VectorXd::Zero(n);
    fitted_sum = Eigen::VectorXd::Zero(n);
  }

  static double log_add(double a, double b) {
    if (a == neg_inf) return b;
    if (b == neg_inf) return a;
    return std::max(a, b) + std::log1p(std::exp(-std::abs(a - b)));
  }

  void add(const Eigen::VectorXd& loglik) {
    if (draws == 0 && lse_pos.size() != loglik.size()) reset(static_cast<int>(loglik.size()));
    ++draws;
    for (Eigen::Index i = 0; i < loglik.size(); ++i) {
      const double l = loglik(i);
      lse_pos(i) = log_add(lse_pos(i), l);
      lse_neg(i) = log_add(lse_neg(i), -l);
      const double d = l - mean(i);
      mean(i) += d / static_cast<double>(draws);
      m2(i) += d * (l - mean(i));
    }
  }

  void add_draw(const Eigen::VectorXd& y, const Eigen::VectorXd& fitted, double tau2) {
    if (draws == 0 && lse_pos.size() != y.size()) reset(static_cast<int>(y.size()));
    const double c = -0.5 * std::log(2.0 * std::numbers::pi * tau2);
    add((c - 0.5 * (y - fitted).array().square() / tau2).matrix());
    fitted_sum += fitted;
  }

  void merge(const PointwiseStats& o) {
    if (o.draws == 0) return;
    if (draws == 0) {
      *this = o;
      return;
    }
    const double na = static_cast<double>(draws), nb = static_cast<double>(o.draws), nt = na + nb;
    for (Eigen::Index i = 0; i < mean.size(); ++i) {
      lse_pos(i) = log_add(lse_pos(i), o.lse_pos(i));
      lse_neg(i) = log_add(lse_neg(i), o.lse_neg(i));
      const double d = o.mean(i) - mean(i);
      m2(i) += o.m2(i) + d * d * na * nb / nt;
      mean(i) += d * nb / nt;
    }
    fitted_sum += o.fitted_sum;
    draws += o.draws;
  }

  /// sum_i log CPO_i with CPO_i = [mean_s 1 / p(y_i | draw s)]^-1
  double lpml() const {
    const double logs = std::log(static_cast<double>(draws));
    return -(lse_neg.array() - logs).sum();
  }

  double lppd() const { return (lse_pos.array() - std::log(static_cast<double>(draws))).sum(); }

  double p_waic() const { return draws > 1 ? m2.sum() / static_cast<double>(draws - 1) : 0.0; }

  double waic() const { return -2.0 * (lppd() - p_waic()); }

  Eigen::VectorXd fitted_mean() const { return fitted_sum / static_cast<double>(draws); }
};

/// LPML and WAIC from an explicit draws x n matrix of log-likelihood values.
inline double lpml(const Eigen::MatrixXd& loglik) {
  PointwiseStats s;
  for (Eigen::Index r = 0; r < loglik.rows(); ++r) s.add(loglik.row(r).transpose());
  return s.lpml();
}

inline double waic(const Eigen::MatrixXd& loglik) {
  PointwiseStats s;
  for (Eigen::Index r = 0; r < loglik.rows(); ++r) s.add(loglik.row(r).transpose());
  return s.waic();
}

inline double rmse(const Eigen::VectorXd& fitted, const Eigen::VectorXd& observed) {
  if (fitted.size() != observed.size() || fitted.size() == 0) throw Error("rmse needs equal non-empty vectors");
  return std::sqrt((fitted - observed).squaredNorm() / static_cast<double>(fitted.size()));
}

struct Draw {
  int iter = 0;
  Theta theta;
  Eigen::VectorXd beta;
  Eigen::VectorXd w;  // empty when not kept
};

struct ChainResult {
  int chain = 0;
  std::vector<Draw> draws;
  double acceptance = 0.0;  // over the retained phase
  double seconds = 0.0;
  double seconds_factors = 0.0;
  PointwiseStats stats;
};

struct PosteriorSamples {
  Sampler sampler = Sampler::Collapsed;
  int p = 0;
  std::vector<ChainResult> chains;
  double seconds = 0.0;

  std::size_t size() const {
    std::size_t s = 0;
    for (const auto& c : chains) s += c.draws.size();
    return s;
  }

  PointwiseStats pooled_stats() const {
    PointwiseStats s;
    for (const auto& c : chains) s.merge(c.stats);
    return s;
  }

  /// Retained draws that carry w, across chains in chain order.
  std::vector<const Draw*> draws_with_w() const {
    std::vector<const Draw*> out;
    for (const auto& c : chains)
      for (const auto& d : c.draws)
        if (d.w.size()) out.push_back(&d);
    return out;
  }
};

namespace detail {

/// Random-walk proposal on the unconstrained scale. During burn-in the global scale
/// follows a Robbins-Monro recursion towards 0.25 acceptance and, from the middle of
/// burn-in on, the shape is the empirical covariance of the chain so far. Frozen after.
class AdaptiveProposal {
 public:
  AdaptiveProposal(const std::array<double, 3>& scale, bool adapt, int burn_in) : adapt_(adapt), burn_in_(burn_in) {
    chol_.setZero();
    for (int i = 0; i < 3; ++i) chol_(i, i) = scale[static_cast<std::size_t>(i)];
    mean_.setZero();
    m2_.setZero();
  }

  Eigen::Vector3d propose(const Eigen::Vector3d& eta, std::mt19937_64& rng) const {
    std::normal_distribution<double> z;
    const Eigen::Vector3d e(z(rng), z(rng), z(rng));
    return eta + std::exp(log_scale_) * (chol_ * e);
  }

  void update(int iter, const Eigen::Vector3d& eta, bool accepted) {
    if (!adapt_ || iter >= burn_in_) return;
    const double gamma = std::pow(iter + 1.0, -0.6);
    log_scale_ += gamma * ((accepted ? 1.0 : 0.0) - 0.25);
    if (iter >= burn_in_ / 4) {
      ++count_;
      const Eigen::Vector3d d = eta - mean_;
      mean_ += d / static_cast<double>(count_);
      m2_ += d * (eta - mean_).transpose();
    }
    if (iter >= burn_in_ / 2 && count_ >= 30 && (iter - burn_in_ / 2) % 50 == 0) {
      const Eigen::Matrix3d cov = m2_ / static_cast<double>(count_ - 1) + 1e-8 * Eigen::Matrix3d::Identity();
      Eigen::LLT<Eigen::Matrix3d> llt(cov * (2.38 * 2.38 / 3.0));
      if (llt.info() == Eigen::Success) {
        if (!shaped_) log_scale_ = 0.0;
        chol_ = llt.matrixL();
        shaped_ = true;
      }
    }
  }

 private:
  bool adapt_;
  int burn_in_;
  bool shaped_ = false;
  double log_scale_ = 0.0;
  long count_ = 0;
  Eigen::Matrix3d chol_, m2_;
  Eigen::Vector3d mean_;
};

inline Theta default_initial(const ModelSpec& model) {
  const Eigen::VectorXd beta = model.X.colPivHouseholderQr().solve(model.y);
  const Eigen::VectorXd r = model.y - model.X * beta;
  const double v = std::max(1e-6, r.squaredNorm() / std::max(1, model.n() - 1));
  return {0.5 * v, 0.5 * (model.prior.phi.a + model.prior.phi.b), 0.5 * v};
}

inline Theta jittered_initial(const ModelSpec& model, const McmcConfig& cfg, std::mt19937_64& rng) {
  const Theta base = cfg.initial.value_or(default_initial(model));
  if (!cfg.initial) {
    Eigen::Vector3d eta = to_unconstrained(base, model.prior);
    std::normal_distribution<double> z(0.0, 0.3);
    for (int i = 0; i < 3; ++i) eta(i) += z(rng);
    return from_unconstrained(eta, model.prior);
  }
  return base;
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline std::mt19937_64 chain_rng(std::uint64_t seed, int chain) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(chain)};
  return std::mt19937_64(seq);
}

inline bool keep_draw(const McmcConfig& cfg, int iter) {
  return iter >= cfg.burn_in && (iter - cfg.burn_in + 1) % cfg.thin == 0;
}

inline ChainResult run_collapsed_chain(const ModelSpec& model, const McmcConfig& cfg, int chain) {
  const auto t0 = std::chrono::steady_clock::now();
  auto rng = chain_rng(cfg.seed, chain);
  std::uniform_real_distribution<double> unif;
  ChainResult out;
  out.chain = chain;
  out.stats.reset(model.n());

  double factor_time = 0.0;
  auto timed_set = [&](CollapsedState& s, const Theta& t) {
    const auto f0 = std::chrono::steady_clock::now();
    const bool ok = s.set_theta(t, cfg.block_threads);
    factor_time += seconds_since(f0);
    return ok;
  };

  CollapsedState cur(model), prop(model);
  Theta theta = jittered_initial(model, cfg, rng);
  if (!timed_set(cur, theta)) throw Error("initial theta gives a non positive definite covariance");
  Eigen::VectorXd beta = model.X.colPivHouseholderQr().solve(model.y);
  Eigen::Vector3d eta = to_unconstrained(theta, model.prior);
  double jac = log_jacobian(theta, model.prior);
  AdaptiveProposal proposal(cfg.proposal_scale, cfg.adapt, cfg.burn_in);

  long accepted_kept = 0, tried_kept = 0, retained = 0;
  for (int iter = 0; iter < cfg.n_iter; ++iter) {
    // (i) theta | beta, y with w integrated out
    const Eigen::Vector3d eta_new = proposal.propose(eta, rng);
    const Theta theta_new = from_unconstrained(eta_new, model.prior);
    bool accept = false;
    if (timed_set(prop, theta_new)) {
      const double jac_new = log_jacobian(theta_new, model.prior);
      const double log_ratio = prop.log_target(beta) + jac_new - cur.log_target(beta) - jac;
      if (std::log(unif(rng)) < log_ratio) {
        accept = true;
        std::swap(cur, prop);
        theta = theta_new;
        eta = eta_new;
        jac = jac_new;
      }
    }
    proposal.update(iter, eta, accept);

    // (ii) beta | theta, y
    auto [a, b] = cur.beta_system();
    beta = draw_from_precision(a, b, rng);

    if (iter >= cfg.burn_in) {
      ++tried_kept;
      accepted_kept += accept;
    }
    if (!keep_draw(cfg, iter)) continue;

    // (iii) w | beta, theta, y recovered for the retained draw
    const Eigen::VectorXd xb = model.X * beta;
    const Eigen::VectorXd w = cur.latent().draw(model.y - xb, rng);
    out.stats.add_draw(model.y, xb + w, theta.tau2);
    Draw d{iter, theta, beta, {}};
    if (cfg.w_every > 0 && retained % cfg.w_every == 0) d.w = w;
    out.draws.push_back(std::move(d));
    ++retained;
  }
  out.acceptance = tried_kept ? static_cast<double>(accepted_kept) / static_cast<double>(tried_kept) : 0.0;
  out.seconds = seconds_since(t0);
  out.seconds_factors = factor_time;
  return out;
}

inline ChainResult run_full_chain(const ModelSpec& model, const McmcConfig& cfg, int chain) {
  const auto t0 = std::chrono::steady_clock::now();
  auto rng = chain_rng(cfg.seed, chain);
  std::uniform_real_distribution<double> unif;
  ChainResult out;
  out.chain = chain;
  out.stats.reset(model.n());
  const auto& nngp = *model.nngp;

  double factor_time = 0.0;
  auto timed_factors = [&](const Theta& t, BlockFactors& f) {
    const auto f0 = std::chrono::steady_clock::now();
    bool ok = true;
    try {
      f = nngp.factors(model.covariance(t), cfg.block_threads);
    } catch (const Error&) {
      ok = false;
    }
    factor_time += seconds_since(f0);
    return ok;
  };

  Theta theta = jittered_initial(model, cfg, rng);
  BlockFactors factors, factors_new;
  if (!timed_factors(theta, factors)) throw Error("initial theta gives a non positive definite covariance");
  Eigen::VectorXd beta = model.X.colPivHouseholderQr().solve(model.y);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(model.n());
  Eigen::Vector3d eta = to_unconstrained(theta, model.prior);
  double jac = log_jacobian(theta, model.prior);
  AdaptiveProposal proposal(cfg.proposal_scale, cfg.adapt, cfg.burn_in);
  LatentPosterior latent(nngp.assembler());
  bool latent_ready = false;

  long accepted_kept = 0, tried_kept = 0, retained = 0;
  for (int iter = 0; iter < cfg.n_iter; ++iter) {
    // (i) theta | beta, w, y
    const Eigen::Vector3d eta_new = proposal.propose(eta, rng);
    const Theta theta_new = from_unconstrained(eta_new, model.prior);
    bool accept = false;
    if (timed_factors(theta_new, factors_new)) {
      const double jac_new = log_jacobian(theta_new, model.prior);
      const double log_ratio = log_target_theta_full(theta_new, beta, w, model, factors_new) + jac_new -
                               log_target_theta_full(theta, beta, w, model, factors) - jac;
      if (std::log(unif(rng)) < log_ratio) {
        accept = true;
        std::swap(factors, factors_new);
        theta = theta_new;
        eta = eta_new;
        jac = jac_new;
        latent_ready = false;
      }
    }
    proposal.update(iter, eta, accept);

    // (ii) beta | w, theta, y
    beta = gibbs_beta_full(model, w, theta, rng);

    // (iii) w | beta, theta, y; the factorization only changes with theta
    if (!latent_ready) {
      const auto f0 = std::chrono::steady_clock::now();
      latent.factor(nngp.precision(factors, cfg.block_threads), theta.tau2);
      factor_time += seconds_since(f0);
      latent_ready = true;
    }
    const Eigen::VectorXd xb = model.X * beta;
    w = latent.draw(model.y - xb, rng);

    if (iter >= cfg.burn_in) {
      ++tried_kept;
      accepted_kept += accept;
    }
    if (!keep_draw(cfg, iter)) continue;
    out.stats.add_draw(model.y, xb + w, theta.tau2);
    Draw d{iter, theta, beta, {}};
    if (cfg.w_every > 0 && retained % cfg.w_every == 0) d.w = w;
    out.draws.push_back(std::move(d));
    ++retained;
  }
  out.acceptance = tried_kept ? static_cast<double>(accepted_kept) / static_cast<double>(tried_kept) : 0.0;
  out.seconds = seconds_since(t0);
  out.seconds_factors = factor_time;
  return out;
}

}  // namespace detail

inline PosteriorSamples run_mcmc(const ModelSpec& model, const McmcConfig& cfg, Sampler sampler) {
  model.validate();
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  PosteriorSamples out;
  out.sampler = sampler;
  out.p = model.p();
  out.chains.resize(static_cast<std::size_t>(cfg.n_chains));
  parallel_for(cfg.n_chains, cfg.chain_threads, [&](int c) {
    out.chains[static_cast<std::size_t>(c)] = sampler == Sampler::Full ? detail::run_full_chain(model, cfg, c)
                                                                        : detail::run_collapsed_chain(model, cfg, c);
  });
  out.seconds = detail::seconds_since(t0);
  return out;
}

inline PosteriorSamples run_full_mcmc(const ModelSpec& model, const McmcConfig& cfg) {
  return run_mcmc(model, cfg, Sampler::Full);
}

inline PosteriorSamples run_collapsed_mcmc(const ModelSpec& model, const McmcConfig& cfg) {
  return run_mcmc(model, cfg, Sampler::Collapsed);
}

// ---------------------------------------------------------------------------
// summaries

struct ParameterSummary {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
  double q025 = 0.0;
  double q975 = 0.0;
  double mc_se = 0.0;  // batch-means standard error of the mean
};

/// Monte Carlo standard error of the mean of one chain by non-overlapping batch means.
inline double batch_means_se(const std::vector<double>& x) {
  const auto n = static_cast<long>(x.size());
  if (n < 4) return std::numeric_limits<double>::quiet_NaN();
  const long b = std::max(1L, static_cast<long>(std::sqrt(static_cast<double>(n))));
  const long a = n / b;
  double mean = 0.0;
  for (long i = 0; i < a * b; ++i) mean += x[static_cast<std::size_t>(i)];
  mean /= static_cast<double>(a * b);
  double ss = 0.0;
  for (long k = 0; k < a; ++k) {
    double m = 0.0;
    for (long i = k * b; i < (k + 1) * b; ++i) m += x[static_cast<std::size_t>(i)];
    m /= static_cast<double>(b);
    ss += (m - mean) * (m - mean);
  }
  const double var_bm = static_cast<double>(b) * ss / static_cast<double>(a - 1);
  return std::sqrt(var_bm / static_cast<double>(n));
}

inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw Error("quantile of an empty sample");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline std::vector<std::string> parameter_names(int p) {
  std::vector<std::string> names;
  for (int j = 0; j < p; ++j) names.push_back("beta_" + std::to_string(j));
  names.insert(names.end(), {"sigma2", "phi", "tau2"});
  return names;
}

/// Value of parameter `index` (betas first, then sigma2, phi, tau2) in a draw.
inline double parameter_value(const Draw& d, int index) {
  const auto p = static_cast<int>(d.beta.size());
  if (index < p) return d.beta(index);
  switch (index - p) {
    case 0:
      return d.theta.sigma2;
    case 1:
      return d.theta.phi;
    default:
      return d.theta.tau2;
  }
}

inline std::vector<ParameterSummary> summarize(const PosteriorSamples& s) {
  if (s.size() == 0) throw Error("no retained draws");
  const auto names = parameter_names(s.p);
  std::vector<ParameterSummary> out;
  for (int k = 0; k < static_cast<int>(names.size()); ++k) {
    std::vector<double> pooled;
    double var_of_mean = 0.0;
    const double total = static_cast<double>(s.size());
    for (const auto& c : s.chains) {
      std::vector<double> x;
      for (const auto& d : c.draws) x.push_back(parameter_value(d, k));
      const double se = batch_means_se(x);
      const double wgt = static_cast<double>(x.size()) / total;
      var_of_mean += wgt * wgt * se * se;
      pooled.insert(pooled.end(), x.begin(), x.end());
    }
    ParameterSummary ps;
    ps.name = names[static_cast<std::size_t>(k)];
    double m = 0.0;
    for (double v : pooled) m += v;
    m /= static_cast<double>(pooled.size());
    double ss = 0.0;
    for (double v : pooled) ss += (v - m) * (v - m);
    ps.mean = m;
    ps.sd = pooled.size() > 1 ? std::sqrt(ss / static_cast<double>(pooled.size() - 1)) : 0.0;
    ps.q025 = quantile(pooled, 0.025);
    ps.q975 = quantile(pooled, 0.975);
    ps.mc_se = std::sqrt(var_of_mean);
    out.push_back(ps);
  }
  return out;
}

struct FitMetrics {
  double rmse = 0.0;
  double lpml = 0.0;
  double waic = 0.0;
  double p_waic = 0.0;
  double lppd = 0.0;
  std::optional<double> rmsp;
};

/// Training-side metrics from the per-draw likelihood N(y_i; x_i'beta + w_i, tau2).
/// RMSP is filled in by the caller from held-out predictions.
inline FitMetrics metrics(const PosteriorSamples& s, const ModelSpec& model) {
  const PointwiseStats st = s.pooled_stats();
  if (st.draws == 0) throw Error("no retained draws");
  FitMetrics m;
  m.rmse = rmse(st.fitted_mean(), model.y);
  m.lpml = st.lpml();
  m.lppd = st.lppd();
  m.p_waic = st.p_waic();
  m.waic = st.waic();
  return m;
}

}  // namespace bnngp
