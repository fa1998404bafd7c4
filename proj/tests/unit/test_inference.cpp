#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "bnngp/inference.hpp"
#include "bnngp/process.hpp"
#include "support/dense_oracle.hpp"

using namespace bnngp;

namespace {

ModelSpec oracle_model(int n, int m, int nb, unsigned seed, int p = 2) {
  auto locs = oracle::uniform_locations(n, seed);
  std::mt19937_64 rng(seed + 100);
  std::normal_distribution<double> z;
  Eigen::MatrixXd X(n, p);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = 1.0;
    for (int j = 1; j < p; ++j) X(i, j) = z(rng);
  }
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) y(i) = z(rng);
  return make_model(locs, X, y, CovarianceKind::Exponential, Blocking::kdtree(m), nb);
}

Eigen::MatrixXd dense_ctilde(const ModelSpec& model, const Theta& t) {
  const auto& nn = *model.nngp;
  const Eigen::MatrixXd c = oracle::dense_cov(model.covariance(t), nn.locations());
  return oracle::conditional_product_precision(c, nn.partition(), nn.graph()).inverse();
}

// simulate y = X beta + w + eps from the exact GP
ModelSpec simulated_model(int n, int m, int nb, unsigned seed, const Theta& truth, const Eigen::Vector2d& beta) {
  auto locs = oracle::uniform_locations(n, seed);
  std::mt19937_64 rng(seed + 7);
  std::normal_distribution<double> z;
  Eigen::MatrixXd X(n, 2);
  for (int i = 0; i < n; ++i) X.row(i) << 1.0, z(rng);
  const Eigen::VectorXd w =
      simulate_full_gp(CovarianceSpec(CovarianceKind::Exponential, truth.sigma2, truth.phi), locs, seed + 3).values;
  Eigen::VectorXd y = X * beta + w;
  for (int i = 0; i < n; ++i) y(i) += std::sqrt(truth.tau2) * z(rng);
  return make_model(locs, X, y, CovarianceKind::Exponential, Blocking::kdtree(m), nb);
}

}  // namespace

TEST(Priors, LogDensities) {
  InverseGamma ig{2.0, 1.0};
  EXPECT_NEAR(ig.log_density(0.5), std::log(1.0 / 0.125 * std::exp(-2.0)), 1e-12);
  EXPECT_EQ(ig.log_density(-1.0), neg_inf);
  Uniform u{1.0, 30.0};
  EXPECT_NEAR(u.log_density(12.0), -std::log(29.0), 1e-15);
  EXPECT_EQ(u.log_density(30.5), neg_inf);
}

TEST(Transform, RoundTripAndJacobian) {
  PriorSpec prior;
  const Theta t{0.7, 12.0, 0.1};
  const Theta back = from_unconstrained(to_unconstrained(t, prior), prior);
  EXPECT_NEAR(back.sigma2, t.sigma2, 1e-14);
  EXPECT_NEAR(back.phi, t.phi, 1e-12);
  EXPECT_NEAR(back.tau2, t.tau2, 1e-14);
  // finite-difference determinant of the diagonal map
  const Eigen::Vector3d e = to_unconstrained(t, prior);
  const double h = 1e-6;
  double logdet = 0.0;
  for (int k = 0; k < 3; ++k) {
    Eigen::Vector3d a = e, b = e;
    a(k) += h;
    b(k) -= h;
    const Theta ta = from_unconstrained(a, prior), tb = from_unconstrained(b, prior);
    const double da[3] = {ta.sigma2, ta.phi, ta.tau2}, db[3] = {tb.sigma2, tb.phi, tb.tau2};
    logdet += std::log((da[k] - db[k]) / (2 * h));
  }
  EXPECT_NEAR(log_jacobian(t, prior), logdet, 1e-6);
}

TEST(LogTargetFull, MatchesDenseEvaluation) {
  auto model = oracle_model(12, 3, 1, 5);
  const Theta t{1.3, 7.0, 0.4};
  const Eigen::Vector2d beta(0.5, -1.0);
  Eigen::VectorXd w = Eigen::VectorXd::LinSpaced(12, -1.0, 1.0);
  const Eigen::MatrixXd ct = dense_ctilde(model, t);
  const Eigen::VectorXd r = model.y - model.X * beta - w;
  const double ref = log_prior_theta(t, model.prior) - 6.0 * std::log(t.tau2) - 0.5 * oracle::logdet_sym(ct) -
                     0.5 * r.squaredNorm() / t.tau2 - 0.5 * w.dot(ct.inverse() * w);
  auto f = model.nngp->factors(model.covariance(t));
  EXPECT_NEAR(log_target_theta_full(t, beta, w, model, f), ref, 1e-9);

  // zero residual and zero w
  model.y = model.X * beta;
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(12);
  EXPECT_NEAR(log_target_theta_full(t, beta, zero, model, f),
              log_prior_theta(t, model.prior) - 6.0 * std::log(t.tau2) - 0.5 * oracle::logdet_sym(ct), 1e-9);
  EXPECT_EQ(log_target_theta_full({1.0, 31.0, 0.1}, beta, zero, model, f), neg_inf);
  EXPECT_EQ(log_target_theta_full({1.0, 0.5, 0.1}, beta, zero, model, f), neg_inf);
}

TEST(GibbsBetaFull, InterceptOnly) {
  auto model = oracle_model(12, 3, 1, 8, 1);
  const Eigen::VectorXd w = Eigen::VectorXd::LinSpaced(12, 0.0, 1.1);
  auto c = beta_conditional_full(model, w, {1.0, 5.0, 1.0});
  EXPECT_NEAR(c.mean(0), (model.y - w).mean(), 1e-12);
  EXPECT_NEAR(c.covariance(0, 0), 1.0 / 12.0, 1e-12);
  auto c0 = beta_conditional_full(model, model.y, {1.0, 5.0, 1.0});
  EXPECT_NEAR(c0.mean(0), 0.0, 1e-12);
}

TEST(GibbsBetaFull, DenseFormulaAndDraws) {
  auto model = oracle_model(12, 3, 1, 9);
  model.prior.beta_mean = Eigen::Vector2d(1.0, 2.0);
  model.prior.beta_precision = Eigen::Matrix2d::Identity() * 0.5;
  const Theta t{1.0, 5.0, 0.3};
  const Eigen::VectorXd w = Eigen::VectorXd::LinSpaced(12, -0.5, 0.5);
  const Eigen::MatrixXd b = (0.5 * Eigen::Matrix2d::Identity() + model.X.transpose() * model.X / t.tau2).inverse();
  const Eigen::VectorXd m = b * (0.5 * Eigen::Vector2d(1.0, 2.0) + model.X.transpose() * (model.y - w) / t.tau2);
  auto c = beta_conditional_full(model, w, t);
  EXPECT_LT((c.mean - m).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((c.covariance - b).cwiseAbs().maxCoeff(), 1e-12);

  std::mt19937_64 rng(2);
  const int draws = 40000;
  Eigen::Vector2d s = Eigen::Vector2d::Zero();
  Eigen::Matrix2d ss = Eigen::Matrix2d::Zero();
  for (int k = 0; k < draws; ++k) {
    const Eigen::VectorXd d = gibbs_beta_full(model, w, t, rng);
    s += d;
    ss += d * d.transpose();
  }
  s /= draws;
  ss = ss / draws - s * s.transpose();
  for (int j = 0; j < 2; ++j) {
    EXPECT_NEAR(s(j), m(j), 4.0 * std::sqrt(b(j, j) / draws));
    EXPECT_NEAR(ss(j, j), b(j, j), 4.0 * b(j, j) * std::sqrt(2.0 / draws));
  }
}

TEST(GibbsBetaFull, RankDeficientDesign) {
  auto model = oracle_model(12, 3, 1, 9);
  model.X.col(1) = model.X.col(0);
  std::mt19937_64 rng(1);
  try {
    gibbs_beta_full(model, Eigen::VectorXd::Zero(12), {1.0, 5.0, 1.0}, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "design matrix rank deficient");
  }
}

TEST(GibbsWFull, MeanAndCovarianceMatchDense) {
  auto model = oracle_model(12, 3, 1, 11);
  const Theta t{1.0, 4.0, 0.5};
  const Eigen::Vector2d beta(0.2, 0.7);
  auto q = model.nngp->precision(model.covariance(t));
  const Eigen::MatrixXd p = q.dense() + Eigen::MatrixXd::Identity(12, 12) / t.tau2;
  const Eigen::MatrixXd cov = p.inverse();
  const Eigen::VectorXd mean = cov * (model.y - model.X * beta) / t.tau2;
  EXPECT_LT((w_conditional_mean(model, beta, t, q) - mean).cwiseAbs().maxCoeff(), 1e-9);

  LatentPosterior lp(model.nngp->assembler());
  lp.factor(q, t.tau2);
  std::mt19937_64 rng(5);
  const int draws = 100000;
  Eigen::VectorXd s = Eigen::VectorXd::Zero(12);
  Eigen::MatrixXd ss = Eigen::MatrixXd::Zero(12, 12);
  const Eigen::VectorXd r = model.y - model.X * beta;
  for (int k = 0; k < draws; ++k) {
    const Eigen::VectorXd d = lp.draw(r, rng) - mean;
    s += d;
    ss.noalias() += d * d.transpose();
  }
  ss /= draws;
  for (int i = 0; i < 12; ++i) {
    EXPECT_NEAR(s(i) / draws, 0.0, 4.0 * std::sqrt(cov(i, i) / draws));
    for (int j = 0; j < 12; ++j)
      EXPECT_NEAR(ss(i, j), cov(i, j), 4.0 * std::sqrt((cov(i, i) * cov(j, j) + cov(i, j) * cov(i, j)) / draws));
  }
}

TEST(GibbsWFull, HugeNoiseFallsBackToPrior) {
  auto model = oracle_model(12, 3, 1, 12);
  const Theta t{1.0, 4.0, 1e8};
  auto q = model.nngp->precision(model.covariance(t));
  const Eigen::MatrixXd prior_cov = q.dense().inverse();
  LatentPosterior lp(model.nngp->assembler());
  lp.factor(q, t.tau2);
  std::mt19937_64 rng(6);
  const int draws = 50000;
  Eigen::MatrixXd ss = Eigen::MatrixXd::Zero(12, 12);
  for (int k = 0; k < draws; ++k) {
    const Eigen::VectorXd d = lp.draw(model.y, rng);
    ss.noalias() += d * d.transpose();
  }
  ss /= draws;
  for (int i = 0; i < 12; ++i)
    EXPECT_NEAR(ss(i, i), prior_cov(i, i), 4.0 * prior_cov(i, i) * std::sqrt(2.0 / draws));
}

TEST(CollapsedTarget, MatchesDenseMarginal) {
  auto model = oracle_model(12, 3, 1, 14);
  const Theta t{0.9, 6.0, 0.3};
  const Eigen::Vector2d beta(0.1, 0.4);
  const Eigen::MatrixXd sigma = dense_ctilde(model, t) + t.tau2 * Eigen::MatrixXd::Identity(12, 12);
  const Eigen::VectorXd r = model.y - model.X * beta;
  // log N(y; X beta, Sigma) without the 2 pi term
  const double ref = log_prior_theta(t, model.prior) - 0.5 * oracle::logdet_sym(sigma) - 0.5 * r.dot(sigma.inverse() * r);
  EXPECT_NEAR(log_target_theta_collapsed(t, beta, model), ref, 1e-9);
  EXPECT_EQ(log_target_theta_collapsed({1.0, 40.0, 0.3}, beta, model), neg_inf);

  // y = X beta: quadratic term vanishes
  model.y = model.X * beta;
  CollapsedState s(model);
  ASSERT_TRUE(s.set_theta({0.9, 6.0, 1e-6}));
  EXPECT_NEAR(s.quadratic(beta), 0.0, 1e-9);
}

TEST(CollapsedTarget, WoodburyIdentity) {
  auto model = oracle_model(12, 3, 1, 15);
  const Theta t{1.1, 5.0, 0.2};
  auto q = model.nngp->precision(model.covariance(t));
  LatentPosterior lp(model.nngp->assembler());
  lp.factor(q, t.tau2);
  const Eigen::MatrixXd dinv = Eigen::MatrixXd::Identity(12, 12) / t.tau2;
  const Eigen::MatrixXd sigma_inv = dinv - dinv * lp.cholesky().solve(dinv);
  const Eigen::MatrixXd sigma = q.dense().inverse() + t.tau2 * Eigen::MatrixXd::Identity(12, 12);
  EXPECT_LT((sigma_inv * sigma - Eigen::MatrixXd::Identity(12, 12)).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(CollapsedBeta, ConjugateClosedForm) {
  auto model = oracle_model(12, 3, 1, 16);
  const Theta t{1.0, 5.0, 0.25};
  const Eigen::MatrixXd si = (dense_ctilde(model, t) + t.tau2 * Eigen::MatrixXd::Identity(12, 12)).inverse();
  const Eigen::MatrixXd b = (model.X.transpose() * si * model.X).inverse();
  const Eigen::VectorXd m = b * model.X.transpose() * si * model.y;
  auto c = beta_conditional_collapsed(model, t);
  EXPECT_LT((c.mean - m).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT((c.covariance - b).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(AdaptiveProposal, RecoversGaussianTargetMoments) {
  // random-walk Metropolis with the sampler's proposal on a correlated 3-d Gaussian
  Eigen::Matrix3d cov;
  cov << 1.0, 0.6, 0.0, 0.6, 2.0, -0.3, 0.0, -0.3, 0.5;
  const Eigen::Matrix3d prec = cov.inverse();
  const Eigen::Vector3d mu(1.0, -2.0, 0.5);
  auto logp = [&](const Eigen::Vector3d& x) { return -0.5 * (x - mu).dot(prec * (x - mu)); };

  const int burn = 4000, keep = 200000;
  detail::AdaptiveProposal prop({0.1, 0.1, 0.1}, true, burn);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u;
  Eigen::Vector3d x = Eigen::Vector3d::Zero();
  Eigen::Vector3d s = Eigen::Vector3d::Zero();
  Eigen::Matrix3d ss = Eigen::Matrix3d::Zero();
  std::vector<double> first;
  long acc = 0;
  for (int it = 0; it < burn + keep; ++it) {
    const Eigen::Vector3d y = prop.propose(x, rng);
    const bool a = std::log(u(rng)) < logp(y) - logp(x);
    if (a) x = y;
    prop.update(it, x, a);
    if (it >= burn) {
      acc += a;
      s += x;
      ss += x * x.transpose();
      first.push_back(x(0));
    }
  }
  s /= keep;
  ss = ss / keep - s * s.transpose();
  const double se0 = batch_means_se(first);
  EXPECT_NEAR(s(0), mu(0), 4.0 * se0);
  EXPECT_NEAR(s(1), mu(1), 0.1);
  EXPECT_NEAR(s(2), mu(2), 0.05);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(ss(i, i), cov(i, i), 0.1 * cov(i, i));
  const double rate = static_cast<double>(acc) / keep;
  EXPECT_GT(rate, 0.15);
  EXPECT_LT(rate, 0.45);
}

TEST(Mcmc, ConfigValidation) {
  auto model = oracle_model(20, 2, 1, 3);
  McmcConfig cfg;
  cfg.n_iter = 100;
  cfg.burn_in = 100;
  try {
    run_collapsed_mcmc(model, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "no retained draws");
  }
  cfg.burn_in = 200;
  EXPECT_THROW(run_full_mcmc(model, cfg), Error);
}

TEST(Mcmc, DeterministicAndDrawCounts) {
  auto model = oracle_model(40, 4, 2, 4);
  McmcConfig cfg;
  cfg.n_iter = 230;
  cfg.burn_in = 100;
  cfg.thin = 4;
  cfg.n_chains = 2;
  cfg.w_every = 3;
  for (auto sampler : {Sampler::Full, Sampler::Collapsed}) {
    auto a = run_mcmc(model, cfg, sampler);
    auto b = run_mcmc(model, cfg, sampler);
    ASSERT_EQ(a.chains.size(), 2u);
    for (int c = 0; c < 2; ++c) {
      const auto& da = a.chains[static_cast<std::size_t>(c)].draws;
      const auto& db = b.chains[static_cast<std::size_t>(c)].draws;
      ASSERT_EQ(da.size(), 32u);
      for (std::size_t k = 0; k < da.size(); ++k) {
        EXPECT_EQ(da[k].beta, db[k].beta);
        EXPECT_EQ(da[k].theta.phi, db[k].theta.phi);
        EXPECT_EQ(da[k].w.size() > 0, k % 3 == 0);
      }
    }
    // chains use different streams
    EXPECT_NE(a.chains[0].draws.back().beta, a.chains[1].draws.back().beta);
  }
}

TEST(Mcmc, ChainThreadsDoNotChangeDraws) {
  auto model = oracle_model(30, 3, 1, 6);
  McmcConfig cfg;
  cfg.n_iter = 120;
  cfg.burn_in = 60;
  cfg.n_chains = 3;
  auto a = run_collapsed_mcmc(model, cfg);
  cfg.chain_threads = 3;
  cfg.block_threads = 2;
  auto b = run_collapsed_mcmc(model, cfg);
  for (int c = 0; c < 3; ++c)
    EXPECT_EQ(a.chains[static_cast<std::size_t>(c)].draws.back().beta, b.chains[static_cast<std::size_t>(c)].draws.back().beta);
}

TEST(Mcmc, SmallRecoveryBothSamplers) {
  const Theta truth{1.0, 12.0, 0.1};
  auto model = simulated_model(200, 8, 2, 21, truth, {1.0, 5.0});
  McmcConfig cfg;
  cfg.n_iter = 1500;
  cfg.burn_in = 500;
  cfg.n_chains = 2;
  cfg.w_every = 0;
  for (auto sampler : {Sampler::Full, Sampler::Collapsed}) {
    auto s = run_mcmc(model, cfg, sampler);
    auto sum = summarize(s);
    ASSERT_EQ(sum.size(), 5u);
    EXPECT_NEAR(sum[1].mean, 5.0, 0.15) << to_string(sampler);
    EXPECT_GT(sum[4].mean, 0.01);
    EXPECT_LT(sum[4].mean, 0.5);
    for (const auto& c : s.chains) {
      EXPECT_GT(c.acceptance, 0.05);
      EXPECT_LT(c.acceptance, 0.7);
    }
    auto m = metrics(s, model);
    EXPECT_TRUE(std::isfinite(m.lpml));
    EXPECT_TRUE(std::isfinite(m.waic));
    EXPECT_GT(m.p_waic, 0.0);
    EXPECT_LT(m.rmse, 1.0);
  }
}

TEST(Metrics, PerfectFitAndSingleDraw) {
  const Eigen::VectorXd y = Eigen::VectorXd::LinSpaced(5, -1.0, 1.0);
  EXPECT_EQ(rmse(y, y), 0.0);
  EXPECT_NEAR(rmse(y + Eigen::VectorXd::Constant(5, 0.5), y), 0.5, 1e-15);

  Eigen::MatrixXd ll(1, 5);
  ll << -1.0, -2.0, -0.5, -3.0, -1.5;
  PointwiseStats st;
  st.add(ll.row(0).transpose());
  EXPECT_EQ(st.p_waic(), 0.0);
  EXPECT_NEAR(waic(ll), -2.0 * ll.sum(), 1e-12);
  EXPECT_NEAR(lpml(ll), ll.sum(), 1e-12);
}

TEST(Metrics, LpmlHarmonicMeanByHand) {
  // y_i scored under N(mu_s, 1) for three posterior draws of mu
  const double y[5] = {0.3, -1.2, 0.8, 2.0, -0.1};
  const double mu[3] = {0.0, 0.2, -0.1};
  Eigen::MatrixXd ll(3, 5);
  for (int s = 0; s < 3; ++s)
    for (int i = 0; i < 5; ++i) ll(s, i) = -0.5 * std::log(2 * std::numbers::pi) - 0.5 * (y[i] - mu[s]) * (y[i] - mu[s]);
  double ref = 0.0, lppd = 0.0, pw = 0.0;
  for (int i = 0; i < 5; ++i) {
    double inv = 0.0, lik = 0.0, m = 0.0, v = 0.0;
    for (int s = 0; s < 3; ++s) {
      inv += 1.0 / std::exp(ll(s, i));
      lik += std::exp(ll(s, i));
      m += ll(s, i);
    }
    m /= 3;
    for (int s = 0; s < 3; ++s) v += (ll(s, i) - m) * (ll(s, i) - m);
    ref += std::log(1.0 / (inv / 3.0));
    lppd += std::log(lik / 3.0);
    pw += v / 2.0;
  }
  EXPECT_NEAR(lpml(ll), ref, 1e-10);
  EXPECT_NEAR(waic(ll), -2.0 * (lppd - pw), 1e-10);
}

TEST(Metrics, MergeMatchesSequential) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> z;
  PointwiseStats all, a, b;
  for (int s = 0; s < 30; ++s) {
    Eigen::VectorXd l(4);
    for (int i = 0; i < 4; ++i) l(i) = z(rng) - 2.0;
    all.add(l);
    (s < 11 ? a : b).add(l);
  }
  a.merge(b);
  EXPECT_NEAR(a.lpml(), all.lpml(), 1e-10);
  EXPECT_NEAR(a.waic(), all.waic(), 1e-10);
}

TEST(Summaries, BatchMeansAndQuantiles) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> z;
  std::vector<double> x(40000);
  for (auto& v : x) v = z(rng);
  EXPECT_NEAR(batch_means_se(x), 1.0 / std::sqrt(40000.0), 0.002);
  EXPECT_NEAR(quantile({1, 2, 3, 4, 5}, 0.5), 3.0, 0.0);
  EXPECT_NEAR(quantile({1, 2, 3, 4, 5}, 0.025), 1.1, 1e-12);
}
