// Simulate a small geostatistical data set, fit it with the collapsed sampler on a
// 3x3 block design, and predict at a few new sites.

#include <cstdio>
#include <random>

#include "bnngp/bnngp.hpp"

using namespace bnngp;

int main() {
  const int n = 300;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> z;

  std::vector<Coord> sites;
  for (int i = 0; i < n; ++i) sites.push_back({u(rng), u(rng)});
  const LocationSet locs(sites);

  // truth: beta = (1, 5), sigma2 = 1, phi = 12, tau2 = 0.1
  const CovarianceSpec truth(CovarianceKind::Exponential, 1.0, 12.0);
  const Eigen::VectorXd w = simulate_full_gp(truth, locs, 11).values;
  Eigen::MatrixXd X(n, 2);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = z(rng);
    y(i) = X(i, 0) + 5.0 * X(i, 1) + w(i) + std::sqrt(0.1) * z(rng);
  }

  const ModelSpec model = make_model(locs, X, y, CovarianceKind::Exponential, Blocking::regular(3, 3), 2);
  std::printf("KLD(full GP || block-NNGP) at the truth: %.4f\n",
              kld_vs_full_gp(model.nngp->precision(truth), truth, locs));

  McmcConfig cfg;
  cfg.n_iter = 2000;
  cfg.burn_in = 500;
  cfg.n_chains = 2;
  cfg.w_every = 10;
  const PosteriorSamples post = run_collapsed_mcmc(model, cfg);

  std::printf("%-8s %9s %9s %9s\n", "param", "mean", "q025", "q975");
  for (const auto& s : summarize(post)) std::printf("%-8s %9.4f %9.4f %9.4f\n", s.name.c_str(), s.mean, s.q025, s.q975);
  const FitMetrics m = metrics(post, model);
  std::printf("LPML %.2f  WAIC %.2f  RMSE %.4f  (%.1f s)\n", m.lpml, m.waic, m.rmse, post.seconds);

  const std::vector<Coord> new_sites{{0.25, 0.25}, {0.5, 0.5}, {0.9, 0.1}};
  Eigen::MatrixXd Xu(3, 2);
  Xu << 1, 0, 1, 1, 1, -1;
  for (const auto& p : predict_y(new_sites, Xu, post, model).sites)
    std::printf("y(%.2f, %.2f): mean %.3f  var %.3f\n", p.at.x, p.at.y, p.pred_mean, p.pred_var);
  return 0;
}
