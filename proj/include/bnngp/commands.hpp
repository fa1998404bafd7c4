#pragma once

// Experiment orchestration behind the command-line tool. Each command reads a flat
// key=value configuration and writes its tables into the directory named by `out`.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "bnngp/blockgraph.hpp"
#include "bnngp/covariance.hpp"
#include "bnngp/error.hpp"
#include "bnngp/factors.hpp"
#include "bnngp/geometry.hpp"
#include "bnngp/inference.hpp"
#include "bnngp/io.hpp"
#include "bnngp/predict.hpp"
#include "bnngp/process.hpp"

namespace bnngp::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

struct KeyHelp {
  std::string name;
  std::string help;
};

// ---------------------------------------------------------------------------
// settings shared across commands

inline const std::vector<KeyHelp>& common_keys() {
  static const std::vector<KeyHelp> keys{
      {"out", "output directory"},
      {"seed", "random seed"},
      {"kernel", "covariance kernel: exponential | matern32"},
  };
  return keys;
}

inline const std::vector<KeyHelp>& blocking_keys() {
  static const std::vector<KeyHelp> keys{
      {"blocking", "block design: regular | kdtree"},
      {"blocks", "number of blocks M (regular grids use the nearest rows x cols shape)"},
      {"rows", "regular grid rows (with cols, overrides blocks)"},
      {"cols", "regular grid columns"},
      {"nb", "number of neighbor blocks"},
  };
  return keys;
}

inline const std::vector<KeyHelp>& location_keys() {
  static const std::vector<KeyHelp> keys{
      {"data", "CSV with x,y columns to take locations from"},
      {"n", "number of uniform locations on the unit square when no data is given"},
      {"dense_cap", "largest n allowed for dense covariance work"},
  };
  return keys;
}

inline std::vector<KeyHelp> join_keys(std::initializer_list<std::vector<KeyHelp>> parts) {
  std::vector<KeyHelp> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

/// Settings understood by each command, in help order.
inline std::vector<KeyHelp> command_keys(const std::string& command) {
  if (command == "simulate")
    return join_keys({common_keys(),
                      blocking_keys(),
                      {{"n", "number of training locations"},
                       {"n_test", "number of extra held-out locations"},
                       {"sigma2", "marginal variance"},
                       {"phi", "spatial decay"},
                       {"tau2", "nugget variance"},
                       {"beta", "regression coefficients, intercept first"},
                       {"approx", "draw w from the block-NNGP instead of the full GP"},
                       {"dense_cap", "largest n allowed for the full GP draw"}}});
  if (command == "fit")
    return join_keys({common_keys(),
                      blocking_keys(),
                      {{"data", "training CSV (x,y,covariates...,response)"},
                       {"test", "held-out CSV used for RMSP"},
                       {"sampler", "collapsed | full"},
                       {"n_iter", "iterations per chain"},
                       {"burn_in", "burn-in iterations per chain"},
                       {"chains", "number of chains"},
                       {"thin", "keep every k-th post burn-in draw"},
                       {"w_thin", "keep w for every k-th retained draw"},
                       {"adapt", "adapt the proposal during burn-in"},
                       {"proposal_scale", "initial random-walk scales for log sigma2, logit phi, log tau2"},
                       {"intercept", "prepend an intercept column to the covariates"},
                       {"prior_phi", "uniform prior bounds a,b for phi"},
                       {"prior_sigma2", "inverse gamma shape,scale for sigma2"},
                       {"prior_tau2", "inverse gamma shape,scale for tau2"},
                       {"threads", "chains run concurrently"},
                       {"block_threads", "threads for per-block factor work"}}});
  if (command == "predict")
    return {{"fit", "directory written by fit"},
            {"sites", "CSV of prediction sites (x,y,covariates..., optional response)"},
            {"out", "output directory"},
            {"threads", "threads over site groups"}};
  if (command == "kld")
    return join_keys({common_keys(),
                      location_keys(),
                      {{"blocking", "block design: regular | kdtree"},
                       {"blocks", "list of block counts M"},
                       {"nb", "list of neighbor-block counts"},
                       {"sigma2", "marginal variance"},
                       {"phi", "spatial decay"},
                       {"threads", "threads for per-block factor work"}}});
  if (command == "corrcurve")
    return join_keys({common_keys(),
                      location_keys(),
                      blocking_keys(),
                      {{"sigma2", "marginal variance"},
                       {"phi", "spatial decay"},
                       {"bins", "number of distance bins"},
                       {"max_pairs", "pair budget before anchors are subsampled"}}});
  if (command == "pattern")
    return join_keys({{{"out", "output directory"}, {"seed", "random seed"}},
                      location_keys(),
                      blocking_keys(),
                      {{"order", "index order of the exported pattern: block | data"}}});
  throw Error("unknown command '" + command + "'");
}

inline void check_config(const std::string& command, const io::Config& cfg) {
  std::vector<std::string> allowed;
  for (const auto& k : command_keys(command)) allowed.push_back(k.name);
  cfg.check_keys(allowed);
}

inline std::uint64_t seed_of(const io::Config& cfg) {
  const long s = cfg.get_int("seed", 1);
  if (s < 0) throw Error("seed must be non-negative");
  return static_cast<std::uint64_t>(s);
}

inline fs::path out_dir(const io::Config& cfg) { return cfg.get("out", "."); }

inline CovarianceKind kernel_of(const io::Config& cfg) { return parse_covariance_kind(cfg.get("kernel", "exponential")); }

inline int positive_int(const io::Config& cfg, const std::string& key, long fallback) {
  const long v = cfg.get_int(key, fallback);
  if (v < 1) throw Error(key + " must be positive");
  return static_cast<int>(v);
}

inline int non_negative_int(const io::Config& cfg, const std::string& key, long fallback) {
  const long v = cfg.get_int(key, fallback);
  if (v < 0) throw Error(key + " must be non-negative");
  return static_cast<int>(v);
}

inline Blocking blocking_of(const io::Config& cfg, int blocks) {
  if (blocks < 1) throw Error("blocks must be positive");
  const auto kind = cfg.get("blocking", "regular");
  if (kind == "regular") {
    if (cfg.has("rows") || cfg.has("cols")) return Blocking::regular(positive_int(cfg, "rows", 1), positive_int(cfg, "cols", 1));
    return Blocking::regular(blocks);
  }
  if (kind == "kdtree") return Blocking::kdtree(blocks);
  throw Error("unknown blocking '" + kind + "'");
}

inline Blocking blocking_of(const io::Config& cfg) { return blocking_of(cfg, positive_int(cfg, "blocks", 16)); }

/// n points uniform on the unit square.
inline std::vector<Coord> uniform_sites(int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Coord> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double x = u(rng);
    out.push_back({x, u(rng)});
  }
  return out;
}

/// Locations from `data` when given, else n seeded uniform points.
inline LocationSet locations_of(const io::Config& cfg) {
  if (cfg.has("data")) return LocationSet(io::load_csv(cfg.require("data")).coords);
  std::mt19937_64 rng(seed_of(cfg));
  return LocationSet(uniform_sites(positive_int(cfg, "n", 500), rng));
}

inline double elapsed(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline void write_json(const fs::path& path, const json& j) { io::CsvWriter::write_text(path, j.dump(2) + "\n"); }

inline void write_blocks(const fs::path& path, const LocationSet& locs, const BlockPartition& part) {
  io::CsvWriter w({"index", "x", "y", "block"});
  for (int i = 0; i < locs.size(); ++i)
    w.row_strings({io::int_field(i), io::format_double(locs[i].x), io::format_double(locs[i].y),
                   io::int_field(part.block_of[static_cast<std::size_t>(i)])});
  w.save(path);
}

inline void write_graph(const fs::path& path, const BlockGraph& graph) {
  io::CsvWriter w({"block_from", "block_to"});
  for (auto [from, to] : graph.edges()) w.row_strings({io::int_field(from), io::int_field(to)});
  w.save(path);
}

// ---------------------------------------------------------------------------
// simulate

/// Y = X beta + w + eps at n + n_test uniform locations, X = [1, x_1..] with
/// x ~ N(0,1). The first n rows go to data.csv, the rest to test.csv.
inline void cmd_simulate(const io::Config& cfg) {
  check_config("simulate", cfg);
  const long n_train = cfg.get_int("n", 500);
  if (n_train < 1) throw Error("n must be positive");
  const int n_test = non_negative_int(cfg, "n_test", 0);
  const int n = static_cast<int>(n_train) + n_test;
  const auto seed = seed_of(cfg);
  const auto beta_list = cfg.get_doubles("beta", {1.0, 5.0});
  if (beta_list.empty()) throw Error("beta needs at least an intercept");
  const Eigen::VectorXd beta = Eigen::Map<const Eigen::VectorXd>(beta_list.data(), static_cast<Eigen::Index>(beta_list.size()));
  const CovarianceSpec spec(kernel_of(cfg), cfg.get_double("sigma2", 1.0), cfg.get_double("phi", 12.0));
  const double tau2 = cfg.get_double("tau2", 0.1);
  if (!(tau2 >= 0.0)) throw Error("tau2 must be non-negative");
  const bool approx = cfg.get_bool("approx", false);
  const int cap = positive_int(cfg, "dense_cap", default_dense_cap);
  if (!approx && n > cap)
    throw Error("n = " + std::to_string(n) + " exceeds the dense cap of " + std::to_string(cap) +
                "; set approx=true to draw from the block-NNGP");

  std::mt19937_64 rng(seed);
  const LocationSet locs(uniform_sites(n, rng));
  const auto k = beta.size() - 1;
  Eigen::MatrixXd X(n, beta.size());
  std::normal_distribution<double> z;
  for (int i = 0; i < n; ++i) {
    X(i, 0) = 1.0;
    for (Eigen::Index c = 1; c <= k; ++c) X(i, c) = z(rng);
  }
  const Eigen::VectorXd normals = standard_normals(n, rng);
  Eigen::VectorXd w;
  json source;
  if (approx) {
    const Blocking b = blocking_of(cfg);
    const int nb = non_negative_int(cfg, "nb", 2);
    const auto part = make_partition(locs, b);
    const BlockNngp model(locs, part, build_graph(part, nb));
    w = block_nngp_from_normals(model.factors(spec), normals);
    source = {{"process", "block_nngp"}, {"blocking", cfg.get("blocking", "regular")}, {"blocks", model.partition().size()},
              {"nb", nb}};
  } else {
    w = full_gp_from_normals(spec, locs, normals, cap);
    source = {{"process", "full_gp"}};
  }
  Eigen::VectorXd y = X * beta + w;
  for (int i = 0; i < n; ++i) y(i) += std::sqrt(tau2) * z(rng);

  auto table = [&](int from, int to) {
    io::Dataset ds;
    ds.has_response_column = true;
    for (Eigen::Index c = 1; c <= k; ++c) ds.covariate_names.push_back("x" + std::to_string(c));
    ds.covariates.resize(to - from, k);
    ds.response.resize(to - from);
    for (int i = from; i < to; ++i) {
      ds.coords.push_back(locs[i]);
      ds.covariates.row(i - from) = X.row(i).tail(k);
      ds.response(i - from) = y(i);
    }
    return ds;
  };
  const fs::path out = out_dir(cfg);
  io::write_dataset(out / "data.csv", table(0, static_cast<int>(n_train)));
  if (n_test > 0) io::write_dataset(out / "test.csv", table(static_cast<int>(n_train), n));
  io::CsvWriter lat({"x", "y", "w"});
  for (int i = 0; i < n; ++i) lat.row({locs[i].x, locs[i].y, w(i)});
  lat.save(out / "latent.csv");

  json truth;
  truth["seed"] = seed;
  truth["n"] = n_train;
  truth["n_test"] = n_test;
  truth["kernel"] = std::string(to_string(spec.kind));
  truth["beta"] = beta_list;
  truth["sigma2"] = spec.sigma2;
  truth["phi"] = spec.phi;
  truth["tau2"] = tau2;
  truth["w"] = source;
  write_json(out / "truth.json", truth);
}

// ---------------------------------------------------------------------------
// fit

/// Everything a fit needs besides the sampler settings.
struct FitInputs {
  io::Dataset data;
  std::vector<int> rows;  // data rows used for training
  bool intercept = true;
  ModelSpec model;
};

inline std::pair<double, double> pair_of(const io::Config& cfg, const std::string& key, std::pair<double, double> fallback) {
  const auto v = cfg.get_doubles(key, {fallback.first, fallback.second});
  if (v.size() != 2) throw Error("setting '" + key + "' expects two numbers");
  return {v[0], v[1]};
}

inline PriorSpec prior_of(const io::Config& cfg) {
  PriorSpec p;
  const auto [pa, pb] = pair_of(cfg, "prior_phi", {p.phi.a, p.phi.b});
  const auto [sa, sb] = pair_of(cfg, "prior_sigma2", {p.sigma2.a, p.sigma2.b});
  const auto [ta, tb] = pair_of(cfg, "prior_tau2", {p.tau2.a, p.tau2.b});
  p.phi = {pa, pb};
  p.sigma2 = {sa, sb};
  p.tau2 = {ta, tb};
  p.validate();
  return p;
}

inline FitInputs fit_inputs(const io::Config& cfg) {
  FitInputs in;
  in.data = io::load_csv(cfg.require("data"));
  if (!in.data.has_response_column) throw Error("response column missing");
  in.rows = in.data.training_rows();
  if (in.rows.empty()) throw Error("no rows with a response");
  in.intercept = cfg.get_bool("intercept", true);
  in.model = make_model(LocationSet(in.data.coords_of(in.rows)), in.data.design(in.rows, in.intercept),
                        in.data.response_of(in.rows), kernel_of(cfg), blocking_of(cfg), non_negative_int(cfg, "nb", 2),
                        prior_of(cfg));
  return in;
}

inline McmcConfig mcmc_of(const io::Config& cfg) {
  McmcConfig m;
  m.n_iter = positive_int(cfg, "n_iter", m.n_iter);
  m.burn_in = non_negative_int(cfg, "burn_in", m.burn_in);
  m.n_chains = positive_int(cfg, "chains", m.n_chains);
  m.thin = positive_int(cfg, "thin", m.thin);
  m.w_every = non_negative_int(cfg, "w_thin", 10);
  m.adapt = cfg.get_bool("adapt", m.adapt);
  m.seed = seed_of(cfg);
  m.chain_threads = positive_int(cfg, "threads", 1);
  m.block_threads = positive_int(cfg, "block_threads", 1);
  const auto s = cfg.get_doubles("proposal_scale", {m.proposal_scale[0], m.proposal_scale[1], m.proposal_scale[2]});
  if (s.size() != 3) throw Error("proposal_scale expects three numbers");
  m.proposal_scale = {s[0], s[1], s[2]};
  m.validate();
  return m;
}

/// Prediction sites for a fit: covariates must carry the same names as the training data.
inline Eigen::MatrixXd site_design(const io::Dataset& sites, const io::Dataset& train, bool intercept) {
  if (sites.covariate_names != train.covariate_names) throw Error("missing covariates for prediction sites");
  std::vector<int> all(static_cast<std::size_t>(sites.size()));
  for (int i = 0; i < sites.size(); ++i) all[static_cast<std::size_t>(i)] = i;
  return sites.design(all, intercept);
}

inline void write_predictions(const fs::path& path, const PredictionResult& pred) {
  io::CsvWriter w({"x", "y", "pred_mean", "pred_var", "w_mean", "flag"});
  for (const auto& s : pred.sites)
    w.row_strings({io::format_double(s.at.x), io::format_double(s.at.y), io::format_double(s.pred_mean),
                   io::format_double(s.pred_var), io::format_double(s.w_mean), s.outside ? "1" : "0"});
  w.save(path);
}

/// RMSP over the sites that carry a response; nullopt when none do.
inline std::optional<double> holdout_rmsp(const PredictionResult& pred, const io::Dataset& sites) {
  const auto rows = sites.training_rows();
  if (rows.empty()) return std::nullopt;
  Eigen::VectorXd m(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    m(static_cast<Eigen::Index>(r)) = pred.sites[static_cast<std::size_t>(rows[r])].pred_mean;
  return rmse(m, sites.response_of(rows));
}

/// Sites a fit predicts at: prediction-only rows of the data, then the test file.
inline io::Dataset fit_prediction_sites(const io::Config& cfg, const io::Dataset& data) {
  io::Dataset sites;
  sites.covariate_names = data.covariate_names;
  sites.has_response_column = true;
  std::vector<Eigen::RowVectorXd> cov;
  std::vector<double> resp;
  for (int i : data.prediction_rows()) {
    sites.coords.push_back(data.coords[static_cast<std::size_t>(i)]);
    cov.push_back(data.covariates.row(i));
    resp.push_back(std::nan(""));
  }
  if (cfg.has("test")) {
    const auto test = io::load_csv(cfg.require("test"));
    if (test.covariate_names != data.covariate_names) throw Error("missing covariates for prediction sites");
    for (int i = 0; i < test.size(); ++i) {
      sites.coords.push_back(test.coords[static_cast<std::size_t>(i)]);
      cov.push_back(test.covariates.row(i));
      resp.push_back(test.observed(i) ? test.response(i) : std::nan(""));
    }
  }
  sites.covariates.resize(static_cast<Eigen::Index>(cov.size()), static_cast<Eigen::Index>(data.covariate_names.size()));
  for (std::size_t r = 0; r < cov.size(); ++r) sites.covariates.row(static_cast<Eigen::Index>(r)) = cov[r];
  sites.response = Eigen::Map<Eigen::VectorXd>(resp.data(), static_cast<Eigen::Index>(resp.size()));
  return sites;
}

inline void write_draws(const fs::path& dir, const PosteriorSamples& s, int n) {
  std::vector<std::string> header{"iter", "chain"};
  for (const auto& name : parameter_names(s.p)) header.push_back(name);
  io::CsvWriter draws(header);
  std::vector<std::string> wh{"iter", "chain"};
  for (int i = 0; i < n; ++i) wh.push_back("w_" + std::to_string(i));
  io::CsvWriter wd(wh);
  for (const auto& c : s.chains) {
    for (const auto& d : c.draws) {
      std::vector<std::string> f{io::int_field(d.iter), io::int_field(c.chain)};
      for (int k = 0; k < s.p + 3; ++k) f.push_back(io::format_double(parameter_value(d, k)));
      draws.row_strings(f);
      if (d.w.size()) {
        std::vector<std::string> g{io::int_field(d.iter), io::int_field(c.chain)};
        for (Eigen::Index i = 0; i < d.w.size(); ++i) g.push_back(io::format_double(d.w(i)));
        wd.row_strings(g);
      }
    }
  }
  draws.save(dir / "draws.csv");
  wd.save(dir / "w_draws.csv");
}

/// Rebuild retained draws from draws.csv and w_draws.csv.
inline PosteriorSamples read_draws(const fs::path& dir, int p, int n) {
  const auto draws = io::read_table(dir / "draws.csv");
  const auto wd = io::read_table(dir / "w_draws.csv");
  if (static_cast<int>(draws.header.size()) != p + 5) throw Error("draws.csv does not match the fitted model");
  if (static_cast<int>(wd.header.size()) != n + 2) throw Error("w_draws.csv does not match the fitted model");
  std::map<std::pair<int, int>, const std::vector<double>*> w_of;
  for (const auto& r : wd.rows) w_of[{static_cast<int>(r[1]), static_cast<int>(r[0])}] = &r;
  PosteriorSamples s;
  s.p = p;
  for (const auto& r : draws.rows) {
    const int chain = static_cast<int>(r[1]);
    if (chain < 0) throw Error("draws.csv has a negative chain index");
    while (static_cast<int>(s.chains.size()) <= chain) {
      ChainResult c;
      c.chain = static_cast<int>(s.chains.size());
      s.chains.push_back(std::move(c));
    }
    Draw d;
    d.iter = static_cast<int>(r[0]);
    d.beta = Eigen::Map<const Eigen::VectorXd>(r.data() + 2, p);
    d.theta = {r[static_cast<std::size_t>(p) + 2], r[static_cast<std::size_t>(p) + 3], r[static_cast<std::size_t>(p) + 4]};
    if (const auto it = w_of.find({chain, d.iter}); it != w_of.end())
      d.w = Eigen::Map<const Eigen::VectorXd>(it->second->data() + 2, n);
    s.chains[static_cast<std::size_t>(chain)].draws.push_back(std::move(d));
  }
  return s;
}

inline void cmd_fit(const io::Config& cfg) {
  check_config("fit", cfg);
  const auto t_total = std::chrono::steady_clock::now();
  const fs::path out = out_dir(cfg);
  const McmcConfig mcmc = mcmc_of(cfg);
  const Sampler sampler = parse_sampler(cfg.get("sampler", "collapsed"));

  const auto t_setup = std::chrono::steady_clock::now();
  const FitInputs in = fit_inputs(cfg);
  const double seconds_setup = elapsed(t_setup);
  const io::Dataset sites = fit_prediction_sites(cfg, in.data);

  const PosteriorSamples samples = run_mcmc(in.model, mcmc, sampler);
  FitMetrics fm = metrics(samples, in.model);

  double seconds_prediction = 0.0;
  if (sites.size() > 0) {
    const auto t_pred = std::chrono::steady_clock::now();
    const auto pred = predict_y(sites.coords, site_design(sites, in.data, in.intercept), samples, in.model,
                                {.threads = mcmc.chain_threads, .sample_seed = std::nullopt});
    seconds_prediction = elapsed(t_pred);
    fm.rmsp = holdout_rmsp(pred, sites);
    write_predictions(out / "predictions.csv", pred);
  }

  write_draws(out, samples, in.model.n());
  const auto& nngp = *in.model.nngp;
  write_blocks(out / "blocks.csv", nngp.locations(), nngp.partition());
  write_graph(out / "graph.csv", nngp.graph());

  io::Config resolved = cfg;
  resolved.set("data", fs::absolute(cfg.require("data")).string());
  if (cfg.has("test")) resolved.set("test", fs::absolute(cfg.require("test")).string());
  io::CsvWriter::write_text(out / "config.txt", resolved.str());

  json j;
  j["sampler"] = std::string(to_string(sampler));
  j["n"] = in.model.n();
  j["p"] = in.model.p();
  j["kernel"] = std::string(to_string(in.model.kind));
  j["blocks"] = nngp.partition().size();
  j["nb"] = non_negative_int(cfg, "nb", 2);
  j["chains"] = mcmc.n_chains;
  j["n_iter"] = mcmc.n_iter;
  j["burn_in"] = mcmc.burn_in;
  j["retained"] = samples.size();
  json params = json::object();
  for (const auto& ps : summarize(samples))
    params[ps.name] = {{"mean", ps.mean}, {"sd", ps.sd}, {"q025", ps.q025}, {"q975", ps.q975}, {"mc_se", ps.mc_se}};
  j["parameters"] = params;
  json acc = json::array();
  double seconds_factors = 0.0;
  for (const auto& c : samples.chains) {
    acc.push_back(c.acceptance);
    seconds_factors += c.seconds_factors;
  }
  j["acceptance"] = acc;
  j["criteria"] = {{"lpml", fm.lpml}, {"waic", fm.waic}, {"p_waic", fm.p_waic}, {"lppd", fm.lppd}, {"rmse", fm.rmse}};
  if (fm.rmsp) j["criteria"]["rmsp"] = *fm.rmsp;
  j["seconds"] = {{"setup", seconds_setup},
                  {"factors", seconds_factors},
                  {"sampling", samples.seconds},
                  {"prediction", seconds_prediction},
                  {"total", elapsed(t_total)}};
  write_json(out / "summary.json", j);
}

// ---------------------------------------------------------------------------
// predict

inline void cmd_predict(const io::Config& cfg) {
  check_config("predict", cfg);
  const fs::path fit_dir = cfg.require("fit");
  const io::Config fit_cfg = io::Config::load(fit_dir / "config.txt");
  const FitInputs in = fit_inputs(fit_cfg);
  const PosteriorSamples samples = read_draws(fit_dir, in.model.p(), in.model.n());
  const io::Dataset sites = io::load_csv(cfg.require("sites"));

  const auto t0 = std::chrono::steady_clock::now();
  const auto pred = predict_y(sites.coords, site_design(sites, in.data, in.intercept), samples, in.model,
                              {.threads = positive_int(cfg, "threads", 1), .sample_seed = std::nullopt});
  const double seconds = elapsed(t0);
  const fs::path out = out_dir(cfg);
  write_predictions(out / "predictions.csv", pred);

  json j;
  j["sites"] = sites.size();
  j["draws"] = pred.draws;
  int outside = 0;
  for (const auto& s : pred.sites) outside += s.outside ? 1 : 0;
  j["outside"] = outside;
  if (const auto r = holdout_rmsp(pred, sites)) j["rmsp"] = *r;
  j["seconds"] = {{"prediction", seconds}};
  write_json(out / "predict_summary.json", j);
}

// ---------------------------------------------------------------------------
// diagnostics

/// KL divergence of the block-NNGP from the full GP over a grid of M and nb.
inline void cmd_kld(const io::Config& cfg) {
  check_config("kld", cfg);
  const LocationSet locs = locations_of(cfg);
  const int cap = positive_int(cfg, "dense_cap", default_dense_cap);
  check_dense_cap(locs.size(), cap);
  const CovarianceSpec spec(kernel_of(cfg), cfg.get_double("sigma2", 1.0), cfg.get_double("phi", 12.0));
  const int threads = positive_int(cfg, "threads", 1);
  const auto ms = cfg.get_ints("blocks", {16, 25, 36, 64});
  const auto nbs = cfg.get_ints("nb", {2, 4});
  io::CsvWriter w({"M", "nb", "kld", "sqrt_kld"});
  for (long m : ms) {
    if (m < 1) throw Error("blocks must be positive");
    const auto part = make_partition(locs, blocking_of(cfg, static_cast<int>(m)));
    for (long nb : nbs) {
      if (nb < 0) throw Error("nb must be non-negative");
      const BlockNngp model(locs, part, build_graph(part, static_cast<int>(nb)));
      const double kld = kld_vs_full_gp(model.precision(spec, threads), spec, locs, cap);
      w.row_strings({io::int_field(m), io::int_field(nb), io::format_double(kld),
                     io::format_double(std::sqrt(std::max(0.0, kld)))});
    }
  }
  w.save(out_dir(cfg) / "kld.csv");
}

inline void cmd_corrcurve(const io::Config& cfg) {
  check_config("corrcurve", cfg);
  const LocationSet locs = locations_of(cfg);
  const CovarianceSpec spec(kernel_of(cfg), cfg.get_double("sigma2", 1.0), cfg.get_double("phi", 12.0));
  const auto part = make_partition(locs, blocking_of(cfg));
  const BlockNngp model(locs, part, build_graph(part, non_negative_int(cfg, "nb", 2)));
  CurveOptions opt;
  opt.bins = positive_int(cfg, "bins", opt.bins);
  opt.max_pairs = cfg.get_int("max_pairs", opt.max_pairs);
  if (opt.max_pairs < 1) throw Error("max_pairs must be positive");
  opt.seed = seed_of(cfg);
  opt.cap = positive_int(cfg, "dense_cap", default_dense_cap);
  io::CsvWriter w({"dist", "true_corr", "approx_corr"});
  for (const auto& p : empirical_correlation_curve(model, spec, opt)) w.row({p.dist, p.true_corr, p.approx_corr});
  w.save(out_dir(cfg) / "corrcurve.csv");
}

/// Nonzero (row, col) entries of the precision, both triangles. order=block
/// renumbers locations block by block, order=data keeps input order.
inline void cmd_pattern(const io::Config& cfg) {
  check_config("pattern", cfg);
  const LocationSet locs = locations_of(cfg);
  const auto part = make_partition(locs, blocking_of(cfg));
  const BlockNngp model(locs, part, build_graph(part, non_negative_int(cfg, "nb", 2)));
  const auto order = cfg.get("order", "block");
  std::vector<int> pos(static_cast<std::size_t>(locs.size()));
  if (order == "block") {
    int next = 0;
    for (const auto& mem : part.members)
      for (int i : mem) pos[static_cast<std::size_t>(i)] = next++;
  } else if (order == "data") {
    for (int i = 0; i < locs.size(); ++i) pos[static_cast<std::size_t>(i)] = i;
  } else {
    throw Error("unknown order '" + order + "'");
  }
  std::vector<std::pair<int, int>> entries;
  const auto& pat = model.assembler().pattern();
  for (int j = 0; j < pat.outerSize(); ++j) {
    for (SparseMatrix::InnerIterator it(pat, j); it; ++it) {
      const int r = pos[static_cast<std::size_t>(it.row())], c = pos[static_cast<std::size_t>(j)];
      entries.emplace_back(r, c);
      if (r != c) entries.emplace_back(c, r);
    }
  }
  std::sort(entries.begin(), entries.end());
  io::CsvWriter w({"row", "col"});
  for (auto [r, c] : entries) w.row_strings({io::int_field(r), io::int_field(c)});
  const fs::path out = out_dir(cfg);
  w.save(out / "pattern.csv");
  write_blocks(out / "blocks.csv", locs, part);
  write_graph(out / "graph.csv", model.graph());
}

inline const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"simulate", "fit", "predict", "kld", "corrcurve", "pattern"};
  return names;
}

inline void run_command(const std::string& command, const io::Config& cfg) {
  if (command == "simulate") return cmd_simulate(cfg);
  if (command == "fit") return cmd_fit(cfg);
  if (command == "predict") return cmd_predict(cfg);
  if (command == "kld") return cmd_kld(cfg);
  if (command == "corrcurve") return cmd_corrcurve(cfg);
  if (command == "pattern") return cmd_pattern(cfg);
  throw Error("unknown command '" + command + "'");
}

}  // namespace bnngp::cli
