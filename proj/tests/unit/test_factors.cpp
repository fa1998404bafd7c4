#include <gtest/gtest.h>

#include <numbers>
#include <set>

#include "bnngp/factors.hpp"
#include "support/dense_oracle.hpp"

using namespace bnngp;

namespace {

struct Setup {
  LocationSet locs;
  BlockPartition part;
  BlockGraph graph;
};

Setup make(int n, int m, int nb, unsigned seed, bool kd = true) {
  Setup s{oracle::uniform_locations(n, seed), {}, {}};
  if (kd) {
    s.part = kdtree_partition(s.locs, m);
  } else {
    auto [r, c] = grid_shape_for(m);
    s.part = regular_partition(s.locs, r, c);
  }
  s.graph = build_graph(s.part, nb);
  return s;
}

double rel_frobenius(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) { return (a - b).norm() / b.norm(); }

}  // namespace

TEST(BlockFactors, MatchConditionalMoments) {
  for (auto kind : {CovarianceKind::Exponential, CovarianceKind::Matern32}) {
    auto s = make(12, 3, 1, 5);
    CovarianceSpec spec(kind, 1.3, 4.0);
    const Eigen::MatrixXd c = oracle::dense_cov(spec, s.locs);
    auto f = compute_block_factors(spec, s.locs, s.part, s.graph);
    ASSERT_EQ(f.size(), 3);
    for (int k = 0; k < 3; ++k) {
      const auto& mem = s.part.members[static_cast<std::size_t>(k)];
      const auto cond = oracle::conditioning_of(s.part, s.graph, k);
      EXPECT_LT((f[k].F - oracle::conditional_cov(c, s.part, s.graph, k)).cwiseAbs().maxCoeff(), 1e-10);
      EXPECT_EQ(f[k].B.rows(), static_cast<Eigen::Index>(mem.size()));
      EXPECT_EQ(f[k].B.cols(), static_cast<Eigen::Index>(cond.size()));
      if (!cond.empty()) {
        const Eigen::MatrixXd b = oracle::sub(c, mem, cond) * oracle::sub(c, cond, cond).inverse();
        EXPECT_LT((f[k].B - b).cwiseAbs().maxCoeff(), 1e-10);
      }
      EXPECT_EQ(f[k].F, f[k].F.transpose());
    }
  }
}

TEST(Precision, MatchesProductOfConditionals) {
  for (unsigned seed = 0; seed < 6; ++seed) {
    for (int nb : {1, 2, 3}) {
      auto s = make(30, 5, nb, seed, seed % 2 == 0);
      CovarianceSpec spec(CovarianceKind::Exponential, 1.0, 3.0 + seed);
      const Eigen::MatrixXd c = oracle::dense_cov(spec, s.locs);
      BlockNngp model(s.locs, s.part, s.graph);
      auto q = model.precision(spec);
      const Eigen::MatrixXd qd = q.dense();
      const Eigen::MatrixXd ref = oracle::conditional_product_precision(c, s.part, s.graph);
      EXPECT_LT((qd - ref).cwiseAbs().maxCoeff(), 1e-9 * ref.cwiseAbs().maxCoeff());
      EXPECT_NEAR(q.log_det, oracle::logdet_sym(qd), 1e-9 * std::max(1.0, std::abs(q.log_det)));
      EXPECT_GT(oracle::min_eigenvalue(qd), 0.0);
    }
  }
}

TEST(Precision, SingleBlockIsExactInverse) {
  auto s = make(40, 1, 2, 8);
  CovarianceSpec spec(CovarianceKind::Exponential, 2.0, 6.0);
  const Eigen::MatrixXd c = oracle::dense_cov(spec, s.locs);
  BlockNngp model(s.locs, s.part, s.graph);
  EXPECT_LT(rel_frobenius(model.precision(spec).dense(), c.inverse()), 1e-8);
}

TEST(Precision, NoNeighborsIsBlockDiagonal) {
  auto s = make(36, 4, 0, 2, false);
  CovarianceSpec spec(CovarianceKind::Matern32, 1.0, 5.0);
  const Eigen::MatrixXd c = oracle::dense_cov(spec, s.locs);
  const Eigen::MatrixXd q = BlockNngp(s.locs, s.part, s.graph).precision(spec).dense();
  Eigen::MatrixXd ref = Eigen::MatrixXd::Zero(36, 36);
  for (const auto& m : s.part.members) {
    const Eigen::MatrixXd inv = oracle::sub(c, m, m).inverse();
    for (std::size_t a = 0; a < m.size(); ++a)
      for (std::size_t b = 0; b < m.size(); ++b) ref(m[a], m[b]) = inv(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
  }
  EXPECT_LT((q - ref).cwiseAbs().maxCoeff(), 1e-9 * ref.cwiseAbs().maxCoeff());
}

TEST(Precision, SingletonBlocksReduceToNngp) {
  for (int nb : {1, 3, 6}) {
    auto s = make(50, 50, nb, 13);
    CovarianceSpec spec(CovarianceKind::Exponential, 1.0, 7.0);
    std::vector<int> order;
    for (const auto& m : s.part.members) order.push_back(m[0]);
    const Eigen::MatrixXd ref = oracle::nngp_precision(spec, s.locs, order, nb);
    const Eigen::MatrixXd q = BlockNngp(s.locs, s.part, s.graph).precision(spec).dense();
    EXPECT_LT((q - ref).cwiseAbs().maxCoeff(), 1e-9 * ref.cwiseAbs().maxCoeff());
  }
}

TEST(Precision, SparsityFollowsBlockCliques) {
  auto s = make(200, 16, 2, 4, false);
  CovarianceSpec spec(CovarianceKind::Exponential, 1.0, 4.0);
  BlockNngp model(s.locs, s.part, s.graph);
  const Eigen::MatrixXd q = model.precision(spec).dense();
  // (i, j) may be non-zero only if both lie in some block together with its conditioning set
  std::set<std::pair<int, int>> allowed;
  for (int k = 0; k < s.part.size(); ++k) {
    auto g = s.part.members[static_cast<std::size_t>(k)];
    auto c = oracle::conditioning_of(s.part, s.graph, k);
    g.insert(g.end(), c.begin(), c.end());
    for (int a : g)
      for (int b : g) allowed.emplace(a, b);
  }
  int outside = 0;
  for (int i = 0; i < 200; ++i)
    for (int j = 0; j < 200; ++j)
      if (q(i, j) != 0.0 && !allowed.count({i, j})) ++outside;
  EXPECT_EQ(outside, 0);
  // within-block entries are always structurally present
  for (const auto& m : s.part.members)
    for (int a : m)
      for (int b : m) EXPECT_NE(q(a, b), 0.0);
}

TEST(Precision, QuadraticFormsAgree) {
  auto s = make(120, 9, 2, 17);
  CovarianceSpec spec(CovarianceKind::Matern32, 1.5, 5.0);
  BlockNngp model(s.locs, s.part, s.graph);
  auto f = model.factors(spec);
  auto q = model.precision(f);
  const Eigen::VectorXd w = Eigen::VectorXd::LinSpaced(120, -2.0, 3.0).array().sin();
  const double dense = w.dot(q.dense() * w);
  EXPECT_NEAR(quadratic_form(q, w), dense, 1e-10 * std::abs(dense));
  EXPECT_NEAR(quadratic_form(f, w), dense, 1e-10 * std::abs(dense));
  EXPECT_THROW(quadratic_form(q, Eigen::VectorXd::Zero(3)), Error);
  EXPECT_NEAR(q.log_det, -log_det_ctilde(f), 0.0);
}

TEST(Precision, LogDensityMatchesDenseGaussian) {
  auto s = make(25, 4, 2, 21);
  CovarianceSpec spec(CovarianceKind::Exponential, 1.2, 6.0);
  BlockNngp model(s.locs, s.part, s.graph);
  auto f = model.factors(spec);
  const Eigen::MatrixXd qd = model.precision(f).dense();
  const Eigen::VectorXd w = Eigen::VectorXd::LinSpaced(25, -1.0, 2.0).array().cos();
  const double ref = -0.5 * (25.0 * std::log(2.0 * std::numbers::pi) - oracle::logdet_sym(qd) + w.dot(qd * w));
  EXPECT_NEAR(log_density(f, w), ref, 1e-9);
  EXPECT_NEAR(log_density(model.precision(f), w), ref, 1e-9);
}

TEST(Precision, ThreadCountDoesNotChangeResult) {
  auto s = make(300, 25, 3, 23);
  CovarianceSpec spec(CovarianceKind::Exponential, 1.0, 9.0);
  BlockNngp model(s.locs, s.part, s.graph);
  auto q1 = model.precision(spec, 1);
  auto q4 = model.precision(spec, 4);
  EXPECT_EQ(Eigen::MatrixXd(q1.lower), Eigen::MatrixXd(q4.lower));
  EXPECT_EQ(q1.log_det, q4.log_det);
}

TEST(Precision, SparseFactorizationAgreesWithBlockLogDet) {
  auto s = make(500, 30, 4, 31);
  CovarianceSpec spec(CovarianceKind::Exponential, 1.0, 12.0);
  auto q = BlockNngp(s.locs, s.part, s.graph).precision(spec);
  EXPECT_NEAR(sparse_cholesky(q.lower).log_det(), q.log_det, 1e-8 * std::abs(q.log_det));
  EXPECT_NEAR(sparse_cholesky(q.lower, Ordering::Natural).log_det(), q.log_det, 1e-8 * std::abs(q.log_det));
}

TEST(Precision, MismatchedFactorsRejected) {
  auto a = make(40, 4, 1, 1);
  auto b = make(40, 5, 1, 1);
  CovarianceSpec spec(CovarianceKind::Exponential, 1.0, 3.0);
  BlockNngp ma(a.locs, a.part, a.graph), mb(b.locs, b.part, b.graph);
  EXPECT_THROW(ma.precision(mb.factors(spec)), Error);
}
