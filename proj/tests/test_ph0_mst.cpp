#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace topo;

namespace {

DistanceMatrix line(std::vector<double> xs) {
  const std::size_t n = xs.size();
  return oracle::from_points(RealMatrix(n, 1, std::move(xs)));
}

}  // namespace

TEST(Mst, CollinearThreePoints) {
  const auto d = line({0, 1, 3});
  EXPECT_EQ(minimum_spanning_edges(d).lengths, (std::vector<double>{1, 2}));
  EXPECT_EQ(sorted_lengths(kruskal_mst(d)).lengths, (std::vector<double>{1, 2}));
  EXPECT_EQ(ph0_lifetimes(d).lengths, (std::vector<double>{1, 2}));
  EXPECT_EQ(e_alpha(minimum_spanning_edges(d), 1.0), 3.0);
}

TEST(Mst, DuplicatedPointGivesZeroLengths) {
  const auto d = line({2.5, 2.5, 2.5, 2.5});
  const auto edges = minimum_spanning_edges(d);
  EXPECT_EQ(edges.lengths, std::vector<double>(3, 0.0));
  EXPECT_EQ(e_alpha(edges, 1.0), 0.0);
  EXPECT_EQ(e_alpha(edges, 0.0), 0.0);
}

TEST(Mst, PrimKruskalAndScanAgreeOnPlanarPoints) {
  std::mt19937_64 gen(20);
  for (int trial = 0; trial < 20; ++trial) {
    const auto d = oracle::from_points(oracle::random_points(20, 2, gen));
    const auto prim = minimum_spanning_edges(d);
    const auto kruskal = sorted_lengths(kruskal_mst(d));
    EXPECT_EQ(prim, kruskal);
    EXPECT_NEAR(prim.total(), oracle::mst_scan(d), 1e-12);
  }
}

TEST(Mst, PrimKruskalAgreeExactlyWithTies) {
  std::mt19937_64 gen(21);
  for (int trial = 0; trial < 50; ++trial) {
    const auto d = oracle::random_integer_matrix(3 + trial % 30, gen, 3);
    EXPECT_EQ(minimum_spanning_edges(d), sorted_lengths(kruskal_mst(d)));
  }
}

TEST(Mst, PrimOnSubsetMatchesSubmatrix) {
  std::mt19937_64 gen(22);
  const auto d = oracle::from_points(oracle::random_points(30, 3, gen));
  const std::vector<std::size_t> subset{1, 4, 5, 9, 13, 20, 29};
  EXPECT_EQ(sorted_lengths(prim_mst(d, subset)), minimum_spanning_edges(d.submatrix(subset)));
}

TEST(Mst, KruskalTreeIsStableUnderTies) {
  // all edges equal: stable order picks (0,1), (0,2), (0,3)
  DistanceMatrix d(4, MetricTag{});
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = i + 1; j < 4; ++j) d.set(i, j, 1.0);
  }
  const auto tree = kruskal_mst(d);
  ASSERT_EQ(tree.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(tree[k].u, 0u);
    EXPECT_EQ(tree[k].v, k + 1);
  }
}

TEST(Ph0, TwoClustersHaveOneLongLifetime) {
  // clusters {0,0.5,1} and {11,11.5,12}: closest cross pair 1 -> 11 at 10
  const auto d = line({0, 0.5, 1, 11, 11.5, 12});
  const auto life = ph0_lifetimes(d);
  EXPECT_EQ(std::count(life.lengths.begin(), life.lengths.end(), 10.0), 1);
  EXPECT_EQ(std::count_if(life.lengths.begin(), life.lengths.end(), [](double v) { return v > 1.0; }), 1);
  EXPECT_EQ(life, minimum_spanning_edges(d));
}

TEST(Ph0, SinglePointIsEmpty) {
  EXPECT_TRUE(ph0_lifetimes(line({4})).lengths.empty());
  EXPECT_TRUE(minimum_spanning_edges(line({4})).lengths.empty());
}

TEST(Ph0, EqualsMstWithTies) {
  std::mt19937_64 gen(23);
  for (int trial = 0; trial < 100; ++trial) {
    const auto d = oracle::random_integer_matrix(1 + trial % 50, gen, 4);
    EXPECT_EQ(ph0_lifetimes(d), minimum_spanning_edges(d));
  }
}

TEST(EAlpha, Examples) {
  MstEdges one{{2.5}};
  for (double a : {0.0, 0.5, 1.0, 2.0}) EXPECT_DOUBLE_EQ(e_alpha(one, a), std::pow(2.5, a));
  // alpha = 0 counts distinct points minus one after dropping zero edges
  const auto d = line({0, 0, 1, 3, 3, 3, 7});
  EXPECT_EQ(e_alpha(minimum_spanning_edges(d), 0.0), 3.0);
  try {
    e_alpha(one, -0.1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NegativeAlpha);
  }
}

TEST(EAlpha, DuplicatesDoNotChangeValue) {
  std::mt19937_64 gen(24);
  const auto pts = oracle::random_points(15, 2, gen);
  RealMatrix doubled(30, 2);
  for (std::size_t i = 0; i < 30; ++i) {
    doubled(i, 0) = pts(i % 15, 0);
    doubled(i, 1) = pts(i % 15, 1);
  }
  const auto a = minimum_spanning_edges(oracle::from_points(pts));
  const auto b = minimum_spanning_edges(oracle::from_points(doubled));
  for (double alpha : {0.0, 0.5, 1.0, 1.5}) EXPECT_NEAR(e_alpha(a, alpha), e_alpha(b, alpha), 1e-12);
}

TEST(EAlpha, MonotoneUnderInclusionForAlphaAtMostOne) {
  std::mt19937_64 gen(25);
  for (int trial = 0; trial < 20; ++trial) {
    const auto d = oracle::from_points(oracle::random_points(25, 2, gen));
    std::vector<std::size_t> all(25);
    std::iota(all.begin(), all.end(), 0);
    std::shuffle(all.begin(), all.end(), gen);
    std::vector<std::size_t> big(all.begin(), all.begin() + 18), small(all.begin(), all.begin() + 9);
    for (double alpha : {0.0, 0.25, 0.5, 1.0}) {
      const double eb = e_alpha(sorted_lengths(prim_mst(d, big)), alpha);
      const double es = e_alpha(sorted_lengths(prim_mst(d, small)), alpha);
      EXPECT_GE(eb + 1e-12, es);
    }
  }
}

TEST(PhDim, SmallCloudRecoversDimension) {
  // 2000 points of a unit square with a reduced protocol keeps this test fast;
  // the full 5000-point protocol runs in the acceptance suite.
  const RealMatrix pts = sample_point_matrix(SynthSpec::cube(2, 2000, 3));
  const auto d = oracle::from_points(pts);
  PhDimProtocol protocol;
  protocol.min_size = 500;
  const auto est = estimate_ph_dim(d, protocol);
  EXPECT_FALSE(est.degenerate);
  EXPECT_NEAR(est.dim, 2.0, 0.3);
  EXPECT_EQ(est.sample_sizes.front(), 500u);
  EXPECT_EQ(est.sample_sizes.size(), 9u);
  EXPECT_GT(est.r_squared, 0.9);
}

TEST(PhDim, IdenticalPointsAreDegenerate) {
  const auto d = line(std::vector<double>(40, 1.0));
  PhDimProtocol protocol;
  protocol.min_size = 10;
  const auto est = estimate_ph_dim(d, protocol);
  EXPECT_TRUE(est.degenerate);
  EXPECT_TRUE(std::isinf(est.dim));
}

TEST(PhDim, DeterministicUnderSeed) {
  const auto d = oracle::from_points(sample_point_matrix(SynthSpec::circle(400, 1)));
  PhDimProtocol protocol;
  protocol.min_size = 100;
  protocol.seed = 9;
  const auto a = estimate_ph_dim(d, protocol);
  const auto b = estimate_ph_dim(d, protocol);
  EXPECT_EQ(a.dim, b.dim);
  EXPECT_EQ(a.log_e1_values, b.log_e1_values);
}

TEST(PhDim, TooFewPoints) {
  const auto d = line({0, 1, 2, 3});
  try {
    estimate_ph_dim(d, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidArgument);
  }
}

TEST(PhDim, LeastSquaresOnExactLine) {
  const std::vector<double> x{0, 1, 2, 3}, y{1, 3, 5, 7};
  const auto fit = detail::least_squares(x, y);
  EXPECT_DOUBLE_EQ(fit.slope, 2.0);
  EXPECT_DOUBLE_EQ(fit.intercept, 1.0);
  EXPECT_DOUBLE_EQ(fit.r_squared, 1.0);
  EXPECT_EQ(detail::median({3, 1, 2}), 2.0);
  EXPECT_EQ(detail::median({4, 1, 2, 3}), 2.5);
}
