#include <algorithm>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace topo;

namespace {

LossTrajectory losses_from(std::size_t rows, std::size_t cols, std::vector<double> values) {
  LossTrajectory l;
  l.matrix = RealMatrix(rows, cols, std::move(values));
  l.sample_ids.resize(cols);
  std::iota(l.sample_ids.begin(), l.sample_ids.end(), 0);
  return l;
}

LossTrajectory random_losses(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = u(gen);
  return losses_from(rows, cols, std::move(v));
}

BinaryLossTrajectory binary_from(std::size_t rows, std::size_t cols, std::vector<unsigned char> values) {
  BinaryLossTrajectory l;
  l.matrix = BinaryMatrix(rows, cols, std::move(values));
  l.sample_ids.resize(cols);
  std::iota(l.sample_ids.begin(), l.sample_ids.end(), 0);
  return l;
}

}  // namespace

TEST(Euclidean, ThreeFourFive) {
  const auto d = euclidean_distance_matrix(RealMatrix(2, 2, std::vector<double>{0, 0, 3, 4}));
  EXPECT_EQ(d(0, 1), 5.0);
  EXPECT_EQ(d(1, 0), 5.0);
  EXPECT_EQ(d.metric().label(), "euclidean");
}

TEST(Euclidean, IdenticalRowsAreZero) {
  const auto d = euclidean_distance_matrix(RealMatrix(2, 3, std::vector<double>{1, 2, 3, 1, 2, 3}));
  EXPECT_EQ(d(0, 1), 0.0);
}

TEST(Euclidean, MatchesScalarOracleAndInvariants) {
  std::mt19937_64 gen(5);
  const auto pts = oracle::random_points(40, 7, gen, -3, 3);
  const auto d = euclidean_distance_matrix(pts);
  for (std::size_t i = 0; i < 40; ++i) {
    for (std::size_t j = 0; j < 40; ++j) EXPECT_NEAR(d(i, j), oracle::euclid(pts.row(i), pts.row(j)), 1e-12);
  }
  EXPECT_TRUE(check_distance_matrix(d, 1000, 1, 1e-9).empty());
}

TEST(Euclidean, BudgetOverflowWithoutProjection) {
  const RealMatrix big(10, 1000, 0.5);
  try {
    euclidean_distance_matrix(big, std::nullopt, 1000);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DimensionOverflow);
  }
  ProjectionSpec proj;
  proj.target_dim = 20;
  EXPECT_NO_THROW(euclidean_distance_matrix(big, proj, 1 << 20));
}

TEST(Euclidean, ProjectionIsDeterministicUnderSeed) {
  std::mt19937_64 gen(9);
  const auto pts = oracle::random_points(20, 500, gen);
  ProjectionSpec a;
  a.seed = 4;
  const auto d1 = euclidean_distance_matrix(pts, a);
  const auto d2 = euclidean_distance_matrix(pts, a);
  EXPECT_EQ(d1.entries(), d2.entries());
  a.seed = 5;
  EXPECT_NE(euclidean_distance_matrix(pts, a).entries(), d1.entries());
}

TEST(Euclidean, AutoProjectionDimension) {
  // ceil(8 ln 200 / 0.05^2)
  EXPECT_EQ(auto_projection_dim(200, 0.05), static_cast<std::size_t>(std::ceil(8.0 * std::log(200.0) / 0.0025)));
}

TEST(Euclidean, ProjectionPreservesNormsOnAverage) {
  // E||Px||^2 = ||x||^2 for the scaled sparse sign map
  std::mt19937_64 gen(2);
  std::normal_distribution<double> n01;
  RealMatrix x(1, 4000);
  for (auto& v : x.data) v = n01(gen);
  double norm2 = 0.0;
  for (double v : x.data) norm2 += v * v;
  double mean_ratio = 0.0;
  const int trials = 40;
  for (int t = 0; t < trials; ++t) {
    ProjectionSpec spec;
    spec.seed = static_cast<std::uint64_t>(t);
    spec.target_dim = 400;
    const auto y = sparse_random_projection(x, spec);
    double p2 = 0.0;
    for (double v : y.data) p2 += v * v;
    mean_ratio += p2 / norm2 / trials;
  }
  EXPECT_NEAR(mean_ratio, 1.0, 0.05);
}

TEST(RhoP, HandExample) {
  const auto l = losses_from(2, 2, {0.2, 0.4, 0.4, 0.8});
  const auto d = loss_pseudometric_matrix(l, 1.0);
  EXPECT_NEAR(d(0, 1), 0.3, 1e-15);
  EXPECT_NEAR(d(0, 1), oracle::rho_p(l.matrix.row(0), l.matrix.row(1), 1.0), 1e-15);
  EXPECT_EQ(d.n_reference(), 2u);
  EXPECT_EQ(d.metric().label(), "rho_p1");
}

TEST(RhoP, IdenticalRowsAndConstantShift) {
  auto l = losses_from(3, 5, {0.1, 0.2, 0.3, 0.4, 0.5, 0.1, 0.2, 0.3, 0.4, 0.5, 0.35, 0.45, 0.55, 0.65, 0.75});
  const auto d = loss_pseudometric_matrix(l, 1.0);
  EXPECT_EQ(d(0, 1), 0.0);
  EXPECT_NEAR(d(0, 2), 0.25, 1e-15);
}

TEST(RhoP, MatchesScalarLoopOnRandom5x7) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto l = random_losses(5, 7, seed);
    for (double p : {1.0, 1.5, 2.0, 3.0}) {
      const auto d = loss_pseudometric_matrix(l, p);
      for (std::size_t i = 0; i < 5; ++i) {
        for (std::size_t j = 0; j < 5; ++j) {
          EXPECT_NEAR(d(i, j), oracle::rho_p(l.matrix.row(i), l.matrix.row(j), p), 1e-12);
        }
      }
    }
  }
}

TEST(RhoP, InvariantsOnRandomInput) {
  const auto l = random_losses(60, 30, 7);
  for (double p : {1.0, 2.0, 4.0}) EXPECT_TRUE(check_distance_matrix(loss_pseudometric_matrix(l, p), 1000, 3).empty());
}

TEST(RhoP, OrderBelowOneIsInvalid) {
  const auto l = random_losses(3, 3, 1);
  try {
    loss_pseudometric_matrix(l, 0.5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidOrder);
  }
}

TEST(ZeroOne, Examples) {
  const auto one = zero_one_pseudometric_matrix(binary_from(2, 4, {1, 0, 0, 0, 0, 0, 0, 0}));
  EXPECT_EQ(one(0, 1), 0.25);
  const auto same = zero_one_pseudometric_matrix(binary_from(2, 3, {1, 0, 1, 1, 0, 1}));
  EXPECT_EQ(same(0, 1), 0.0);
  std::vector<unsigned char> comp(2 * 130);
  for (std::size_t k = 0; k < 130; ++k) {
    comp[k] = k % 3 == 0;
    comp[130 + k] = !comp[k];
  }
  EXPECT_EQ(zero_one_pseudometric_matrix(binary_from(2, 130, comp))(0, 1), 1.0);
}

TEST(ZeroOne, AgreesWithRhoOneOnBinaryMatrix) {
  std::mt19937_64 gen(11);
  std::bernoulli_distribution coin(0.3);
  const std::size_t rows = 25, cols = 200;
  std::vector<unsigned char> bits(rows * cols);
  for (auto& b : bits) b = coin(gen);
  const auto z = zero_one_pseudometric_matrix(binary_from(rows, cols, bits));
  const auto r = loss_pseudometric_matrix(losses_from(rows, cols, std::vector<double>(bits.begin(), bits.end())), 1.0);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < rows; ++j) {
      EXPECT_NEAR(z(i, j), r(i, j), 1e-15);
      EXPECT_GE(z(i, j), 0.0);
      EXPECT_LE(z(i, j), 1.0);
    }
  }
  EXPECT_TRUE(check_distance_matrix(z, 1000, 2).empty());
}

TEST(Subsample, FullFractionIsIdentity) {
  const auto l = random_losses(4, 10, 3);
  const auto s = subsample_columns(l, 1.0, 9);
  EXPECT_EQ(s, l);
}

TEST(Subsample, TenthOfThousandIsReproducible) {
  const auto l = random_losses(3, 1000, 4);
  const auto a = subsample_columns(l, 0.1, 21);
  const auto b = subsample_columns(l, 0.1, 21);
  EXPECT_EQ(a.matrix.cols, 100u);
  EXPECT_EQ(a.sample_ids.size(), 100u);
  EXPECT_EQ(a, b);
  EXPECT_TRUE(std::is_sorted(a.sample_ids.begin(), a.sample_ids.end()));
  EXPECT_NEAR(a.subsample_fraction, 0.1, 1e-15);
  // retained values are the original columns
  for (std::size_t c = 0; c < 100; ++c) {
    EXPECT_EQ(a.matrix(1, c), l.matrix(1, static_cast<std::size_t>(a.sample_ids[c])));
  }
  EXPECT_NE(subsample_columns(l, 0.1, 22).sample_ids, a.sample_ids);
}

TEST(Subsample, EmptySelection) {
  const auto l = random_losses(2, 5, 4);
  try {
    subsample_columns(l, 0.01, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::EmptySelection);
  }
}

TEST(DistanceCache, RoundTrip) {
  const auto dir = oracle::scratch("dcache");
  const auto d = loss_pseudometric_matrix(random_losses(12, 9, 8), 2.0);
  DistanceCacheInfo info;
  info.seed = 3;
  info.subsample_fraction = 0.1;
  write_distance_cache(dir, d, info);
  EXPECT_TRUE(std::filesystem::exists(dir / "dist_rho_p2.f64"));
  EXPECT_TRUE(std::filesystem::exists(dir / "dist_rho_p2.json"));
  const auto back = read_distance_cache(distance_cache_path(dir, d.metric()));
  EXPECT_EQ(back.entries(), d.entries());
  EXPECT_EQ(back.metric(), d.metric());
  EXPECT_EQ(back.n_reference(), 9u);
}

TEST(DistanceMatrix, CheckerFindsProblems) {
  DistanceMatrix d(3, MetricTag{});
  d.set(0, 1, 1.0);
  d.set(1, 2, 1.0);
  d.set(0, 2, 5.0);
  EXPECT_FALSE(check_distance_matrix(d, 500, 0).empty());
  EXPECT_FALSE(check_distance_matrix(DistanceMatrix::from_entries(2, {0, 1, 2, 0}, MetricTag{})).empty());
}
