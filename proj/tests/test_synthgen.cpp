#include <random>
#include <set>

#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace topo;

TEST(Synth, CubeShapeAndRange) {
  const auto w = sample_points(SynthSpec::cube(2, 5000, 7));
  EXPECT_EQ(w.matrix.rows, 5000u);
  EXPECT_EQ(w.matrix.cols, 2u);
  for (double v : w.matrix.data) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Synth, DeterministicUnderSeed) {
  for (const auto& spec : {SynthSpec::cube(3, 100, 1), SynthSpec::circle(100, 2), SynthSpec::gaussian(4, 50, 3),
                           SynthSpec::sphere_surface(3, 80, 4), SynthSpec::two_cluster(10, 40, 5)}) {
    EXPECT_EQ(sample_point_matrix(spec), sample_point_matrix(spec));
    SynthSpec other = spec;
    other.seed += 1;
    EXPECT_NE(sample_point_matrix(spec), sample_point_matrix(other));
  }
}

TEST(Synth, DuplicatedHasExactlyBaseDistinctRows) {
  const auto w = sample_points(SynthSpec::duplicated(SynthSpec::cube(2, 10, 1), 3));
  EXPECT_EQ(w.matrix.rows, 30u);
  std::set<std::vector<double>> distinct;
  for (std::size_t i = 0; i < 30; ++i) distinct.insert({w.matrix.row(i).begin(), w.matrix.row(i).end()});
  EXPECT_EQ(distinct.size(), 10u);
}

TEST(Synth, SphereAndCircleLieOnUnitSphere) {
  for (const auto& spec : {SynthSpec::sphere_surface(4, 200, 1), SynthSpec::circle(200, 1)}) {
    const auto m = sample_point_matrix(spec);
    for (std::size_t i = 0; i < m.rows; ++i) {
      double r = 0.0;
      for (double v : m.row(i)) r += v * v;
      EXPECT_NEAR(r, 1.0, 1e-12);
    }
  }
}

TEST(Synth, GroundTruthDimensions) {
  EXPECT_EQ(ground_truth_dimension(SynthSpec::cube(3, 10)), 3.0);
  EXPECT_EQ(ground_truth_dimension(SynthSpec::circle(10)), 1.0);
  EXPECT_EQ(ground_truth_dimension(SynthSpec::sphere_surface(3, 10)), 2.0);
  EXPECT_EQ(ground_truth_dimension(SynthSpec::duplicated(SynthSpec::circle(5), 2)), 1.0);
}

TEST(Synth, TwoClusterHasOneLongMstEdge) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto d = oracle::from_points(sample_point_matrix(SynthSpec::two_cluster(10.0, 200, seed)));
    const auto lengths = minimum_spanning_edges(d).lengths;
    EXPECT_EQ(std::count_if(lengths.begin(), lengths.end(), [](double v) { return v >= 8.0; }), 1);
  }
  // small instance checked against exhaustive enumeration
  const auto small = oracle::from_points(sample_point_matrix(SynthSpec::two_cluster(10.0, 7, 3)));
  EXPECT_NEAR(minimum_spanning_edges(small).total(), brute_force_mst_cost(small), 1e-12);
}

TEST(Synth, InvalidSpecs) {
  auto kind = [](const SynthSpec& s) {
    try {
      sample_point_matrix(s);
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::InvalidArgument;
  };
  EXPECT_EQ(kind(SynthSpec::cube(0, 10)), ErrorKind::InvalidSpec);
  EXPECT_EQ(kind(SynthSpec::cube(2, 0)), ErrorKind::InvalidSpec);
  SynthSpec noisy = SynthSpec::cube(2, 10);
  noisy.noise = -1.0;
  EXPECT_EQ(kind(noisy), ErrorKind::InvalidSpec);
  SynthSpec dup;
  dup.shape = ShapeKind::Duplicated;
  EXPECT_EQ(kind(dup), ErrorKind::InvalidSpec);
  EXPECT_THROW(parse_shape_kind("torus"), Error);
}

TEST(Synth, BundleIsValid) {
  const auto b = synth_bundle(SynthSpec::circle(50, 1));
  EXPECT_TRUE(validate_bundle(b).empty());
  EXPECT_EQ(b.point_count(), 50u);
  EXPECT_EQ(b.extra["synth"]["ground_truth_dimension"].get<double>(), 1.0);
}

TEST(BruteForceMst, Examples) {
  RealMatrix line(3, 1, std::vector<double>{0, 1, 3});
  EXPECT_EQ(brute_force_mst_cost(oracle::from_points(line)), 3.0);
  DistanceMatrix two(2, MetricTag{});
  two.set(0, 1, 2.75);
  EXPECT_EQ(brute_force_mst_cost(two), 2.75);
  RealMatrix square(4, 2, std::vector<double>{0, 0, 1, 0, 1, 1, 0, 1});
  EXPECT_EQ(brute_force_mst_cost(oracle::from_points(square)), 3.0);
  EXPECT_EQ(brute_force_mst_cost(DistanceMatrix(1, MetricTag{})), 0.0);
}

TEST(BruteForceMst, TooLarge) {
  try {
    brute_force_mst_cost(DistanceMatrix(8, MetricTag{}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::TooLarge);
  }
}

TEST(BruteForceMst, AgreesWithScanOracle) {
  std::mt19937_64 gen(5);
  for (int t = 0; t < 40; ++t) {
    const auto d = oracle::random_integer_matrix(2 + t % 6, gen, 9);
    EXPECT_EQ(brute_force_mst_cost(d), oracle::mst_scan(d));
  }
}

TEST(Packing, Examples) {
  DistanceMatrix two(2, MetricTag{});
  two.set(0, 1, 3.0);
  EXPECT_EQ(greedy_packing_number(two, 1.0), 2u);
  EXPECT_EQ(greedy_covering_number(two, 1.0), 2u);
  EXPECT_EQ(exact_covering_number(two, 1.0), 2u);

  const DistanceMatrix dup(6, MetricTag{});
  for (double delta : {0.1, 1.0, 10.0}) {
    EXPECT_EQ(greedy_packing_number(dup, delta), 1u);
    EXPECT_EQ(greedy_covering_number(dup, delta), 1u);
  }

  std::vector<double> xs(10);
  std::iota(xs.begin(), xs.end(), 0.0);
  const auto line = oracle::from_points(RealMatrix(10, 1, xs));
  EXPECT_EQ(greedy_packing_number(line, 0.4), 10u);
  // unit-radius balls cover three consecutive points
  EXPECT_EQ(exact_covering_number(line, 1.0), 4u);
  // closed balls of radius 1 around 0 and 2 share the point 1
  EXPECT_EQ(greedy_packing_number(line, 1.0), 4u);
}

TEST(Packing, GreedyCoverIsAtLeastExact) {
  std::mt19937_64 gen(6);
  std::uniform_real_distribution<double> u(0.05, 0.6);
  for (int t = 0; t < 60; ++t) {
    const auto d = oracle::from_points(oracle::random_points(4 + t % 12, 2, gen));
    const double delta = u(gen);
    EXPECT_GE(greedy_covering_number(d, delta), exact_covering_number(d, delta));
  }
}
