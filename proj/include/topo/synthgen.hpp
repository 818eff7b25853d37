#pragma once

// Synthetic point clouds with known intrinsic dimension, plus brute-force
// oracles (MST by Pruefer enumeration, greedy packing, covering numbers).

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numbers>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "error.hpp"
#include "metrics.hpp"
#include "ph0_mst.hpp"
#include "rng.hpp"
#include "trajectory_store.hpp"

namespace topo {

enum class ShapeKind { Cube, SphereSurface, Circle, Gaussian, TwoCluster, Duplicated };

inline std::string to_string(ShapeKind k) {
  switch (k) {
    case ShapeKind::Cube: return "cube";
    case ShapeKind::SphereSurface: return "sphere_surface";
    case ShapeKind::Circle: return "circle";
    case ShapeKind::Gaussian: return "gaussian";
    case ShapeKind::TwoCluster: return "two_cluster";
    case ShapeKind::Duplicated: return "duplicated";
  }
  return "unknown";
}

inline ShapeKind parse_shape_kind(const std::string& text) {
  for (auto k : {ShapeKind::Cube, ShapeKind::SphereSurface, ShapeKind::Circle, ShapeKind::Gaussian,
                 ShapeKind::TwoCluster, ShapeKind::Duplicated}) {
    if (text == to_string(k)) return k;
  }
  if (text == "sphere") return ShapeKind::SphereSurface;
  if (text == "two-cluster") return ShapeKind::TwoCluster;
  throw Error(ErrorKind::InvalidSpec, "unknown shape '" + text + "'");
}

struct SynthSpec {
  ShapeKind shape = ShapeKind::Cube;
  std::size_t dim = 2;          ///< ambient dimension (circle: always 2)
  std::size_t n_points = 1000;  ///< duplicated: ignored, base->n_points * copies rows
  std::uint64_t seed = 0;
  double noise = 0.0;           ///< isotropic Gaussian jitter added to every coordinate
  double separation = 10.0;     ///< two_cluster: offset between cluster origins along axis 0
  std::shared_ptr<const SynthSpec> base;  ///< duplicated
  std::size_t copies = 2;                 ///< duplicated

  static SynthSpec make(ShapeKind shape, std::size_t dim, std::size_t n, std::uint64_t seed) {
    SynthSpec s;
    s.shape = shape;
    s.dim = dim;
    s.n_points = n;
    s.seed = seed;
    return s;
  }
  static SynthSpec cube(std::size_t dim, std::size_t n, std::uint64_t seed = 0) {
    return make(ShapeKind::Cube, dim, n, seed);
  }
  static SynthSpec sphere_surface(std::size_t dim, std::size_t n, std::uint64_t seed = 0) {
    return make(ShapeKind::SphereSurface, dim, n, seed);
  }
  static SynthSpec circle(std::size_t n, std::uint64_t seed = 0) { return make(ShapeKind::Circle, 2, n, seed); }
  static SynthSpec gaussian(std::size_t dim, std::size_t n, std::uint64_t seed = 0) {
    return make(ShapeKind::Gaussian, dim, n, seed);
  }
  static SynthSpec two_cluster(double sep, std::size_t n, std::uint64_t seed = 0, std::size_t dim = 2) {
    SynthSpec s = make(ShapeKind::TwoCluster, dim, n, seed);
    s.separation = sep;
    return s;
  }
  static SynthSpec duplicated(SynthSpec base, std::size_t copies) {
    SynthSpec s = make(ShapeKind::Duplicated, base.dim, base.n_points * copies, base.seed);
    s.base = std::make_shared<const SynthSpec>(std::move(base));
    s.copies = copies;
    return s;
  }
};

inline void check_spec(const SynthSpec& spec) {
  if (spec.shape == ShapeKind::Duplicated) {
    if (!spec.base) throw Error(ErrorKind::InvalidSpec, "duplicated shape needs a base spec");
    if (spec.copies < 1) throw Error(ErrorKind::InvalidSpec, "copies must be >= 1");
    check_spec(*spec.base);
    return;
  }
  if (spec.n_points < 1) throw Error(ErrorKind::InvalidSpec, "n_points must be >= 1");
  if (spec.dim < 1) throw Error(ErrorKind::InvalidSpec, "dim must be >= 1");
  if (spec.shape == ShapeKind::SphereSurface && spec.dim < 2) {
    throw Error(ErrorKind::InvalidSpec, "sphere_surface needs dim >= 2");
  }
  if (!(spec.noise >= 0.0) || !std::isfinite(spec.noise)) throw Error(ErrorKind::InvalidSpec, "noise must be >= 0");
  if (spec.shape == ShapeKind::TwoCluster && (!(spec.separation >= 0.0) || !std::isfinite(spec.separation))) {
    throw Error(ErrorKind::InvalidSpec, "separation must be >= 0");
  }
}

/// cube(d) -> d, circle -> 1, sphere_surface(d) -> d-1, gaussian(d) -> d,
/// two_cluster -> ambient dim, duplicated -> the base's dimension.
inline double ground_truth_dimension(const SynthSpec& spec) {
  switch (spec.shape) {
    case ShapeKind::Circle: return 1.0;
    case ShapeKind::SphereSurface: return static_cast<double>(spec.dim) - 1.0;
    case ShapeKind::Duplicated: return spec.base ? ground_truth_dimension(*spec.base) : 0.0;
    default: return static_cast<double>(spec.dim);
  }
}

inline std::size_t ambient_dimension(const SynthSpec& spec) {
  if (spec.shape == ShapeKind::Circle) return 2;
  if (spec.shape == ShapeKind::Duplicated && spec.base) return ambient_dimension(*spec.base);
  return spec.dim;
}

/// Points as rows. Deterministic under spec.seed.
inline RealMatrix sample_point_matrix(const SynthSpec& spec) {
  check_spec(spec);
  if (spec.shape == ShapeKind::Duplicated) {
    const RealMatrix base = sample_point_matrix(*spec.base);
    RealMatrix out(base.rows * spec.copies, base.cols);
    for (std::size_t c = 0; c < spec.copies; ++c) {
      std::copy(base.data.begin(), base.data.end(),
                out.data.begin() + static_cast<std::ptrdiff_t>(c * base.data.size()));
    }
    return out;
  }

  const std::size_t dim = ambient_dimension(spec);
  RealMatrix out(spec.n_points, dim);
  CounterRng rng(spec.seed, static_cast<std::uint64_t>(spec.shape));
  for (std::size_t i = 0; i < spec.n_points; ++i) {
    auto row = out.row(i);
    switch (spec.shape) {
      case ShapeKind::Cube:
        for (auto& x : row) x = rng.uniform();
        break;
      case ShapeKind::Gaussian:
        for (auto& x : row) x = rng.normal();
        break;
      case ShapeKind::SphereSurface: {
        double norm = 0.0;
        while (!(norm > 1e-12)) {
          norm = 0.0;
          for (auto& x : row) {
            x = rng.normal();
            norm += x * x;
          }
          norm = std::sqrt(norm);
        }
        for (auto& x : row) x /= norm;
        break;
      }
      case ShapeKind::Circle: {
        const double t = 2.0 * std::numbers::pi * rng.uniform();
        row[0] = std::cos(t);
        row[1] = std::sin(t);
        break;
      }
      case ShapeKind::TwoCluster: {
        // side 1/sqrt(dim) keeps each cluster's diameter at most 1
        const double side = 1.0 / std::sqrt(static_cast<double>(dim));
        for (auto& x : row) x = side * rng.uniform();
        if (i % 2 == 1) row[0] += spec.separation;
        break;
      }
      case ShapeKind::Duplicated: break;
    }
  }
  if (spec.noise > 0.0) {
    CounterRng jitter(spec.seed, 0x6e6f697365ULL);
    for (auto& x : out.data) x += spec.noise * jitter.normal();
  }
  return out;
}

inline WeightTrajectory sample_points(const SynthSpec& spec) { return {sample_point_matrix(spec)}; }

/// A weight-only bundle holding the cloud, one row per pseudo-iteration.
inline TrajectoryBundle synth_bundle(const SynthSpec& spec) {
  TrajectoryBundle b;
  b.weights = sample_points(spec);
  const auto n = static_cast<std::int64_t>(b.weights->matrix.rows);
  b.iteration_index.resize(static_cast<std::size_t>(n));
  std::iota(b.iteration_index.begin(), b.iteration_index.end(), std::int64_t{0});
  b.run_meta.T = n - 1;
  b.run_meta.tau = 0;
  b.run_meta.n_train = n;
  b.run_meta.seed = static_cast<std::int64_t>(spec.seed);
  b.run_meta.dataset = "synthetic";
  b.run_meta.model = to_string(spec.shape);
  b.extra["synth"] = {{"shape", to_string(spec.shape)},
                      {"dim", spec.dim},
                      {"n_points", b.weights->matrix.rows},
                      {"seed", spec.seed},
                      {"noise", spec.noise},
                      {"ground_truth_dimension", ground_truth_dimension(spec)}};
  if (spec.shape == ShapeKind::TwoCluster) b.extra["synth"]["separation"] = spec.separation;
  if (spec.shape == ShapeKind::Duplicated) b.extra["synth"]["copies"] = spec.copies;
  return b;
}

// ---------------------------------------------------------------------------
// Oracles

inline constexpr std::size_t kBruteForceMstLimit = 7;

/// Minimum spanning tree cost by enumerating all N^(N-2) labelled trees.
inline double brute_force_mst_cost(const DistanceMatrix& d) {
  const std::size_t n = d.size();
  if (n > kBruteForceMstLimit) {
    throw Error(ErrorKind::TooLarge, "brute_force_mst_cost enumerates N^(N-2) trees; N=" + std::to_string(n) +
                                         " exceeds " + std::to_string(kBruteForceMstLimit));
  }
  if (n < 2) return 0.0;
  if (n == 2) return d(0, 1);

  const std::size_t len = n - 2;
  std::vector<std::size_t> code(len, 0);
  std::vector<std::size_t> degree(n);
  double best = std::numeric_limits<double>::infinity();
  for (;;) {
    // decode the Pruefer sequence
    std::fill(degree.begin(), degree.end(), 1);
    for (std::size_t c : code) ++degree[c];
    double cost = 0.0;
    for (std::size_t c : code) {
      std::size_t leaf = 0;
      while (degree[leaf] != 1) ++leaf;
      cost += d(leaf, c);
      --degree[leaf];
      --degree[c];
    }
    std::size_t u = n, v = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (degree[i] == 1) (u == n ? u : v) = i;
    }
    cost += d(u, v);
    best = std::min(best, cost);

    std::size_t pos = 0;
    while (pos < len && ++code[pos] == n) code[pos++] = 0;
    if (pos == len) break;
  }
  return best;
}

namespace detail {

/// Closed ball membership masks: ball[i][j] = d(i,j) <= radius.
inline std::vector<std::vector<char>> closed_balls(const DistanceMatrix& d, double radius) {
  const std::size_t n = d.size();
  std::vector<std::vector<char>> ball(n, std::vector<char>(n, 0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) ball[i][j] = d(i, j) <= radius;
  }
  return ball;
}

}  // namespace detail

/// Greedy delta-packing: scan points by index and keep a centre when its
/// closed delta-ball shares no point of X with the balls already kept.
inline std::size_t greedy_packing_number(const DistanceMatrix& d, double delta) {
  const std::size_t n = d.size();
  const auto ball = detail::closed_balls(d, delta);
  std::vector<char> taken(n, 0);
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    bool disjoint = true;
    for (std::size_t j = 0; j < n && disjoint; ++j) disjoint = !(ball[i][j] && taken[j]);
    if (!disjoint) continue;
    ++count;
    for (std::size_t j = 0; j < n; ++j) {
      if (ball[i][j]) taken[j] = 1;
    }
  }
  return count;
}

/// Greedy set cover by closed delta-balls centred in X: repeatedly take the
/// ball covering the most uncovered points, lowest index on ties.
inline std::size_t greedy_covering_number(const DistanceMatrix& d, double delta) {
  const std::size_t n = d.size();
  const auto ball = detail::closed_balls(d, delta);
  std::vector<char> covered(n, 0);
  std::size_t remaining = n;
  std::size_t count = 0;
  while (remaining > 0) {
    std::size_t best = 0, best_gain = 0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t gain = 0;
      for (std::size_t j = 0; j < n; ++j) gain += ball[i][j] && !covered[j];
      if (gain > best_gain) {
        best_gain = gain;
        best = i;
      }
    }
    for (std::size_t j = 0; j < n; ++j) {
      if (ball[best][j] && !covered[j]) {
        covered[j] = 1;
        --remaining;
      }
    }
    ++count;
  }
  return count;
}

inline constexpr std::size_t kExactCoveringLimit = 24;

/// Smallest number of closed delta-balls centred in X covering X, by
/// enumerating centre subsets in order of size.
inline std::size_t exact_covering_number(const DistanceMatrix& d, double delta) {
  const std::size_t n = d.size();
  if (n > kExactCoveringLimit) {
    throw Error(ErrorKind::TooLarge, "exact_covering_number is exponential; N=" + std::to_string(n) + " exceeds " +
                                         std::to_string(kExactCoveringLimit));
  }
  if (n == 0) return 0;
  std::vector<std::uint32_t> mask(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (d(i, j) <= delta) mask[i] |= std::uint32_t{1} << j;
    }
  }
  const std::uint32_t full = n == 32 ? ~std::uint32_t{0} : (std::uint32_t{1} << n) - 1;
  std::size_t best = n;
  // each subset's union is built from the subset without its lowest bit
  std::vector<std::uint32_t> unions(std::size_t{1} << n, 0);
  for (std::uint32_t s = 1; s <= full; ++s) {
    const auto low = static_cast<std::size_t>(std::countr_zero(s));
    unions[s] = unions[s & (s - 1)] | mask[low];
    if (unions[s] == full) best = std::min<std::size_t>(best, static_cast<std::size_t>(std::popcount(s)));
    if (s == full) break;
  }
  return best;
}

}  // namespace topo
