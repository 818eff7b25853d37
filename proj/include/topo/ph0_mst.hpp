#pragma once

// Degree-0 persistent homology through minimum spanning trees: MST edge
// lengths, alpha-weighted lifetime sums and the PH-dimension fit.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "error.hpp"
#include "metrics.hpp"
#include "rng.hpp"

namespace topo {

/// Pseudodistances at or below this value identify points.
inline constexpr double kIdentificationTolerance = 1e-12;

struct MstEdge {
  std::size_t u = 0;
  std::size_t v = 0;
  double length = 0.0;
};

/// Sorted multiset of MST edge lengths (equivalently, PH0 death times).
struct MstEdges {
  std::vector<double> lengths;

  double total() const { return std::accumulate(lengths.begin(), lengths.end(), 0.0); }
  bool operator==(const MstEdges&) const = default;
};

class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n), size_(n, 1) { std::iota(parent_.begin(), parent_.end(), 0); }

  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }

  /// Returns false when a and b were already connected.
  bool unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    if (size_[a] < size_[b]) std::swap(a, b);
    parent_[b] = a;
    size_[a] += size_[b];
    return true;
  }

 private:
  std::vector<std::size_t> parent_;
  std::vector<std::size_t> size_;
};

/// Dense O(N^2) Prim over the points listed in `subset` (all points when
/// empty). Edge endpoints refer to positions in the subset.
inline std::vector<MstEdge> prim_mst(const DistanceMatrix& d, std::span<const std::size_t> subset = {}) {
  const std::size_t n = subset.empty() ? d.size() : subset.size();
  std::vector<MstEdge> tree;
  if (n < 2) return tree;
  tree.reserve(n - 1);
  auto point = [&](std::size_t i) { return subset.empty() ? i : subset[i]; };

  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> best(n, inf);
  std::vector<std::size_t> parent(n, 0);
  std::vector<char> in_tree(n, 0);
  std::size_t current = 0;
  in_tree[0] = 1;
  for (std::size_t step = 1; step < n; ++step) {
    const auto row = d.row(point(current));
    std::size_t next = n;
    double next_len = inf;
    for (std::size_t j = 0; j < n; ++j) {
      if (in_tree[j]) continue;
      const double len = row[point(j)];
      if (len < best[j]) {
        best[j] = len;
        parent[j] = current;
      }
      if (best[j] < next_len || next == n) {
        next_len = best[j];
        next = j;
      }
    }
    in_tree[next] = 1;
    tree.push_back({parent[next], next, best[next]});
    current = next;
  }
  return tree;
}

/// Kruskal over the full edge list, stable-sorted by (length, smaller index,
/// larger index).
inline std::vector<MstEdge> kruskal_mst(const DistanceMatrix& d) {
  const std::size_t n = d.size();
  std::vector<MstEdge> edges;
  edges.reserve(n * (n - (n > 0 ? 1 : 0)) / 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) edges.push_back({i, j, d(i, j)});
  }
  std::stable_sort(edges.begin(), edges.end(), [](const MstEdge& a, const MstEdge& b) {
    if (a.length != b.length) return a.length < b.length;
    if (a.u != b.u) return a.u < b.u;
    return a.v < b.v;
  });
  UnionFind uf(n);
  std::vector<MstEdge> tree;
  for (const auto& e : edges) {
    if (uf.unite(e.u, e.v)) {
      tree.push_back(e);
      if (tree.size() + 1 == n) break;
    }
  }
  return tree;
}

inline MstEdges sorted_lengths(const std::vector<MstEdge>& tree) {
  MstEdges out;
  out.lengths.reserve(tree.size());
  for (const auto& e : tree) out.lengths.push_back(e.length);
  std::sort(out.lengths.begin(), out.lengths.end());
  return out;
}

inline MstEdges minimum_spanning_edges(const DistanceMatrix& d) { return sorted_lengths(prim_mst(d)); }

/// PH0 lifetimes read off the Vietoris-Rips filtration: sweep the distinct
/// pairwise distances t in increasing order and record t once for every
/// connected component that disappears when all edges of length t enter.
inline MstEdges ph0_lifetimes(const DistanceMatrix& d) {
  const std::size_t n = d.size();
  MstEdges out;
  if (n < 2) return out;
  std::vector<std::pair<double, std::pair<std::size_t, std::size_t>>> pairs;
  pairs.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) pairs.push_back({d(i, j), {i, j}});
  }
  std::sort(pairs.begin(), pairs.end());
  UnionFind components(n);
  std::size_t count = n;
  std::size_t k = 0;
  while (k < pairs.size() && count > 1) {
    const double t = pairs[k].first;
    const std::size_t before = count;
    for (; k < pairs.size() && pairs[k].first == t; ++k) {
      if (components.unite(pairs[k].second.first, pairs[k].second.second)) --count;
    }
    out.lengths.insert(out.lengths.end(), before - count, t);
  }
  return out;
}

/// E_alpha = sum of |e|^alpha over MST edges longer than the identification
/// tolerance (zero-length edges belong to the metric quotient and are dropped).
inline double e_alpha(const MstEdges& edges, double alpha, double tol = kIdentificationTolerance) {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw Error(ErrorKind::NegativeAlpha, "alpha must be a finite real >= 0");
  double sum = 0.0;
  for (double len : edges.lengths) {
    if (len <= tol) continue;
    sum += alpha == 1.0 ? len : std::pow(len, alpha);
  }
  return sum;
}

struct PhDimProtocol {
  std::size_t min_size = 1000;
  std::size_t step = 0;  ///< 0 selects (N - min_size) / 8
  std::size_t repeats = 5;
  std::uint64_t seed = 0;
};

struct PhDimEstimate {
  double dim = 0.0;
  double slope = 0.0;
  std::vector<std::size_t> sample_sizes;
  std::vector<double> log_e1_values;  ///< log of the median E_1 at each sample size
  double r_squared = 0.0;
  /// Set when the fit cannot yield a finite dimension (slope >= 1 - 1e-6 or
  /// E_1 vanishing); dim is then +infinity.
  bool degenerate = false;
};

namespace detail {

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};

inline LineFit least_squares(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  LineFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.r_squared = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  return fit;
}

inline double median(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const std::size_t mid = values.size() / 2;
  return values.size() % 2 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
}

}  // namespace detail

/// Fits log E_1 against log n over random subsets of growing size n; E_1 of
/// an n-point sample grows like n^((d-1)/d) for a d-dimensional support, so
/// dim = 1 / (1 - slope).
inline PhDimEstimate estimate_ph_dim(const DistanceMatrix& d, const PhDimProtocol& protocol = {}) {
  const std::size_t n = d.size();
  if (protocol.min_size < 2 || protocol.repeats == 0) {
    throw Error(ErrorKind::InvalidArgument, "PH-dim protocol needs min_size >= 2 and repeats >= 1");
  }
  if (n < 2 * protocol.min_size) {
    throw Error(ErrorKind::InvalidArgument, "PH-dim estimation needs at least 2*min_size = " +
                                                std::to_string(2 * protocol.min_size) + " points, got " +
                                                std::to_string(n));
  }
  const std::size_t step = protocol.step ? protocol.step : std::max<std::size_t>(1, (n - protocol.min_size) / 8);

  PhDimEstimate est;
  for (std::size_t size = protocol.min_size; size <= n; size += step) est.sample_sizes.push_back(size);

  std::vector<double> log_sizes;
  bool vanished = false;
  for (std::size_t j = 0; j < est.sample_sizes.size(); ++j) {
    const std::size_t size = est.sample_sizes[j];
    std::vector<double> sums;
    sums.reserve(protocol.repeats);
    for (std::size_t r = 0; r < protocol.repeats; ++r) {
      CounterRng rng(protocol.seed, j * protocol.repeats + r);
      const auto subset = rng.sample_without_replacement(n, size);
      sums.push_back(e_alpha(sorted_lengths(prim_mst(d, subset)), 1.0));
    }
    const double e1 = detail::median(std::move(sums));
    if (!(e1 > 0.0)) vanished = true;
    log_sizes.push_back(std::log(static_cast<double>(size)));
    est.log_e1_values.push_back(e1 > 0.0 ? std::log(e1) : -std::numeric_limits<double>::infinity());
  }

  if (vanished) {
    est.degenerate = true;
    est.slope = std::numeric_limits<double>::quiet_NaN();
    est.r_squared = 0.0;
    est.dim = std::numeric_limits<double>::infinity();
    return est;
  }
  const auto fit = detail::least_squares(log_sizes, est.log_e1_values);
  est.slope = fit.slope;
  est.r_squared = fit.r_squared;
  if (fit.slope >= 1.0 - 1e-6) {
    est.degenerate = true;
    est.dim = std::numeric_limits<double>::infinity();
  } else {
    est.dim = 1.0 / (1.0 - fit.slope);
  }
  return est;
}

}  // namespace topo
