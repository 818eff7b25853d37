#pragma once

// Distance matrices over trajectory points for the supported (pseudo)metrics.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "format.hpp"
#include "matrix.hpp"
#include "rng.hpp"
#include "trajectory_store.hpp"

namespace topo {

enum class MetricKind { Euclidean, RhoP, ZeroOne };

struct MetricTag {
  MetricKind kind = MetricKind::Euclidean;
  double p = 1.0;  ///< order of the loss pseudometric; meaningful for RhoP only

  /// Stable identifier used in file names and report keys.
  std::string label() const {
    switch (kind) {
      case MetricKind::Euclidean: return "euclidean";
      case MetricKind::RhoP: return "rho_p" + format_real(p);
      case MetricKind::ZeroOne: return "zero_one";
    }
    return "unknown";
  }

  bool operator==(const MetricTag&) const = default;
};

/// Symmetric N x N matrix of pairwise (pseudo)distances with zero diagonal.
class DistanceMatrix {
 public:
  DistanceMatrix() = default;
  DistanceMatrix(std::size_t n, MetricTag metric, std::size_t n_reference = 0)
      : n_(n), entries_(n * n, 0.0), metric_(metric), n_reference_(n_reference) {}

  std::size_t size() const { return n_; }
  double operator()(std::size_t i, std::size_t j) const { return entries_[i * n_ + j]; }
  std::span<const double> row(std::size_t i) const { return {entries_.data() + i * n_, n_}; }

  /// Writes both (i,j) and (j,i); symmetry holds by construction.
  void set(std::size_t i, std::size_t j, double value) {
    entries_[i * n_ + j] = value;
    entries_[j * n_ + i] = value;
  }

  const MetricTag& metric() const { return metric_; }
  std::size_t n_reference() const { return n_reference_; }
  const std::vector<double>& entries() const { return entries_; }

  /// Matrix restricted to the given points, in the given order.
  DistanceMatrix submatrix(std::span<const std::size_t> points) const {
    DistanceMatrix sub(points.size(), metric_, n_reference_);
    for (std::size_t a = 0; a < points.size(); ++a) {
      for (std::size_t b = a + 1; b < points.size(); ++b) sub.set(a, b, (*this)(points[a], points[b]));
    }
    return sub;
  }

  static DistanceMatrix from_entries(std::size_t n, std::vector<double> entries, MetricTag metric,
                                     std::size_t n_reference = 0) {
    if (entries.size() != n * n) throw Error(ErrorKind::ShapeMismatch, "distance entries must be N*N");
    DistanceMatrix d;
    d.n_ = n;
    d.entries_ = std::move(entries);
    d.metric_ = metric;
    d.n_reference_ = n_reference;
    return d;
  }

 private:
  std::size_t n_ = 0;
  std::vector<double> entries_;
  MetricTag metric_;
  std::size_t n_reference_ = 0;
};

/// Lists violated DistanceMatrix invariants: symmetry, zero diagonal,
/// finiteness, nonnegativity. The triangle inequality is checked on the given
/// number of random triples (0 skips it).
inline std::vector<std::string> check_distance_matrix(const DistanceMatrix& d, std::size_t triples = 0,
                                                      std::uint64_t seed = 0, double tol = 1e-9) {
  std::vector<std::string> problems;
  const std::size_t n = d.size();
  for (std::size_t i = 0; i < n && problems.size() < 8; ++i) {
    if (d(i, i) != 0.0) problems.push_back("nonzero diagonal at " + std::to_string(i));
    for (std::size_t j = 0; j < n; ++j) {
      const double v = d(i, j);
      if (!std::isfinite(v) || v < 0.0) {
        problems.push_back("invalid entry at (" + std::to_string(i) + "," + std::to_string(j) + ")");
        break;
      }
      if (v != d(j, i)) {
        problems.push_back("asymmetric at (" + std::to_string(i) + "," + std::to_string(j) + ")");
        break;
      }
    }
  }
  if (n >= 3 && triples > 0) {
    CounterRng rng(seed, 0x7a1);
    for (std::size_t t = 0; t < triples; ++t) {
      const auto a = rng.below(n), b = rng.below(n), c = rng.below(n);
      if (d(a, c) > d(a, b) + d(b, c) + tol) {
        problems.push_back("triangle inequality fails on (" + std::to_string(a) + "," + std::to_string(b) + "," +
                           std::to_string(c) + ")");
        break;
      }
    }
  }
  return problems;
}

/// Sparse random projection parameters. When target_dim is empty the
/// dimension is sized automatically from the point count.
struct ProjectionSpec {
  double distortion_eps = 0.05;
  std::uint64_t seed = 0;
  std::optional<std::size_t> target_dim;
};

/// Constant c in target_dim = ceil(c * ln(N) / eps^2).
inline constexpr double kProjectionDimConstant = 8.0;

inline std::size_t auto_projection_dim(std::size_t n_points, double eps) {
  if (!(eps > 0.0 && eps < 1.0)) throw Error(ErrorKind::InvalidArgument, "distortion_eps must lie in (0,1)");
  const double n = static_cast<double>(std::max<std::size_t>(n_points, 2));
  return static_cast<std::size_t>(std::ceil(kProjectionDimConstant * std::log(n) / (eps * eps)));
}

/// Bytes the distance computations may allocate; TOPO_MEM_BUDGET_MB overrides
/// the 4096 MB default.
inline std::size_t memory_budget_bytes() {
  if (const char* env = std::getenv("TOPO_MEM_BUDGET_MB")) {
    if (const auto mb = parse_integer(env); mb && *mb > 0) return static_cast<std::size_t>(*mb) << 20;
  }
  return std::size_t{4096} << 20;
}

namespace detail {

inline void check_matrix_budget(std::size_t n, std::size_t budget) {
  if (n * n * sizeof(double) > budget) {
    throw Error(ErrorKind::DimensionOverflow, std::to_string(n) + "x" + std::to_string(n) +
                                                  " distance matrix exceeds the memory budget of " +
                                                  std::to_string(budget >> 20) + " MB");
  }
}

}  // namespace detail

/// Projects rows with a sparse sign matrix: each entry of the (target_dim x D)
/// map is +-1/sqrt(density * target_dim) with probability density/2 each and 0
/// otherwise, density = 1/sqrt(D). Nonzeros are placed column by column by
/// geometric skipping, so the cost is proportional to the nonzero count.
inline RealMatrix sparse_random_projection(const RealMatrix& points, const ProjectionSpec& spec) {
  if (!(spec.distortion_eps > 0.0 && spec.distortion_eps < 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "distortion_eps must lie in (0,1)");
  }
  const std::size_t source_dim = points.cols;
  const std::size_t target_dim = spec.target_dim.value_or(auto_projection_dim(points.rows, spec.distortion_eps));
  if (target_dim == 0) throw Error(ErrorKind::InvalidArgument, "projection target_dim must be positive");
  const double density = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(source_dim, 1)));
  const double magnitude = 1.0 / std::sqrt(density * static_cast<double>(target_dim));

  RealMatrix out(points.rows, target_dim, 0.0);
  CounterRng rng(spec.seed, 0x5a5);
  const double log_keep = std::log1p(-density);
  for (std::size_t j = 0; j < source_dim; ++j) {
    std::size_t i = 0;
    for (;;) {
      if (density < 1.0) {
        double u = rng.uniform();
        while (u <= 0.0) u = rng.uniform();
        const double skip = std::floor(std::log(u) / log_keep);
        if (skip >= static_cast<double>(target_dim - i)) break;
        i += static_cast<std::size_t>(skip);
      }
      if (i >= target_dim) break;
      const double value = (rng.next_u64() & 1u) ? magnitude : -magnitude;
      for (std::size_t r = 0; r < points.rows; ++r) out(r, i) += value * points(r, j);
      ++i;
    }
  }
  return out;
}

/// l2 distances between rows, optionally after sparse random projection.
inline DistanceMatrix euclidean_distance_matrix(const RealMatrix& points,
                                                const std::optional<ProjectionSpec>& proj = std::nullopt,
                                                std::size_t budget = memory_budget_bytes()) {
  const std::size_t n = points.rows;
  if (!proj && n * points.cols * sizeof(double) > budget) {
    throw Error(ErrorKind::DimensionOverflow, "trajectory of " + std::to_string(n) + "x" +
                                                  std::to_string(points.cols) +
                                                  " exceeds the memory budget; use a random projection");
  }
  detail::check_matrix_budget(n, budget);
  RealMatrix projected;
  const RealMatrix* source = &points;
  if (proj) {
    projected = sparse_random_projection(points, *proj);
    source = &projected;
  }
  DistanceMatrix d(n, MetricTag{MetricKind::Euclidean});
  for (std::size_t i = 0; i < n; ++i) {
    const auto a = source->row(i);
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto b = source->row(j);
      double sum = 0.0;
      for (std::size_t k = 0; k < a.size(); ++k) {
        const double diff = a[k] - b[k];
        sum += diff * diff;
      }
      d.set(i, j, std::sqrt(sum));
    }
  }
  return d;
}

inline DistanceMatrix euclidean_distance_matrix(const WeightTrajectory& weights,
                                                const std::optional<ProjectionSpec>& proj = std::nullopt,
                                                std::size_t budget = memory_budget_bytes()) {
  return euclidean_distance_matrix(weights.matrix, proj, budget);
}

/// rho(i,j) = m^(-1/p) * ||L_i - L_j||_p over the m retained samples.
inline DistanceMatrix loss_pseudometric_matrix(const LossTrajectory& losses, double p,
                                               std::size_t budget = memory_budget_bytes()) {
  if (!(p >= 1.0) || !std::isfinite(p)) throw Error(ErrorKind::InvalidOrder, "p must be a finite real >= 1");
  const RealMatrix& l = losses.matrix;
  const std::size_t n = l.rows;
  const std::size_t m = l.cols;
  if (m == 0) throw Error(ErrorKind::EmptySelection, "loss trajectory has no samples");
  detail::check_matrix_budget(n, budget);
  DistanceMatrix d(n, MetricTag{MetricKind::RhoP, p}, m);
  const double md = static_cast<double>(m);
  for (std::size_t i = 0; i < n; ++i) {
    const auto a = l.row(i);
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto b = l.row(j);
      double sum = 0.0;
      if (p == 1.0) {
        for (std::size_t k = 0; k < m; ++k) sum += std::abs(a[k] - b[k]);
        d.set(i, j, sum / md);
      } else if (p == 2.0) {
        for (std::size_t k = 0; k < m; ++k) {
          const double diff = a[k] - b[k];
          sum += diff * diff;
        }
        d.set(i, j, std::sqrt(sum / md));
      } else {
        for (std::size_t k = 0; k < m; ++k) sum += std::pow(std::abs(a[k] - b[k]), p);
        d.set(i, j, std::pow(sum / md, 1.0 / p));
      }
    }
  }
  return d;
}

/// Normalised Hamming distance between 0/1 loss rows. Rows are bit-packed so
/// each pair costs m/64 popcounts.
inline DistanceMatrix zero_one_pseudometric_matrix(const BinaryLossTrajectory& losses01,
                                                   std::size_t budget = memory_budget_bytes()) {
  const BinaryMatrix& l = losses01.matrix;
  const std::size_t n = l.rows;
  const std::size_t m = l.cols;
  if (m == 0) throw Error(ErrorKind::EmptySelection, "binary loss trajectory has no samples");
  for (unsigned char v : l.data) {
    if (v > 1) throw Error(ErrorKind::InvalidBundle, "binary loss entries must be 0 or 1");
  }
  detail::check_matrix_budget(n, budget);
  const std::size_t words = (m + 63) / 64;
  std::vector<std::uint64_t> packed(n * words, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < m; ++k) {
      if (l(i, k)) packed[i * words + k / 64] |= std::uint64_t{1} << (k % 64);
    }
  }
  DistanceMatrix d(n, MetricTag{MetricKind::ZeroOne}, m);
  const double md = static_cast<double>(m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      std::size_t count = 0;
      for (std::size_t w = 0; w < words; ++w) count += std::popcount(packed[i * words + w] ^ packed[j * words + w]);
      d.set(i, j, static_cast<double>(count) / md);
    }
  }
  return d;
}

/// Keeps round(fraction * m) columns chosen uniformly without replacement;
/// column order is preserved. fraction == 1 returns the input unchanged.
inline LossTrajectory subsample_columns(const LossTrajectory& losses, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw Error(ErrorKind::InvalidArgument, "fraction must lie in (0,1]");
  const std::size_t m = losses.matrix.cols;
  if (fraction == 1.0) return losses;
  const auto keep = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(m)));
  if (keep == 0) {
    throw Error(ErrorKind::EmptySelection, "fraction " + format_real(fraction) + " of " + std::to_string(m) +
                                               " samples selects no column");
  }
  CounterRng rng(seed, 0xc01);
  const auto cols = rng.sample_without_replacement(m, keep);
  LossTrajectory out;
  out.matrix = RealMatrix(losses.matrix.rows, keep);
  for (std::size_t i = 0; i < losses.matrix.rows; ++i) {
    for (std::size_t c = 0; c < keep; ++c) out.matrix(i, c) = losses.matrix(i, cols[c]);
  }
  out.sample_ids.reserve(keep);
  for (auto c : cols) out.sample_ids.push_back(losses.sample_ids.empty() ? static_cast<std::int64_t>(c) : losses.sample_ids[c]);
  out.subsample_fraction = losses.subsample_fraction * static_cast<double>(keep) / static_cast<double>(m);
  return out;
}

/// Provenance stored next to a cached distance matrix.
struct DistanceCacheInfo {
  std::uint64_t seed = 0;
  std::optional<double> subsample_fraction;
  std::optional<ProjectionSpec> projection;
};

inline std::filesystem::path distance_cache_path(const std::filesystem::path& dir, const MetricTag& metric) {
  return dir / ("dist_" + metric.label() + ".f64");
}

/// Writes the strict upper triangle (i < j, row-major, float64 little-endian)
/// plus a JSON sidecar with the same stem.
inline void write_distance_cache(const std::filesystem::path& dir, const DistanceMatrix& d,
                                 const DistanceCacheInfo& info = {}) {
  const std::size_t n = d.size();
  RealMatrix tri(1, n * (n - (n > 0 ? 1 : 0)) / 2);
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) tri.data[k++] = d(i, j);
  }
  const auto bytes = detail::encode_f64(tri);
  const auto path = distance_cache_path(dir, d.metric());
  detail::write_file_bytes(path, bytes.data(), bytes.size());

  nlohmann::ordered_json side;
  side["metric_kind"] = d.metric().label();
  side["kind"] = d.metric().kind == MetricKind::Euclidean ? "euclidean"
                 : d.metric().kind == MetricKind::RhoP    ? "rho_p"
                                                          : "zero_one";
  if (d.metric().kind == MetricKind::RhoP) side["p"] = d.metric().p;
  side["n_points"] = n;
  side["n_reference"] = d.n_reference();
  side["layout"] = "upper-triangle-row-major";
  side["seed"] = info.seed;
  side["subsample_fraction"] = info.subsample_fraction ? nlohmann::ordered_json(*info.subsample_fraction) : nullptr;
  if (info.projection) {
    side["projection"] = {{"distortion_eps", info.projection->distortion_eps},
                          {"seed", info.projection->seed},
                          {"target_dim", info.projection->target_dim ? nlohmann::ordered_json(*info.projection->target_dim)
                                                                     : nlohmann::ordered_json("auto")}};
  } else {
    side["projection"] = nullptr;
  }
  side["crc32"] = detail::crc32_hex(bytes.data(), bytes.size());
  auto side_path = path;
  side_path.replace_extension(".json");
  std::ofstream out(side_path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoError, "cannot create " + side_path.string());
  out << side.dump(2) << '\n';
}

inline DistanceMatrix read_distance_cache(const std::filesystem::path& f64_path) {
  auto side_path = f64_path;
  side_path.replace_extension(".json");
  if (!std::filesystem::exists(side_path)) throw Error(ErrorKind::MissingFile, side_path.string() + " not found");
  nlohmann::json side;
  try {
    std::ifstream in(side_path);
    side = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::MetadataParse, side_path.string() + ": " + e.what());
  }
  MetricTag tag;
  const std::string kind = side.value("kind", std::string("euclidean"));
  if (kind == "rho_p") {
    tag = {MetricKind::RhoP, side.value("p", 1.0)};
  } else if (kind == "zero_one") {
    tag = {MetricKind::ZeroOne};
  } else if (kind != "euclidean") {
    throw Error(ErrorKind::MetadataParse, "unknown metric kind " + kind);
  }
  const auto n = side.at("n_points").get<std::size_t>();
  const auto values = detail::decode_f64(detail::read_file_bytes(f64_path));
  if (values.size() != n * (n - (n > 0 ? 1 : 0)) / 2) {
    throw Error(ErrorKind::ShapeMismatch, f64_path.string() + " does not hold an upper triangle of size " +
                                              std::to_string(n));
  }
  DistanceMatrix d(n, tag, side.value("n_reference", std::size_t{0}));
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) d.set(i, j, values[k++]);
  }
  return d;
}

}  // namespace topo
