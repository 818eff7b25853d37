#pragma once

// Generalization gaps, Kendall coefficients and hyperparameter-grid reports.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "format.hpp"
#include "magnitude.hpp"
#include "metrics.hpp"
#include "ph0_mst.hpp"
#include "trajectory_store.hpp"

namespace topo {

using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Generalization gap

enum class GapMode { Worst, Final };

inline std::string to_string(GapMode mode) { return mode == GapMode::Worst ? "worst" : "final"; }

inline GapMode parse_gap_mode(const std::string& text) {
  if (text == "worst") return GapMode::Worst;
  if (text == "final") return GapMode::Final;
  throw Error(ErrorKind::InvalidArgument, "gap mode must be 'worst' or 'final', got '" + text + "'");
}

/// worst: max recorded test risk - final train risk; final: last test risk - final train risk.
inline double generalization_gap(const TrajectoryBundle& bundle, GapMode mode) {
  const auto& history = bundle.risk_history;
  if (history.empty()) throw Error(ErrorKind::MissingRiskHistory, "bundle has no risk history");
  const double final_train = history.back().train_risk;
  if (mode == GapMode::Final) return history.back().test_risk - final_train;
  double worst = history.front().test_risk;
  for (const auto& r : history) worst = std::max(worst, r.test_risk);
  return worst - final_train;
}

struct GapRecord {
  std::string run_id;
  double gap_worst = 0.0;
  double gap_final = 0.0;

  double get(GapMode mode) const { return mode == GapMode::Worst ? gap_worst : gap_final; }
};

inline GapRecord gap_record(const TrajectoryBundle& bundle, std::string run_id) {
  return {std::move(run_id), generalization_gap(bundle, GapMode::Worst), generalization_gap(bundle, GapMode::Final)};
}

// ---------------------------------------------------------------------------
// Kendall tau-b

namespace detail {

inline std::int64_t tie_pairs(std::span<const double> sorted) {
  std::int64_t pairs = 0;
  std::int64_t run = 1;
  for (std::size_t i = 1; i <= sorted.size(); ++i) {
    if (i < sorted.size() && sorted[i] == sorted[i - 1]) {
      ++run;
    } else {
      pairs += run * (run - 1) / 2;
      run = 1;
    }
  }
  return pairs;
}

/// Stable merge sort counting the exchanges needed (discordant pairs).
inline std::int64_t merge_count(std::vector<double>& v, std::vector<double>& buf, std::size_t lo, std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  std::int64_t swaps = merge_count(v, buf, lo, mid) + merge_count(v, buf, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      swaps += static_cast<std::int64_t>(mid - i);
      buf[k++] = v[j++];
    } else {
      buf[k++] = v[i++];
    }
  }
  while (i < mid) buf[k++] = v[i++];
  while (j < hi) buf[k++] = v[j++];
  std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo), buf.begin() + static_cast<std::ptrdiff_t>(hi),
            v.begin() + static_cast<std::ptrdiff_t>(lo));
  return swaps;
}

}  // namespace detail

/// Tie-corrected Kendall tau-b in O(n log n) (Knight's algorithm).
inline double kendall_tau(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(ErrorKind::LengthMismatch, "kendall_tau needs equal-length inputs");
  const std::size_t n = x.size();
  if (n < 2) throw Error(ErrorKind::InvalidArgument, "kendall_tau needs at least two observations");
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) throw Error(ErrorKind::NonFiniteEntry, "kendall_tau input");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return x[a] != x[b] ? x[a] < x[b] : y[a] < y[b];
  });
  std::vector<double> xs(n), ys(n);
  for (std::size_t i = 0; i < n; ++i) {
    xs[i] = x[order[i]];
    ys[i] = y[order[i]];
  }

  const auto n0 = static_cast<std::int64_t>(n * (n - 1) / 2);
  const std::int64_t tx = detail::tie_pairs(xs);
  std::int64_t txy = 0;
  {
    std::int64_t run = 1;
    for (std::size_t i = 1; i <= n; ++i) {
      if (i < n && xs[i] == xs[i - 1] && ys[i] == ys[i - 1]) {
        ++run;
      } else {
        txy += run * (run - 1) / 2;
        run = 1;
      }
    }
  }
  std::vector<double> buf(n);
  const std::int64_t swaps = detail::merge_count(ys, buf, 0, n);
  const std::int64_t ty = detail::tie_pairs(ys);

  if (n0 == tx || n0 == ty) {
    throw Error(ErrorKind::DegenerateInput, "kendall_tau is undefined when either input is constant");
  }
  const std::int64_t s = n0 - tx - ty + txy - 2 * swaps;
  return static_cast<double>(s) / std::sqrt(static_cast<double>(n0 - tx) * static_cast<double>(n0 - ty));
}

inline std::optional<double> try_kendall_tau(std::span<const double> x, std::span<const double> y) {
  try {
    return kendall_tau(x, y);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::DegenerateInput || e.kind() == ErrorKind::InvalidArgument) return std::nullopt;
    throw;
  }
}

// ---------------------------------------------------------------------------
// Granulated Kendall coefficients

struct GridPoint {
  double learning_rate = 0.0;
  std::int64_t batch_size = 0;
  double complexity = 0.0;
  double gap = 0.0;
};

struct AxisCoefficient {
  std::optional<double> psi;
  std::size_t valid_slices = 0;
  std::size_t degenerate_slices = 0;  ///< constant complexity or constant gap
  std::size_t singleton_slices = 0;   ///< fewer than two points
};

struct KendallCoefficients {
  AxisCoefficient lr;
  AxisCoefficient bs;
  std::optional<double> Psi;
  std::optional<double> tau;
  std::size_t points = 0;
};

namespace detail {

template <typename Key, typename KeyOf>
AxisCoefficient axis_coefficient(std::span<const GridPoint> rows, KeyOf key_of, bool degenerate_as_zero) {
  std::map<Key, std::vector<const GridPoint*>> slices;
  for (const auto& r : rows) slices[key_of(r)].push_back(&r);
  AxisCoefficient out;
  double sum = 0.0;
  std::size_t counted = 0;
  for (const auto& [key, members] : slices) {
    if (members.size() < 2) {
      ++out.singleton_slices;
      continue;
    }
    std::vector<double> c, g;
    for (const auto* m : members) {
      c.push_back(m->complexity);
      g.push_back(m->gap);
    }
    if (const auto t = try_kendall_tau(c, g)) {
      ++out.valid_slices;
      sum += *t;
      ++counted;
    } else {
      ++out.degenerate_slices;
      if (degenerate_as_zero) ++counted;
    }
  }
  if (counted > 0) out.psi = sum / static_cast<double>(counted);
  return out;
}

}  // namespace detail

/// psi_lr averages tau over slices of fixed batch size (only the learning rate
/// varies), psi_bs over slices of fixed learning rate; Psi is the mean of the
/// available per-axis coefficients and tau is computed over all points.
/// Degenerate slices are skipped and counted unless degenerate_as_zero, in
/// which case they (and any undefined coefficient) contribute 0.
inline KendallCoefficients granulated_kendall(std::span<const GridPoint> rows, bool degenerate_as_zero = false) {
  KendallCoefficients out;
  out.points = rows.size();
  out.lr = detail::axis_coefficient<std::int64_t>(rows, [](const GridPoint& r) { return r.batch_size; },
                                                  degenerate_as_zero);
  out.bs = detail::axis_coefficient<double>(rows, [](const GridPoint& r) { return r.learning_rate; },
                                            degenerate_as_zero);
  if (!out.lr.psi && !out.bs.psi) {
    throw Error(ErrorKind::NoValidSlice, "no grid slice has two or more points with non-constant values");
  }
  double sum = 0.0;
  int axes = 0;
  for (const auto& axis : {out.lr, out.bs}) {
    if (axis.psi) {
      sum += *axis.psi;
      ++axes;
    } else if (degenerate_as_zero) {
      ++axes;
    }
  }
  out.Psi = sum / axes;
  if (rows.size() >= 2) {
    std::vector<double> c, g;
    for (const auto& r : rows) {
      c.push_back(r.complexity);
      g.push_back(r.gap);
    }
    out.tau = try_kendall_tau(c, g);
  }
  if (degenerate_as_zero) {
    if (!out.lr.psi) out.lr.psi = 0.0;
    if (!out.bs.psi) out.bs.psi = 0.0;
    if (!out.tau) out.tau = 0.0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Per-run complexities

/// Magnitude scale: either a fixed positive real or sqrt(n_train) of the run.
struct ScaleToken {
  bool sqrt_n = false;
  double value = 0.0;

  static ScaleToken parse(const std::string& text) {
    if (text == "sqrt-n") return {true, 0.0};
    const auto v = parse_real(text);
    if (!v || !(*v > 0.0) || !std::isfinite(*v)) {
      throw Error(ErrorKind::InvalidArgument, "scale must be 'sqrt-n' or a positive real, got '" + text + "'");
    }
    return {false, *v};
  }

  double resolve(std::int64_t n_train) const {
    return sqrt_n ? std::sqrt(static_cast<double>(n_train)) : value;
  }

  std::string label() const { return sqrt_n ? "sqrt-n" : format_real(value); }
};

struct MetricRequest {
  MetricKind kind = MetricKind::RhoP;
  double p = 1.0;
  /// Target fraction |B|/|S| of the training set for the loss pseudometric.
  /// Retained columns are thinned only when the bundle kept more than this.
  double subsample = 0.10;
  std::optional<ProjectionSpec> projection;
  std::uint64_t seed = 0;

  MetricTag tag() const { return kind == MetricKind::RhoP ? MetricTag{kind, p} : MetricTag{kind}; }
};

inline MetricKind parse_metric_kind(const std::string& text) {
  if (text == "euclid" || text == "euclidean") return MetricKind::Euclidean;
  if (text == "rho-p" || text == "rho_p") return MetricKind::RhoP;
  if (text == "zero-one" || text == "zero_one" || text == "01") return MetricKind::ZeroOne;
  throw Error(ErrorKind::InvalidArgument, "metric must be euclid, rho-p or zero-one, got '" + text + "'");
}

struct ComplexityRequest {
  std::vector<double> alphas{1.0};
  std::vector<ScaleToken> scales{{true, 0.0}, {false, 0.01}};
  bool pmag = true;
  std::optional<PhDimProtocol> ph_dim;
  SolverConfig solver;
};

struct MagnitudeRecord {
  ScaleToken token;
  MagnitudeResult result;
};

struct ComplexityRecord {
  std::string run_id;
  MetricTag metric;
  std::size_t n_points = 0;
  std::size_t n_quotient = 0;
  std::size_t n_reference = 0;
  std::vector<std::pair<double, double>> e_alpha;  ///< (alpha, E_alpha)
  std::vector<MagnitudeRecord> magnitudes;
  bool pmag_reported = true;
  std::optional<PhDimEstimate> ph_dim;
  std::optional<PhDimProtocol> ph_dim_protocol;

  /// Named scalar complexities, e.g. "E_1", "Mag_sqrt-n", "PMag_0.01", "PH-dim".
  /// Non-finite values are reported as nullopt.
  std::vector<std::pair<std::string, std::optional<double>>> values() const {
    std::vector<std::pair<std::string, std::optional<double>>> out;
    auto finite = [](double v) { return std::isfinite(v) ? std::optional<double>(v) : std::nullopt; };
    for (const auto& [alpha, value] : e_alpha) out.emplace_back("E_" + format_real(alpha), finite(value));
    for (const auto& m : magnitudes) out.emplace_back("Mag_" + m.token.label(), finite(m.result.mag));
    if (pmag_reported) {
      for (const auto& m : magnitudes) out.emplace_back("PMag_" + m.token.label(), finite(m.result.pmag));
    }
    if (ph_dim) out.emplace_back("PH-dim", ph_dim->degenerate ? std::nullopt : finite(ph_dim->dim));
    return out;
  }
};

/// Builds the distance matrix a request asks for from the matching trajectory.
inline DistanceMatrix distance_matrix_for(const TrajectoryBundle& bundle, const MetricRequest& req) {
  switch (req.kind) {
    case MetricKind::Euclidean:
      if (!bundle.weights) throw Error(ErrorKind::InvalidArgument, "euclid metric needs a weight trajectory");
      return euclidean_distance_matrix(*bundle.weights, req.projection);
    case MetricKind::RhoP: {
      if (!bundle.losses) throw Error(ErrorKind::InvalidArgument, "rho-p metric needs a loss trajectory");
      if (!(req.subsample > 0.0 && req.subsample <= 1.0)) {
        throw Error(ErrorKind::InvalidArgument, "subsample must lie in (0,1]");
      }
      const double kept = bundle.losses->subsample_fraction;
      if (req.subsample < kept) {
        return loss_pseudometric_matrix(subsample_columns(*bundle.losses, req.subsample / kept, req.seed), req.p);
      }
      return loss_pseudometric_matrix(*bundle.losses, req.p);
    }
    case MetricKind::ZeroOne:
      if (!bundle.losses01) throw Error(ErrorKind::InvalidArgument, "zero-one metric needs a binary loss trajectory");
      return zero_one_pseudometric_matrix(*bundle.losses01);
  }
  throw Error(ErrorKind::InvalidArgument, "unknown metric kind");
}

/// Shrinks the PH-dim protocol's smallest sample to a quarter of the point
/// count when the trajectory is too short for the configured one.
inline PhDimProtocol fit_protocol(PhDimProtocol protocol, std::size_t n_points) {
  if (n_points < 2 * protocol.min_size) protocol.min_size = std::max<std::size_t>(2, n_points / 4);
  return protocol;
}

inline ComplexityRecord compute_complexities(const DistanceMatrix& d, const RunMeta& meta,
                                             const ComplexityRequest& req, std::string run_id = {}) {
  ComplexityRecord rec;
  rec.run_id = std::move(run_id);
  rec.metric = d.metric();
  rec.n_points = d.size();
  rec.n_reference = d.n_reference();
  rec.pmag_reported = req.pmag;

  const MstEdges edges = minimum_spanning_edges(d);
  for (double alpha : req.alphas) rec.e_alpha.emplace_back(alpha, e_alpha(edges, alpha));

  if (!req.scales.empty()) {
    const QuotientSpace q = metric_identification(d);
    rec.n_quotient = q.size();
    for (const auto& token : req.scales) {
      rec.magnitudes.push_back({token, magnitude_and_positive(q, token.resolve(meta.n_train), req.solver)});
    }
  }
  if (req.ph_dim) {
    rec.ph_dim_protocol = fit_protocol(*req.ph_dim, d.size());
    rec.ph_dim = estimate_ph_dim(d, *rec.ph_dim_protocol);
  }
  return rec;
}

// ---------------------------------------------------------------------------
// JSON encoding

inline ordered_json nullable(std::optional<double> v) { return v ? ordered_json(*v) : ordered_json(nullptr); }

inline ordered_json nullable(double v) { return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr); }

inline ordered_json to_json(const RunMeta& m) {
  return {{"learning_rate", m.learning_rate}, {"batch_size", m.batch_size}, {"optimizer", m.optimizer},
          {"seed", m.seed},                   {"n_train", m.n_train},       {"loss_bound", m.loss_bound},
          {"tau", m.tau},                     {"T", m.T},                   {"dataset", m.dataset},
          {"model", m.model}};
}

inline ordered_json to_json(const PhDimEstimate& e) {
  return {{"dim", nullable(e.dim)},
          {"slope", nullable(e.slope)},
          {"r_squared", nullable(e.r_squared)},
          {"degenerate", e.degenerate},
          {"sample_sizes", e.sample_sizes},
          {"log_e1_values", [&] {
             ordered_json arr = ordered_json::array();
             for (double v : e.log_e1_values) arr.push_back(nullable(v));
             return arr;
           }()}};
}

inline ordered_json to_json(const ComplexityRecord& rec) {
  ordered_json j;
  j["metric"] = rec.metric.label();
  j["n_points"] = rec.n_points;
  j["n_quotient"] = rec.n_quotient;
  j["n_reference"] = rec.n_reference;
  ordered_json ea = ordered_json::object();
  for (const auto& [alpha, value] : rec.e_alpha) ea[format_real_key(alpha)] = nullable(value);
  j["e_alpha"] = ea;
  ordered_json mags = ordered_json::array();
  ordered_json mag = ordered_json::object();
  ordered_json pmag = ordered_json::object();
  for (const auto& m : rec.magnitudes) {
    ordered_json entry = {{"scale_token", m.token.label()},
                          {"scale", m.result.scale},
                          {"mag", nullable(m.result.mag)}};
    if (rec.pmag_reported) entry["pmag"] = nullable(m.result.pmag);
    entry["residual"] = m.result.residual;
    entry["solver"] = to_string(m.result.solver);
    entry["conditioning_flag"] = m.result.conditioning_flag;
    mags.push_back(entry);
    mag[m.token.label()] = nullable(m.result.mag);
    pmag[m.token.label()] = nullable(m.result.pmag);
  }
  j["magnitude"] = mags;
  j["mag"] = mag;
  if (rec.pmag_reported) j["pmag"] = pmag;
  if (rec.ph_dim) {
    j["ph_dim"] = to_json(*rec.ph_dim);
    j["ph_dim"]["protocol"] = {{"min_size", rec.ph_dim_protocol->min_size},
                               {"step", rec.ph_dim_protocol->step},
                               {"repeats", rec.ph_dim_protocol->repeats},
                               {"seed", rec.ph_dim_protocol->seed}};
  }
  ordered_json values = ordered_json::object();
  for (const auto& [name, v] : rec.values()) values[name] = nullable(v);
  j["values"] = values;
  return j;
}

inline ordered_json to_json(const KendallCoefficients& c) {
  auto axis = [](const AxisCoefficient& a) {
    return ordered_json{{"valid", a.valid_slices}, {"degenerate", a.degenerate_slices}, {"singleton", a.singleton_slices}};
  };
  return {{"psi_lr", nullable(c.lr.psi)}, {"psi_bs", nullable(c.bs.psi)}, {"Psi", nullable(c.Psi)},
          {"tau", nullable(c.tau)},       {"points", c.points},
          {"slices", {{"lr", axis(c.lr)}, {"bs", axis(c.bs)}}}};
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ---------------------------------------------------------------------------
// Grid report

struct GridSpec {
  std::vector<MetricRequest> metrics{MetricRequest{}};
  ComplexityRequest complexities;
  GapMode gap_mode = GapMode::Worst;
  std::uint64_t seed = 0;
  bool degenerate_as_zero = false;
};

inline ordered_json to_json(const GridSpec& spec) {
  ordered_json metrics = ordered_json::array();
  for (const auto& m : spec.metrics) {
    ordered_json j = {{"kind", m.kind == MetricKind::Euclidean ? "euclid"
                               : m.kind == MetricKind::RhoP    ? "rho-p"
                                                               : "zero-one"},
                      {"label", m.tag().label()}};
    if (m.kind == MetricKind::RhoP) {
      j["p"] = m.p;
      j["subsample"] = m.subsample;
    }
    if (m.projection) {
      j["proj_eps"] = m.projection->distortion_eps;
      j["proj_dim"] = m.projection->target_dim ? ordered_json(*m.projection->target_dim) : ordered_json("auto");
    }
    metrics.push_back(j);
  }
  ordered_json scales = ordered_json::array();
  for (const auto& s : spec.complexities.scales) scales.push_back(s.label());
  ordered_json j = {{"metrics", metrics},
                    {"alphas", spec.complexities.alphas},
                    {"scales", scales},
                    {"pmag", spec.complexities.pmag},
                    {"gap_mode", to_string(spec.gap_mode)},
                    {"seed", spec.seed},
                    {"degenerate_as_zero", spec.degenerate_as_zero}};
  if (spec.complexities.ph_dim) {
    const auto& p = *spec.complexities.ph_dim;
    j["ph_dim"] = {{"min_size", p.min_size}, {"step", p.step}, {"repeats", p.repeats}, {"seed", p.seed}};
  } else {
    j["ph_dim"] = false;
  }
  return j;
}

/// Parses a grid spec file; absent keys keep their defaults.
inline GridSpec parse_grid_spec(const nlohmann::json& j) {
  GridSpec spec;
  try {
    spec.seed = j.value("seed", std::uint64_t{0});
    const double subsample = j.value("subsample", 0.10);
    if (j.contains("metrics")) {
      spec.metrics.clear();
      for (const auto& m : j.at("metrics")) {
        MetricRequest req;
        req.kind = parse_metric_kind(m.is_string() ? m.get<std::string>() : m.at("kind").get<std::string>());
        req.seed = spec.seed;
        req.subsample = subsample;
        if (m.is_object()) {
          req.p = m.value("p", 1.0);
          req.subsample = m.value("subsample", subsample);
          if (m.contains("proj_eps")) {
            ProjectionSpec proj;
            proj.distortion_eps = m.at("proj_eps").get<double>();
            proj.seed = spec.seed;
            if (m.contains("proj_dim") && m.at("proj_dim").is_number()) proj.target_dim = m.at("proj_dim").get<std::size_t>();
            req.projection = proj;
          }
        }
        spec.metrics.push_back(req);
      }
    } else {
      spec.metrics.front().seed = spec.seed;
      spec.metrics.front().subsample = subsample;
    }
    if (j.contains("alphas")) spec.complexities.alphas = j.at("alphas").get<std::vector<double>>();
    if (j.contains("scales")) {
      spec.complexities.scales.clear();
      for (const auto& s : j.at("scales")) {
        spec.complexities.scales.push_back(ScaleToken::parse(s.is_string() ? s.get<std::string>() : format_real(s.get<double>())));
      }
    }
    spec.complexities.pmag = j.value("pmag", true);
    if (j.contains("ph_dim")) {
      const auto& p = j.at("ph_dim");
      if (p.is_object()) {
        PhDimProtocol protocol;
        protocol.min_size = p.value("min_size", protocol.min_size);
        protocol.step = p.value("step", protocol.step);
        protocol.repeats = p.value("repeats", protocol.repeats);
        protocol.seed = p.value("seed", spec.seed);
        spec.complexities.ph_dim = protocol;
      } else if (p.is_boolean() && p.get<bool>()) {
        PhDimProtocol protocol;
        protocol.seed = spec.seed;
        spec.complexities.ph_dim = protocol;
      }
    }
    spec.gap_mode = parse_gap_mode(j.value("gap_mode", std::string("worst")));
    spec.degenerate_as_zero = j.value("degenerate_as_zero", false);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidSpec, std::string("grid spec: ") + e.what());
  } catch (const Error& e) {
    throw Error(ErrorKind::InvalidSpec, e.what());
  }
  if (spec.metrics.empty()) throw Error(ErrorKind::InvalidSpec, "grid spec names no metric");
  if (spec.complexities.alphas.empty() && spec.complexities.scales.empty() && !spec.complexities.ph_dim) {
    throw Error(ErrorKind::InvalidSpec, "grid spec names no complexity");
  }
  for (double a : spec.complexities.alphas) {
    if (!(a >= 0.0)) throw Error(ErrorKind::InvalidSpec, "alphas must be >= 0");
  }
  return spec;
}

struct BundleSource {
  std::string run_id;
  std::filesystem::path path;
};

struct GridRun {
  std::string run_id;
  RunMeta meta;
  std::vector<ComplexityRecord> complexities;  ///< one per metric that succeeded
  GapRecord gap;
};

struct GridFailure {
  std::string run_id;
  std::string path;
  std::optional<std::string> metric;
  std::string error_kind;
  std::string message;
};

struct GridReport {
  GridSpec spec;
  std::vector<GridRun> runs;
  std::vector<GridFailure> failures;
  /// "<complexity>:<metric>" -> coefficients
  std::vector<std::pair<std::string, KendallCoefficients>> coefficients;
  std::vector<std::pair<std::string, std::string>> coefficient_errors;
};

/// Lists sub-directories of `root` holding a meta.json, sorted by name.
inline std::vector<BundleSource> discover_bundles(const std::filesystem::path& root) {
  if (!std::filesystem::is_directory(root)) throw Error(ErrorKind::MissingFile, root.string() + " is not a directory");
  std::vector<BundleSource> out;
  for (const auto& entry : std::filesystem::directory_iterator(root)) {
    if (entry.is_directory() && std::filesystem::exists(entry.path() / "meta.json")) {
      out.push_back({entry.path().filename().string(), entry.path()});
    }
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.run_id < b.run_id; });
  return out;
}

/// Joins per-run values of one (complexity, metric) pair with the runs' gaps.
inline std::vector<GridPoint> grid_points(const GridReport& report, const std::string& complexity,
                                          const std::string& metric) {
  std::vector<GridPoint> rows;
  for (const auto& run : report.runs) {
    for (const auto& rec : run.complexities) {
      if (rec.metric.label() != metric) continue;
      for (const auto& [name, value] : rec.values()) {
        if (name == complexity && value) {
          rows.push_back({run.meta.learning_rate, run.meta.batch_size, *value, run.gap.get(report.spec.gap_mode)});
        }
      }
    }
  }
  return rows;
}

inline void compute_coefficients(GridReport& report) {
  report.coefficients.clear();
  report.coefficient_errors.clear();
  std::set<std::pair<std::string, std::string>> keys;  // (complexity, metric)
  for (const auto& run : report.runs) {
    for (const auto& rec : run.complexities) {
      for (const auto& [name, value] : rec.values()) keys.emplace(name, rec.metric.label());
    }
  }
  for (const auto& [complexity, metric] : keys) {
    const auto rows = grid_points(report, complexity, metric);
    const std::string id = complexity + ":" + metric;
    try {
      report.coefficients.emplace_back(id, granulated_kendall(rows, report.spec.degenerate_as_zero));
    } catch (const Error& e) {
      report.coefficient_errors.emplace_back(id, e.what());
    }
  }
}

/// Computes every requested complexity for every bundle, attaches gaps and
/// correlates them. A bundle (or one metric of it) that fails is listed under
/// failures and the rest of the grid continues. Workers write only their own
/// slot, so the result does not depend on `jobs`.
inline GridReport build_grid_report(const std::vector<BundleSource>& bundles, const GridSpec& spec,
                                    std::size_t jobs = 1) {
  struct Slot {
    std::optional<GridRun> run;
    std::vector<GridFailure> failures;
  };
  std::vector<Slot> slots(bundles.size());

  auto process = [&](std::size_t index) {
    const auto& src = bundles[index];
    Slot& slot = slots[index];
    TrajectoryBundle bundle;
    GridRun run;
    run.run_id = src.run_id;
    try {
      bundle = load_bundle(src.path);
      run.meta = bundle.run_meta;
      run.gap = gap_record(bundle, src.run_id);
    } catch (const Error& e) {
      slot.failures.push_back({src.run_id, src.path.string(), std::nullopt, std::string(to_string(e.kind())), e.what()});
      return;
    }
    for (const auto& metric : spec.metrics) {
      try {
        const DistanceMatrix d = distance_matrix_for(bundle, metric);
        run.complexities.push_back(compute_complexities(d, bundle.run_meta, spec.complexities, src.run_id));
      } catch (const Error& e) {
        slot.failures.push_back(
            {src.run_id, src.path.string(), metric.tag().label(), std::string(to_string(e.kind())), e.what()});
      }
    }
    slot.run = std::move(run);
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(jobs, bundles.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < bundles.size(); ++i) process(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < bundles.size(); i = next++) process(i);
      });
    }
  }

  GridReport report;
  report.spec = spec;
  for (auto& slot : slots) {
    if (slot.run) report.runs.push_back(std::move(*slot.run));
    for (auto& f : slot.failures) report.failures.push_back(std::move(f));
  }
  compute_coefficients(report);
  return report;
}

inline ordered_json to_json(const GridReport& report) {
  ordered_json j;
  j["config"] = to_json(report.spec);
  ordered_json runs = ordered_json::array();
  for (const auto& run : report.runs) {
    ordered_json r;
    r["run_id"] = run.run_id;
    r["run_meta"] = to_json(run.meta);
    r["gap"] = {{"gap_worst", run.gap.gap_worst}, {"gap_final", run.gap.gap_final}};
    ordered_json comps = ordered_json::object();
    for (const auto& rec : run.complexities) comps[rec.metric.label()] = to_json(rec);
    r["complexities"] = comps;
    runs.push_back(r);
  }
  j["runs"] = runs;
  ordered_json coeffs = ordered_json::object();
  for (const auto& [id, c] : report.coefficients) coeffs[id] = to_json(c);
  j["coefficients"] = coeffs;
  ordered_json coeff_errors = ordered_json::object();
  for (const auto& [id, msg] : report.coefficient_errors) coeff_errors[id] = msg;
  j["coefficient_errors"] = coeff_errors;
  ordered_json failures = ordered_json::array();
  for (const auto& f : report.failures) {
    failures.push_back({{"run_id", f.run_id},
                        {"path", f.path},
                        {"metric", f.metric ? ordered_json(*f.metric) : ordered_json(nullptr)},
                        {"error_kind", f.error_kind},
                        {"message", f.message}});
  }
  j["failures"] = failures;
  return j;
}

namespace detail {

inline std::string csv_real(std::optional<double> v) { return v ? format_real(*v) : std::string(); }

inline std::string sanitize_file_component(std::string s) {
  for (char& c : s) {
    if (c == '/' || c == '\\' || c == ':' || c == ' ') c = '_';
  }
  return s;
}

}  // namespace detail

/// Writes grid_report.json, grid_report.csv (one row per run x metric x
/// complexity) and scatter/<complexity>_<metric>.csv under `dir`.
inline void write_grid_outputs(const GridReport& report, const std::filesystem::path& dir, bool timestamp) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "scatter", ec);
  if (ec) throw Error(ErrorKind::IoError, "cannot create " + dir.string() + ": " + ec.message());

  ordered_json j = to_json(report);
  if (timestamp) j["generated_at"] = utc_timestamp();
  {
    std::ofstream out(dir / "grid_report.json", std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoError, "cannot write grid_report.json");
    out << j.dump(2) << '\n';
  }
  {
    std::ofstream out(dir / "grid_report.csv", std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoError, "cannot write grid_report.csv");
    out << "run_id,learning_rate,batch_size,metric,complexity,value,gap_worst,gap_final\n";
    for (const auto& run : report.runs) {
      for (const auto& rec : run.complexities) {
        for (const auto& [name, value] : rec.values()) {
          out << run.run_id << ',' << format_real(run.meta.learning_rate) << ',' << run.meta.batch_size << ','
              << rec.metric.label() << ',' << name << ',' << detail::csv_real(value) << ','
              << format_real(run.gap.gap_worst) << ',' << format_real(run.gap.gap_final) << '\n';
        }
      }
    }
  }
  std::map<std::string, std::ofstream> scatter;
  for (const auto& run : report.runs) {
    for (const auto& rec : run.complexities) {
      for (const auto& [name, value] : rec.values()) {
        const std::string file = detail::sanitize_file_component(name + "_" + rec.metric.label()) + ".csv";
        auto [it, inserted] = scatter.try_emplace(file);
        if (inserted) {
          it->second.open(dir / "scatter" / file, std::ios::trunc);
          it->second << "run_id,learning_rate,batch_size,complexity,gap\n";
        }
        it->second << run.run_id << ',' << format_real(run.meta.learning_rate) << ',' << run.meta.batch_size << ','
                   << detail::csv_real(value) << ',' << format_real(run.gap.get(report.spec.gap_mode)) << '\n';
      }
    }
  }
}

/// Recomputes coefficients from a serialized grid report.
inline std::vector<std::pair<std::string, KendallCoefficients>> coefficients_from_report_json(
    const nlohmann::json& j, std::optional<bool> degenerate_as_zero = std::nullopt,
    std::optional<GapMode> gap_mode = std::nullopt) {
  try {
    const auto& config = j.at("config");
    const GapMode mode = gap_mode.value_or(parse_gap_mode(config.value("gap_mode", std::string("worst"))));
    const bool as_zero = degenerate_as_zero.value_or(config.value("degenerate_as_zero", false));
    std::set<std::pair<std::string, std::string>> keys;
    std::map<std::pair<std::string, std::string>, std::vector<GridPoint>> rows;
    for (const auto& run : j.at("runs")) {
      const auto& meta = run.at("run_meta");
      const double gap = run.at("gap").at(mode == GapMode::Worst ? "gap_worst" : "gap_final").get<double>();
      for (const auto& [metric, rec] : run.at("complexities").items()) {
        for (const auto& [name, value] : rec.at("values").items()) {
          std::pair<std::string, std::string> key{name, metric};
          keys.insert(key);
          if (value.is_null()) continue;
          rows[key].push_back({meta.at("learning_rate").get<double>(), meta.at("batch_size").get<std::int64_t>(),
                               value.get<double>(), gap});
        }
      }
    }
    std::vector<std::pair<std::string, KendallCoefficients>> out;
    for (const auto& key : keys) {
      const auto id = key.first + ":" + key.second;
      try {
        out.emplace_back(id, granulated_kendall(rows[key], as_zero));
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::NoValidSlice) throw;
      }
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::MetadataParse, std::string("grid report: ") + e.what());
  }
}

}  // namespace topo
