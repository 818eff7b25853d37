#pragma once

// The `topo` command line: compute, grid, synth, kendall, validate.
// Exit codes: 0 success, 1 invalid input or failed validation, 2 computation failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "analysis.hpp"
#include "error.hpp"
#include "synthgen.hpp"
#include "trajectory_store.hpp"

namespace topo::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalid = 1;
inline constexpr int kExitComputation = 2;

inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::SolverDiverged:
    case ErrorKind::DimensionOverflow:
    case ErrorKind::DegenerateInput:
    case ErrorKind::NoValidSlice:
    case ErrorKind::TooLarge:
      return kExitComputation;
    default:
      return kExitInvalid;
  }
}

struct GlobalOptions {
  bool errors_json = false;
  bool no_timestamp = false;
};

struct ComputeOptions {
  std::string bundle;
  std::string metric = "rho-p";
  double p = 1.0;
  double subsample = 0.10;
  std::optional<double> proj_eps;
  std::optional<std::size_t> proj_dim;
  std::vector<double> e_alpha;
  std::vector<std::string> mag_scales;
  bool pmag = false;
  bool ph_dim = false;
  std::size_t ph_min_size = 1000;
  std::size_t ph_step = 0;
  std::size_t ph_repeats = 5;
  std::uint64_t seed = 0;
  std::string out;
};

struct GridOptions {
  std::string root;
  std::string spec;
  std::size_t jobs = 1;
  std::string out = "grid_out";
  bool degenerate_as_zero = false;
};

struct SynthOptions {
  std::string shape = "cube";
  std::size_t dim = 2;
  std::size_t n = 1000;
  std::uint64_t seed = 0;
  double noise = 0.0;
  double separation = 10.0;
  std::string base_shape = "cube";
  std::size_t copies = 2;
  std::string out;
};

struct KendallOptions {
  std::string grid;
  std::optional<std::string> gap_mode;
  bool degenerate_as_zero = false;
  std::string out;
};

struct ValidateOptions {
  std::string bundle;
};

namespace detail {

inline void emit(const ordered_json& j, const std::string& path, std::ostream& out) {
  const std::string text = j.dump(2) + "\n";
  if (path.empty() || path == "-") {
    out << text;
    return;
  }
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error(ErrorKind::IoError, "cannot write " + path);
  f << text;
  if (!f) throw Error(ErrorKind::IoError, "failed writing " + path);
}

inline void stamp(ordered_json& j, const GlobalOptions& g) {
  if (!g.no_timestamp) j["generated_at"] = utc_timestamp();
}

inline nlohmann::json read_json_file(const std::string& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorKind::MissingFile, path + " does not exist");
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot read " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::MetadataParse, path + ": " + e.what());
  }
}

}  // namespace detail

inline int run_compute(const ComputeOptions& o, const GlobalOptions& g, std::ostream& out) {
  MetricRequest metric;
  metric.kind = parse_metric_kind(o.metric);
  metric.p = o.p;
  metric.subsample = o.subsample;
  metric.seed = o.seed;
  if (o.proj_eps || o.proj_dim) {
    if (metric.kind != MetricKind::Euclidean) {
      throw Error(ErrorKind::InvalidArgument, "--proj-eps/--proj-dim apply to the euclid metric only");
    }
    ProjectionSpec proj;
    proj.distortion_eps = o.proj_eps.value_or(proj.distortion_eps);
    proj.target_dim = o.proj_dim;
    proj.seed = o.seed;
    metric.projection = proj;
  }

  ComplexityRequest req;
  // unset complexity flags fall back to alpha = 1 and scales {sqrt-n, 0.01}
  if (!o.e_alpha.empty()) req.alphas = o.e_alpha;
  if (!o.mag_scales.empty()) {
    req.scales.clear();
    for (const auto& s : o.mag_scales) req.scales.push_back(ScaleToken::parse(s));
  }
  req.pmag = o.pmag;
  if (o.ph_dim) req.ph_dim = PhDimProtocol{o.ph_min_size, o.ph_step, o.ph_repeats, o.seed};

  const TrajectoryBundle bundle = load_bundle(o.bundle);
  const DistanceMatrix d = distance_matrix_for(bundle, metric);
  const ComplexityRecord rec = compute_complexities(d, bundle.run_meta, req, std::filesystem::path(o.bundle).filename());

  ordered_json j;
  j["bundle"] = std::filesystem::path(o.bundle).filename().string();
  j["run_meta"] = to_json(bundle.run_meta);
  const ordered_json body = to_json(rec);
  for (const auto& [key, value] : body.items()) j[key] = value;
  if (!bundle.risk_history.empty()) {
    const auto gap = gap_record(bundle, "");
    j["gap"] = {{"gap_worst", gap.gap_worst}, {"gap_final", gap.gap_final}};
  }
  ordered_json config = {{"metric", o.metric}, {"p", o.p}, {"subsample", o.subsample}, {"seed", o.seed}};
  if (metric.projection) {
    config["proj_eps"] = metric.projection->distortion_eps;
    config["proj_dim"] = metric.projection->target_dim ? ordered_json(*metric.projection->target_dim)
                                                       : ordered_json("auto");
  }
  config["e_alpha"] = req.alphas;
  config["mag_scale"] = ordered_json::array();
  for (const auto& t : req.scales) config["mag_scale"].push_back(t.label());
  config["pmag"] = o.pmag;
  config["ph_dim"] = o.ph_dim;
  j["config"] = config;
  detail::stamp(j, g);
  detail::emit(j, o.out, out);
  return kExitOk;
}

inline int run_grid(const GridOptions& o, const GlobalOptions& g, std::ostream& out) {
  GridSpec spec;
  if (!o.spec.empty()) spec = parse_grid_spec(detail::read_json_file(o.spec));
  if (o.degenerate_as_zero) spec.degenerate_as_zero = true;
  const auto bundles = discover_bundles(o.root);
  const GridReport report = build_grid_report(bundles, spec, o.jobs);
  write_grid_outputs(report, o.out, !g.no_timestamp);
  out << "grid: " << report.runs.size() << " runs, " << report.failures.size() << " failures, "
      << report.coefficients.size() << " coefficient sets -> " << o.out << "\n";
  return kExitOk;
}

inline int run_synth(const SynthOptions& o, const GlobalOptions&, std::ostream& out) {
  SynthSpec spec;
  const ShapeKind shape = parse_shape_kind(o.shape);
  if (shape == ShapeKind::Duplicated) {
    SynthSpec base;
    base.shape = parse_shape_kind(o.base_shape);
    base.dim = o.dim;
    base.n_points = o.n;
    base.seed = o.seed;
    base.noise = o.noise;
    base.separation = o.separation;
    spec = SynthSpec::duplicated(base, o.copies);
  } else {
    spec.shape = shape;
    spec.dim = o.dim;
    spec.n_points = o.n;
    spec.seed = o.seed;
    spec.noise = o.noise;
    spec.separation = o.separation;
  }
  if (o.out.empty()) throw Error(ErrorKind::InvalidArgument, "synth needs --out DIR");
  const TrajectoryBundle b = synth_bundle(spec);
  write_bundle(b, o.out);
  out << "synth: wrote " << b.point_count() << " points (" << to_string(spec.shape) << ") to " << o.out << "\n";
  return kExitOk;
}

inline int run_kendall(const KendallOptions& o, const GlobalOptions& g, std::ostream& out) {
  const auto j = detail::read_json_file(o.grid);
  std::optional<GapMode> mode;
  if (o.gap_mode) mode = parse_gap_mode(*o.gap_mode);
  const auto coeffs = coefficients_from_report_json(j, o.degenerate_as_zero ? std::optional<bool>(true) : std::nullopt,
                                                    mode);
  if (coeffs.empty()) throw Error(ErrorKind::NoValidSlice, "no complexity has a valid slice in " + o.grid);
  ordered_json result;
  ordered_json c = ordered_json::object();
  for (const auto& [id, k] : coeffs) c[id] = to_json(k);
  result["coefficients"] = c;
  detail::stamp(result, g);
  detail::emit(result, o.out, out);
  return kExitOk;
}

inline int run_validate(const ValidateOptions& o, const GlobalOptions& g, std::ostream& out) {
  const TrajectoryBundle b = read_bundle(o.bundle);
  const ValidationReport report = validate_bundle(b);
  ordered_json j;
  j["bundle"] = o.bundle;
  j["valid"] = report.empty();
  j["points"] = b.point_count();
  ordered_json v = ordered_json::array();
  for (const auto& violation : report) v.push_back({{"code", violation.code}, {"message", violation.message}});
  j["violations"] = v;
  (void)g;
  out << j.dump(2) << "\n";
  return report.empty() ? kExitOk : kExitInvalid;
}

inline void report_error(std::ostream& err, const GlobalOptions& g, std::string_view kind, const std::string& message,
                         int code) {
  if (g.errors_json) {
    err << ordered_json{{"error_kind", kind}, {"message", message}, {"exit_code", code}}.dump() << "\n";
  } else {
    err << "topo: " << message << "\n";
  }
}

/// Parses argv and dispatches; never throws.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"topo: topological complexity of training trajectories"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "topo 0.1.0");

  GlobalOptions g;
  app.add_flag("--errors-json", g.errors_json, "Report errors on stderr as one JSON object");
  app.add_flag("--no-timestamp", g.no_timestamp, "Omit generation timestamps from reports");

  ComputeOptions co;
  auto* compute = app.add_subcommand("compute", "Complexities of one trajectory bundle");
  compute->add_option("--bundle", co.bundle, "Bundle directory")->required();
  compute->add_option("--metric", co.metric, "euclid | rho-p | zero-one")
      ->check(CLI::IsMember({"euclid", "euclidean", "rho-p", "zero-one"}));
  compute->add_option("--p", co.p, "Order of the rho-p pseudometric");
  compute->add_option("--subsample", co.subsample, "Fraction of the training set used by rho-p")
      ->check(CLI::Range(0.0, 1.0));
  compute->add_option("--proj-eps", co.proj_eps, "Random projection distortion (euclid)");
  compute->add_option("--proj-dim", co.proj_dim, "Random projection target dimension (euclid)");
  compute->add_option("--e-alpha", co.e_alpha, "alpha for E_alpha (repeatable)")->take_all()->allow_extra_args(false);
  compute->add_option("--mag-scale", co.mag_scales, "Magnitude scale: sqrt-n or a positive real (repeatable)")
      ->allow_extra_args(false);
  compute->add_flag("--pmag", co.pmag, "Also report positive magnitude");
  compute->add_flag("--ph-dim", co.ph_dim, "Estimate the PH dimension");
  compute->add_option("--ph-min-size", co.ph_min_size, "Smallest PH-dim sample");
  compute->add_option("--ph-step", co.ph_step, "PH-dim sample size step (0 = auto)");
  compute->add_option("--ph-repeats", co.ph_repeats, "PH-dim repeats per sample size");
  compute->add_option("--seed", co.seed, "Seed for every random choice");
  compute->add_option("--out", co.out, "Output JSON (stdout when omitted)");

  GridOptions go;
  auto* grid = app.add_subcommand("grid", "Complexities and Kendall coefficients over a bundle grid");
  grid->add_option("--root", go.root, "Directory of bundle directories")->required();
  grid->add_option("--spec", go.spec, "Grid spec JSON");
  grid->add_option("--jobs", go.jobs, "Worker threads")->check(CLI::PositiveNumber);
  grid->add_option("--out", go.out, "Output directory");
  grid->add_flag("--degenerate-as-zero", go.degenerate_as_zero, "Count degenerate slices as zero correlation");

  SynthOptions so;
  auto* synth = app.add_subcommand("synth", "Write a synthetic point cloud as a weight-only bundle");
  synth->add_option("--shape", so.shape, "cube | sphere_surface | circle | gaussian | two_cluster | duplicated");
  synth->add_option("--dim", so.dim, "Ambient dimension");
  synth->add_option("--n", so.n, "Number of points");
  synth->add_option("--seed", so.seed, "Seed");
  synth->add_option("--noise", so.noise, "Gaussian jitter");
  synth->add_option("--sep", so.separation, "two_cluster separation");
  synth->add_option("--base-shape", so.base_shape, "duplicated: base shape");
  synth->add_option("--copies", so.copies, "duplicated: copies");
  synth->add_option("--out", so.out, "Bundle directory")->required();

  KendallOptions ko;
  auto* kendall = app.add_subcommand("kendall", "Recompute Kendall coefficients from a grid report");
  kendall->add_option("--grid", ko.grid, "grid_report.json")->required();
  kendall->add_option("--gap-mode", ko.gap_mode, "worst | final");
  kendall->add_flag("--degenerate-as-zero", ko.degenerate_as_zero, "Count degenerate slices as zero correlation");
  kendall->add_option("--out", ko.out, "Output JSON (stdout when omitted)");

  ValidateOptions vo;
  auto* validate = app.add_subcommand("validate", "Check a bundle against the format invariants");
  validate->add_option("--bundle", vo.bundle, "Bundle directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << "topo 0.1.0\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    report_error(err, g, "InvalidArgument", e.what(), kExitInvalid);
    return kExitInvalid;
  }

  try {
    if (*compute) return run_compute(co, g, out);
    if (*grid) return run_grid(go, g, out);
    if (*synth) return run_synth(so, g, out);
    if (*kendall) return run_kendall(ko, g, out);
    if (*validate) return run_validate(vo, g, out);
  } catch (const Error& e) {
    const int code = exit_code_for(e.kind());
    report_error(err, g, to_string(e.kind()), e.what(), code);
    return code;
  } catch (const std::exception& e) {
    report_error(err, g, "Internal", e.what(), kExitComputation);
    return kExitComputation;
  }
  return kExitInvalid;
}

}  // namespace topo::cli
