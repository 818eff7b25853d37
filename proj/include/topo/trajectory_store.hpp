#pragma once

// On-disk trajectory bundles.
//
// A bundle is a directory:
//   meta.json         run metadata, iteration index, shape declarations, checksums
//   weights.f64       T_pts x D   float64, row-major, little-endian
//   losses.f64        T_pts x m   float64, row-major, little-endian
//   losses01.u8       T_pts x m   uint8 in {0,1}
//   risk_history.csv  iteration,train_risk,test_risk
//
// Shapes live only in meta.json; the binary files carry no header.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <zlib.h>

#include <json.hpp>

#include "error.hpp"
#include "format.hpp"
#include "matrix.hpp"

namespace topo {

namespace fs = std::filesystem;

struct RunMeta {
  double learning_rate = 1.0;
  std::int64_t batch_size = 1;
  std::string optimizer;
  std::int64_t seed = 0;
  std::int64_t n_train = 1;
  double loss_bound = 1.0;
  std::int64_t tau = 0;
  std::int64_t T = 0;
  std::string dataset;
  std::string model;

  bool operator==(const RunMeta&) const = default;
};

struct WeightTrajectory {
  RealMatrix matrix;

  bool operator==(const WeightTrajectory&) const = default;
};

struct LossTrajectory {
  RealMatrix matrix;
  std::vector<std::int64_t> sample_ids;
  double subsample_fraction = 1.0;

  bool operator==(const LossTrajectory&) const = default;
};

struct BinaryLossTrajectory {
  BinaryMatrix matrix;
  std::vector<std::int64_t> sample_ids;

  bool operator==(const BinaryLossTrajectory&) const = default;
};

struct RiskRecord {
  std::int64_t iteration = 0;
  double train_risk = 0.0;
  double test_risk = 0.0;

  bool operator==(const RiskRecord&) const = default;
};

struct TrajectoryBundle {
  RunMeta run_meta;
  /// Training iteration of each recorded row, shared by every trajectory.
  std::vector<std::int64_t> iteration_index;
  std::optional<WeightTrajectory> weights;
  std::optional<LossTrajectory> losses;
  std::optional<BinaryLossTrajectory> losses01;
  std::vector<RiskRecord> risk_history;
  /// Unrecognised meta.json keys (e.g. projection provenance written by the
  /// recorder), preserved across a read/write cycle.
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();

  std::size_t point_count() const {
    if (weights) return weights->matrix.rows;
    if (losses) return losses->matrix.rows;
    if (losses01) return losses01->matrix.rows;
    return 0;
  }

  bool operator==(const TrajectoryBundle&) const = default;
};

struct Violation {
  std::string code;
  std::string message;
};

using ValidationReport = std::vector<Violation>;

namespace detail {

inline void add_violation(ValidationReport& report, std::string code, std::string message) {
  report.push_back({std::move(code), std::move(message)});
}

template <typename T>
bool all_finite(const Matrix<T>& m) {
  return std::all_of(m.data.begin(), m.data.end(), [](T v) { return std::isfinite(static_cast<double>(v)); });
}

inline std::string crc32_hex(const void* data, std::size_t bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  const auto* p = static_cast<const Bytef*>(data);
  while (bytes > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes, 1u << 30));
    crc = ::crc32(crc, p, chunk);
    p += chunk;
    bytes -= chunk;
  }
  char buf[9];
  std::snprintf(buf, sizeof(buf), "%08lx", static_cast<unsigned long>(crc));
  return buf;
}

inline std::vector<char> read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::MissingFile, "cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  std::vector<char> bytes(size);
  if (size > 0 && !in.read(bytes.data(), static_cast<std::streamsize>(size))) {
    throw Error(ErrorKind::IoError, "short read on " + path.string());
  }
  return bytes;
}

inline void write_file_bytes(const fs::path& path, const void* data, std::size_t size) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoError, "cannot create " + path.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  if (!out) throw Error(ErrorKind::IoError, "write failed on " + path.string());
}

inline std::vector<char> encode_f64(const RealMatrix& m) {
  std::vector<char> bytes(m.data.size() * sizeof(double));
  for (std::size_t i = 0; i < m.data.size(); ++i) {
    auto bits = std::bit_cast<std::uint64_t>(m.data[i]);
    for (int b = 0; b < 8; ++b) bytes[i * 8 + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
  }
  return bytes;
}

inline std::vector<double> decode_f64(const std::vector<char>& bytes) {
  std::vector<double> values(bytes.size() / sizeof(double));
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) {
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[i * 8 + b])) << (8 * b);
    }
    values[i] = std::bit_cast<double>(bits);
  }
  return values;
}

template <typename Json>
const Json& require(const Json& j, const char* key) {
  if (!j.contains(key)) throw Error(ErrorKind::MetadataParse, std::string("meta.json lacks '") + key + "'");
  return j.at(key);
}

struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::string file;
  std::optional<std::string> crc32;
};

template <typename Json>
Shape parse_shape(const Json& section, const char* default_file) {
  Shape s;
  s.rows = require(section, "rows").template get<std::size_t>();
  s.cols = require(section, "cols").template get<std::size_t>();
  s.file = section.value("file", std::string(default_file));
  if (section.contains("crc32")) s.crc32 = section.at("crc32").template get<std::string>();
  return s;
}

inline std::vector<char> read_declared(const fs::path& dir, const Shape& shape, std::size_t elem_size) {
  const fs::path path = dir / shape.file;
  if (!fs::exists(path)) throw Error(ErrorKind::MissingFile, path.string() + " declared in meta.json but absent");
  auto bytes = read_file_bytes(path);
  const std::size_t expected = shape.rows * shape.cols * elem_size;
  if (bytes.size() != expected) {
    throw Error(ErrorKind::ShapeMismatch, shape.file + ": declared " + std::to_string(shape.rows) + "x" +
                                              std::to_string(shape.cols) + " needs " + std::to_string(expected) +
                                              " bytes, file has " + std::to_string(bytes.size()));
  }
  if (shape.crc32 && *shape.crc32 != crc32_hex(bytes.data(), bytes.size())) {
    throw Error(ErrorKind::IoError, shape.file + ": checksum mismatch");
  }
  return bytes;
}

inline std::vector<RiskRecord> read_risk_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::MissingFile, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::MetadataParse, "risk_history.csv is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "iteration,train_risk,test_risk") {
    throw Error(ErrorKind::MetadataParse, "risk_history.csv header must be iteration,train_risk,test_risk");
  }
  std::vector<RiskRecord> records;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
    if (c2 == std::string::npos) {
      throw Error(ErrorKind::MetadataParse, "risk_history.csv line " + std::to_string(lineno) + ": expected 3 fields");
    }
    const std::string_view view(line);
    const auto it = parse_integer(view.substr(0, c1));
    const auto train = parse_real(view.substr(c1 + 1, c2 - c1 - 1));
    const auto test = parse_real(view.substr(c2 + 1));
    if (!it || !train || !test) {
      throw Error(ErrorKind::MetadataParse, "risk_history.csv line " + std::to_string(lineno) + ": bad number");
    }
    if (!std::isfinite(*train) || !std::isfinite(*test)) {
      throw Error(ErrorKind::NonFiniteEntry, "risk_history.csv line " + std::to_string(lineno));
    }
    records.push_back({*it, *train, *test});
  }
  return records;
}

}  // namespace detail

/// Checks every bundle invariant; an empty report means the bundle is valid.
inline ValidationReport validate_bundle(const TrajectoryBundle& b) {
  ValidationReport report;
  const RunMeta& meta = b.run_meta;
  if (!(meta.learning_rate > 0.0) || !std::isfinite(meta.learning_rate)) {
    detail::add_violation(report, "meta_range", "learning_rate must be a positive real");
  }
  if (meta.batch_size < 1) detail::add_violation(report, "meta_range", "batch_size must be >= 1");
  if (meta.n_train < 1) detail::add_violation(report, "meta_range", "n_train must be >= 1");
  if (!(meta.loss_bound > 0.0) || !std::isfinite(meta.loss_bound)) {
    detail::add_violation(report, "meta_range", "loss_bound must be > 0");
  }
  if (meta.tau > meta.T) detail::add_violation(report, "meta_range", "tau must not exceed T");

  if (!b.weights && !b.losses && !b.losses01) {
    detail::add_violation(report, "missing_trajectory", "no weights, losses or losses01 present");
  }

  const std::size_t points = b.iteration_index.size();
  auto check_rows = [&](const char* name, std::size_t rows) {
    if (rows != points) {
      detail::add_violation(report, "shape_mismatch",
                            std::string(name) + " has " + std::to_string(rows) + " rows but iteration_index has " +
                                std::to_string(points));
    }
  };
  if (b.weights) {
    const auto& m = b.weights->matrix;
    check_rows("weights", m.rows);
    if (m.data.size() != m.rows * m.cols) detail::add_violation(report, "shape_mismatch", "weights buffer size");
    if (!detail::all_finite(m)) detail::add_violation(report, "non_finite", "weights contain non-finite entries");
  }
  if (b.losses) {
    const auto& l = *b.losses;
    check_rows("losses", l.matrix.rows);
    if (l.matrix.data.size() != l.matrix.rows * l.matrix.cols) {
      detail::add_violation(report, "shape_mismatch", "losses buffer size");
    }
    if (l.sample_ids.size() != l.matrix.cols) {
      detail::add_violation(report, "sample_ids", "losses sample_ids length differs from column count");
    }
    if (!(l.subsample_fraction > 0.0 && l.subsample_fraction <= 1.0)) {
      detail::add_violation(report, "subsample_fraction", "losses subsample_fraction must lie in (0,1]");
    }
    if (!detail::all_finite(l.matrix)) {
      detail::add_violation(report, "non_finite", "losses contain non-finite entries");
    } else {
      const auto [lo, hi] = std::minmax_element(l.matrix.data.begin(), l.matrix.data.end());
      if (lo != l.matrix.data.end() && (*lo < 0.0 || *hi > meta.loss_bound)) {
        detail::add_violation(report, "loss_range",
                              "loss entries must lie in [0, " + format_real(meta.loss_bound) + "], found range [" +
                                  format_real(*lo) + ", " + format_real(*hi) + "]");
      }
    }
  }
  if (b.losses01) {
    const auto& l = *b.losses01;
    check_rows("losses01", l.matrix.rows);
    if (l.matrix.data.size() != l.matrix.rows * l.matrix.cols) {
      detail::add_violation(report, "shape_mismatch", "losses01 buffer size");
    }
    if (l.sample_ids.size() != l.matrix.cols) {
      detail::add_violation(report, "sample_ids", "losses01 sample_ids length differs from column count");
    }
    if (std::any_of(l.matrix.data.begin(), l.matrix.data.end(), [](unsigned char v) { return v > 1; })) {
      detail::add_violation(report, "binary_range", "losses01 entries must be 0 or 1");
    }
  }

  for (std::size_t i = 0; i < points; ++i) {
    const auto it = b.iteration_index[i];
    if (it < meta.tau || it > meta.T) {
      detail::add_violation(report, "iteration_range",
                            "iteration_index entry " + std::to_string(it) + " outside [tau, T]");
      break;
    }
    if (i > 0 && it <= b.iteration_index[i - 1]) {
      detail::add_violation(report, "iteration_order", "iteration_index must be strictly increasing");
      break;
    }
  }

  for (std::size_t i = 0; i < b.risk_history.size(); ++i) {
    const auto& r = b.risk_history[i];
    if (r.iteration < meta.tau || r.iteration > meta.T) {
      detail::add_violation(report, "risk_range",
                            "risk_history iteration " + std::to_string(r.iteration) + " outside [tau, T]");
      break;
    }
    if (i > 0 && r.iteration <= b.risk_history[i - 1].iteration) {
      detail::add_violation(report, "risk_order", "risk_history iterations must be strictly increasing");
      break;
    }
  }
  for (const auto& r : b.risk_history) {
    if (!std::isfinite(r.train_risk) || !std::isfinite(r.test_risk)) {
      detail::add_violation(report, "non_finite", "risk_history contains non-finite risks");
      break;
    }
  }
  return report;
}

inline std::string describe(const ValidationReport& report) {
  std::string text;
  for (const auto& v : report) {
    if (!text.empty()) text += "; ";
    text += v.code + ": " + v.message;
  }
  return text;
}

/// Reads a bundle directory, checking files, byte lengths and finiteness but
/// not the semantic invariants (see validate_bundle / load_bundle).
inline TrajectoryBundle read_bundle(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorKind::MissingFile, "bundle directory " + dir.string() + " not found");
  const fs::path meta_path = dir / "meta.json";
  if (!fs::exists(meta_path)) throw Error(ErrorKind::MissingFile, meta_path.string() + " not found");

  nlohmann::ordered_json meta;
  try {
    std::ifstream in(meta_path);
    meta = nlohmann::ordered_json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::MetadataParse, meta_path.string() + ": " + e.what());
  }
  if (!meta.is_object()) throw Error(ErrorKind::MetadataParse, "meta.json must hold an object");

  TrajectoryBundle b;
  try {
    const auto& plain = meta;
    RunMeta& rm = b.run_meta;
    rm.learning_rate = detail::require(plain, "learning_rate").get<double>();
    rm.batch_size = detail::require(plain, "batch_size").get<std::int64_t>();
    rm.optimizer = plain.value("optimizer", std::string());
    rm.seed = plain.value("seed", std::int64_t{0});
    rm.n_train = detail::require(plain, "n_train").get<std::int64_t>();
    rm.loss_bound = detail::require(plain, "loss_bound").get<double>();
    rm.tau = detail::require(plain, "tau").get<std::int64_t>();
    rm.T = detail::require(plain, "T").get<std::int64_t>();
    rm.dataset = plain.value("dataset", std::string());
    rm.model = plain.value("model", std::string());
    b.iteration_index = detail::require(plain, "iteration_index").get<std::vector<std::int64_t>>();

    if (plain.contains("weights")) {
      const auto shape = detail::parse_shape(plain.at("weights"), "weights.f64");
      auto bytes = detail::read_declared(dir, shape, sizeof(double));
      b.weights = WeightTrajectory{RealMatrix(shape.rows, shape.cols, detail::decode_f64(bytes))};
      if (!detail::all_finite(b.weights->matrix)) {
        throw Error(ErrorKind::NonFiniteEntry, "weights.f64 contains non-finite values");
      }
    }
    if (plain.contains("losses")) {
      const auto& sec = plain.at("losses");
      const auto shape = detail::parse_shape(sec, "losses.f64");
      auto bytes = detail::read_declared(dir, shape, sizeof(double));
      LossTrajectory l;
      l.matrix = RealMatrix(shape.rows, shape.cols, detail::decode_f64(bytes));
      l.sample_ids = detail::require(sec, "sample_ids").get<std::vector<std::int64_t>>();
      l.subsample_fraction = sec.value("subsample_fraction", 1.0);
      if (!detail::all_finite(l.matrix)) throw Error(ErrorKind::NonFiniteEntry, "losses.f64 contains non-finite values");
      b.losses = std::move(l);
    }
    if (plain.contains("losses01")) {
      const auto& sec = plain.at("losses01");
      const auto shape = detail::parse_shape(sec, "losses01.u8");
      auto bytes = detail::read_declared(dir, shape, 1);
      BinaryLossTrajectory l;
      l.matrix = BinaryMatrix(shape.rows, shape.cols, std::vector<unsigned char>(bytes.begin(), bytes.end()));
      l.sample_ids = detail::require(sec, "sample_ids").get<std::vector<std::int64_t>>();
      b.losses01 = std::move(l);
    }
    if (plain.contains("risk_history")) {
      const auto& sec = plain.at("risk_history");
      const std::string file = sec.value("file", std::string("risk_history.csv"));
      b.risk_history = detail::read_risk_csv(dir / file);
      if (sec.contains("records") && sec.at("records").get<std::size_t>() != b.risk_history.size()) {
        throw Error(ErrorKind::ShapeMismatch, "risk_history.csv record count differs from meta.json");
      }
    } else if (fs::exists(dir / "risk_history.csv")) {
      b.risk_history = detail::read_risk_csv(dir / "risk_history.csv");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::MetadataParse, meta_path.string() + ": " + e.what());
  }

  static constexpr const char* known[] = {"format",   "version",   "learning_rate", "batch_size", "optimizer",
                                          "seed",     "n_train",   "loss_bound",    "tau",        "T",
                                          "dataset",  "model",     "iteration_index", "weights",  "losses",
                                          "losses01", "risk_history"};
  for (const auto& [key, value] : meta.items()) {
    if (std::find(std::begin(known), std::end(known), key) == std::end(known)) b.extra[key] = value;
  }
  return b;
}

/// Reads and fully validates a bundle; throws InvalidBundle on any violated invariant.
inline TrajectoryBundle load_bundle(const fs::path& dir) {
  TrajectoryBundle b = read_bundle(dir);
  if (const auto report = validate_bundle(b); !report.empty()) {
    throw Error(ErrorKind::InvalidBundle, dir.string() + ": " + describe(report));
  }
  return b;
}

inline void write_bundle(const TrajectoryBundle& b, const fs::path& dir) {
  if (const auto report = validate_bundle(b); !report.empty()) {
    throw Error(ErrorKind::InvalidBundle, "refusing to write invalid bundle: " + describe(report));
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::IoError, "cannot create " + dir.string() + ": " + ec.message());

  nlohmann::ordered_json meta;
  meta["format"] = "topo-bundle";
  meta["version"] = 1;
  const RunMeta& rm = b.run_meta;
  meta["learning_rate"] = rm.learning_rate;
  meta["batch_size"] = rm.batch_size;
  meta["optimizer"] = rm.optimizer;
  meta["seed"] = rm.seed;
  meta["n_train"] = rm.n_train;
  meta["loss_bound"] = rm.loss_bound;
  meta["tau"] = rm.tau;
  meta["T"] = rm.T;
  meta["dataset"] = rm.dataset;
  meta["model"] = rm.model;
  meta["iteration_index"] = b.iteration_index;

  for (const char* name : {"weights.f64", "losses.f64", "losses01.u8", "risk_history.csv"}) {
    fs::remove(dir / name, ec);
  }

  if (b.weights) {
    const auto bytes = detail::encode_f64(b.weights->matrix);
    detail::write_file_bytes(dir / "weights.f64", bytes.data(), bytes.size());
    meta["weights"] = {{"file", "weights.f64"},
                       {"rows", b.weights->matrix.rows},
                       {"cols", b.weights->matrix.cols},
                       {"dtype", "float64-le"},
                       {"crc32", detail::crc32_hex(bytes.data(), bytes.size())}};
  }
  if (b.losses) {
    const auto bytes = detail::encode_f64(b.losses->matrix);
    detail::write_file_bytes(dir / "losses.f64", bytes.data(), bytes.size());
    meta["losses"] = {{"file", "losses.f64"},
                      {"rows", b.losses->matrix.rows},
                      {"cols", b.losses->matrix.cols},
                      {"dtype", "float64-le"},
                      {"crc32", detail::crc32_hex(bytes.data(), bytes.size())},
                      {"sample_ids", b.losses->sample_ids},
                      {"subsample_fraction", b.losses->subsample_fraction}};
  }
  if (b.losses01) {
    const auto& data = b.losses01->matrix.data;
    detail::write_file_bytes(dir / "losses01.u8", data.data(), data.size());
    meta["losses01"] = {{"file", "losses01.u8"},
                        {"rows", b.losses01->matrix.rows},
                        {"cols", b.losses01->matrix.cols},
                        {"dtype", "uint8"},
                        {"crc32", detail::crc32_hex(data.data(), data.size())},
                        {"sample_ids", b.losses01->sample_ids}};
  }
  if (!b.risk_history.empty()) {
    std::ofstream out(dir / "risk_history.csv", std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoError, "cannot create risk_history.csv");
    out << "iteration,train_risk,test_risk\n";
    for (const auto& r : b.risk_history) {
      out << r.iteration << ',' << format_real(r.train_risk) << ',' << format_real(r.test_risk) << '\n';
    }
    if (!out) throw Error(ErrorKind::IoError, "write failed on risk_history.csv");
    meta["risk_history"] = {{"file", "risk_history.csv"}, {"records", b.risk_history.size()}};
  }
  for (const auto& [key, value] : b.extra.items()) meta[key] = value;

  std::ofstream out(dir / "meta.json", std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoError, "cannot create meta.json");
  out << meta.dump(2) << '\n';
  if (!out) throw Error(ErrorKind::IoError, "write failed on meta.json");
}

}  // namespace topo
