#pragma once

// Dataset ingestion (CSV or raw float64), seeded train/test split, synthetic
// motif data, CSV writers, and the binary model file.
//
// Model file layout (all integers and floats little-endian):
//   "DCTL"  u8 version(=1)  u32 L  u32 K  u32 N
//   L blocks of K*K f64, row-major (T_1 .. T_L)
//   u32 byte length + UTF-8 JSON text (config and training metadata)
//   u32 CRC-32 of every preceding byte

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dctl/conv.hpp"
#include "dctl/errors.hpp"
#include "dctl/eval.hpp"
#include "dctl/model.hpp"

namespace dctl {

enum class DatasetFormat { csv_matrix, raw_f64 };

inline DatasetFormat parse_format(std::string_view s) {
  if (s == "csv" || s == "csv-matrix") return DatasetFormat::csv_matrix;
  if (s == "raw-f64" || s == "raw") return DatasetFormat::raw_f64;
  throw std::invalid_argument("unknown dataset format '" + std::string(s) + "' (expected csv-matrix or raw-f64)");
}

struct DatasetOptions {
  DatasetFormat format = DatasetFormat::csv_matrix;
  bool has_labels = false;  // final column holds a non-negative integer label
  std::size_t raw_columns = 0;  // raw-f64 only: values per row, label included
  bool normalize = true;  // per-sample min-max to [0, 1]
};

struct Dataset {
  std::vector<Sample> samples;
  Labels labels;  // empty when the source has no label column

  bool has_labels() const noexcept { return !labels.empty(); }
  std::size_t size() const noexcept { return samples.size(); }

  Matrix matrix() const {
    if (samples.empty()) return Matrix();
    Matrix out(static_cast<Eigen::Index>(samples.size()), samples.front().values.size());
    for (std::size_t i = 0; i < samples.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = samples[i].values.transpose();
    return out;
  }
};

/// Constant samples map to all zeros.
inline void normalize_min_max(Dataset& ds) {
  for (auto& s : ds.samples) {
    const double lo = s.values.minCoeff(), hi = s.values.maxCoeff();
    if (hi > lo)
      s.values = (s.values.array() - lo) / (hi - lo);
    else
      s.values.setZero();
  }
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline double parse_cell(std::string_view cell, std::size_t row, std::size_t col) {
  cell = trim(cell);
  double v = 0.0;
  const auto* first = cell.data();
  const auto* last = cell.data() + cell.size();
  if (!cell.empty() && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (cell.empty() || ec != std::errc() || ptr != last) {
    std::ostringstream os;
    os << "non-numeric cell '" << cell << "' at row " << row << ", column " << col;
    throw parse_error(os.str(), row, col);
  }
  if (!std::isfinite(v)) {
    std::ostringstream os;
    os << "non-finite value at row " << row << ", column " << col;
    throw parse_error(os.str(), row, col);
  }
  return v;
}

inline int to_label(double v, std::size_t row, std::size_t col) {
  if (v < 0.0 || v != std::floor(v) || v > static_cast<double>(std::numeric_limits<int>::max())) {
    std::ostringstream os;
    os << "label must be a non-negative integer at row " << row << ", column " << col;
    throw parse_error(os.str(), row, col);
  }
  return static_cast<int>(v);
}

inline void push_row(Dataset& ds, std::vector<double>& row, bool has_labels, std::size_t line) {
  const std::size_t width = row.size() - (has_labels ? 1 : 0);
  if (width == 0) throw parse_error("row " + std::to_string(line) + " has no sample values", line, 0);
  if (has_labels) ds.labels.push_back(to_label(row.back(), line, row.size()));
  Vector v(static_cast<Eigen::Index>(width));
  for (std::size_t j = 0; j < width; ++j) v(static_cast<Eigen::Index>(j)) = row[j];
  ds.samples.push_back(Sample{std::move(v), "row" + std::to_string(line)});
}

}  // namespace detail

/// Comma-separated rows, one sample per line. Blank lines and lines starting
/// with '#' are skipped. Rows and columns in errors are 1-based line/field numbers.
inline Dataset parse_csv_dataset(std::istream& in, bool has_labels) {
  Dataset ds;
  std::string line;
  std::size_t lineno = 0, width = 0;
  std::vector<double> row;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = detail::trim(line);
    if (t.empty() || t.front() == '#') continue;
    row.clear();
    std::size_t col = 1, start = 0;
    for (;;) {
      const auto comma = t.find(',', start);
      const auto cell = t.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
      row.push_back(detail::parse_cell(cell, lineno, col));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
      ++col;
    }
    if (width == 0) width = row.size();
    if (row.size() != width) {
      std::ostringstream os;
      os << "ragged row " << lineno << ": expected " << width << " columns, found " << row.size();
      throw parse_error(os.str(), lineno, std::min(row.size(), width) + 1);
    }
    detail::push_row(ds, row, has_labels, lineno);
  }
  return ds;
}

inline Dataset parse_raw_f64_dataset(std::istream& in, std::size_t columns, bool has_labels) {
  if (columns == 0) throw std::invalid_argument("raw-f64 datasets need the number of columns per row");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t row_bytes = columns * 8;
  if (bytes.size() % row_bytes != 0)
    throw parse_error("raw-f64 file size is not a multiple of the row size", bytes.size() / row_bytes + 1, 0);
  Dataset ds;
  std::vector<double> row(columns);
  for (std::size_t r = 0; r < bytes.size() / row_bytes; ++r) {
    for (std::size_t c = 0; c < columns; ++c) {
      std::uint64_t u = 0;
      for (int b = 7; b >= 0; --b) u = (u << 8) | static_cast<unsigned char>(bytes[r * row_bytes + c * 8 + static_cast<std::size_t>(b)]);
      const double v = std::bit_cast<double>(u);
      if (!std::isfinite(v)) {
        std::ostringstream os;
        os << "non-finite value at row " << r + 1 << ", column " << c + 1;
        throw parse_error(os.str(), r + 1, c + 1);
      }
      row[c] = v;
    }
    detail::push_row(ds, row, has_labels, r + 1);
  }
  return ds;
}

inline Dataset load_dataset(const std::string& path, const DatasetOptions& opts = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset '" + path + "'");
  Dataset ds = opts.format == DatasetFormat::csv_matrix ? parse_csv_dataset(in, opts.has_labels)
                                                         : parse_raw_f64_dataset(in, opts.raw_columns, opts.has_labels);
  if (ds.samples.empty()) throw parse_error("dataset '" + path + "' has no rows", 0, 0);
  if (opts.normalize) normalize_min_max(ds);
  return ds;
}

/// Seeded shuffle, then the first round(split * M) samples (at least one)
/// become the training part.
inline std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double split, std::uint64_t seed) {
  detail::require(split > 0.0 && split <= 1.0, "split must be in (0, 1]");
  detail::require(!ds.samples.empty(), "cannot split an empty dataset");
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(split * static_cast<double>(ds.size()))),
                                               std::size_t{1}, ds.size());
  std::pair<Dataset, Dataset> out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    Dataset& dst = i < n_train ? out.first : out.second;
    dst.samples.push_back(ds.samples[order[i]]);
    if (!ds.labels.empty()) dst.labels.push_back(ds.labels[order[i]]);
  }
  return out;
}

inline std::pair<Dataset, Dataset> load_split(const std::string& path, const DatasetOptions& opts, double split,
                                              std::uint64_t seed) {
  return split_dataset(load_dataset(path, opts), split, seed);
}

struct SynthOptions {
  std::size_t classes = 3;
  std::size_t per_class = 20;
  Eigen::Index length = 32;
  std::size_t motif_count = 3;
  double noise_sigma = 0.1;
  std::uint64_t seed = 0;
  Eigen::Index motif_length = 0;  // 0: min(9, max(3, N / 4))
  Eigen::Index jitter = -1;       // max circular shift; -1: max(1, N / 16)
};

/// Class c owns a sparse spike train (motif_count spikes at class-specific
/// positions) and a positive motif shape. Each sample is that spike train,
/// circularly shifted by a random offset in [-jitter, jitter], convolved with
/// the class motif, plus i.i.d. Gaussian noise. Samples are emitted class by class.
inline Dataset generate_synthetic(const SynthOptions& o) {
  detail::require(o.classes >= 1 && o.per_class >= 1 && o.length >= 1 && o.motif_count >= 1,
                  "generate_synthetic: counts must be positive");
  detail::require(o.noise_sigma >= 0.0 && std::isfinite(o.noise_sigma), "generate_synthetic: noise_sigma must be >= 0");
  const Eigen::Index n = o.length;
  const Eigen::Index p = o.motif_length > 0 ? std::min(o.motif_length, n) : std::min<Eigen::Index>(n, std::min<Eigen::Index>(9, std::max<Eigen::Index>(3, n / 4)));
  const Eigen::Index jitter = o.jitter >= 0 ? o.jitter : std::max<Eigen::Index>(1, n / 16);
  std::mt19937_64 rng(o.seed);
  std::uniform_real_distribution<double> amp(0.5, 1.5), shape(0.1, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);

  std::vector<Vector> spikes, motifs;
  for (std::size_t c = 0; c < o.classes; ++c) {
    std::vector<Eigen::Index> pos(static_cast<std::size_t>(n));
    std::iota(pos.begin(), pos.end(), Eigen::Index{0});
    std::shuffle(pos.begin(), pos.end(), rng);
    Vector s = Vector::Zero(n);
    for (std::size_t j = 0; j < std::min<std::size_t>(o.motif_count, static_cast<std::size_t>(n)); ++j) s(pos[j]) = amp(rng);
    Vector h(p);
    for (Eigen::Index j = 0; j < p; ++j) h(j) = shape(rng);
    spikes.push_back(std::move(s));
    motifs.push_back(std::move(h));
  }

  Dataset ds;
  std::uniform_int_distribution<Eigen::Index> shift_dist(-jitter, jitter);
  for (std::size_t c = 0; c < o.classes; ++c) {
    for (std::size_t i = 0; i < o.per_class; ++i) {
      const Eigen::Index shift = shift_dist(rng);
      Vector shifted(n);
      for (Eigen::Index t = 0; t < n; ++t) shifted(((t + shift) % n + n) % n) = spikes[c](t);
      Vector x = conv_same(shifted, motifs[c]);
      for (Eigen::Index t = 0; t < n; ++t) x(t) += o.noise_sigma * noise(rng);
      ds.samples.push_back(Sample{std::move(x), "c" + std::to_string(c) + "_" + std::to_string(i)});
      ds.labels.push_back(static_cast<int>(c));
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// CSV output

namespace detail {

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline void write_trace_csv(std::ostream& out, const std::vector<TraceEntry>& trace) {
  out << "iter,layer,objective\n";
  for (const auto& e : trace) out << e.iter << ',' << e.layer << ',' << detail::format_double(e.objective) << '\n';
}

/// One row per sample; the label (when given) is the last column. No header,
/// so the output can be read back as a dataset.
inline void write_matrix_csv(std::ostream& out, const Matrix& rows, const Labels& labels = {}) {
  detail::require(labels.empty() || static_cast<Eigen::Index>(labels.size()) == rows.rows(), "one label per row");
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    for (Eigen::Index j = 0; j < rows.cols(); ++j) {
      if (j) out << ',';
      out << detail::format_double(rows(i, j));
    }
    if (!labels.empty()) out << ',' << labels[static_cast<std::size_t>(i)];
    out << '\n';
  }
}

inline void write_dataset_csv(std::ostream& out, const Dataset& ds) { write_matrix_csv(out, ds.matrix(), ds.labels); }

// ---------------------------------------------------------------------------
// Model file

inline constexpr char kModelMagic[4] = {'D', 'C', 'T', 'L'};
inline constexpr std::uint8_t kModelVersion = 0x01;

namespace detail {

inline nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

inline double number_from(const nlohmann::json& j) {
  return j.is_null() ? std::numeric_limits<double>::infinity() : j.get<double>();
}

inline nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"num_layers", c.num_layers},
          {"num_kernels", c.num_kernels},
          {"mu", c.mu},
          {"lambda", c.lambda},
          {"beta", c.beta},
          {"gamma1", number_or_null(c.gamma1)},
          {"gamma2", c.gamma2},
          {"max_outer_iters", c.max_outer_iters},
          {"objective_tol", c.objective_tol},
          {"seed", c.seed},
          {"init_scale", c.init_scale},
          {"newton",
           {{"max_iters", c.newton.max_iters},
            {"grad_tol", c.newton.grad_tol},
            {"armijo_c", c.newton.armijo_c},
            {"backtrack_factor", c.newton.backtrack_factor},
            {"active_set_eps", c.newton.active_set_eps}}}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.num_layers = j.at("num_layers").get<std::size_t>();
  c.num_kernels = j.at("num_kernels").get<Eigen::Index>();
  c.mu = j.at("mu").get<double>();
  c.lambda = j.at("lambda").get<double>();
  c.beta = j.at("beta").get<double>();
  c.gamma1 = number_from(j.at("gamma1"));
  c.gamma2 = j.at("gamma2").get<double>();
  c.max_outer_iters = j.at("max_outer_iters").get<std::size_t>();
  c.objective_tol = j.at("objective_tol").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.init_scale = j.value("init_scale", 0.1);
  const auto& n = j.at("newton");
  c.newton.max_iters = n.at("max_iters").get<int>();
  c.newton.grad_tol = n.at("grad_tol").get<double>();
  c.newton.armijo_c = n.at("armijo_c").get<double>();
  c.newton.backtrack_factor = n.at("backtrack_factor").get<double>();
  c.newton.active_set_eps = n.at("active_set_eps").get<double>();
  return c;
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFFu));
}

inline void put_f64(std::string& out, double v) {
  const auto u = std::bit_cast<std::uint64_t>(v);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((u >> (8 * b)) & 0xFFu));
}

inline std::uint32_t get_u32(std::string_view in, std::size_t at) {
  std::uint32_t v = 0;
  for (int b = 3; b >= 0; --b) v = (v << 8) | static_cast<unsigned char>(in[at + static_cast<std::size_t>(b)]);
  return v;
}

inline double get_f64(std::string_view in, std::size_t at) {
  std::uint64_t v = 0;
  for (int b = 7; b >= 0; --b) v = (v << 8) | static_cast<unsigned char>(in[at + static_cast<std::size_t>(b)]);
  return std::bit_cast<double>(v);
}

inline std::uint32_t crc32_of(std::string_view bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  crc = ::crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

}  // namespace detail

inline std::string serialize_model(const TrainedModel& model) {
  const auto nl = model.transforms.size();
  detail::require(nl > 0, "serialize_model: model has no transforms");
  const Eigen::Index k = model.transforms.front().size();
  std::string out(kModelMagic, 4);
  out.push_back(static_cast<char>(kModelVersion));
  detail::put_u32(out, static_cast<std::uint32_t>(nl));
  detail::put_u32(out, static_cast<std::uint32_t>(k));
  detail::put_u32(out, static_cast<std::uint32_t>(model.signal_length));
  for (const auto& t : model.transforms) {
    detail::require(t.size() == k, "serialize_model: inconsistent transform sizes");
    for (Eigen::Index i = 0; i < k; ++i)
      for (Eigen::Index j = 0; j < k; ++j) detail::put_f64(out, t.matrix()(i, j));
  }
  nlohmann::json meta = {{"config", detail::config_to_json(model.config)},
                         {"num_samples", model.num_samples},
                         {"newton_warnings", model.newton_warnings}};
  auto& trace = meta["trace"] = nlohmann::json::array();
  for (const auto& e : model.trace) trace.push_back({e.iter, e.layer, detail::number_or_null(e.objective)});
  const std::string text = meta.dump();
  detail::put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  detail::put_u32(out, detail::crc32_of(out));
  return out;
}

inline TrainedModel deserialize_model(std::string_view bytes) {
  constexpr std::size_t header = 4 + 1 + 12;
  if (bytes.size() < 5) throw model_load_error(load_error_kind::truncated, "file shorter than the header");
  if (!std::equal(kModelMagic, kModelMagic + 4, bytes.begin())) throw model_load_error(load_error_kind::bad_magic, "not a DCTL model file");
  if (static_cast<std::uint8_t>(bytes[4]) != kModelVersion)
    throw model_load_error(load_error_kind::unsupported_version,
                           "unsupported version " + std::to_string(static_cast<unsigned>(static_cast<std::uint8_t>(bytes[4]))));
  if (bytes.size() < header) throw model_load_error(load_error_kind::truncated, "file shorter than the header");
  const std::uint64_t nl = detail::get_u32(bytes, 5), k = detail::get_u32(bytes, 9), n = detail::get_u32(bytes, 13);
  const std::uint64_t body = header + nl * k * k * 8;
  if (bytes.size() < body + 4) throw model_load_error(load_error_kind::truncated, "file ends inside the transform blocks");
  const std::uint64_t text_len = detail::get_u32(bytes, static_cast<std::size_t>(body));
  const std::uint64_t total = body + 4 + text_len + 4;
  if (bytes.size() < total) throw model_load_error(load_error_kind::truncated, "file ends before the checksum");
  if (bytes.size() > total) throw model_load_error(load_error_kind::bad_payload, "trailing bytes after the checksum");
  const auto stored = detail::get_u32(bytes, static_cast<std::size_t>(total - 4));
  if (stored != detail::crc32_of(bytes.substr(0, static_cast<std::size_t>(total - 4))))
    throw model_load_error(load_error_kind::checksum_mismatch, "CRC-32 does not match file contents");

  TrainedModel model;
  model.signal_length = static_cast<Eigen::Index>(n);
  std::size_t at = header;
  for (std::uint64_t l = 0; l < nl; ++l) {
    Matrix t(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
    for (Eigen::Index i = 0; i < t.rows(); ++i)
      for (Eigen::Index j = 0; j < t.cols(); ++j, at += 8) t(i, j) = detail::get_f64(bytes, at);
    try {
      model.transforms.emplace_back(std::move(t));
    } catch (const std::invalid_argument& e) {
      throw model_load_error(load_error_kind::bad_payload, e.what());
    }
  }
  try {
    const auto meta = nlohmann::json::parse(bytes.substr(static_cast<std::size_t>(body + 4), static_cast<std::size_t>(text_len)));
    model.config = detail::config_from_json(meta.at("config"));
    model.num_samples = meta.at("num_samples").get<std::size_t>();
    model.newton_warnings = meta.value("newton_warnings", std::size_t{0});
    for (const auto& e : meta.at("trace"))
      model.trace.push_back({e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>(), detail::number_from(e.at(2))});
  } catch (const nlohmann::json::exception& e) {
    throw model_load_error(load_error_kind::bad_payload, e.what());
  }
  if (model.config.num_layers != nl || model.config.num_kernels != static_cast<Eigen::Index>(k))
    throw model_load_error(load_error_kind::bad_payload, "config disagrees with the header dimensions");
  return model;
}

inline void save_model(const TrainedModel& model, const std::string& path) {
  const auto bytes = serialize_model(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write model file '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing model file '" + path + "'");
}

inline TrainedModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw model_load_error(load_error_kind::io, "cannot open '" + path + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

}  // namespace dctl
