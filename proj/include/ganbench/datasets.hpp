#pragma once

// Dataset ingestion and preparation: delimited-text and binary-tensor
// loaders, the KDD99 preprocessing rule, min-max normalization (the tanh
// generator head emits [-1, 1], so training data must live there too), and
// seeded synthetic mixtures for desk-scale runs.
//
// Loaders reject malformed input instead of coercing it. Dataset values are
// immutable after construction and freely shareable across threads.

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ganbench/binio.hpp"
#include "ganbench/common.hpp"
#include "ganbench/tensor.hpp"

namespace ganbench {

enum class ColumnKind : std::uint8_t { kContinuous, kDiscrete };

struct ColumnSpec {
  std::string name;
  ColumnKind kind = ColumnKind::kContinuous;
};

// Per-column (min, max) fitted on training data; inverting after applying is
// the identity within 1e-12 at moderate magnitudes.
struct NormState {
  std::vector<double> lo;
  std::vector<double> hi;
  std::string method = "minmax";
};

struct Dataset {
  std::string name;
  Tensor data;                                  // (n, d), after any flattening
  std::vector<int> labels;                      // empty when unlabeled
  std::vector<ColumnSpec> schema;               // size d
  std::vector<std::vector<std::string>> vocab;  // per column, discrete only
  Shape original_shape;                         // pre-flatten extents
  std::optional<NormState> norm_state;
  std::vector<std::string> label_names;         // category names for `labels`

  int rows() const { return data.rows(); }
  int cols() const { return data.cols(); }
};

inline void validate_dataset(const Dataset& ds) {
  if (ds.data.ndim() != 2) throw Error("dataset '" + ds.name + "': data must be a matrix");
  if (ds.rows() < 1) throw Error("dataset '" + ds.name + "': no rows");
  if (!ds.schema.empty() && static_cast<int>(ds.schema.size()) != ds.cols())
    throw Error("dataset '" + ds.name + "': schema covers " + std::to_string(ds.schema.size()) +
                " of " + std::to_string(ds.cols()) + " columns");
  if (!ds.labels.empty() && static_cast<int>(ds.labels.size()) != ds.rows())
    throw Error("dataset '" + ds.name + "': label count does not match row count");
  if (!ds.data.all_finite()) throw Error("dataset '" + ds.name + "': non-finite values");
}

// --- delimited text --------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  for (std::string& f : out) {
    const auto b = f.find_first_not_of(" \t\r");
    const auto e = f.find_last_not_of(" \t\r");
    f = b == std::string::npos ? std::string() : f.substr(b, e - b + 1);
  }
  return out;
}

inline bool parse_double(const std::string& tok, double& out) {
  if (tok.empty()) return false;
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last && std::isfinite(out);
}

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

}  // namespace detail

// Parse a comma-separated file against an explicit schema. A first line whose
// fields equal the schema's column names is treated as a header. Continuous
// columns must parse as finite numbers; discrete columns map tokens to codes
// in first-appearance order (the code order is recorded in `vocab`).
inline Dataset load_tabular(const std::string& path, const std::vector<ColumnSpec>& schema,
                            const std::string& name = "") {
  if (schema.empty()) throw Error("load_tabular: empty schema");
  Dataset ds;
  ds.name = name.empty() ? path : name;
  ds.schema = schema;
  ds.vocab.assign(schema.size(), {});

  const std::vector<std::string> lines = detail::read_lines(path);
  std::vector<std::map<std::string, int>> codes(schema.size());
  std::vector<double> data;
  int rows = 0;
  std::size_t start = 0;
  if (!lines.empty()) {
    const auto fields = detail::split_fields(lines[0]);
    bool is_header = fields.size() == schema.size();
    for (std::size_t j = 0; is_header && j < fields.size(); ++j)
      is_header = fields[j] == schema[j].name;
    if (is_header) start = 1;
  }
  for (std::size_t li = start; li < lines.size(); ++li) {
    if (lines[li].empty()) continue;
    const auto fields = detail::split_fields(lines[li]);
    if (fields.size() != schema.size())
      throw IoError(path + ": line " + std::to_string(li + 1) + " has " +
                    std::to_string(fields.size()) + " fields, schema expects " +
                    std::to_string(schema.size()));
    for (std::size_t j = 0; j < fields.size(); ++j) {
      if (schema[j].kind == ColumnKind::kContinuous) {
        double v = 0.0;
        if (!detail::parse_double(fields[j], v))
          throw IoError(path + ": line " + std::to_string(li + 1) + ", column '" +
                        schema[j].name + "': cannot parse '" + fields[j] + "' as a number");
        data.push_back(v);
      } else {
        auto [it, inserted] = codes[j].emplace(fields[j], static_cast<int>(ds.vocab[j].size()));
        if (inserted) ds.vocab[j].push_back(fields[j]);
        data.push_back(static_cast<double>(it->second));
      }
    }
    ++rows;
  }
  if (rows == 0) throw IoError(path + ": no data rows");
  ds.data = Tensor(Shape{rows, static_cast<int>(schema.size())}, std::move(data));
  ds.original_shape = ds.data.shape();
  validate_dataset(ds);
  return ds;
}

// Schema-free variant for all-continuous files. The first line is a header
// iff any of its fields fails to parse as a number; header names become the
// column names, otherwise columns are named c0, c1, ...
inline Dataset load_tabular(const std::string& path, const std::string& name = "") {
  const std::vector<std::string> lines = detail::read_lines(path);
  std::size_t first = 0;
  while (first < lines.size() && lines[first].empty()) ++first;
  if (first == lines.size()) throw IoError(path + ": no data rows");

  const auto head = detail::split_fields(lines[first]);
  bool header = false;
  for (const std::string& tok : head) {
    double v;
    if (!detail::parse_double(tok, v)) header = true;
  }
  std::vector<ColumnSpec> schema;
  for (std::size_t j = 0; j < head.size(); ++j)
    schema.push_back({header ? head[j] : "c" + std::to_string(j), ColumnKind::kContinuous});

  // delegate; reconstruct the header line check by prepending names
  Dataset ds;
  ds.name = name.empty() ? path : name;
  ds.schema = schema;
  ds.vocab.assign(schema.size(), {});
  std::vector<double> data;
  int rows = 0;
  for (std::size_t li = first + (header ? 1 : 0); li < lines.size(); ++li) {
    if (lines[li].empty()) continue;
    const auto fields = detail::split_fields(lines[li]);
    if (fields.size() != schema.size())
      throw IoError(path + ": line " + std::to_string(li + 1) + " has " +
                    std::to_string(fields.size()) + " fields, expected " +
                    std::to_string(schema.size()));
    for (std::size_t j = 0; j < fields.size(); ++j) {
      double v = 0.0;
      if (!detail::parse_double(fields[j], v))
        throw IoError(path + ": line " + std::to_string(li + 1) + ", column '" +
                      schema[j].name + "': cannot parse '" + fields[j] + "' as a number");
      data.push_back(v);
    }
    ++rows;
  }
  if (rows == 0) throw IoError(path + ": no data rows");
  ds.data = Tensor(Shape{rows, static_cast<int>(schema.size())}, std::move(data));
  ds.original_shape = ds.data.shape();
  validate_dataset(ds);
  return ds;
}

// --- KDD99 -------------------------------------------------------------------

// The classic 41-feature connection-record layout plus the trailing label.
inline std::vector<ColumnSpec> kdd99_schema() {
  auto C = [](const char* n) { return ColumnSpec{n, ColumnKind::kContinuous}; };
  auto D = [](const char* n) { return ColumnSpec{n, ColumnKind::kDiscrete}; };
  return {
      C("duration"), D("protocol_type"), D("service"), D("flag"), C("src_bytes"),
      C("dst_bytes"), D("land"), C("wrong_fragment"), C("urgent"), C("hot"),
      C("num_failed_logins"), D("logged_in"), C("num_compromised"), C("root_shell"),
      C("su_attempted"), C("num_root"), C("num_file_creations"), C("num_shells"),
      C("num_access_files"), C("num_outbound_cmds"), D("is_host_login"), D("is_guest_login"),
      C("count"), C("srv_count"), C("serror_rate"), C("srv_serror_rate"), C("rerror_rate"),
      C("srv_rerror_rate"), C("same_srv_rate"), C("diff_srv_rate"), C("srv_diff_host_rate"),
      C("dst_host_count"), C("dst_host_srv_count"), C("dst_host_same_srv_rate"),
      C("dst_host_diff_srv_rate"), C("dst_host_same_src_port_rate"),
      C("dst_host_srv_diff_host_rate"), C("dst_host_serror_rate"),
      C("dst_host_srv_serror_rate"), C("dst_host_rerror_rate"), C("dst_host_srv_rerror_rate"),
      D("label"),
  };
}

// Keep the first 18 continuous columns that are not identically zero, in
// schema order. The record label codes become the dataset labels.
inline Dataset preprocess_kdd99(const Dataset& raw) {
  const std::vector<ColumnSpec> expected = kdd99_schema();
  if (raw.schema.size() != expected.size())
    throw Error("preprocess_kdd99: expected the 42-column connection schema, got " +
                std::to_string(raw.schema.size()) + " columns");
  for (std::size_t j = 0; j < expected.size(); ++j)
    if (raw.schema[j].name != expected[j].name)
      throw Error("preprocess_kdd99: column " + std::to_string(j) + " is '" +
                  raw.schema[j].name + "', expected '" + expected[j].name + "'");

  std::vector<int> selected;
  std::vector<std::string> candidates;
  for (std::size_t j = 0; j < raw.schema.size(); ++j) {
    if (raw.schema[j].kind != ColumnKind::kContinuous) continue;
    bool any_nonzero = false;
    for (int i = 0; i < raw.rows() && !any_nonzero; ++i)
      any_nonzero = raw.data.at(i, static_cast<int>(j)) != 0.0;
    if (!any_nonzero) continue;
    candidates.push_back(raw.schema[j].name);
    if (selected.size() < 18) selected.push_back(static_cast<int>(j));
  }
  if (selected.size() < 18) {
    std::string msg = "preprocess_kdd99: only " + std::to_string(candidates.size()) +
                      " qualifying columns (continuous, not identically zero):";
    for (const std::string& c : candidates) msg += " " + c;
    throw Error(msg);
  }

  Dataset out;
  out.name = raw.name;
  std::vector<double> data(static_cast<std::size_t>(raw.rows()) * 18);
  for (int i = 0; i < raw.rows(); ++i)
    for (int k = 0; k < 18; ++k)
      data[static_cast<std::size_t>(i) * 18 + k] = raw.data.at(i, selected[static_cast<std::size_t>(k)]);
  out.data = Tensor(Shape{raw.rows(), 18}, std::move(data));
  for (int j : selected) out.schema.push_back(raw.schema[static_cast<std::size_t>(j)]);
  out.vocab.assign(18, {});
  out.original_shape = out.data.shape();

  const int label_col = static_cast<int>(expected.size()) - 1;
  out.labels.reserve(static_cast<std::size_t>(raw.rows()));
  for (int i = 0; i < raw.rows(); ++i)
    out.labels.push_back(static_cast<int>(raw.data.at(i, label_col)));
  out.label_names = raw.vocab.back();
  validate_dataset(out);
  return out;
}

// --- flattening ---------------------------------------------------------------

// Width of one flattened sample: the product of every axis after the first.
inline std::int64_t flat_width(const Shape& s) {
  if (s.size() < 2) throw Error("flat_width: need at least two axes, got " + shape_str(s));
  std::int64_t w = 1;
  for (std::size_t i = 1; i < s.size(); ++i) w *= s[i];
  return w;
}

// Row-major flatten of (n, a, b, ...) to (n, a*b*...). Shares storage.
inline Tensor flatten(const Tensor& t) {
  const std::int64_t w = flat_width(t.shape());
  if (w > std::numeric_limits<int>::max())
    throw Error("flatten: sample width " + std::to_string(w) + " overflows the column index");
  return t.reshaped(Shape{t.shape()[0], static_cast<int>(w)});
}

inline Dataset dataset_from_tensor(const std::string& name, const Tensor& t) {
  Dataset ds;
  ds.name = name;
  ds.original_shape = t.shape();
  ds.data = flatten(t);
  for (int j = 0; j < ds.cols(); ++j)
    ds.schema.push_back({"f" + std::to_string(j), ColumnKind::kContinuous});
  ds.vocab.assign(ds.schema.size(), {});
  validate_dataset(ds);
  return ds;
}

// --- normalization --------------------------------------------------------------

// x' = 2 (x - min) / (max - min) - 1 per column; constant columns map to 0.
inline Tensor apply_norm(const Tensor& t, const NormState& st) {
  if (t.ndim() != 2 || static_cast<std::size_t>(t.cols()) != st.lo.size())
    throw Error("apply_norm: data does not match the fitted state");
  std::vector<double> out(t.data());
  const int d = t.cols();
  for (int i = 0; i < t.rows(); ++i) {
    for (int j = 0; j < d; ++j) {
      const double span = st.hi[static_cast<std::size_t>(j)] - st.lo[static_cast<std::size_t>(j)];
      double& v = out[static_cast<std::size_t>(i) * d + j];
      v = span > 0.0 ? 2.0 * (v - st.lo[static_cast<std::size_t>(j)]) / span - 1.0 : 0.0;
    }
  }
  return Tensor(t.shape(), std::move(out));
}

inline Tensor invert_norm(const Tensor& t, const NormState& st) {
  if (t.ndim() != 2 || static_cast<std::size_t>(t.cols()) != st.lo.size())
    throw Error("invert_norm: data does not match the fitted state");
  std::vector<double> out(t.data());
  const int d = t.cols();
  for (int i = 0; i < t.rows(); ++i) {
    for (int j = 0; j < d; ++j) {
      const double lo = st.lo[static_cast<std::size_t>(j)];
      const double span = st.hi[static_cast<std::size_t>(j)] - lo;
      double& v = out[static_cast<std::size_t>(i) * d + j];
      v = span > 0.0 ? (v + 1.0) * 0.5 * span + lo : lo;
    }
  }
  return Tensor(t.shape(), std::move(out));
}

inline std::pair<Dataset, NormState> normalize(const Dataset& ds) {
  for (const ColumnSpec& c : ds.schema)
    if (c.kind != ColumnKind::kContinuous)
      throw Error("normalize: column '" + c.name + "' is discrete; drop or encode it first");
  NormState st;
  st.lo.resize(static_cast<std::size_t>(ds.cols()));
  st.hi.resize(static_cast<std::size_t>(ds.cols()));
  for (int j = 0; j < ds.cols(); ++j) {
    double lo = ds.data.at(0, j), hi = lo;
    for (int i = 1; i < ds.rows(); ++i) {
      lo = std::min(lo, ds.data.at(i, j));
      hi = std::max(hi, ds.data.at(i, j));
    }
    st.lo[static_cast<std::size_t>(j)] = lo;
    st.hi[static_cast<std::size_t>(j)] = hi;
  }
  Dataset out = ds;
  out.data = apply_norm(ds.data, st);
  out.norm_state = st;
  return {std::move(out), std::move(st)};
}

inline Dataset denormalize(const Dataset& ds, const NormState& st) {
  Dataset out = ds;
  out.data = invert_norm(ds.data, st);
  out.norm_state.reset();
  return out;
}

// --- synthetic mixtures -----------------------------------------------------------

struct MixtureComponent {
  double weight = 0.0;
  std::vector<double> mean;
  std::vector<double> sd;  // diagonal covariance
};

struct MixtureSpec {
  std::vector<MixtureComponent> components;

  int dim() const {
    return components.empty() ? 0 : static_cast<int>(components[0].mean.size());
  }
};

inline Dataset synth_gaussian_mixture(const MixtureSpec& spec, int n, std::uint64_t seed,
                                      bool labeled = false,
                                      const std::string& name = "mixture") {
  if (spec.components.empty()) throw Error("mixture: no components");
  if (n < 1) throw Error("mixture: need at least one sample");
  const int d = spec.dim();
  double total = 0.0;
  for (const MixtureComponent& c : spec.components) {
    if (static_cast<int>(c.mean.size()) != d || static_cast<int>(c.sd.size()) != d)
      throw Error("mixture: component dimensions disagree");
    if (c.weight < 0.0) throw Error("mixture: negative weight");
    for (double s : c.sd)
      if (!(s > 0.0)) throw Error("mixture: standard deviations must be positive");
    total += c.weight;
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw Error("mixture: weights sum to " + std::to_string(total) + ", expected 1");

  Rng rng(derive_seed(seed, "mixture"));
  Dataset ds;
  ds.name = name;
  std::vector<double> data(static_cast<std::size_t>(n) * d);
  if (labeled) ds.labels.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    std::size_t comp = 0;
    double acc = 0.0;
    for (std::size_t c = 0; c < spec.components.size(); ++c) {
      acc += spec.components[c].weight;
      comp = c;
      if (u < acc) break;
    }
    const MixtureComponent& mc = spec.components[comp];
    for (int j = 0; j < d; ++j)
      data[static_cast<std::size_t>(i) * d + j] =
          rng.normal(mc.mean[static_cast<std::size_t>(j)], mc.sd[static_cast<std::size_t>(j)]);
    if (labeled) ds.labels.push_back(static_cast<int>(comp));
  }
  ds.data = Tensor(Shape{n, d}, std::move(data));
  for (int j = 0; j < d; ++j)
    ds.schema.push_back({"c" + std::to_string(j), ColumnKind::kContinuous});
  ds.vocab.assign(static_cast<std::size_t>(d), {});
  ds.original_shape = ds.data.shape();
  if (labeled)
    for (std::size_t c = 0; c < spec.components.size(); ++c)
      ds.label_names.push_back("component" + std::to_string(c));
  validate_dataset(ds);
  return ds;
}

// --- feature decimation ----------------------------------------------------------

// Keep every k-th column (0, k, 2k, ...). Tames impractically wide flattened
// samples; callers record the step in their provenance output.
inline Dataset decimate_features(const Dataset& ds, int k) {
  if (k < 1) throw Error("decimate_features: step must be >= 1");
  if (k == 1) return ds;
  Dataset out;
  out.name = ds.name;
  out.labels = ds.labels;
  out.label_names = ds.label_names;
  std::vector<int> keep;
  for (int j = 0; j < ds.cols(); j += k) keep.push_back(j);
  std::vector<double> data(static_cast<std::size_t>(ds.rows()) * keep.size());
  for (int i = 0; i < ds.rows(); ++i)
    for (std::size_t m = 0; m < keep.size(); ++m)
      data[static_cast<std::size_t>(i) * keep.size() + m] = ds.data.at(i, keep[m]);
  out.data = Tensor(Shape{ds.rows(), static_cast<int>(keep.size())}, std::move(data));
  for (int j : keep) {
    out.schema.push_back(ds.schema[static_cast<std::size_t>(j)]);
    out.vocab.push_back(ds.vocab[static_cast<std::size_t>(j)]);
  }
  out.original_shape = out.data.shape();
  validate_dataset(out);
  return out;
}

// --- seeded shuffle-split ----------------------------------------------------------

inline std::pair<Dataset, Dataset> split_rows(const Dataset& ds, double train_frac,
                                              std::uint64_t seed) {
  if (!(train_frac > 0.0) || !(train_frac < 1.0))
    throw Error("split_rows: train fraction must be inside (0, 1)");
  const int n = ds.rows();
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  Rng rng(derive_seed(seed, "split"));
  for (int i = n - 1; i > 0; --i)
    std::swap(idx[static_cast<std::size_t>(i)],
              idx[static_cast<std::size_t>(rng.uniform_int(static_cast<std::uint64_t>(i) + 1))]);
  int train_n = static_cast<int>(train_frac * n);
  train_n = std::min(std::max(train_n, 1), n - 1);

  auto take = [&](int from, int count) {
    Dataset part;
    part.name = ds.name;
    part.schema = ds.schema;
    part.vocab = ds.vocab;
    part.label_names = ds.label_names;
    std::vector<double> data(static_cast<std::size_t>(count) * ds.cols());
    for (int i = 0; i < count; ++i) {
      const int src = idx[static_cast<std::size_t>(from + i)];
      for (int j = 0; j < ds.cols(); ++j)
        data[static_cast<std::size_t>(i) * ds.cols() + j] = ds.data.at(src, j);
      if (!ds.labels.empty()) part.labels.push_back(ds.labels[static_cast<std::size_t>(src)]);
    }
    part.data = Tensor(Shape{count, ds.cols()}, std::move(data));
    part.original_shape = part.data.shape();
    validate_dataset(part);
    return part;
  };
  return {take(0, train_n), take(train_n, n - train_n)};
}

// --- binary tensor container ---------------------------------------------------------

// Layout: "GBTENSOR" magic, then version, axis count and extents as 64-bit
// little-endian integers, then the row-major payload as 64-bit little-endian
// IEEE floats.
inline constexpr char kTensorMagic[8] = {'G', 'B', 'T', 'E', 'N', 'S', 'O', 'R'};
inline constexpr std::uint64_t kTensorVersion = 1;

inline void save_tensor(const std::string& path, const Tensor& t) {
  if (t.ndim() < 1) throw Error("save_tensor: scalar tensors are not containers");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out.write(kTensorMagic, 8);
  binio::put_u64(out, kTensorVersion);
  binio::put_u64(out, static_cast<std::uint64_t>(t.ndim()));
  for (int d : t.shape()) binio::put_u64(out, static_cast<std::uint64_t>(d));
  for (double v : t.data()) binio::put_f64(out, v);
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline Tensor load_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kTensorMagic, 8) != 0)
    throw IoError(path + ": not a tensor container (bad magic)");
  const std::uint64_t version = binio::get_u64(in, path, "version");
  if (version != kTensorVersion)
    throw IoError(path + ": unsupported container version " + std::to_string(version));
  const std::uint64_t axes = binio::get_u64(in, path, "axis count");
  if (axes == 0 || axes > 32) throw IoError(path + ": implausible axis count");
  Shape shape;
  std::uint64_t numel = 1;
  for (std::uint64_t a = 0; a < axes; ++a) {
    const std::uint64_t e = binio::get_u64(in, path, "extent");
    if (e == 0 || e > static_cast<std::uint64_t>(std::numeric_limits<int>::max()))
      throw IoError(path + ": implausible extent");
    numel *= e;
    if (numel > (1ull << 33)) throw IoError(path + ": tensor too large for this loader");
    shape.push_back(static_cast<int>(e));
  }
  std::vector<double> data(numel);
  for (std::uint64_t i = 0; i < numel; ++i) data[i] = binio::get_f64(in, path, "payload");
  char extra;
  if (in.read(&extra, 1)) throw IoError(path + ": trailing bytes after payload");
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace ganbench
