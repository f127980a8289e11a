#pragma once

// Config-driven experiment runner. A flat key-value config describes a grid
// of (dataset, variant) cells; run_experiment trains every cell, scores the
// generated samples against the real ones, and writes a delimited report, a
// readable report, plot-data files, and checkpoints into the output
// directory.
//
// Config grammar, one `key = value` pair per line, `#` starts a comment:
//   seed = 42
//   variants = VANILLA, WGAN, LSGAN
//   out = results
//   dataset.<id>.kind = tabular | kdd99 | mixture
//   dataset.<id>.path = rows.csv            tabular and kdd99
//   dataset.<id>.n = 2000                   mixture rows
//   dataset.<id>.labeled = true             mixture component labels
//   dataset.<id>.weights = 0.5, 0.5         mixture weights
//   dataset.<id>.means = -45 -50 | -70 -40  one `|` block per component
//   dataset.<id>.sds   = 2 2 | 3 3
//   dataset.<id>.decimate = 4               keep every 4th column
//   train.epochs = 300                      applies to every variant
//   train.wgan.epochs = 500                 variant-specific override
//   arch.g_hidden = 64, 64                  generator stack
//   arch.d_hidden = 64                      discriminator stack
//   arch.q_hidden / arch.e_hidden / arch.slope / arch.prior = normal|uniform
//   metrics.sample = 2000                   scoring rows, capped by n_real
//   metrics.bandwidth = 0                   0 = median heuristic
//   metrics.histograms = true               adds KL and JSD columns
//   metrics.bins = 64
//   metrics.critic_emd = true               adds the trained-critic column
//   metrics.critic_steps = 300
//   metrics.space = raw | normalized        scoring space (default raw)
//   plots.enabled = true
//   plots.kde_column = c0                   default: "count" on kdd99, else
//                                           the first column
//   plots.kde_points = 201
//   plots.qq_quantiles = 99
// Remaining train keys: critic_steps, batch, latent, lr_g, lr_d,
// opt_g, opt_d (adam|rmsprop), adam_beta1, clip_c, lambda_gp, lambda_info,
// snapshot_every. Unknown keys and duplicate keys are rejected.

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "ganbench/common.hpp"
#include "ganbench/datasets.hpp"
#include "ganbench/gan.hpp"
#include "ganbench/metrics.hpp"
#include "ganbench/nn.hpp"
#include "ganbench/tensor.hpp"

namespace ganbench {

// --- config model ---------------------------------------------------------------

enum class DatasetKind : std::uint8_t { kTabular, kKdd99, kMixture };

struct DatasetSpec {
  std::string id;
  DatasetKind kind = DatasetKind::kTabular;
  bool kind_set = false;
  std::string path;
  MixtureSpec mixture;
  int mixture_n = 2000;
  bool labeled = false;
  int decimate = 1;
};

struct MetricSettings {
  int sample = 2000;       // generated rows scored, capped by n_real
  double bandwidth = 0.0;  // Gaussian kernel; 0 = median heuristic
  bool histograms = false;
  int bins = 64;
  bool critic = false;
  int critic_steps = 300;
  bool raw_space = true;
};

struct PlotSettings {
  bool enabled = true;
  std::string kde_column;
  int kde_points = 201;
  int qq_quantiles = 99;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string out = "out";
  std::vector<GanVariant> variants;
  std::vector<DatasetSpec> datasets;
  std::map<GanVariant, TrainConfig> train;  // resolved per variant
  ArchOverrides arch;
  MetricSettings metrics;
  PlotSettings plots;
  std::string config_hash;  // fingerprint of the raw config bytes
};

// --- config parsing --------------------------------------------------------------

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  return out;
}

inline std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

struct ConfigEntry {
  std::string key;
  std::string value;
  int line = 0;
};

inline ConfigError key_error(const ConfigEntry& e, const std::string& what) {
  return ConfigError("config line " + std::to_string(e.line) + ", key '" + e.key + "': " + what);
}

inline double want_double(const ConfigEntry& e) {
  double v = 0.0;
  const char* b = e.value.data();
  const char* z = b + e.value.size();
  auto [p, ec] = std::from_chars(b, z, v);
  if (ec != std::errc() || p != z) throw key_error(e, "expected a number, got '" + e.value + "'");
  return v;
}

inline std::int64_t want_int(const ConfigEntry& e) {
  std::int64_t v = 0;
  const char* b = e.value.data();
  const char* z = b + e.value.size();
  auto [p, ec] = std::from_chars(b, z, v);
  if (ec != std::errc() || p != z) throw key_error(e, "expected an integer, got '" + e.value + "'");
  return v;
}

inline std::uint64_t want_u64(const ConfigEntry& e) {
  std::uint64_t v = 0;
  const char* b = e.value.data();
  const char* z = b + e.value.size();
  auto [p, ec] = std::from_chars(b, z, v);
  if (ec != std::errc() || p != z)
    throw key_error(e, "expected an unsigned integer, got '" + e.value + "'");
  return v;
}

inline bool want_bool(const ConfigEntry& e) {
  if (e.value == "true") return true;
  if (e.value == "false") return false;
  throw key_error(e, "expected true or false, got '" + e.value + "'");
}

inline std::vector<int> want_int_list(const ConfigEntry& e) {
  std::vector<int> out;
  for (const std::string& tok : split_on(e.value, ',')) {
    ConfigEntry sub{e.key, tok, e.line};
    const std::int64_t v = want_int(sub);
    if (v < 1) throw key_error(e, "list entries must be >= 1");
    out.push_back(static_cast<int>(v));
  }
  return out;
}

inline bool apply_train_key(TrainConfig& cfg, const std::string& field, const ConfigEntry& e) {
  if (field == "epochs") cfg.epochs = static_cast<int>(want_int(e));
  else if (field == "critic_steps") cfg.critic_steps = static_cast<int>(want_int(e));
  else if (field == "batch") cfg.batch = static_cast<int>(want_int(e));
  else if (field == "latent") cfg.latent = static_cast<int>(want_int(e));
  else if (field == "lr_g") cfg.lr_g = want_double(e);
  else if (field == "lr_d") cfg.lr_d = want_double(e);
  else if (field == "adam_beta1") cfg.adam_beta1 = want_double(e);
  else if (field == "clip_c") cfg.clip_c = want_double(e);
  else if (field == "lambda_gp") cfg.lambda_gp = want_double(e);
  else if (field == "lambda_info") cfg.lambda_info = want_double(e);
  else if (field == "snapshot_every") cfg.snapshot_every = static_cast<int>(want_int(e));
  else if (field == "opt_g" || field == "opt_d") {
    OptimizerKind k;
    if (e.value == "adam") k = OptimizerKind::kAdam;
    else if (e.value == "rmsprop") k = OptimizerKind::kRmsprop;
    else throw key_error(e, "expected adam or rmsprop, got '" + e.value + "'");
    (field == "opt_g" ? cfg.opt_g : cfg.opt_d) = k;
  } else {
    return false;
  }
  return true;
}

inline bool valid_id(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_' || c == '-';
    if (!ok) return false;
  }
  return true;
}

}  // namespace detail

inline ExperimentConfig parse_config_text(const std::string& text) {
  using detail::ConfigEntry;

  std::vector<ConfigEntry> entries;
  {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    std::set<std::string> seen;
    while (std::getline(in, line)) {
      ++lineno;
      const std::size_t hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      line = detail::trim(line);
      if (line.empty()) continue;
      const std::size_t eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
      ConfigEntry e{detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)), lineno};
      if (e.key.empty())
        throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
      if (!seen.insert(e.key).second)
        throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key '" +
                          e.key + "'");
      entries.push_back(std::move(e));
    }
  }

  ExperimentConfig cfg;
  for (GanVariant v : all_variants()) cfg.train[v] = default_train_config(v);

  // mixture pieces collect per dataset and are checked for agreement below
  std::map<std::string, std::vector<double>> mix_weights;
  std::map<std::string, std::vector<std::vector<double>>> mix_means, mix_sds;
  std::vector<std::pair<GanVariant, std::pair<std::string, ConfigEntry>>> variant_train;

  auto dataset_for = [&](const std::string& id, const ConfigEntry& e) -> DatasetSpec& {
    if (!detail::valid_id(id))
      throw detail::key_error(e, "dataset id must be lowercase [a-z0-9_-]");
    for (DatasetSpec& d : cfg.datasets)
      if (d.id == id) return d;
    cfg.datasets.push_back(DatasetSpec{});
    cfg.datasets.back().id = id;
    return cfg.datasets.back();
  };

  auto parse_blocks = [&](const ConfigEntry& e) {
    std::vector<std::vector<double>> out;
    for (const std::string& block : detail::split_on(e.value, '|')) {
      std::vector<double> comp;
      for (const std::string& tok : detail::split_ws(block)) {
        ConfigEntry sub{e.key, tok, e.line};
        comp.push_back(detail::want_double(sub));
      }
      if (comp.empty()) throw detail::key_error(e, "empty component block");
      out.push_back(std::move(comp));
    }
    return out;
  };

  for (const ConfigEntry& e : entries) {
    const std::vector<std::string> parts = detail::split_on(e.key, '.');

    if (parts.size() == 1) {
      if (e.key == "seed") cfg.seed = detail::want_u64(e);
      else if (e.key == "out") cfg.out = e.value;
      else if (e.key == "variants") {
        for (const std::string& name : detail::split_on(e.value, ',')) {
          if (name.empty()) throw detail::key_error(e, "empty variant name");
          cfg.variants.push_back(parse_variant(name));
        }
      } else {
        throw detail::key_error(e, "unknown key");
      }
      continue;
    }

    if (parts[0] == "dataset" && parts.size() == 3) {
      DatasetSpec& ds = dataset_for(parts[1], e);
      const std::string& f = parts[2];
      if (f == "kind") {
        if (e.value == "tabular") ds.kind = DatasetKind::kTabular;
        else if (e.value == "kdd99") ds.kind = DatasetKind::kKdd99;
        else if (e.value == "mixture") ds.kind = DatasetKind::kMixture;
        else throw detail::key_error(e, "expected tabular, kdd99, or mixture");
        ds.kind_set = true;
      } else if (f == "path") ds.path = e.value;
      else if (f == "n") ds.mixture_n = static_cast<int>(detail::want_int(e));
      else if (f == "labeled") ds.labeled = detail::want_bool(e);
      else if (f == "decimate") ds.decimate = static_cast<int>(detail::want_int(e));
      else if (f == "weights") {
        for (const std::string& tok : detail::split_on(e.value, ',')) {
          ConfigEntry sub{e.key, tok, e.line};
          mix_weights[ds.id].push_back(detail::want_double(sub));
        }
      } else if (f == "means") mix_means[ds.id] = parse_blocks(e);
      else if (f == "sds") mix_sds[ds.id] = parse_blocks(e);
      else throw detail::key_error(e, "unknown dataset key");
      continue;
    }

    if (parts[0] == "train" && (parts.size() == 2 || parts.size() == 3)) {
      if (parts.size() == 2) {
        bool any = false;
        for (auto& [v, tc] : cfg.train) {
          (void)v;
          any = detail::apply_train_key(tc, parts[1], e);
        }
        if (!any) throw detail::key_error(e, "unknown training key");
      } else {
        // per-variant overrides stack on top of the globals, so defer them
        GanVariant v = GanVariant::kVanilla;
        try {
          v = parse_variant(parts[1]);
        } catch (const ConfigError&) {
          throw detail::key_error(e, "unknown variant section '" + parts[1] + "'");
        }
        variant_train.emplace_back(v, std::make_pair(parts[2], e));
      }
      continue;
    }

    if (parts[0] == "arch" && parts.size() == 2) {
      const std::string& f = parts[1];
      if (f == "g_hidden") cfg.arch.g_hidden = detail::want_int_list(e);
      else if (f == "d_hidden") cfg.arch.d_hidden = detail::want_int_list(e);
      else if (f == "q_hidden") cfg.arch.q_hidden = detail::want_int_list(e);
      else if (f == "e_hidden") cfg.arch.e_hidden = detail::want_int_list(e);
      else if (f == "slope") cfg.arch.slope = detail::want_double(e);
      else if (f == "prior") {
        if (e.value == "normal") cfg.arch.prior = PriorKind::kNormal;
        else if (e.value == "uniform") cfg.arch.prior = PriorKind::kUniform;
        else throw detail::key_error(e, "expected normal or uniform");
      } else {
        throw detail::key_error(e, "unknown arch key");
      }
      continue;
    }

    if (parts[0] == "metrics" && parts.size() == 2) {
      const std::string& f = parts[1];
      if (f == "sample") cfg.metrics.sample = static_cast<int>(detail::want_int(e));
      else if (f == "bandwidth") cfg.metrics.bandwidth = detail::want_double(e);
      else if (f == "histograms") cfg.metrics.histograms = detail::want_bool(e);
      else if (f == "bins") cfg.metrics.bins = static_cast<int>(detail::want_int(e));
      else if (f == "critic_emd") cfg.metrics.critic = detail::want_bool(e);
      else if (f == "critic_steps") cfg.metrics.critic_steps = static_cast<int>(detail::want_int(e));
      else if (f == "space") {
        if (e.value == "raw") cfg.metrics.raw_space = true;
        else if (e.value == "normalized") cfg.metrics.raw_space = false;
        else throw detail::key_error(e, "expected raw or normalized");
      } else {
        throw detail::key_error(e, "unknown metrics key");
      }
      continue;
    }

    if (parts[0] == "plots" && parts.size() == 2) {
      const std::string& f = parts[1];
      if (f == "enabled") cfg.plots.enabled = detail::want_bool(e);
      else if (f == "kde_column") cfg.plots.kde_column = e.value;
      else if (f == "kde_points") cfg.plots.kde_points = static_cast<int>(detail::want_int(e));
      else if (f == "qq_quantiles") cfg.plots.qq_quantiles = static_cast<int>(detail::want_int(e));
      else throw detail::key_error(e, "unknown plots key");
      continue;
    }

    throw detail::key_error(e, "unknown key");
  }

  for (const auto& [v, fe] : variant_train)
    if (!detail::apply_train_key(cfg.train[v], fe.first, fe.second))
      throw detail::key_error(fe.second, "unknown training key");

  // structural validation
  if (cfg.variants.empty()) throw ConfigError("config: at least one variant is required");
  if (cfg.datasets.empty()) throw ConfigError("config: at least one dataset is required");
  for (DatasetSpec& ds : cfg.datasets) {
    if (!ds.kind_set) throw ConfigError("config: dataset '" + ds.id + "' has no kind");
    if (ds.decimate < 1) throw ConfigError("config: dataset '" + ds.id + "': decimate must be >= 1");
    if (ds.kind == DatasetKind::kMixture) {
      const auto& w = mix_weights[ds.id];
      const auto& m = mix_means[ds.id];
      const auto& s = mix_sds[ds.id];
      if (w.empty() || m.empty() || s.empty())
        throw ConfigError("config: mixture dataset '" + ds.id +
                          "' needs weights, means, and sds");
      if (w.size() != m.size() || w.size() != s.size())
        throw ConfigError("config: mixture dataset '" + ds.id +
                          "': weights, means, and sds disagree on the component count");
      for (std::size_t i = 0; i < w.size(); ++i) {
        if (m[i].size() != m[0].size() || s[i].size() != m[0].size())
          throw ConfigError("config: mixture dataset '" + ds.id +
                            "': component dimensions disagree");
        ds.mixture.components.push_back({w[i], m[i], s[i]});
      }
      if (ds.mixture_n < 1)
        throw ConfigError("config: mixture dataset '" + ds.id + "': n must be >= 1");
    } else {
      if (ds.path.empty())
        throw ConfigError("config: dataset '" + ds.id + "' needs a path");
    }
  }
  for (const auto& [v, tc] : cfg.train) {
    (void)v;
    if (tc.epochs < 0 || tc.critic_steps < 1 || tc.batch < 1 || tc.latent < 1)
      throw ConfigError("config: train values out of range (epochs >= 0, others >= 1)");
  }
  if (cfg.metrics.sample < 2) throw ConfigError("config: metrics.sample must be >= 2");
  if (cfg.metrics.bins < 2) throw ConfigError("config: metrics.bins must be >= 2");
  if (cfg.metrics.critic_steps < 1) throw ConfigError("config: metrics.critic_steps must be >= 1");
  if (cfg.plots.kde_points < 2) throw ConfigError("config: plots.kde_points must be >= 2");
  if (cfg.plots.qq_quantiles < 1) throw ConfigError("config: plots.qq_quantiles must be >= 1");

  std::uint64_t h = hash_bytes(text.data(), text.size());
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  cfg.config_hash = buf;
  return cfg;
}

inline ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_config_text(buf.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

// --- report model ------------------------------------------------------------------

struct ReportRow {
  std::string dataset;
  Shape shape;  // raw (rows, cols); empty when the dataset never loaded
  GanVariant variant = GanVariant::kVanilla;
  bool ok = false;
  std::string detail;  // failure message when !ok
  double mmd2 = 0.0;
  double emd = 0.0;
  std::optional<double> kl;
  std::optional<double> jsd;
  std::optional<double> critic_emd;
  std::string noise_hash;  // scoring latent stream fingerprint; not serialized
};

struct MetricReport {
  std::vector<ReportRow> rows;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string version{kVersion};
  double wall_clock_s = 0.0;
  // selected column names per kdd99 dataset, in selection order
  std::vector<std::pair<std::string, std::vector<std::string>>> kdd_columns;
};

namespace detail {

inline std::string g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string csv_quote(const std::string& s) {
  if (s.empty()) return s;
  bool needs = false;
  for (char c : s) needs = needs || c == ',' || c == '"' || c == '\n';
  if (!needs && s.front() != ' ' && s.back() != ' ') return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline std::vector<std::string> csv_split(const std::string& line, const std::string& where) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) throw IoError(where + ": unterminated quote");
  out.push_back(cur);
  return out;
}

inline std::string shape_field(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(s[i]);
  }
  return out;
}

inline Shape parse_shape_field(const std::string& s, const std::string& where) {
  Shape out;
  if (s.empty()) return out;
  for (const std::string& tok : split_on(s, 'x')) {
    int v = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || p != tok.data() + tok.size())
      throw IoError(where + ": bad shape field '" + s + "'");
    out.push_back(v);
  }
  return out;
}

inline double parse_double_field(const std::string& s, const std::string& where) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw IoError(where + ": bad numeric field '" + s + "'");
  return v;
}

}  // namespace detail

inline constexpr char kReportHeader[] =
    "dataset,shape,variant,status,mmd2,emd,kl,jsd,critic_emd,detail";

inline void emit_report_csv(const std::string& path, const MetricReport& r) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << "# ganbench report\n";
  out << "# version = " << r.version << "\n";
  out << "# config_hash = " << r.config_hash << "\n";
  out << "# seed = " << r.seed << "\n";
  out << "# wall_clock_s = " << detail::g17(r.wall_clock_s) << "\n";
  for (const auto& [id, cols] : r.kdd_columns) {
    out << "# kdd_columns." << id << " =";
    for (const std::string& c : cols) out << ' ' << c;
    out << "\n";
  }
  out << kReportHeader << "\n";
  auto opt = [](const std::optional<double>& v) { return v ? detail::g17(*v) : std::string(); };
  for (const ReportRow& row : r.rows) {
    out << detail::csv_quote(row.dataset) << ',' << detail::shape_field(row.shape) << ','
        << variant_name(row.variant) << ',' << (row.ok ? "ok" : "failed") << ','
        << (row.ok ? detail::g17(row.mmd2) : std::string()) << ','
        << (row.ok ? detail::g17(row.emd) : std::string()) << ',' << opt(row.kl) << ','
        << opt(row.jsd) << ',' << opt(row.critic_emd) << ',' << detail::csv_quote(row.detail)
        << "\n";
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline MetricReport parse_report_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  MetricReport r;
  r.version.clear();
  std::string line;
  bool saw_header = false;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = path + ": line " + std::to_string(lineno);
    if (line[0] == '#') {
      const std::size_t eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = detail::trim(line.substr(1, eq - 1));
      const std::string value = detail::trim(line.substr(eq + 1));
      if (key == "version") r.version = value;
      else if (key == "config_hash") r.config_hash = value;
      else if (key == "seed") r.seed = std::stoull(value);
      else if (key == "wall_clock_s") r.wall_clock_s = detail::parse_double_field(value, where);
      else if (key.rfind("kdd_columns.", 0) == 0)
        r.kdd_columns.emplace_back(key.substr(12), detail::split_ws(value));
      continue;
    }
    if (!saw_header) {
      if (line != kReportHeader) throw IoError(where + ": unexpected header '" + line + "'");
      saw_header = true;
      continue;
    }
    const std::vector<std::string> f = detail::csv_split(line, where);
    if (f.size() != 10) throw IoError(where + ": expected 10 fields, got " +
                                      std::to_string(f.size()));
    ReportRow row;
    row.dataset = f[0];
    row.shape = detail::parse_shape_field(f[1], where);
    row.variant = parse_variant(f[2]);
    if (f[3] == "ok") row.ok = true;
    else if (f[3] == "failed") row.ok = false;
    else throw IoError(where + ": bad status '" + f[3] + "'");
    if (row.ok) {
      row.mmd2 = detail::parse_double_field(f[4], where);
      row.emd = detail::parse_double_field(f[5], where);
    }
    if (!f[6].empty()) row.kl = detail::parse_double_field(f[6], where);
    if (!f[7].empty()) row.jsd = detail::parse_double_field(f[7], where);
    if (!f[8].empty()) row.critic_emd = detail::parse_double_field(f[8], where);
    row.detail = f[9];
    r.rows.push_back(std::move(row));
  }
  if (!saw_header) throw IoError(path + ": missing report header");
  return r;
}

inline void emit_report_text(const std::string& path, const MetricReport& r) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << "ganbench " << r.version << "\n";
  out << "config hash  " << r.config_hash << "\n";
  out << "master seed  " << r.seed << "\n";
  out << "wall clock   " << detail::g17(r.wall_clock_s) << " s\n";
  for (const auto& [id, cols] : r.kdd_columns) {
    out << "columns for " << id << ":";
    for (const std::string& c : cols) out << ' ' << c;
    out << "\n";
  }
  out << "\n";
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-12s %-12s %-8s %-12s %-12s %-12s %-12s %-12s\n", "dataset",
                "variant", "status", "mmd2", "emd", "kl", "jsd", "critic_emd");
  out << buf;
  auto cell = [](const std::optional<double>& v) {
    if (!v) return std::string("-");
    char b[32];
    std::snprintf(b, sizeof b, "%.5g", *v);
    return std::string(b);
  };
  for (const ReportRow& row : r.rows) {
    std::snprintf(buf, sizeof buf, "%-12s %-12s %-8s %-12s %-12s %-12s %-12s %-12s\n",
                  row.dataset.c_str(), variant_name(row.variant), row.ok ? "ok" : "FAILED",
                  cell(row.ok ? std::optional<double>(row.mmd2) : std::nullopt).c_str(),
                  cell(row.ok ? std::optional<double>(row.emd) : std::nullopt).c_str(),
                  cell(row.kl).c_str(), cell(row.jsd).c_str(), cell(row.critic_emd).c_str());
    out << buf;
  }
  bool any_failed = false;
  for (const ReportRow& row : r.rows) any_failed = any_failed || !row.ok;
  if (any_failed) {
    out << "\nfailures:\n";
    for (const ReportRow& row : r.rows)
      if (!row.ok)
        out << "  " << row.dataset << " / " << variant_name(row.variant) << ": " << row.detail
            << "\n";
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

// Writes both report forms under `dir`.
inline void emit_report(const MetricReport& r, const std::string& dir) {
  namespace fs = std::filesystem;
  emit_report_csv((fs::path(dir) / "report.csv").string(), r);
  emit_report_text((fs::path(dir) / "report.txt").string(), r);
}

// --- plot data ------------------------------------------------------------------------

struct KdeTable {
  std::vector<double> grid;                 // strictly increasing
  std::vector<double> real;                 // density of the real column
  std::vector<std::string> variant_names;   // column order for `fakes`
  std::vector<std::vector<double>> fakes;   // one density row set per variant
};

// Common evaluation grid spanning [min - 3h, max + 3h] of the pooled sample
// (h from the pooled bandwidth); every curve then uses its own bandwidth.
inline KdeTable build_kde_table(const std::vector<double>& real_col,
                                const std::vector<std::pair<std::string, std::vector<double>>>&
                                    fake_cols,
                                int points) {
  std::vector<double> pooled = real_col;
  for (const auto& [name, col] : fake_cols) {
    (void)name;
    pooled.insert(pooled.end(), col.begin(), col.end());
  }
  if (pooled.size() < 2) throw Error("kde table: need at least two pooled samples");
  const double h = silverman_bandwidths(as_matrix(pooled))[0];
  const auto [lo_it, hi_it] = std::minmax_element(pooled.begin(), pooled.end());
  KdeTable t;
  t.grid = make_grid(*lo_it - 3.0 * h, *hi_it + 3.0 * h, points);
  t.real = kde_density(real_col, 0.0, t.grid);
  for (const auto& [name, col] : fake_cols) {
    t.variant_names.push_back(name);
    t.fakes.push_back(kde_density(col, 0.0, t.grid));
  }
  return t;
}

inline void write_kde_csv(const std::string& path, const std::string& column,
                          const KdeTable& t) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << "# column = " << column << "\n";
  out << "x,real";
  for (const std::string& name : t.variant_names) out << ',' << name;
  out << "\n";
  for (std::size_t i = 0; i < t.grid.size(); ++i) {
    out << detail::g17(t.grid[i]) << ',' << detail::g17(t.real[i]);
    for (const std::vector<double>& f : t.fakes) out << ',' << detail::g17(f[i]);
    out << "\n";
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

// Quantile pairs plus the two 45-degree reference endpoints.
inline void write_qq_csv(const std::string& path, const std::vector<double>& real_col,
                         const std::vector<double>& fake_col, int quantiles) {
  const auto points = qq_points(real_col, fake_col, quantiles);
  double lo = points[0].first, hi = points[0].first;
  for (const auto& [x, y] : points) {
    lo = std::min(lo, std::min(x, y));
    hi = std::max(hi, std::max(x, y));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << "kind,x,y\n";
  for (const auto& [x, y] : points)
    out << "point," << detail::g17(x) << ',' << detail::g17(y) << "\n";
  out << "ref," << detail::g17(lo) << ',' << detail::g17(lo) << "\n";
  out << "ref," << detail::g17(hi) << ',' << detail::g17(hi) << "\n";
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline void write_loss_csv(const std::string& path, const TrainHistory& h) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << "epoch,d_loss,g_loss,mean_d_real\n";
  for (std::size_t i = 0; i < h.epochs.size(); ++i)
    out << (i + 1) << ',' << detail::g17(h.epochs[i].d_loss) << ','
        << detail::g17(h.epochs[i].g_loss) << ',' << detail::g17(h.epochs[i].mean_d_real)
        << "\n";
  if (!out) throw IoError("write failed for '" + path + "'");
}

// --- experiment execution ------------------------------------------------------------

struct RunResult {
  MetricReport report;
  int failures = 0;
  std::string out_dir;
};

namespace detail {

struct LoadedDataset {
  bool ok = false;
  std::string error;
  Dataset raw;       // scoring space (original units)
  Dataset norm;      // training space
  NormState st;
  int k_classes = 0;
  int plot_col = 0;
  std::vector<std::string> kdd_cols;
};

inline LoadedDataset load_for_run(const DatasetSpec& spec, const PlotSettings& plots,
                                  std::uint64_t master_seed) {
  LoadedDataset out;
  try {
    Dataset ds;
    switch (spec.kind) {
      case DatasetKind::kTabular:
        ds = load_tabular(spec.path, spec.id);
        break;
      case DatasetKind::kKdd99: {
        Dataset raw = load_tabular(spec.path, kdd99_schema(), spec.id);
        ds = preprocess_kdd99(raw);
        ds.name = spec.id;
        for (const ColumnSpec& c : ds.schema) out.kdd_cols.push_back(c.name);
        break;
      }
      case DatasetKind::kMixture:
        ds = synth_gaussian_mixture(spec.mixture, spec.mixture_n,
                                    derive_seed(master_seed, "dataset/" + spec.id),
                                    spec.labeled, spec.id);
        break;
    }
    ds = decimate_features(ds, spec.decimate);
    if (!ds.label_names.empty()) out.k_classes = static_cast<int>(ds.label_names.size());

    std::string plot_name = plots.kde_column;
    if (plot_name.empty() && spec.kind == DatasetKind::kKdd99) plot_name = "count";
    if (plot_name.empty()) {
      out.plot_col = 0;
    } else {
      out.plot_col = -1;
      for (std::size_t j = 0; j < ds.schema.size(); ++j)
        if (ds.schema[j].name == plot_name) out.plot_col = static_cast<int>(j);
      if (out.plot_col < 0)
        throw Error("plot column '" + plot_name + "' is not in dataset '" + spec.id + "'");
    }

    auto [norm, st] = normalize(ds);
    out.raw = std::move(ds);
    out.norm = std::move(norm);
    out.st = st;
    out.ok = true;
  } catch (const Error& e) {
    out.error = e.what();
  }
  return out;
}

struct CellOutcome {
  ReportRow row;
  bool trained = false;
  TrainHistory history;
  ModelBundle bundle;
  TrainConfig cfg_used;
  std::vector<double> fake_plot_col;  // scoring space
  std::vector<double> real_plot_col;
};

// deterministic k-subset of [0, n): partial Fisher-Yates on a seeded stream
inline std::vector<int> pick_rows(int n, int k, std::uint64_t seed) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  Rng rng(seed);
  for (int i = 0; i < k; ++i) {
    const int j = i + rng.uniform_int(n - i);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

inline Tensor gather_rows(const Tensor& t, const std::vector<int>& rows) {
  const int d = t.cols();
  std::vector<double> v(rows.size() * static_cast<std::size_t>(d));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (int j = 0; j < d; ++j)
      v[i * static_cast<std::size_t>(d) + static_cast<std::size_t>(j)] = t.at(rows[i], j);
  return Tensor(Shape{static_cast<int>(rows.size()), d}, std::move(v));
}

inline std::string hash_hex(const Tensor& t) {
  const std::uint64_t h =
      hash_bytes(t.data().data(), t.data().size() * sizeof(double));
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline CellOutcome run_cell(const ExperimentConfig& cfg, const DatasetSpec& spec,
                            const LoadedDataset& ld, GanVariant variant) {
  CellOutcome out;
  out.row.dataset = spec.id;
  out.row.variant = variant;
  if (!ld.ok) {
    out.row.detail = ld.error;
    return out;
  }
  out.row.shape = ld.raw.data.shape();

  try {
    const std::string vname = variant_name(variant);
    TrainConfig tc = cfg.train.at(variant);
    tc.seed = derive_seed(cfg.seed, "train/" + spec.id + "/" + vname);

    const int k = ld.k_classes >= 2 ? ld.k_classes : 0;
    if ((is_conditioned(variant) || uses_codes(variant)) && k < 2)
      throw Error(vname + " needs labeled data with at least two classes; dataset '" + spec.id +
                  "' provides " + std::to_string(ld.k_classes));

    ArchOverrides arch = cfg.arch;
    arch.latent = tc.latent;
    ModelBundle model = build_model(variant, ld.norm.cols(), k, arch,
                                    derive_seed(cfg.seed, "init/" + spec.id + "/" + vname));

    TrainResult trained = train(std::move(model), SampleSet(ld.norm.data, ld.norm.labels), tc);
    out.bundle = std::move(trained.bundle);
    out.history = std::move(trained.history);
    out.cfg_used = tc;
    out.trained = true;

    // scoring: the latent stream, scoring labels, and the real-row pick are
    // derived from the dataset id only, so every variant of a dataset scores
    // against identical draws
    const int n_real = ld.raw.rows();
    const int n_score = std::min(n_real, cfg.metrics.sample);
    const std::uint64_t score_seed = derive_seed(cfg.seed, "score/" + spec.id);

    std::vector<int> labels;
    if (is_conditioned(variant)) {
      Rng lrng(derive_seed(cfg.seed, "score-labels/" + spec.id));
      labels.resize(static_cast<std::size_t>(n_score));
      for (int& y : labels) y = lrng.uniform_int(k);
    }
    SampleSet fake = generate(out.bundle, n_score, score_seed, labels);
    {
      Rng zrng(derive_seed(score_seed, out.bundle.prior.stream));
      out.row.noise_hash = hash_hex(sample_prior(out.bundle.prior, n_score, zrng));
    }

    const std::vector<int> rows =
        pick_rows(n_real, n_score, derive_seed(cfg.seed, "score-rows/" + spec.id));
    Tensor real_s = cfg.metrics.raw_space ? gather_rows(ld.raw.data, rows)
                                          : gather_rows(ld.norm.data, rows);
    Tensor fake_s = cfg.metrics.raw_space ? invert_norm(fake.rows, ld.st) : fake.rows;

    out.row.mmd2 = mmd_squared(real_s, fake_s, cfg.metrics.bandwidth);
    out.row.emd = emd(real_s, fake_s);

    if (cfg.metrics.histograms) {
      double kl_acc = 0.0, jsd_acc = 0.0;
      for (int j = 0; j < real_s.cols(); ++j) {
        std::vector<double> rc = column(real_s, j), fc = column(fake_s, j);
        double lo = rc[0], hi = rc[0];
        for (double v : rc) { lo = std::min(lo, v); hi = std::max(hi, v); }
        for (double v : fc) { lo = std::min(lo, v); hi = std::max(hi, v); }
        if (!(hi - lo > 1e-12)) { lo -= 1.0; hi += 1.0; }
        Histogram hr = smoothed(histogram_from_samples(rc, lo, hi, cfg.metrics.bins), 1e-9);
        Histogram hf = smoothed(histogram_from_samples(fc, lo, hi, cfg.metrics.bins), 1e-9);
        kl_acc += kl_divergence(hr, hf);
        jsd_acc += jsd(hr, hf);
      }
      out.row.kl = kl_acc / real_s.cols();
      out.row.jsd = jsd_acc / real_s.cols();
    }

    if (cfg.metrics.critic) {
      CriticEmdConfig cc;
      cc.steps = cfg.metrics.critic_steps;
      cc.seed = derive_seed(cfg.seed, "critic/" + spec.id);
      out.row.critic_emd = critic_emd(real_s, fake_s, cc);
    }

    out.real_plot_col = column(real_s, ld.plot_col);
    out.fake_plot_col = column(fake_s, ld.plot_col);
    out.row.ok = true;
  } catch (const Error& e) {
    out.row.ok = false;
    out.row.detail = e.what();
  }
  return out;
}

}  // namespace detail

inline RunResult run_experiment(const ExperimentConfig& cfg, int workers = 1) {
  namespace fs = std::filesystem;
  if (workers < 1) throw ConfigError("workers must be >= 1");
  const auto t0 = std::chrono::steady_clock::now();

  std::error_code ec;
  fs::create_directories(cfg.out, ec);
  if (ec) throw ConfigError("cannot create output directory '" + cfg.out + "': " + ec.message());

  // datasets load once, in declaration order
  std::vector<detail::LoadedDataset> loaded;
  loaded.reserve(cfg.datasets.size());
  for (const DatasetSpec& spec : cfg.datasets)
    loaded.push_back(detail::load_for_run(spec, cfg.plots, cfg.seed));

  const std::size_t n_cells = cfg.datasets.size() * cfg.variants.size();
  std::vector<detail::CellOutcome> cells(n_cells);
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n_cells) return;
      const std::size_t di = i / cfg.variants.size();
      const std::size_t vi = i % cfg.variants.size();
      cells[i] = detail::run_cell(cfg, cfg.datasets[di], loaded[di], cfg.variants[vi]);
    }
  };
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    const int n_threads = static_cast<int>(std::min<std::size_t>(
        static_cast<std::size_t>(workers), std::max<std::size_t>(n_cells, 1)));
    pool.reserve(static_cast<std::size_t>(n_threads));
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }

  // deterministic single-threaded merge
  RunResult result;
  result.out_dir = cfg.out;
  result.report.seed = cfg.seed;
  result.report.config_hash = cfg.config_hash;
  for (std::size_t di = 0; di < cfg.datasets.size(); ++di)
    if (!loaded[di].kdd_cols.empty())
      result.report.kdd_columns.emplace_back(cfg.datasets[di].id, loaded[di].kdd_cols);

  for (std::size_t di = 0; di < cfg.datasets.size(); ++di) {
    const std::string& id = cfg.datasets[di].id;
    std::vector<std::pair<std::string, std::vector<double>>> kde_fakes;
    const std::vector<double>* real_col = nullptr;

    for (std::size_t vi = 0; vi < cfg.variants.size(); ++vi) {
      detail::CellOutcome& cell = cells[di * cfg.variants.size() + vi];
      const std::string vname = variant_name(cell.row.variant);
      if (cell.row.ok) {
        save_checkpoint((fs::path(cfg.out) / ("checkpoint_" + id + "_" + vname + ".bin")).string(),
                        cell.bundle, cell.cfg_used);
        write_loss_csv((fs::path(cfg.out) / ("loss_" + id + "_" + vname + ".csv")).string(),
                       cell.history);
        if (cfg.plots.enabled) {
          write_qq_csv((fs::path(cfg.out) / ("qq_" + id + "_" + vname + ".csv")).string(),
                       cell.real_plot_col, cell.fake_plot_col, cfg.plots.qq_quantiles);
          kde_fakes.emplace_back(vname, cell.fake_plot_col);
          real_col = &cell.real_plot_col;
        }
      } else {
        ++result.failures;
      }
      result.report.rows.push_back(std::move(cell.row));
    }

    if (cfg.plots.enabled && real_col != nullptr) {
      try {
        KdeTable table = build_kde_table(*real_col, kde_fakes, cfg.plots.kde_points);
        const std::string col = loaded[di].raw.schema[static_cast<std::size_t>(
            loaded[di].plot_col)].name;
        write_kde_csv((fs::path(cfg.out) / ("kde_" + id + "_" + col + ".csv")).string(), col,
                      table);
      } catch (const Error&) {
        // a degenerate column defeats the bandwidth rule; the curve file is
        // best-effort and the metrics above already covered the data
      }
    }
  }

  const auto t1 = std::chrono::steady_clock::now();
  result.report.wall_clock_s = std::chrono::duration<double>(t1 - t0).count();
  emit_report(result.report, cfg.out);
  return result;
}

}  // namespace ganbench
