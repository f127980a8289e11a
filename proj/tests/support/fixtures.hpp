#pragma once

// Deterministic on-disk fixtures for loader tests. The connection-record
// fixture mimics the classic 41-feature + label layout: every continuous
// column except num_outbound_cmds (famously all-zero in the real corpus)
// carries nonzero values, so the first-18 selection rule has a known answer.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "ganbench/common.hpp"
#include "ganbench/datasets.hpp"

namespace fixtures {

inline void write_kdd_fixture(const std::string& path, int rows, std::uint64_t seed,
                              bool header = true) {
  const std::vector<ganbench::ColumnSpec> schema = ganbench::kdd99_schema();
  ganbench::Rng rng(seed);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ganbench::IoError("fixture: cannot write " + path);

  if (header) {
    for (std::size_t j = 0; j < schema.size(); ++j)
      out << (j ? "," : "") << schema[j].name;
    out << "\n";
  }

  const std::vector<std::string> protocols = {"tcp", "udp", "icmp"};
  const std::vector<std::string> services = {"http", "smtp", "ftp_data", "domain_u"};
  const std::vector<std::string> flags = {"SF", "S0", "REJ"};
  const std::vector<std::string> labels = {"normal.", "neptune.", "smurf."};

  auto integer = [&](double hi) {
    return std::to_string(static_cast<long>(rng.uniform() * hi));
  };
  auto rate = [&] {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%.2f", rng.uniform());
    return std::string(buf);
  };

  for (int i = 0; i < rows; ++i) {
    std::string line;
    for (std::size_t j = 0; j < schema.size(); ++j) {
      const std::string& name = schema[j].name;
      std::string field;
      if (name == "protocol_type") {
        field = protocols[rng.uniform_int(protocols.size())];
      } else if (name == "service") {
        field = services[rng.uniform_int(services.size())];
      } else if (name == "flag") {
        field = flags[rng.uniform_int(flags.size())];
      } else if (name == "label") {
        field = labels[rng.uniform_int(labels.size())];
      } else if (name == "land" || name == "logged_in" || name == "is_guest_login") {
        field = rng.uniform() < 0.2 ? "1" : "0";
      } else if (name == "is_host_login") {
        field = "0";
      } else if (name == "num_outbound_cmds") {
        field = "0";  // identically zero on purpose
      } else if (name.find("rate") != std::string::npos) {
        field = i == 0 ? "0.50" : rate();
      } else if (name == "count" || name == "srv_count") {
        field = i == 0 ? "1" : integer(500.0);
      } else if (name == "src_bytes" || name == "dst_bytes") {
        field = i == 0 ? "1" : integer(5000.0);
      } else {
        field = i == 0 ? "1" : integer(5.0);  // duration, hot, counters, ...
      }
      line += (j ? "," : "") + field;
    }
    out << line << "\n";
  }
}

}  // namespace fixtures
