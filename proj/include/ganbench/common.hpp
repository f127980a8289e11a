#pragma once

// Shared plumbing for the ganbench library: error types, the deterministic
// RNG used by every stochastic component, and seed-stream derivation.
//
// Determinism contract: every random draw in the library goes through Rng,
// which maps std::mt19937_64 output (bit-exact per the C++ standard) through
// fixed arithmetic. Two runs with the same seed produce identical streams on
// any conforming platform.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ganbench {

inline constexpr std::string_view kVersion = "0.1.0";

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed user input: config files, CLI arguments, unreadable data.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Structural misuse of the expression graph (shape mismatch, bad node, ...).
// Carries the index of the offending node where one exists.
class GraphError : public Error {
 public:
  GraphError(const std::string& msg, int node_index = -1)
      : Error(msg), node_index_(node_index) {}
  int node_index() const { return node_index_; }

 private:
  int node_index_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// --- seed derivation ---------------------------------------------------

// splitmix64 finalizer; good avalanche, stable across platforms.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) {
  return mix64(base ^ mix64(salt));
}

// Tagged sub-stream: hash the tag (FNV-1a) into the base seed. Used to give
// each purpose (init, noise, batch indices, ...) a disjoint stream.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return derive_seed(base, h);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag,
                                 std::uint64_t salt) {
  return derive_seed(derive_seed(base, tag), salt);
}

// --- deterministic RNG --------------------------------------------------

// std::mt19937_64 plus hand-rolled distribution mappings. The standard
// distributions are implementation-defined, so they are not used here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // 53-bit uniform in [0, 1).
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; caches the second variate.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    // avoid log(0)
    while (u1 <= 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  // Unbiased integer in [0, n) via rejection.
  int uniform_int(int n) {
    if (n <= 0) throw Error("Rng::uniform_int: n must be positive");
    const std::uint64_t un = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    std::uint64_t x = eng_();
    while (x >= limit) x = eng_();
    return static_cast<int>(x % un);
  }

 private:
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// FNV-1a over raw bytes; used for stream hashes in provenance records.
inline std::uint64_t hash_bytes(const void* data, std::size_t len,
                                std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace ganbench
