#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace sleepnet {

// Errors caused by bad inputs, bad files, or violated preconditions. The CLI
// maps these to exit code 1; anything else is an internal error (exit 2).
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error(msg) {}
};

// Deterministic RNG (xoshiro256++ seeded via splitmix64). All value mappings
// are implemented here rather than with std::uniform_*_distribution, so
// streams are bit-reproducible across platforms and standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  // 64 raw bits.
  std::uint64_t next_u64();
  // Uniform double in [0, 1).
  double uniform();
  // Uniform double in [lo, hi).
  double uniform(double lo, double hi);
  // Standard normal via Box-Muller (no caching, fully deterministic).
  double normal();
  double normal(double mean, double stddev);
  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t index(std::uint64_t n);
  // Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.size() < 2) return;
    for (std::size_t i = v.size() - 1; i > 0; --i) {
      std::size_t j = static_cast<std::size_t>(index(i + 1));
      std::swap(v[i], v[j]);
    }
  }
  // Derived independent stream; `tag` distinguishes sibling streams.
  Rng split(std::uint64_t tag) const;

 private:
  std::uint64_t state_[4];  // xoshiro-style state built from splitmix64
};

std::uint64_t splitmix64(std::uint64_t x);

// FNV-1a 64-bit content digest, used for manifest integrity checks.
std::uint64_t fnv1a64(const void* data, std::size_t len);
std::uint64_t fnv1a64(const std::string& s);
std::string digest_hex(std::uint64_t digest);

// Little-endian binary blob IO (32-bit IEEE-754 samples).
void write_f32_blob(const std::filesystem::path& path, const std::vector<float>& values);
std::vector<float> read_f32_blob(const std::filesystem::path& path);
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

// Shortest round-trip formatting for doubles; keeps logs byte-stable.
std::string format_double(double v);

}  // namespace sleepnet
