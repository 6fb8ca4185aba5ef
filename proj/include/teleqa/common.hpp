// Shared error types, deterministic RNG, and binary I/O helpers.
#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace teleqa {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts are unsupported");

// Exit-code mapping for the CLI: IoError -> 1, ConfigError -> 2, NumericError -> 3.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Deterministic pseudo-random source. Wraps mt19937_64 (whose output sequence
// is pinned by the standard) and derives floating draws with explicit bit
// arithmetic instead of std::*_distribution, which is implementation-defined.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Uniform integer in [0, n).
  uint64_t below(uint64_t n) { return n <= 1 ? 0 : engine_() % n; }

  // Box-Muller; one draw per call, no cached spare (keeps the stream easy to reason about).
  double normal() {
    double u1 = uniform01();
    double u2 = uniform01();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

inline double clamp(double x, double lo, double hi) {
  return x < lo ? lo : (x > hi ? hi : x);
}

namespace io {

inline void write_bytes(std::ostream& out, const void* data, size_t n) {
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!out) throw IoError("write failed");
}

inline void write_u32(std::ostream& out, uint32_t v) { write_bytes(out, &v, 4); }
inline void write_u8(std::ostream& out, uint8_t v) { write_bytes(out, &v, 1); }
inline void write_f32(std::ostream& out, float v) { write_bytes(out, &v, 4); }

inline void write_f32_array(std::ostream& out, const float* data, size_t n) {
  write_bytes(out, data, n * sizeof(float));
}

// Returns false on clean EOF before any byte, throws on a partial read.
inline bool read_bytes(std::istream& in, void* data, size_t n, const char* what) {
  in.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
  if (in.gcount() == 0 && in.eof()) return false;
  if (static_cast<size_t>(in.gcount()) != n) throw IoError(std::string("truncated payload: ") + what);
  return true;
}

inline uint32_t read_u32(std::istream& in, const char* what) {
  uint32_t v = 0;
  if (!read_bytes(in, &v, 4, what)) throw IoError(std::string("truncated payload: ") + what);
  return v;
}

inline std::vector<float> read_f32_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("missing file: " + path);
  in.seekg(0, std::ios::end);
  auto bytes = static_cast<size_t>(in.tellg());
  in.seekg(0);
  if (bytes % sizeof(float) != 0) throw IoError("payload length mismatch: " + path);
  std::vector<float> data(bytes / sizeof(float));
  if (bytes > 0) {
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(bytes));
    if (!in) throw IoError("truncated payload: " + path);
  }
  return data;
}

inline void write_f32_file(const std::string& path, const std::vector<float>& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for write: " + path);
  if (!data.empty()) write_f32_array(out, data.data(), data.size());
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace io
}  // namespace teleqa
