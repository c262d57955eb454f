#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace animlab {

// Malformed run configuration: bad key, bad value, cross-field violation,
// or a checkpoint whose declared shapes do not match the instantiated model.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct CheckpointError : std::runtime_error {
  explicit CheckpointError(const std::string& msg) : std::runtime_error(msg) {}
};

// Unreadable, truncated, or structurally invalid checkpoint data.
struct CheckpointCorruptError : CheckpointError {
  explicit CheckpointCorruptError(const std::string& msg) : CheckpointError(msg) {}
};

// Checkpoint config hash differs from the active config.
struct CheckpointHashMismatchError : CheckpointError {
  explicit CheckpointHashMismatchError(const std::string& msg) : CheckpointError(msg) {}
};

namespace detail {
inline void format_into(std::ostringstream&) {}
template <class T, class... Rest>
void format_into(std::ostringstream& os, const T& v, const Rest&... rest) {
  os << v;
  format_into(os, rest...);
}
}  // namespace detail

template <class... Parts>
std::string cat(const Parts&... parts) {
  std::ostringstream os;
  detail::format_into(os, parts...);
  return os.str();
}

template <class... Parts>
[[noreturn]] void fail_arg(const Parts&... parts) {
  throw std::invalid_argument(cat(parts...));
}

#define ANIMLAB_REQUIRE(cond, ...)          \
  do {                                      \
    if (!(cond)) ::animlab::fail_arg(__VA_ARGS__); \
  } while (0)

// FNV-1a, used for config hashing and derived RNG stream ids.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 14695981039346656037ull) {
  auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline uint64_t fnv1a64(const std::string& s, uint64_t h = 14695981039346656037ull) {
  return fnv1a64(s.data(), s.size(), h);
}

inline std::string hex64(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

}  // namespace animlab
