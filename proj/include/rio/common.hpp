#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rio {

// ---------------------------------------------------------------------------
// Errors. Every failure the pipeline can surface carries a category so the
// CLI can map it to a stable exit code.
// ---------------------------------------------------------------------------

enum class ErrKind {
  precondition,
  missing_input,
  config_mismatch,
  divergence,
  numerical,
  empty_pool,
  exhaustion,
  degenerate_input,
  incomparable,
  size_limit,
  undefined_ratio,
  io,
};

inline const char* to_string(ErrKind k) {
  switch (k) {
    case ErrKind::precondition: return "precondition";
    case ErrKind::missing_input: return "missing-input";
    case ErrKind::config_mismatch: return "config-mismatch";
    case ErrKind::divergence: return "divergence";
    case ErrKind::numerical: return "numerical";
    case ErrKind::empty_pool: return "empty-pool";
    case ErrKind::exhaustion: return "exhaustion";
    case ErrKind::degenerate_input: return "degenerate-input";
    case ErrKind::incomparable: return "incomparable";
    case ErrKind::size_limit: return "size-limit";
    case ErrKind::undefined_ratio: return "undefined-ratio";
    case ErrKind::io: return "io";
  }
  return "unknown";
}

class RioError : public std::runtime_error {
 public:
  RioError(ErrKind kind, const std::string& msg)
      : std::runtime_error(std::string(to_string(kind)) + ": " + msg), kind_(kind) {}
  ErrKind kind() const { return kind_; }

 private:
  ErrKind kind_;
};

[[noreturn]] inline void fail(ErrKind kind, const std::string& msg) { throw RioError(kind, msg); }

inline void require(bool cond, ErrKind kind, const std::string& msg) {
  if (!cond) fail(kind, msg);
}

// ---------------------------------------------------------------------------
// Hashing: FNV-1a 64, used for seed derivation and artifact lineage stamps.
// ---------------------------------------------------------------------------

inline uint64_t fnv1a64(std::string_view data, uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hash_hex(uint64_t h) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[i] = digits[h & 0xf];
    h >>= 4;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Deterministic RNG. xoshiro256** seeded via splitmix64; all transforms are
// hand-rolled so streams are bit-stable across standard libraries.
// ---------------------------------------------------------------------------

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  /// Uniform in [0, 1) with 53 bits of randomness.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n). n must be > 0.
  uint64_t below(uint64_t n) {
    // multiply-shift; bias is negligible for the small n used here, but use
    // rejection to keep the draw exact.
    uint64_t threshold = (0 - n) % n;
    for (;;) {
      uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  int range(int lo, int hi_inclusive) {
    return lo + static_cast<int>(below(static_cast<uint64_t>(hi_inclusive - lo + 1)));
  }

  /// Standard normal via Box-Muller (no cached spare; two u64 per draw).
  double normal() {
    double u1 = 0.0;
    do { u1 = uniform(); } while (u1 <= 0.0);
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  /// Draw an index from unnormalized nonnegative weights by CDF inversion.
  size_t categorical(const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    double u = uniform() * total;
    double acc = 0.0;
    for (size_t i = 0; i < weights.size(); ++i) {
      acc += weights[i];
      if (u < acc) return i;
    }
    return weights.size() - 1;
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  uint64_t s_[4];
};

/// All randomness in the pipeline flows from one master seed through
/// (stage name, index) derivations; no ambient entropy anywhere.
inline uint64_t derive_seed(uint64_t master, std::string_view stage, uint64_t index = 0) {
  uint64_t state = master ^ fnv1a64(stage) ^ (0x9e3779b97f4a7c15ull * (index + 1));
  return splitmix64(state);
}

}  // namespace rio
