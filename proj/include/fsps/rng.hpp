#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace fsps {

/// FNV-1a over an arbitrary byte string; used to derive stream seeds.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a_u64(std::uint64_t x, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (int i = 0; i < 8; ++i) {
    h ^= (x >> (8 * i)) & 0xff;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Deterministic RNG. Wraps std::mt19937_64 (whose output sequence is fixed
/// by the standard) and implements its own distributions, since the std::*
/// distributions are implementation-defined and would break reproducibility
/// of sampled episodes across library versions.
///
/// All randomness in an experiment flows from one root seed; components get
/// independent streams via fork("pretrain"), fork("search"), ..., and
/// per-episode streams via fork(episode_index).
class Rng {
 public:
  Rng() : Rng(0) {}
  explicit Rng(std::uint64_t seed) : engine_(seed), seed_path_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t uniform_below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  /// Uniform double in [0, 1).
  double uniform() {
    return static_cast<double>(engine_() >> 11) * (1.0 / 9007199254740992.0);
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[uniform_below(i)]);
    }
  }

  /// k distinct indices drawn uniformly from [0, n), in random order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    for (std::size_t i = 0; i < k; ++i) {
      std::swap(pool[i], pool[i + uniform_below(n - i)]);
    }
    pool.resize(k);
    return pool;
  }

  /// Derives an independent child stream, deterministic in (parent seed
  /// path, name). Forking does not advance this stream.
  Rng fork(std::string_view name) const { return Rng(fnv1a(name, fnv1a_u64(seed_path_))); }
  Rng fork(std::uint64_t index) const { return Rng(fnv1a_u64(index + 1, fnv1a_u64(seed_path_))); }

  /// Engine-state round trip, used by checkpoint resume.
  std::string serialize() const {
    std::ostringstream os;
    os << engine_ << ' ' << seed_path_ << ' ' << (have_spare_ ? 1 : 0) << ' ' << spare_;
    return os.str();
  }

  static Rng deserialize(const std::string& s) {
    Rng r;
    std::istringstream is(s);
    int flag = 0;
    is >> r.engine_ >> r.seed_path_ >> flag >> r.spare_;
    r.have_spare_ = flag != 0;
    return r;
  }

 private:
  std::mt19937_64 engine_;
  std::uint64_t seed_path_ = 0;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace fsps
