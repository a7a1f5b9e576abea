#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <thread>
#include <vector>

namespace xtod::rng {

// Seed derivation: FNV-1a over the parts, then a splitmix64 finalizer.
// Derived seeds are stable across platforms and releases; per-item seeds
// (per movie, per dialog, per context) are what makes parallel generation
// equal serial generation.
inline std::uint64_t mix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

class SeedChain {
 public:
  explicit SeedChain(std::uint64_t seed) : h_(mix(seed ^ 0xCBF29CE484222325ull)) {}

  SeedChain& add(std::uint64_t v) {
    h_ = mix(h_ ^ v);
    return *this;
  }
  SeedChain& add(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001B3ull;
    }
    return add(h ^ (static_cast<std::uint64_t>(s.size()) << 32));
  }
  std::uint64_t value() const { return h_; }

 private:
  std::uint64_t h_;
};

inline std::uint64_t derive(std::uint64_t seed, std::string_view tag) {
  return SeedChain(seed).add(tag).value();
}
inline std::uint64_t derive(std::uint64_t seed, std::string_view tag, std::uint64_t n) {
  return SeedChain(seed).add(tag).add(n).value();
}
inline std::uint64_t derive(std::uint64_t seed, std::string_view tag, std::string_view tag2,
                            std::uint64_t n) {
  return SeedChain(seed).add(tag).add(tag2).add(n).value();
}

// mt19937_64 output is fully specified by the standard; the bounded/real
// mappings below are ours because std::uniform_*_distribution algorithms
// are implementation-defined and would break cross-platform determinism.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next() { return eng_(); }

  // Uniform on [0, n), rejection sampled (no modulo bias). n must be > 0.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = eng_();
    } while (x >= limit);
    return x % n;
  }

  // Uniform integer on [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(below(static_cast<std::uint64_t>(hi - lo) + 1));
  }

  // Uniform on [0, 1) with 53-bit resolution.
  double real01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller (deterministic, unlike std::normal_distribution).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1, u2;
    do {
      u1 = real01();
    } while (u1 <= 0.0);
    u2 = real01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

  // k distinct indices from [0, n), order of selection preserved.
  std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::vector<std::size_t> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(below(n - i));
      std::swap(idx[i], idx[j]);
      out.push_back(idx[i]);
    }
    return out;
  }

 private:
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Runs fn(i) for i in [0, n) across `threads` workers. Each item must be
// independent and write only its own output slot; with per-item derived
// seeds the result is identical for any thread count.
template <class F>
void parallel_for(std::size_t n, unsigned threads, F&& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::atomic<std::size_t> next{0};
  const unsigned workers = std::min<std::size_t>(threads, n);
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        fn(i);
      }
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace xtod::rng
