// Deterministic random number generation.
//
// std::mt19937_64 has a standard-mandated output sequence, but the standard
// distributions do not, so every draw here goes through hand-rolled
// transforms. Same seed, same call sequence => bit-identical values on any
// conforming platform.
//
// Independent streams are keyed by (seed, tag, index) via FNV-1a mixing, so
// e.g. the shuffle stream of epoch 7 never depends on how many draws epoch 6
// consumed.
#pragma once

#include <cstdint>
#include <numbers>
#include <random>
#include <string_view>

#include "common.hpp"

namespace triprompt {

inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t index = 0) {
  Fnv1a h;
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((base >> (8 * i)) & 0xff);
  h.update(b, 8);
  h.update(tag);
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((index >> (8 * i)) & 0xff);
  h.update(b, 8);
  // splitmix finalizer so adjacent indices land far apart
  std::uint64_t z = h.value() + 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  // uniform in [0, 1), 53-bit resolution
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // standard normal via Box-Muller (two uniforms per draw; the sine branch
  // is discarded to keep the consumption pattern trivial to reason about)
  double normal() {
    double u1 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  // unbiased integer in [0, n), rejection sampled
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t threshold = (0 - n) % n;  // 2^64 mod n
    for (;;) {
      const std::uint64_t r = eng_();
      if (r >= threshold) return r % n;
    }
  }

  // in-place Fisher-Yates
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 eng_;
};

inline Vec gaussian_vec(Rng& rng, std::size_t n, double sigma) {
  Vec v(n);
  for (auto& x : v) x = sigma * rng.normal();
  return v;
}

inline Mat gaussian_mat(Rng& rng, std::size_t rows, std::size_t cols, double sigma) {
  Mat m(rows, cols);
  for (auto& x : m.a) x = sigma * rng.normal();
  return m;
}

// Canonical unit vector for concept `index` under `seed`. This is the shared
// concept vocabulary: the data generator plants these directions as visual
// prototypes and the text side uses them as class-name token embeddings, so
// equal seeds and equal dimensions stand in for pretrained cross-modal
// alignment.
inline Vec concept_unit_vector(std::uint64_t seed, std::uint64_t index, std::size_t dim) {
  Rng rng(derive_seed(seed, "concept", index));
  Vec v = gaussian_vec(rng, dim, 1.0);
  const double n = norm2(v);
  if (n < 1e-12) throw NumericError("degenerate concept vector");
  for (auto& x : v) x /= n;
  return v;
}

// Permutation of [0, n) drawn from a fresh keyed stream.
inline std::vector<std::size_t> keyed_permutation(std::uint64_t seed, std::string_view tag,
                                                  std::uint64_t index, std::size_t n) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  Rng rng(derive_seed(seed, tag, index));
  rng.shuffle(p);
  return p;
}

}  // namespace triprompt
