#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "tabgen/tensor.hpp"

namespace tabgen {

/// Derive a stream seed from a base seed and a component label, so
/// sub-components shared between model variants draw identical values
/// regardless of which other components exist.
inline std::uint64_t mix_seed(std::uint64_t seed, const std::string& label) {
  // FNV-1a over the label, folded into the seed via splitmix64.
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : label) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull + h;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  double uniform(double lo, double hi) {
    // uniform in [lo, hi) from 53 random bits; avoids the
    // platform-dependent behavior of std::uniform_real_distribution.
    std::uint64_t bits = gen_() >> 11;
    double u = static_cast<double>(bits) * (1.0 / 9007199254740992.0);
    return lo + u * (hi - lo);
  }

  double normal() {
    // Box-Muller, cached second value.
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform(0.0, 1.0);
    double u2 = uniform(0.0, 1.0);
    while (u1 <= 1e-300) u1 = uniform(0.0, 1.0);
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 6.283185307179586 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  std::uint64_t next_u64() { return gen_(); }

  /// Integer in [0, n).
  std::size_t index(std::size_t n) {
    // modulo bias negligible for n << 2^64
    return static_cast<std::size_t>(gen_() % n);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

enum class InitScheme { KaimingUniform, Normal001 };

/// Deterministic given (shape, scheme, seed). fan_in is the first shape
/// dimension for 2-d weights, the total size otherwise.
inline Tensor seeded_init(std::vector<std::size_t> shape, InitScheme scheme,
                          std::uint64_t seed) {
  for (std::size_t d : shape)
    if (d == 0) throw std::invalid_argument("seeded_init: zero dimension");
  Tensor t(std::move(shape));
  Rng rng(seed);
  if (scheme == InitScheme::KaimingUniform) {
    std::size_t fan_in = t.ndim() >= 2 ? t.shape[0] : t.size();
    double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& v : t.data) v = static_cast<real>(rng.uniform(-bound, bound));
  } else {
    for (auto& v : t.data) v = static_cast<real>(0.01 * rng.normal());
  }
  return t;
}

}  // namespace tabgen
