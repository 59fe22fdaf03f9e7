#ifndef MDPCHECK_RNG_HPP_
#define MDPCHECK_RNG_HPP_

#include <array>
#include <bit>
#include <cstdint>
#include <span>
#include <string_view>
#include <utility>

namespace mdpcheck {

/// SplitMix64 step. Used to expand seeds and to derive child seeds.
constexpr std::uint64_t splitmix64(std::uint64_t& state) noexcept {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// FNV-1a over a string, for turning stream names into seed salts.
constexpr std::uint64_t fnv1a(std::string_view text) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : text) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

/// Child seed for (stream, index) under `base`. The derivation is part of the
/// reproducibility contract: changing it changes every run.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::string_view stream,
                                    std::uint64_t index = 0) noexcept {
  std::uint64_t s = base ^ fnv1a(stream);
  std::uint64_t a = splitmix64(s);
  s = a ^ (index * 0xD1B54A32D192ED03ULL);
  return splitmix64(s);
}

/// xoshiro256** 1.0 (Blackman & Vigna), state expanded from a 64-bit seed by
/// SplitMix64. Output sequence is fixed across compilers and platforms, unlike
/// the std:: distributions, so every sampling helper below is hand-rolled.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed = 0) noexcept { reseed(seed); }

  void reseed(std::uint64_t seed) noexcept {
    std::uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
  }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return ~result_type{0}; }

  result_type operator()() noexcept {
    const std::uint64_t result = std::rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = std::rotl(s_[3], 45);
    return result;
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() noexcept {
    return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
  }

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) noexcept {
    return lo + (hi - lo) * uniform();
  }

  /// Uniform integer in [0, n), n > 0. Lemire's multiply-shift with rejection.
  std::uint64_t below(std::uint64_t n) noexcept {
    auto mul = [](std::uint64_t a, std::uint64_t b) {
      const unsigned __int128 p = static_cast<unsigned __int128>(a) * b;
      return std::pair{static_cast<std::uint64_t>(p >> 64),
                       static_cast<std::uint64_t>(p)};
    };
    auto [hi, lo] = mul((*this)(), n);
    if (lo < n) {
      const std::uint64_t threshold = (0 - n) % n;
      while (lo < threshold) {
        std::tie(hi, lo) = mul((*this)(), n);
      }
    }
    return hi;
  }

  bool bernoulli(double p) noexcept { return uniform() < p; }

  /// Fair coin, one bit of output.
  int coin() noexcept { return static_cast<int>((*this)() >> 63); }

  bool operator==(const Rng&) const = default;

 private:
  std::array<std::uint64_t, 4> s_{};
};

/// Fisher-Yates shuffle driven by Rng::below (std::shuffle is not portable).
template <typename T>
void shuffle(std::span<T> items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace mdpcheck

#endif  // MDPCHECK_RNG_HPP_
