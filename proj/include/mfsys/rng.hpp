#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string_view>

namespace mfsys {

namespace detail {

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

constexpr std::uint64_t hash_label(std::string_view label) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char ch : label) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

// Counter-based random stream (SplitMix64 sequence keyed by seed and a
// hierarchical substream path). Copying a stream copies its position.
// Streams derived with child() from the same parent and id are identical;
// distinct ids give independent-looking sequences. Cheap to construct, so
// per-node or per-replication substreams are fine.
class RngStream {
 public:
  using result_type = std::uint64_t;

  explicit RngStream(std::uint64_t seed) noexcept
      : seed_(seed), key_(detail::mix64(seed ^ 0x5851f42d4c957f2dULL)) {}

  [[nodiscard]] RngStream child(std::uint64_t id) const noexcept {
    RngStream s(*this);
    s.key_ = detail::mix64(key_ ^ detail::mix64(id + detail::kGolden));
    s.counter_ = 0;
    s.depth_ = depth_ + 1;
    return s;
  }

  [[nodiscard]] RngStream child(std::string_view label) const noexcept {
    return child(detail::hash_label(label));
  }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() noexcept {
    return detail::mix64(key_ + (++counter_) * detail::kGolden);
  }

  // Uniform on [0, 1) with 53 random bits.
  double uniform01() noexcept {
    return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) noexcept {
    return lo + (hi - lo) * uniform01();
  }

  double exponential(double mean) noexcept {
    return -mean * std::log1p(-uniform01());
  }

  // Uniform integer in [0, bound). Lemire's multiply-shift with rejection.
  std::uint64_t below(std::uint64_t bound) noexcept {
    std::uint64_t x = (*this)();
    __uint128_t m = static_cast<__uint128_t>(x) * bound;
    auto low = static_cast<std::uint64_t>(m);
    if (low < bound) {
      const std::uint64_t threshold = (0 - bound) % bound;
      while (low < threshold) {
        x = (*this)();
        m = static_cast<__uint128_t>(x) * bound;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }
  [[nodiscard]] std::uint32_t depth() const noexcept { return depth_; }
  [[nodiscard]] std::uint64_t draws() const noexcept { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  std::uint32_t depth_ = 0;
};

}  // namespace mfsys
