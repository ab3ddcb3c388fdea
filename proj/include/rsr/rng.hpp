#pragma once

// Counter-based random numbers. Every stream is a pure function of
// (master seed, stream id, position), so results never depend on how work is
// split across threads.

#include <cmath>
#include <cstdint>
#include <limits>

namespace rsr {

namespace detail {

// SplitMix64 finalizer (Stafford variant 13).
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

}  // namespace detail

/// Stream key for a (seed, stream) pair. Distinct purposes inside one run
/// (e.g. words vs. correction integrals) use different `domain` tags.
constexpr std::uint64_t stream_key(std::uint64_t seed, std::uint64_t stream,
                                   std::uint64_t domain = 0) noexcept {
  std::uint64_t k = detail::mix64(seed + detail::kGolden);
  k = detail::mix64(k ^ (domain * 0xd1b54a32d192ed03ULL + 0x632be59bd9b4e019ULL));
  return detail::mix64(k ^ (stream + 0x8cb92ba72f3d8dd7ULL));
}

/// UniformRandomBitGenerator over a single counter stream. Cheap to
/// construct, so callers create one per sample.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  constexpr CounterRng(std::uint64_t seed, std::uint64_t stream, std::uint64_t domain = 0) noexcept
      : key_(stream_key(seed, stream, domain)) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  constexpr result_type operator()() noexcept {
    return detail::mix64(key_ + (++counter_) * detail::kGolden);
  }

  /// Value at an explicit position without advancing the stream.
  constexpr result_type at(std::uint64_t position) const noexcept {
    return detail::mix64(key_ + (position + 1) * detail::kGolden);
  }

  constexpr std::uint64_t position() const noexcept { return counter_; }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  /// Uniform double in (0, 1).
  double uniform_open() noexcept {
    return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace rsr
