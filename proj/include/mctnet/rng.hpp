#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

namespace mctnet {

// SplitMix64 finalizer. Used both as the stream generator and as the seed
// mixing function so that every random draw in the pipeline is reproducible
// bit for bit on any platform.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

class SplitMix64 {
 public:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

  explicit constexpr SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

  constexpr std::uint64_t next() noexcept {
    state_ += kGamma;
    return mix64(state_);
  }

  // Uniform on [0, 1) with 53 bits of resolution.
  constexpr double uniform() noexcept {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
  }

  constexpr double uniform(double lo, double hi) noexcept {
    return lo + (hi - lo) * uniform();
  }

  // Uniform integer in [0, n). Plain modulo reduction; the bias is below
  // 2^-40 for every n the pipeline uses.
  constexpr std::uint64_t below(std::uint64_t n) noexcept { return next() % n; }

 private:
  std::uint64_t state_;
};

// Stage identifiers folded into derived seeds.
enum class SeedStage : std::uint64_t {
  kSplit = 1,
  kInit = 2,
  kBatches = 3,
  kKMeans = 4,
  kMember = 5,
};

// Derives an independent seed for (stage, index) from a master seed:
// mix64(master ^ mix64((stage << 32) ^ index)).
constexpr std::uint64_t derive_seed(std::uint64_t master, SeedStage stage,
                                    std::uint64_t index) noexcept {
  const auto s = static_cast<std::uint64_t>(stage);
  return mix64(master ^ mix64((s << 32) ^ index));
}

// Fisher-Yates, from the back, drawing j = below(i + 1).
template <typename T>
void shuffle(std::span<T> values, SplitMix64& rng) noexcept {
  for (std::size_t i = values.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(values[i - 1], values[j]);
  }
}

inline std::vector<std::size_t> shuffled_indices(std::size_t n, SplitMix64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  shuffle(std::span<std::size_t>(idx), rng);
  return idx;
}

}  // namespace mctnet
