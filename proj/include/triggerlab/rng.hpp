#pragma once

// Seedable, splittable randomness.
//
// Every stochastic routine in the library draws from an Rng that was derived
// from (root seed, stream id, item index) via a splitmix64 chain, so any
// single sequence, training sample or evaluation draw is reproducible in
// isolation. Bounded draws use rejection sampling on the raw mt19937_64
// output; std::uniform_int_distribution is avoided because its mapping is
// not pinned by the standard.

#include <cstdint>
#include <random>
#include <stdexcept>

namespace triggerlab {

// Stream ids keep independent consumers of the same root seed disjoint.
enum class Stream : std::uint64_t {
  train_wv = 1,    // stage-1 training samples
  train_wkq = 2,   // stage-2 training samples
  eval_ood = 3,
  eval_in_dist = 4,
  generate = 5,
  misc = 6,
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace detail

// Derive a child seed from (root, stream, index). Pure function.
inline std::uint64_t derive_seed(std::uint64_t root, Stream stream,
                                 std::uint64_t index) {
  std::uint64_t s = root;
  std::uint64_t a = detail::splitmix64(s);
  s ^= static_cast<std::uint64_t>(stream) * 0x9e3779b97f4a7c15ULL;
  std::uint64_t b = detail::splitmix64(s);
  s ^= index * 0xd1b54a32d192ed03ULL;
  std::uint64_t c = detail::splitmix64(s);
  return a ^ (b + 0x165667b19e3779f9ULL) ^ (c << 1);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  Rng(std::uint64_t root, Stream stream, std::uint64_t index)
      : engine_(derive_seed(root, stream, index)) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, n). Rejection sampling: unbiased and stdlib-independent.
  std::uint64_t next_below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::next_below: n must be > 0");
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  // Uniform integer on [lo, hi], inclusive.
  std::int64_t next_int(std::int64_t lo, std::int64_t hi) {
    if (lo > hi) throw std::invalid_argument("Rng::next_int: empty range");
    const std::uint64_t span =
        static_cast<std::uint64_t>(hi) - static_cast<std::uint64_t>(lo) + 1;
    return lo + static_cast<std::int64_t>(next_below(span));
  }

  // Uniform double on [0, 1) with 53 random bits.
  double next_real01() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace triggerlab
