#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace advlora {

// Counter-based randomness: every draw is a pure function of (seed, index),
// so parallel and serial fills of the same stream agree bit-exactly.

inline std::uint64_t splitmix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t counter_hash(std::uint64_t seed, std::uint64_t index) {
    return splitmix64(splitmix64(seed) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

// Uniform in (0, 1]; never returns 0, so it is safe under log().
inline double uniform01(std::uint64_t seed, std::uint64_t index) {
    return static_cast<double>((counter_hash(seed, index) >> 11) + 1) * 0x1p-53;
}

// Standard normal via Box-Muller; one value per index.
inline double gaussian(std::uint64_t seed, std::uint64_t index) {
    const double u1 = uniform01(seed, 2 * index);
    const double u2 = uniform01(seed, 2 * index + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

// Uniform integer in [0, bound); bound > 0.
inline std::uint64_t uniform_below(std::uint64_t seed, std::uint64_t index,
                                   std::uint64_t bound) {
    const unsigned __int128 wide =
        static_cast<unsigned __int128>(counter_hash(seed, index)) * bound;
    return static_cast<std::uint64_t>(wide >> 64);
}

// Named substreams keep independent uses of one run seed decorrelated.
enum class Stream : std::uint64_t {
    lora_init = 1,
    backbone = 2,
    class_embed = 3,
    dropout = 4,
    shuffle = 5,
    blobs = 6,
    attack_start = 7,
    few_shot = 8,
    grad_noise = 9,
    probe = 10,
};

inline std::uint64_t substream(std::uint64_t seed, Stream s,
                               std::uint64_t a = 0, std::uint64_t b = 0) {
    std::uint64_t h = splitmix64(seed ^ (static_cast<std::uint64_t>(s) * 0x9e3779b97f4a7c15ULL));
    h = splitmix64(h ^ splitmix64(a));
    return splitmix64(h ^ splitmix64(b + 0x2545f4914f6cdd1dULL));
}

// Convenience sequential view over one substream.
class CounterRng {
  public:
    explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

    double next_uniform() { return uniform01(seed_, counter_++); }
    double next_gaussian() { return gaussian(seed_, counter_++); }
    std::uint64_t next_below(std::uint64_t bound) {
        return uniform_below(seed_, counter_++, bound);
    }

    std::uint64_t seed() const { return seed_; }

  private:
    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
};

} // namespace advlora
