#pragma once

#include <cstdint>
#include <random>

namespace her2ws::rng {

// SplitMix64 finalizer. Decorrelates seeds derived from a user seed plus
// stream tags, so per-slide / per-epoch streams are independent.
inline uint64_t mix(uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// Seed for stream (base, tag, index). Parallel workers draw from their own
// stream, so thread count never changes the generated values.
inline uint64_t stream_seed(uint64_t base, uint64_t tag, uint64_t index = 0) {
    return mix(mix(base ^ tag) + index);
}

inline std::mt19937_64 make_engine(uint64_t base, uint64_t tag, uint64_t index = 0) {
    return std::mt19937_64(stream_seed(base, tag, index));
}

// Stream tags (arbitrary distinct constants).
inline constexpr uint64_t kTagSlide = 0x1001;
inline constexpr uint64_t kTagRater = 0x2001;  // + rater index
inline constexpr uint64_t kTagSplit = 0x3001;
inline constexpr uint64_t kTagShuffle = 0x4001;  // + epoch
inline constexpr uint64_t kTagInit = 0x5001;

}  // namespace her2ws::rng
