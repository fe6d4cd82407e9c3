#pragma once

// Seeded randomness shared by every module that needs reproducible draws.
//
// The generator is SplitMix64 (Steele, Lea & Flood 2014):
//
//   state += 0x9E3779B97F4A7C15
//   z = state
//   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//   return z ^ (z >> 31)
//
// Bounded integers use rejection sampling: with t = (2^64 - bound) mod bound,
// draw r until r >= t and return r mod bound. Uniform reals take the top 53
// bits: (r >> 11) * 2^-53. Fisher-Yates walks i = n-1 .. 1 and swaps a[i]
// with a[bounded(i + 1)]. Any implementation following these three rules
// reproduces every sample and trace this project emits.

#include <cstdint>
#include <span>
#include <string_view>
#include <utility>

namespace vigil {

class SplitMix64 {
public:
    explicit constexpr SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

    constexpr std::uint64_t next() noexcept {
        state_ += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, bound). bound must be non-zero.
    constexpr std::uint64_t bounded(std::uint64_t bound) noexcept {
        const std::uint64_t threshold = (0 - bound) % bound;
        for (;;) {
            const std::uint64_t r = next();
            if (r >= threshold) return r % bound;
        }
    }

    // Uniform in [0, 1).
    constexpr double uniform() noexcept {
        return static_cast<double>(next() >> 11) * 0x1.0p-53;
    }

private:
    std::uint64_t state_;
};

template <typename T>
void fisher_yates(std::span<T> items, SplitMix64& rng) {
    if (items.size() < 2) return;
    for (std::size_t i = items.size() - 1; i > 0; --i) {
        const auto j = static_cast<std::size_t>(rng.bounded(i + 1));
        using std::swap;
        swap(items[i], items[j]);
    }
}

// 64-bit FNV-1a; used to fold names into seeds.
constexpr std::uint64_t fnv1a64(std::string_view text) noexcept {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

// Combine a seed with a value: one SplitMix64 step over (seed ^ value).
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t value) noexcept {
    return SplitMix64(seed ^ value).next();
}

}  // namespace vigil
