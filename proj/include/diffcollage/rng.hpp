#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

namespace dc {

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Order-sensitive hash of a seed and a list of words. Used to derive
/// independent per-node / per-sample / per-step keys from one global seed.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> words) noexcept
{
    std::uint64_t h = mix64(seed ^ 0x6a09e667f3bcc909ULL);
    for (std::uint64_t w : words) {
        h = mix64(h ^ mix64(w + 0x3c6ef372fe94f82bULL));
    }
    return h;
}

/// Counter-based generator: every draw is a pure function of (key, counter),
/// so results never depend on which thread asks or in what order.
class CounterRng {
public:
    constexpr explicit CounterRng(std::uint64_t key) noexcept : key_(key) {}

    constexpr std::uint64_t bits(std::uint64_t counter, std::uint64_t lane = 0) const noexcept
    {
        return mix64(mix64(key_ ^ mix64(counter)) + lane);
    }

    /// Uniform in (0, 1).
    double uniform(std::uint64_t counter, std::uint64_t lane = 0) const noexcept
    {
        return (static_cast<double>(bits(counter, lane) >> 11) + 0.5) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller (cosine branch).
    double normal(std::uint64_t counter) const noexcept
    {
        const double u1 = uniform(counter, 1);
        const double u2 = uniform(counter, 2);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    constexpr std::uint64_t key() const noexcept { return key_; }

private:
    std::uint64_t key_;
};

/// Sequential view over a CounterRng for code that just wants "the next draw".
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) noexcept : rng_(seed) {}

    double uniform() noexcept { return rng_.uniform(counter_++); }
    double normal() noexcept { return rng_.normal(counter_++); }
    std::uint64_t next_u64() noexcept { return rng_.bits(counter_++); }

    /// Uniform integer in [0, n). n must be > 0.
    std::uint64_t below(std::uint64_t n) noexcept
    {
        return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
    }

    std::uint64_t counter() const noexcept { return counter_; }

private:
    CounterRng rng_;
    std::uint64_t counter_ = 0;
};

} // namespace dc
