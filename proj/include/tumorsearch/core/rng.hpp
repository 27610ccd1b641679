#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace tumorsearch {

/// Seeded random source with platform-independent distributions.
///
/// The standard library distributions are implementation-defined, so the
/// uniform and normal transforms are written out here on top of mt19937_64,
/// whose output sequence is fixed by the standard.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed), seed_mix_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 bits of resolution.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [lo, hi] (inclusive).
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
        if (span == 0) return lo + static_cast<std::int64_t>(engine_());
        // Rejection sampling removes modulo bias.
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        std::uint64_t draw = engine_();
        while (draw >= limit) draw = engine_();
        return lo + static_cast<std::int64_t>(draw % span);
    }

    /// Standard normal via Box-Muller; the second variate is cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Derives an independent stream, e.g. one per image index.
    Rng fork(std::uint64_t stream) const {
        std::seed_seq seq{static_cast<std::uint32_t>(seed_mix_ >> 32),
                          static_cast<std::uint32_t>(seed_mix_),
                          static_cast<std::uint32_t>(stream >> 32),
                          static_cast<std::uint32_t>(stream)};
        Rng child(0);
        child.engine_.seed(seq);
        child.seed_mix_ = seed_mix_ * 0x9E3779B97F4A7C15ULL + stream;
        return child;
    }

private:
    std::mt19937_64 engine_;
    std::uint64_t seed_mix_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

template <typename Container>
void shuffle(Container& items, Rng& rng) {
    if (items.size() < 2) return;
    for (std::size_t i = items.size() - 1; i > 0; --i) {
        const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)));
        using std::swap;
        swap(items[i], items[j]);
    }
}

}  // namespace tumorsearch
