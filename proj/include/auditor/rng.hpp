#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <utility>
#include <vector>

namespace auditor {

/// Seedable generator whose output is identical on every conforming
/// platform.
///
/// The engine is std::mt19937_64, whose sequence is fixed by the standard.
/// The std:: distributions are implementation-defined, so the helpers below
/// derive every variate from raw engine output with a fixed recipe:
///   - uniform_below(n): rejection sampling on the top of the 64-bit range
///   - uniform01(): top 53 bits scaled by 2^-53
///   - normal(): Box-Muller, one variate per call (the pair's partner is dropped)
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    /// Uniform integer in [0, n). n must be > 0.
    std::uint64_t uniform_below(std::uint64_t n) {
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t x = 0;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    /// Uniform integer in [lo, hi].
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        return lo + static_cast<std::int64_t>(uniform_below(static_cast<std::uint64_t>(hi - lo) + 1));
    }

    double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    bool bernoulli(double p) { return uniform01() < p; }

    double normal(double mean, double sd) {
        double u1 = 0.0;
        do {
            u1 = uniform01();
        } while (u1 <= 0.0);
        const double u2 = uniform01();
        return mean + sd * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    /// Poisson variate: Knuth's multiplication method for small means,
    /// rounded normal approximation above 200.
    std::int64_t poisson(double mean) {
        if (mean <= 0.0) return 0;
        if (mean > 200.0) {
            const double x = std::round(normal(mean, std::sqrt(mean)));
            return x < 0.0 ? 0 : static_cast<std::int64_t>(x);
        }
        const double limit = std::exp(-mean);
        std::int64_t k = 0;
        double prod = uniform01();
        while (prod > limit) {
            ++k;
            prod *= uniform01();
        }
        return k;
    }

    /// Index drawn with probability proportional to weights (all >= 0, sum > 0).
    std::size_t weighted_index(std::span<const double> weights) {
        double total = 0.0;
        for (double w : weights) total += w;
        double x = uniform01() * total;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            if (x < weights[i]) return i;
            x -= weights[i];
        }
        for (std::size_t i = weights.size(); i-- > 0;)
            if (weights[i] > 0.0) return i;
        return 0;
    }

    /// Fisher-Yates with uniform_below.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(uniform_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

/// SplitMix64 finalizer. Derives independent stream seeds from a base seed
/// and a list of indices, so trial i of cell j gets the same stream no matter
/// which order trials run in.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

template <typename... Ts>
constexpr std::uint64_t derive_seed(std::uint64_t base, Ts... parts) {
    std::uint64_t s = mix_seed(base);
    ((s = mix_seed(s ^ static_cast<std::uint64_t>(parts))), ...);
    return s;
}

}  // namespace auditor
