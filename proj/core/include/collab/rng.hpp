#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace collab {

/// Deterministic random source. mt19937_64 output is fully specified by the
/// standard; the floating-point mappings below are implemented explicitly so
/// that streams are reproducible across platforms and standard libraries
/// (std::uniform_real_distribution is implementation-defined).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform double in [lo, hi) with 53 bits of randomness.
    double uniform(double lo = 0.0, double hi = 1.0) {
        const double u = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
        return lo + (hi - lo) * u;
    }

    /// Uniform integer in [0, n). n must be positive.
    std::size_t index(std::size_t n) { return static_cast<std::size_t>(next_u64() % n); }

    std::vector<double> vector(std::size_t n, double lo, double hi) {
        std::vector<double> out(n);
        for (auto& x : out) x = uniform(lo, hi);
        return out;
    }

private:
    std::mt19937_64 engine_;
};

} // namespace collab
