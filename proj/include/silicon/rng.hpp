#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace silicon {

/// Seeded random source. Draws depend only on the engine state, so
/// serializing the engine is enough to resume a stream exactly.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    /// Uniform on the open interval (0, 1).
    double uniform() {
        const std::uint64_t bits = engine_() >> 11;
        return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
    }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) { return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n; }
    /// Standard normal via Box–Muller (no cached second variate).
    double normal();

    /// Independent child stream, e.g. one per worker or per sample.
    Rng derive(std::uint64_t salt);

    std::string serialize() const;
    static Rng deserialize(const std::string& state);

private:
    std::mt19937_64 engine_;
};

}  // namespace silicon
