#pragma once

#include <cmath>
#include <cstdint>

namespace patrec {

// Deterministic 64-bit generator (splitmix64). Used everywhere randomness is
// needed so results are bit-identical across platforms and worker counts —
// the standard library distributions are implementation-defined and banned
// from anything that affects outputs.
struct SplitMix64 {
    uint64_t state = 0;

    explicit SplitMix64(uint64_t seed = 0) : state(seed) {}

    uint64_t next() {
        state += 0x9e3779b97f4a7c15ull;
        uint64_t z = state;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 random mantissa bits.
    double next_double() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller (explicit so the byte stream is stable).
    double next_gaussian() {
        double u1 = next_double();
        double u2 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    // Mixes independent stream coordinates (seed, epoch, example, ...) into
    // a fresh seed so parallel consumers never share a sequence.
    static uint64_t mix(uint64_t a, uint64_t b) {
        SplitMix64 m(a ^ (0x9e3779b97f4a7c15ull + (b << 6) + (b >> 2)));
        m.next();
        return m.next() ^ b;
    }
};

}  // namespace patrec
