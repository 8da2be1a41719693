#pragma once

#include <cmath>
#include <cstdint>

namespace recon {

// Counter-based splitmix64 generator. Every stochastic component takes one of
// these (or a fork of one), so runs replay bit-identically from a single seed.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    int64_t uniform_int(int64_t n) {
        return n <= 1 ? 0 : static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n));
    }

    // Box-Muller; both uniforms drawn fresh so the stream stays stateless
    // beyond the counter.
    double normal() {
        double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Derives an independent stream; forks with distinct tags never collide
    // in practice (two scrambler rounds over state ^ tag).
    Rng fork(uint64_t tag) const {
        uint64_t z = state_ ^ (0x632be59bd9b4e019ULL + tag * 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        z = (z ^ (z >> 31)) * 0xd6e8feb86659fd93ULL;
        return Rng(z ^ (z >> 32));
    }

    uint64_t state() const { return state_; }

private:
    uint64_t state_;
};

}  // namespace recon
