#pragma once

#include <cstdint>
#include <cmath>

namespace textmux {

// Deterministic 64-bit generator (splitmix64 core). The standard <random>
// distributions are implementation-defined, so every sampling helper the
// library needs is spelled out here.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0,1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // uniform in [lo,hi)
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    std::uint64_t below(std::uint64_t n) {
        // multiply-shift; bias is negligible for the ranges used here and the
        // result is fully deterministic across platforms
        unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * n;
        return static_cast<std::uint64_t>(m >> 64);
    }

    int range_int(int lo, int hi) {  // inclusive bounds
        return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi - lo + 1)));
    }

    bool bernoulli(double p) { return uniform() < p; }

    double normal() {
        // Box-Muller, no caching so the stream stays position-independent
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    // weighted index draw; weights need not be normalized
    template <class Vec>
    int weighted(const Vec& weights) {
        double total = 0;
        for (double w : weights) total += w;
        double r = uniform() * total;
        double acc = 0;
        for (int i = 0; i < static_cast<int>(weights.size()); ++i) {
            acc += weights[i];
            if (r < acc) return i;
        }
        return static_cast<int>(weights.size()) - 1;
    }

    // independent child stream; mixing constant keeps (seed,k) pairs disjoint
    static Rng derive(std::uint64_t seed, std::uint64_t k) {
        Rng mixer(seed ^ (0x632be59bd9b4e019ULL + k * 0x9e6c63d0876a9a47ULL));
        return Rng(mixer.next_u64());
    }

private:
    std::uint64_t state_;
};

}  // namespace textmux
