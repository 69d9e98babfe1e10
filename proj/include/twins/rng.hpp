#pragma once

#include <cmath>
#include <cstdint>

namespace twins {

// splitmix64: tiny seedable stream, reproducible across platforms so a
// printed seed replays a failure exactly.
class SplitMix64 {
public:
    using result_type = std::uint64_t;
    explicit SplitMix64(std::uint64_t seed = 0) : state_(seed) {}

    std::uint64_t operator()() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    static constexpr std::uint64_t min() { return 0; }
    static constexpr std::uint64_t max() { return ~0ULL; }

    // uniform in [0,1)
    double uniform() { return double((*this)() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    std::uint64_t below(std::uint64_t n) { return (*this)() % n; }

    // Box-Muller, one value per call
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // zero-mean normal truncated at two standard deviations
    double truncated_normal(double stddev) {
        for (;;) {
            double v = normal();
            if (std::abs(v) <= 2.0) return v * stddev;
        }
    }

private:
    std::uint64_t state_;
};

}  // namespace twins
