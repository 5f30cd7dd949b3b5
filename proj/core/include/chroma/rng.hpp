#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace chroma {

// Deterministic, platform-independent RNG. std::normal_distribution is
// implementation-defined, so every stream the project relies on for
// reproducibility (weight init, data synthesis, samplers) goes through this.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {
        // Warm up so nearby seeds decorrelate quickly.
        next_u64();
        next_u64();
    }

    // SplitMix64 step.
    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    std::uint64_t uniform_index(std::uint64_t n) {
        // Rejection sampling to avoid modulo bias.
        if (n == 0) return 0;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v = next_u64();
        while (v >= limit) v = next_u64();
        return v % n;
    }

    // Box-Muller, one value per call (the spare is cached).
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double gaussian(double mean, double stddev) { return mean + stddev * gaussian(); }

    template <typename Container>
    void shuffle(Container& c) {
        for (std::size_t i = c.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform_index(i));
            std::swap(c[i - 1], c[j]);
        }
    }

    // Derives an independent stream, e.g. per tile or per epoch.
    Rng fork(std::uint64_t stream) const {
        std::uint64_t mixed = state_ ^ (0x9e3779b97f4a7c15ULL + stream * 0xd1342543de82ef95ULL);
        return Rng(mixed);
    }

  private:
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace chroma
