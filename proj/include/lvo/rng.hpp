#pragma once

#include <cstdint>
#include <random>

namespace lvo {

/// Seeded generator shared by transforms, noise draws, and training.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    double normal() { return normal_(engine_); }
    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
    int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }
    std::uint64_t next_u64() { return engine_(); }

    std::mt19937_64& engine() { return engine_; }

    /// Independent stream derived from a base seed and a list of keys.
    static Rng derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(a),    static_cast<std::uint32_t>(a >> 32),
                          static_cast<std::uint32_t>(b),    static_cast<std::uint32_t>(c)};
        Rng r;
        r.engine_.seed(seq);
        return r;
    }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

} // namespace lvo
