#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace idcloak {

// Seeded random stream. Identical seed and call sequence give identical draws
// on a given platform; `position()` counts completed draw calls.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0);

    std::uint64_t seed() const { return seed_; }
    std::uint64_t position() const { return position_; }

    double normal();
    double uniform();                   // [0, 1)
    double uniform(double lo, double hi);
    int uniform_int(int lo, int hi);    // inclusive
    std::uint64_t next_u64();
    Eigen::VectorXd normal_vector(Eigen::Index n);

    // Independent child stream for (seed, index); used to fan out per-anchor,
    // per-arm and per-identity streams deterministically.
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t index);
    Rng child(std::uint64_t index) const { return Rng(derive(seed_, index)); }

private:
    std::uint64_t seed_;
    std::uint64_t position_ = 0;
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

} // namespace idcloak
