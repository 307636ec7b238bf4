// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

namespace superdir {

// Seeded 64-bit stream (splitmix64 seeding into xoshiro256**). The standard
// library distributions are implementation defined, so every draw used by the
// toolkit goes through here to keep generated files byte-identical.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0);

    std::uint64_t next_u64();
    // Uniform in [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi);
    // Standard normal via Box-Muller.
    double normal();
    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);

    // Derive an independent stream, e.g. one per spacing or per epoch.
    Rng fork(std::uint64_t stream_id) const;

private:
    std::uint64_t s_[4];
    std::uint64_t seed_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Fisher-Yates shuffle driven by Rng.
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        auto j = static_cast<std::size_t>(rng.below(i));
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace superdir
