#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace ga {

/// Seedable portable generator.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the C++
/// standard. The derived draws below do not use <random> distributions (their
/// algorithms are implementation-defined) so every stream is reproducible
/// across platforms and languages:
///   uniform()  = (next >> 11) · 2⁻⁵³                  in [0, 1)
///   normal()   = Box–Muller on u1 = 1 − uniform(), u2 = uniform();
///                returns r·cos(2πu2) first, then the cached r·sin(2πu2)
///   below(n)   = rejection sampling on the top of the 64-bit range
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }
    double uniform();
    double normal();
    double normal(double mean, double sd) { return mean + sd * normal(); }
    /// Uniform integer in [0, n). n must be positive.
    std::uint64_t below(std::uint64_t n);

    /// k distinct indices from [0, n), uniformly, in ascending order
    /// (partial Fisher–Yates, then sorted).
    std::vector<std::size_t> sample_sorted(std::size_t n, std::size_t k);

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace ga
