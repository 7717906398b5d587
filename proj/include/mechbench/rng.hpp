#pragma once
#include <cstdint>

namespace mech {

/// splitmix64 step (Steele, Lea, Flood 2014). Fully specified, so streams
/// replicate bit-for-bit across platforms and standard libraries.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d2b29f5af73e33ULL;
    return z ^ (z >> 31);
}

/// Derive a child seed from a parent seed and a stream index
/// (per-trajectory, per-epoch, ...). Deterministic and collision-scattering.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t s = seed ^ (0xd1b54a32d192ed03ULL * (stream + 1));
    splitmix64(s);
    return splitmix64(s);
}

/// Seedable portable generator backed by splitmix64.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() { return splitmix64(state_); }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        // Multiply-shift reduction; bias is negligible for benchmark-sized n.
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    Rng child(std::uint64_t stream) const { return Rng(derive_seed(state_, stream)); }

private:
    std::uint64_t state_;
};

}  // namespace mech
