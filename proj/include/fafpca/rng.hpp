#pragma once

#include <cstdint>
#include <random>

namespace fafpca {

/// splitmix64 step; used only to derive well-mixed seeds for substreams.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Derive the seed of substream (tag, index) from a base seed.
///
/// Generators, replicate runs and subject-level draws each get their own
/// substream so results do not depend on evaluation or scheduling order.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag, std::uint64_t index = 0) {
    std::uint64_t s = base;
    std::uint64_t a = splitmix64(s);
    s ^= tag * 0x9e3779b97f4a7c15ULL;
    std::uint64_t b = splitmix64(s);
    s ^= index + 0xd1b54a32d192ed03ULL;
    std::uint64_t c = splitmix64(s);
    return a ^ (b + (c << 1));
}

// Substream tags.
inline constexpr std::uint64_t kStreamSubject = 0x5355424aULL;   // per-subject draws
inline constexpr std::uint64_t kStreamGlobal = 0x474c4f42ULL;    // dataset-level draws
inline constexpr std::uint64_t kStreamTestSet = 0x54455354ULL;   // held-out set
inline constexpr std::uint64_t kStreamSplit = 0x53504c54ULL;     // train/test splits

/// Deterministic random stream. Normal draws use the Marsaglia polar method
/// without caching the spare deviate, so every call consumes a predictable
/// amount of the underlying stream.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform on [0, 1).
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    /// Uniform on [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal deviate.
    double normal() {
        for (;;) {
            const double u = 2.0 * uniform() - 1.0;
            const double v = 2.0 * uniform() - 1.0;
            const double s = u * u + v * v;
            if (s > 0.0 && s < 1.0) {
                return u * std::sqrt(-2.0 * std::log(s) / s);
            }
        }
    }

    std::uint64_t raw() { return engine_(); }

  private:
    std::mt19937_64 engine_;
};

}  // namespace fafpca
