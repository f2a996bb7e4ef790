#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace mesr {

/// SplitMix64: the n-th output is a bijective mix of seed + n * golden, so the
/// stream is addressable by counter and trivially split by seed.
/// Normal deviates use Box-Muller; both deviates of a pair are consumed.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

    std::uint64_t next_u64()
    {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    /// Uniform on [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer on the closed range [lo, hi].
    int uniform_int(int lo, int hi)
    {
        const auto span = static_cast<std::uint64_t>(static_cast<std::int64_t>(hi) - lo + 1);
        const auto r = static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * span) >> 64);
        return lo + static_cast<int>(r);
    }

    double normal()
    {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double rad = std::sqrt(-2.0 * std::log(u1));
        spare_ = rad * std::sin(2.0 * std::numbers::pi * u2);
        has_spare_ = true;
        return rad * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Independent generator for sub-stream `stream`.
    Rng split(std::uint64_t stream) const
    {
        Rng mixer(state_ ^ (0xD1B54A32D192ED03ull * (stream + 1)));
        return Rng(mixer.next_u64());
    }

    std::uint64_t state() const { return state_; }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace mesr
