#pragma once

#include <cmath>
#include <cstdint>

namespace vista {

// Counter-based generator: output(i) = splitmix64 finalizer applied to
// key + i*gamma. Same (seed, stream_id) gives the same sequence on every
// platform; consumers never perturb each other because each purpose owns
// its own stream id.
struct RngStream {
    static constexpr uint64_t kGamma = 0x9e3779b97f4a7c15ULL;

    uint64_t key = 0;
    uint64_t counter = 0;

    RngStream() = default;
    RngStream(uint64_t seed, uint64_t stream_id) { key = mix(seed ^ mix(stream_id + kGamma)); }

    static uint64_t mix(uint64_t z) {
        z += kGamma;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Independent child stream (per story, per batch, ...).
    RngStream fork(uint64_t sub_id) const {
        RngStream r;
        r.key = mix(key ^ mix(sub_id * 0xda942042e4dd58b5ULL + 1));
        return r;
    }

    uint64_t next_u64() { return mix(key + (++counter) * kGamma); }

    // Uniform in [0, 1), 53-bit resolution.
    double next_unit() { return (double)(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n).
    uint64_t next_below(uint64_t n) { return next_u64() % n; }

    // Standard normal via Box-Muller; always computed in double so float
    // and double builds draw the same underlying sequence.
    double next_normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = next_unit();
        double u2 = next_unit();
        while (u1 <= 1e-300) u1 = next_unit();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // Uniform in [lo, hi).
    double next_range(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

  private:
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// Stream ids, one per purpose.
namespace streams {
constexpr uint64_t kDataGen = 1;
constexpr uint64_t kInit = 2;
constexpr uint64_t kNoise = 3;
constexpr uint64_t kSample = 4;
constexpr uint64_t kBatch = 5;
constexpr uint64_t kDropout = 6;
constexpr uint64_t kGradCheck = 7;
} // namespace streams

} // namespace vista
