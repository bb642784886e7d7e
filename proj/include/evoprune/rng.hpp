#pragma once

#include <cstdint>
#include <vector>

namespace evoprune {

// Deterministic counter-seeded random stream (xoshiro256** seeded through
// splitmix64). Identical (seed, stream_id) pairs produce identical sequences
// on every platform: only unsigned 64-bit arithmetic is used, including the
// normal() variate (Irwin-Hall sum, no libm).
//
// Streams are cheap value types. fork(tag) derives an independent stream
// from the original (seed, stream_id, tag) triple, unaffected by how many
// values were already drawn from the parent.
class RngStream {
public:
    RngStream() : RngStream(0, 0) {}
    RngStream(std::uint64_t seed, std::uint64_t stream_id);

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream_id() const { return stream_id_; }

    std::uint64_t next_u64();

    // Uniform on [0, 1) with 53 random bits.
    double next_double();

    // Uniform on [0, n), unbiased (rejection sampling). n must be > 0.
    std::uint64_t next_below(std::uint64_t n);

    // Uniform integer on [lo, hi], inclusive.
    int uniform_int(int lo, int hi);

    // Approximate standard normal via Irwin-Hall (sum of 12 uniforms).
    // Deterministic across platforms; tails clip at +/-6 sigma.
    float normal(float mean = 0.0f, float stddev = 1.0f);

    // k distinct values from [0, n), ascending.
    std::vector<int> sample_without_replacement(int n, int k);

    // Independent stream derived from (seed, stream_id, tag).
    RngStream fork(std::uint64_t tag) const;

private:
    std::uint64_t seed_;
    std::uint64_t stream_id_;
    std::uint64_t state_[4];
};

}  // namespace evoprune
