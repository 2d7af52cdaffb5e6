#ifndef LRNOISE_RNG_HPP
#define LRNOISE_RNG_HPP

#include <cstdint>

namespace lrnoise {

/**
 * RngStream — counter-based random stream (Philox 4x32-10).
 *
 * Each draw evaluates the Philox bijection on (key, counter) and bumps the
 * counter, so a stream is a pure function of its seed: identical seeds give
 * identical sequences on every platform and thread count. Independent
 * substreams are derived with split(), which mixes a child index into a
 * fresh key; distinct split paths never share (key, counter) pairs, so a
 * per-pixel or per-epoch stream tree can be sampled in parallel without
 * coordination and without changing results.
 */
class RngStream {
public:
    RngStream() : RngStream(0) {}
    explicit RngStream(uint64_t seed);

    uint64_t seed() const { return seed_; }

    /// Derive an independent child stream. Deterministic in (this stream's
    /// identity, child_index); does not advance this stream.
    RngStream split(uint64_t child_index) const;

    /// split() keyed by the next draw of this stream, so repeated forks of
    /// the same parent give distinct children. Advances the parent.
    RngStream fork();

    uint32_t next_u32();
    uint64_t next_u64();

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform01();

    /// Uniform double in [a, b).
    double uniform(double a, double b);

    /// Normal(mean, stddev^2) via Box-Muller. Two uniforms per pair of
    /// normals; the spare is cached inside the stream.
    double normal(double mean = 0.0, double stddev = 1.0);

    /**
     * Poisson(lambda) sample.
     *
     * Inversion by sequential search below `inversion_threshold` (exact,
     * matters at low light where the distribution is visibly discrete and
     * skewed); above it, round(Normal(lambda, lambda)) clamped at zero.
     */
    int64_t poisson(double lambda);

    /// Switch point between exact inversion and the Gaussian approximation.
    static double poisson_inversion_threshold();
    static void set_poisson_inversion_threshold(double lambda);

private:
    void philox_block();

    uint64_t seed_;
    uint32_t key_[2];
    uint32_t ctr_[4];
    uint32_t out_[4];
    int out_pos_;        // next unread word in out_, 4 = exhausted
    double cached_norm_;
    bool has_cached_norm_;
};

}  // namespace lrnoise

#endif
