#include "lrnoise/rng.hpp"

#include <cmath>

#include "lrnoise/errors.hpp"

namespace lrnoise {

namespace {

constexpr uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr uint32_t kPhiloxW1 = 0xBB67AE85u;

inline void mulhilo(uint32_t a, uint32_t b, uint32_t& hi, uint32_t& lo) {
    uint64_t p = static_cast<uint64_t>(a) * b;
    hi = static_cast<uint32_t>(p >> 32);
    lo = static_cast<uint32_t>(p);
}

// One Philox 4x32 round.
inline void philox_round(uint32_t ctr[4], const uint32_t key[2]) {
    uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kPhiloxM0, ctr[0], hi0, lo0);
    mulhilo(kPhiloxM1, ctr[2], hi1, lo1);
    uint32_t out0 = hi1 ^ ctr[1] ^ key[0];
    uint32_t out1 = lo1;
    uint32_t out2 = hi0 ^ ctr[3] ^ key[1];
    uint32_t out3 = lo0;
    ctr[0] = out0;
    ctr[1] = out1;
    ctr[2] = out2;
    ctr[3] = out3;
}

// SplitMix64 finalizer, used to spread seeds/child indices over the key space.
inline uint64_t mix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

double g_poisson_threshold = 30.0;

}  // namespace

RngStream::RngStream(uint64_t seed)
    : seed_(seed), out_pos_(4), cached_norm_(0.0), has_cached_norm_(false) {
    uint64_t k = mix64(seed);
    key_[0] = static_cast<uint32_t>(k);
    key_[1] = static_cast<uint32_t>(k >> 32);
    ctr_[0] = ctr_[1] = ctr_[2] = ctr_[3] = 0;
}

RngStream RngStream::split(uint64_t child_index) const {
    // Child key = Philox(parent_key, marker-counter carrying the index).
    // The marker has the top counter word set, a region the sequential
    // counter of a draw stream never reaches (draws start at zero and a
    // stream would need 2^96 blocks to get there).
    uint32_t ctr[4] = {static_cast<uint32_t>(child_index),
                       static_cast<uint32_t>(child_index >> 32), 0u, 0xC0FFEEu};
    uint32_t key[2] = {key_[0], key_[1]};
    for (int r = 0; r < 10; ++r) {
        philox_round(ctr, key);
        key[0] += kPhiloxW0;
        key[1] += kPhiloxW1;
    }
    RngStream child(0);
    child.seed_ = seed_;
    child.key_[0] = ctr[0];
    child.key_[1] = ctr[1];
    child.ctr_[0] = child.ctr_[1] = child.ctr_[2] = child.ctr_[3] = 0;
    child.out_pos_ = 4;
    child.has_cached_norm_ = false;
    return child;
}

RngStream RngStream::fork() { return split(next_u64()); }

void RngStream::philox_block() {
    uint32_t ctr[4] = {ctr_[0], ctr_[1], ctr_[2], ctr_[3]};
    uint32_t key[2] = {key_[0], key_[1]};
    for (int r = 0; r < 10; ++r) {
        philox_round(ctr, key);
        key[0] += kPhiloxW0;
        key[1] += kPhiloxW1;
    }
    out_[0] = ctr[0];
    out_[1] = ctr[1];
    out_[2] = ctr[2];
    out_[3] = ctr[3];
    out_pos_ = 0;
    // 128-bit counter increment.
    if (++ctr_[0] == 0 && ++ctr_[1] == 0 && ++ctr_[2] == 0) ++ctr_[3];
}

uint32_t RngStream::next_u32() {
    if (out_pos_ >= 4) philox_block();
    return out_[out_pos_++];
}

uint64_t RngStream::next_u64() {
    uint64_t lo = next_u32();
    uint64_t hi = next_u32();
    return (hi << 32) | lo;
}

double RngStream::uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double a, double b) { return a + uniform01() * (b - a); }

double RngStream::normal(double mean, double stddev) {
    if (has_cached_norm_) {
        has_cached_norm_ = false;
        return mean + cached_norm_ * stddev;
    }
    double u1 = uniform01();
    double u2 = uniform01();
    if (u1 < 1e-300) u1 = 1e-300;
    double r = std::sqrt(-2.0 * std::log(u1));
    double z0 = r * std::cos(2.0 * M_PI * u2);
    cached_norm_ = r * std::sin(2.0 * M_PI * u2);
    has_cached_norm_ = true;
    return mean + z0 * stddev;
}

int64_t RngStream::poisson(double lambda) {
    if (lambda < 0.0) throw ParamError("poisson: lambda must be >= 0");
    if (lambda == 0.0) return 0;
    if (lambda < g_poisson_threshold) {
        double u = uniform01();
        double p = std::exp(-lambda);
        double cdf = p;
        int64_t k = 0;
        while (u > cdf) {
            ++k;
            p *= lambda / static_cast<double>(k);
            cdf += p;
            if (k > 10000) break;  // u in a region the fp cdf cannot reach
        }
        return k;
    }
    double x = std::round(normal(lambda, std::sqrt(lambda)));
    return x < 0.0 ? 0 : static_cast<int64_t>(x);
}

double RngStream::poisson_inversion_threshold() { return g_poisson_threshold; }

void RngStream::set_poisson_inversion_threshold(double lambda) {
    if (lambda < 0.0) throw ParamError("poisson threshold must be >= 0");
    g_poisson_threshold = lambda;
}

}  // namespace lrnoise
