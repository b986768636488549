#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace ulip {

// Counter-based splittable PRNG. The sequence is a pure function of
// (seed, stream), bit-identical on every platform; forking a new stream
// gives an independent generator without sharing state. std:: distributions
// are deliberately avoided (their output is implementation-defined).
class Rng {
  public:
    explicit Rng(uint64_t seed, uint64_t stream = 0);

    // Independent generator derived from this one's (seed, stream) identity.
    Rng fork(uint64_t stream) const;
    Rng fork(std::string_view name) const;

    uint64_t next_u64();
    // [0, 1)
    double uniform();
    double uniform(double lo, double hi);
    // Unbiased integer in [0, n); n must be > 0.
    uint64_t below(uint64_t n);
    // Standard normal via Box-Muller (two uniforms per draw, no cache).
    double normal();
    double normal(double mean, double sigma);

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    uint64_t seed() const { return seed_; }
    uint64_t stream() const { return stream_; }

  private:
    uint64_t seed_ = 0;
    uint64_t stream_ = 0;
    uint64_t key_ = 0;
    uint64_t counter_ = 0;
};

// FNV-1a hash of a name, used to label RNG streams.
uint64_t stream_id(std::string_view name);

// Stream derivation for the "one top-level seed, named substreams" policy:
// mixes a name with up to two indices (epoch, record, ...).
Rng derived_rng(uint64_t seed, std::string_view name, uint64_t a = 0, uint64_t b = 0);

} // namespace ulip
