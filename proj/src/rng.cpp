#include "ulip/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace ulip {

namespace {

constexpr uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

// splitmix64 finalizer
uint64_t mix64(uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ULL;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return z;
}

} // namespace

Rng::Rng(uint64_t seed, uint64_t stream)
    : seed_(seed),
      stream_(stream),
      key_(mix64(mix64(seed + kGolden) ^ mix64(stream + 0x6A09E667F3BCC909ULL))) {}

Rng Rng::fork(uint64_t stream) const {
    return Rng(seed_, mix64(stream_ + kGolden) ^ stream);
}

Rng Rng::fork(std::string_view name) const {
    return fork(stream_id(name));
}

uint64_t Rng::next_u64() {
    return mix64(key_ + (counter_++) * kGolden);
}

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
    return lo + uniform() * (hi - lo);
}

uint64_t Rng::below(uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
    // rejection sampling keeps the draw exactly uniform
    uint64_t threshold = (0 - n) % n;
    for (;;) {
        uint64_t r = next_u64();
        if (r >= threshold) return r % n;
    }
}

double Rng::normal() {
    double u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(1.0 - u1));
    return r * std::cos(2.0 * 3.14159265358979323846 * u2);
}

double Rng::normal(double mean, double sigma) {
    return mean + sigma * normal();
}

uint64_t stream_id(std::string_view name) {
    uint64_t h = 0xCBF29CE484222325ULL;
    for (char c : name) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ULL;
    }
    return h;
}

Rng derived_rng(uint64_t seed, std::string_view name, uint64_t a, uint64_t b) {
    uint64_t s = stream_id(name);
    s = mix64(s + a * kGolden);
    s = mix64(s + b * kGolden);
    return Rng(seed, s);
}

} // namespace ulip
