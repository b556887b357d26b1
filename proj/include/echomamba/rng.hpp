#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "echomamba/errors.hpp"

namespace echomamba {

// Deterministic random source. Wraps mt19937_64 but draws floats and
// gaussians through fixed formulas (no distribution-internal caching), so a
// stream's future is fully determined by the engine state and can be
// checkpointed as text.
class Rng {
public:
    Rng() : engine_(0x9e3779b97f4a7c15ull) {}
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1).
    double next_unit() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

    // Gaussian via Box-Muller, two fresh uniforms per draw.
    double normal(double mean, double stddev) {
        double u1 = next_unit();
        double u2 = next_unit();
        while (u1 <= 0.0) u1 = next_unit();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        return mean + stddev * r * std::cos(theta);
    }

    bool bernoulli(double p) { return next_unit() < p; }

    // Uniform integer in [0, n) by rejection, bias-free.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw ContractError("Rng::below: n must be positive");
        const std::uint64_t threshold = (~n + 1) % n;  // 2^64 mod n
        std::uint64_t x = engine_();
        while (x < threshold) x = engine_();
        return x % n;
    }

    template <typename V>
    void shuffle(V& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    std::string serialize() const {
        std::ostringstream os;
        os << engine_;
        return os.str();
    }

    void deserialize(const std::string& s) {
        std::istringstream is(s);
        is >> engine_;
        if (is.fail()) throw ParseError("Rng state string is malformed");
    }

private:
    std::mt19937_64 engine_;
};

// One master seed fanned out into independently seeded named streams, so
// e.g. toggling dropout does not shift parameter initialization.
class SeededStreams {
public:
    explicit SeededStreams(std::uint64_t master_seed) : master_(master_seed) {}

    Rng stream(const std::string& name) const {
        return Rng(mix(master_, fnv1a(name)));
    }

    std::uint64_t master_seed() const { return master_; }

private:
    static std::uint64_t fnv1a(const std::string& s) {
        std::uint64_t h = 1469598103934665603ull;
        for (unsigned char c : s) {
            h ^= c;
            h *= 1099511628211ull;
        }
        return h;
    }

    static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
        std::uint64_t z = a ^ (b + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2));
        z ^= z >> 30;
        z *= 0xbf58476d1ce4e5b9ull;
        z ^= z >> 27;
        z *= 0x94d049bb133111ebull;
        z ^= z >> 31;
        return z;
    }

    std::uint64_t master_;
};

}  // namespace echomamba
