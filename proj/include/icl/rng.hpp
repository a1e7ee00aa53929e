#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace icl {

// Deterministic generator used everywhere randomness is needed.
//
// std::mt19937_64 output is pinned by the standard, but the std::*_distribution
// adaptors are not, so the few distributions we need are implemented here to
// keep runs byte-identical across standard libraries.
class Rng {
public:
    Rng() : Rng(0) {}
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform integer in [lo, hi], inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
        // Rejection sampling to avoid modulo bias.
        const std::uint64_t limit = span == 0 ? 0 : UINT64_MAX - UINT64_MAX % span;
        std::uint64_t x = engine_();
        if (span != 0) {
            while (x >= limit) x = engine_();
            x %= span;
        }
        return lo + static_cast<std::int64_t>(x);
    }

    // Uniform real in [0, 1).
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    bool bernoulli(double p) { return uniform() < p; }

    // Standard normal via Box-Muller; one value per call, no caching, so the
    // stream position is a pure function of call count.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i) - 1));
            std::swap(v[i - 1], v[j]);
        }
    }

    std::string save_state() const {
        std::ostringstream os;
        os << engine_;
        return os.str();
    }

    void load_state(const std::string& s) {
        std::istringstream is(s);
        is >> engine_;
    }

    // Derives an independent stream for one consumer (data order, second-input
    // draws, buffer sampling, ...) so that consumers never perturb each other.
    static Rng seeded(std::uint64_t seed, std::uint64_t stream_id) {
        std::mt19937_64 mix(stream_id * 0x9e3779b97f4a7c15ULL + 0x2545f4914f6cdd1dULL);
        Rng r;
        r.engine_.seed(seed ^ mix());
        return r;
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace icl
