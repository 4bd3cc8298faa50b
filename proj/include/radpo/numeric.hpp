#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace radpo {

// Max-shifted logsumexp; safe for inputs within +-700.
inline double logsumexp(std::span<const double> xs) {
    if (xs.empty()) throw std::invalid_argument("logsumexp: empty input");
    double m = xs[0];
    for (double x : xs)
        if (x > m) m = x;
    double s = 0.0;
    for (double x : xs) s += std::exp(x - m);
    return m + std::log(s);
}

inline std::vector<double> log_softmax(std::span<const double> xs) {
    double lse = logsumexp(xs);
    std::vector<double> out(xs.size());
    for (size_t i = 0; i < xs.size(); ++i) out[i] = xs[i] - lse;
    return out;
}

// log(sigmoid(x)) without overflow on either tail.
inline double log_sigmoid(double x) {
    if (x >= 0.0) return -std::log1p(std::exp(-x));
    return x - std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

// Deterministic RNG wrapper. Distribution conversions are hand-rolled so
// output streams do not depend on stdlib distribution internals.
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next() { return eng_(); }

    // uniform in [0, 1)
    double uniform() { return (eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    int uniform_int(int n) { return static_cast<int>(uniform() * n); }

private:
    std::mt19937_64 eng_;
};

// Stable stream splitting for per-record seeds.
inline uint64_t mix_seed(uint64_t master, uint64_t index) {
    uint64_t z = master + 0x9e3779b97f4a7c15ull * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

}  // namespace radpo
