#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace canmap {

// splitmix64 step; used to derive independent child seeds from a master seed
// so that per-subject / per-step streams never share state.
inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Hash a seed together with up to three stream ids into a child seed.
inline uint64_t derive_seed(uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
    uint64_t s = seed;
    uint64_t h = splitmix64(s);
    s ^= a * 0x9e3779b97f4a7c15ULL;
    h ^= splitmix64(s);
    s ^= b * 0xc2b2ae3d27d4eb4fULL;
    h ^= splitmix64(s);
    s ^= c * 0x165667b19e3779f9ULL;
    h ^= splitmix64(s);
    return h;
}

class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed), gen_(seed) {}

    // independent child stream; deterministic in (this seed, ids)
    Rng child(uint64_t a, uint64_t b = 0, uint64_t c = 0) const {
        return Rng(derive_seed(seed_, a, b, c));
    }

    uint64_t seed() const { return seed_; }

    double uniform(double lo = 0.0, double hi = 1.0) {
        return std::uniform_real_distribution<double>(lo, hi)(gen_);
    }
    double normal(double mean = 0.0, double stddev = 1.0) {
        return std::normal_distribution<double>(mean, stddev)(gen_);
    }
    // uniform integer in [0, n)
    uint64_t index(uint64_t n) {
        return std::uniform_int_distribution<uint64_t>(0, n - 1)(gen_);
    }
    bool bernoulli(double p) {
        return std::bernoulli_distribution(p)(gen_);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    std::mt19937_64& engine() { return gen_; }

private:
    uint64_t seed_;
    std::mt19937_64 gen_;
};

} // namespace canmap
