#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace impure {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Derive an independent stream seed from a base seed plus stream ids.
inline uint64_t mix_seed(uint64_t seed, uint64_t a = 0, uint64_t b = 0, uint64_t c = 0) {
    uint64_t h = splitmix64(seed ^ 0x5851f42d4c957f2dull);
    h = splitmix64(h ^ a);
    h = splitmix64(h ^ b);
    h = splitmix64(h ^ c);
    return h;
}

// Seeded RNG stream. All randomness in the project flows through explicit
// Rng instances so every result is reproducible from (seed, stream ids).
class Rng {
  public:
    explicit Rng(uint64_t seed) : gen_(seed) {}
    Rng(uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0) : gen_(mix_seed(seed, a, b, c)) {}

    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(gen_); }
    double uniform(double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(gen_);
    }
    double normal() { return norm_(gen_); }
    // integer in [0, n)
    uint64_t index(uint64_t n) { return std::uniform_int_distribution<uint64_t>(0, n - 1)(gen_); }

    template <class It>
    void shuffle(It first, It last) {
        std::shuffle(first, last, gen_);
    }

    std::mt19937_64& engine() { return gen_; }

    std::string save_state() const {
        std::ostringstream oss;
        oss << gen_ << ' ' << norm_;
        return oss.str();
    }
    void load_state(const std::string& s) {
        std::istringstream iss(s);
        iss >> gen_ >> norm_;
    }

  private:
    std::mt19937_64 gen_;
    std::normal_distribution<double> norm_{0.0, 1.0};
};

}  // namespace impure
