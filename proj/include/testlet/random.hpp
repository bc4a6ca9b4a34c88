#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace testlet {

// SplitMix64 finalizer, used to decorrelate derived seeds.
std::uint64_t mix64(std::uint64_t x);

// Seed for an independent substream: mix64(seed XOR mix64(id)), chained over
// every id so (seed, {condition, replication}) maps to one engine seed.
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> ids);

// Platform-stable random source. The engine is std::mt19937_64, whose output
// sequence is fixed by the standard; variates come from its raw words or from
// Boost.Random's ziggurat samplers, never from the implementation-defined
// <random> distributions.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    // Uniform on the open interval (0, 1), 53-bit resolution.
    double uniform() {
        return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
    }

    double normal();
    double normal(double mean, double sd) { return mean + sd * normal(); }

    // Z ~ N(0,1) conditioned on Z > lower.
    double std_normal_above(double lower);
    // N(mean, 1) truncated to (0, inf) when positive, else (-inf, 0].
    double truncated_unit_normal(double mean, bool positive) {
        return positive ? mean + std_normal_above(-mean) : mean - std_normal_above(mean);
    }

    // Gamma(shape, scale=1), Marsaglia-Tsang.
    double gamma(double shape);

    bool bernoulli(double p) { return uniform() < p; }

private:
    std::mt19937_64 engine_;
};

}  // namespace testlet
