#include "testlet/random.hpp"

#include <cmath>

#include <boost/random/exponential_distribution.hpp>
#include <boost/random/normal_distribution.hpp>

namespace testlet {

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> ids) {
    std::uint64_t s = mix64(seed);
    for (std::uint64_t id : ids) s = mix64(s ^ mix64(id));
    return s;
}

double Rng::normal() {
    return boost::random::normal_distribution<double>()(engine_);
}

double Rng::std_normal_above(double lower) {
    if (lower < 0.0) {
        // Plain rejection; acceptance >= 1/2.
        for (;;) {
            const double z = normal();
            if (z > lower) return z;
        }
    }
    // Robert (1995) translated-exponential proposal.
    const double alpha = 0.5 * (lower + std::sqrt(lower * lower + 4.0));
    for (;;) {
        const double z = lower + boost::random::exponential_distribution<double>(alpha)(engine_);
        const double d = z - alpha;
        if (uniform() <= std::exp(-0.5 * d * d)) return z;
    }
}

double Rng::gamma(double shape) {
    if (shape < 1.0) {
        const double u = uniform();
        return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x, v;
        do {
            x = normal();
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = uniform();
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
        if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
}

}  // namespace testlet
