#include "testlet/datagen.hpp"

#include <cmath>
#include <string>

#include "testlet/errors.hpp"

namespace testlet {

void GenConfig::validate() const {
    if (n_persons <= 0) throw InvalidArgument("n_persons must be positive");
    if (static_cast<int>(sigma2.size()) != design.n_testlets()) {
        throw InvalidArgument("sigma2: expected " + std::to_string(design.n_testlets()) +
                              " testlet variances, got " + std::to_string(sigma2.size()));
    }
    for (double s : sigma2) {
        if (!(s >= 0.0) || !std::isfinite(s)) {
            throw InvalidArgument("sigma2: testlet variance must be finite and >= 0");
        }
    }
    if (const auto* fixed = std::get_if<std::vector<ItemIrtParams>>(&items)) {
        if (static_cast<int>(fixed->size()) != design.n_items()) {
            throw InvalidArgument("items: expected " + std::to_string(design.n_items()) +
                                  " item parameter pairs, got " + std::to_string(fixed->size()));
        }
        for (const auto& ip : *fixed) {
            if (!(ip.a > 0.0) || !std::isfinite(ip.b)) {
                throw InvalidArgument("items: a must be positive and b finite");
            }
        }
    } else {
        const auto& dist = std::get<ItemDistribution>(items);
        if (!(dist.a_sd >= 0.0) || !(dist.b_sd >= 0.0) || !(dist.a_min >= 0.0)) {
            throw InvalidArgument("items: distribution spreads must be nonnegative");
        }
    }
}

std::vector<ItemIrtParams> GenConfig::resolve_items() const {
    if (const auto* fixed = std::get_if<std::vector<ItemIrtParams>>(&items)) return *fixed;
    const auto& dist = std::get<ItemDistribution>(items);
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(Stream::items)}));
    std::vector<ItemIrtParams> out(design.n_items());
    for (auto& ip : out) {
        do {
            ip.a = rng.normal(dist.a_mean, dist.a_sd);
        } while (ip.a <= dist.a_min);
        ip.b = rng.normal(dist.b_mean, dist.b_sd);
    }
    return out;
}

std::vector<ItemIrtParams> table1_fixture() {
    return {{1.17, -1.55}, {0.61, -1.29}, {0.67, 1.44},  {1.16, 1.86},  {1.06, -0.90},
            {0.69, 0.05},  {0.81, -0.88}, {0.95, -0.62}, {0.51, 1.89},  {0.88, 0.09},
            {0.78, 0.20},  {0.96, -0.19}, {1.21, 1.89},  {0.90, -0.50}, {0.94, 0.27},
            {0.76, 0.35},  {0.98, -1.24}, {0.70, 1.30},  {0.90, 0.83},  {0.58, 0.06},
            {0.66, -0.41}, {0.84, 1.09},  {0.81, 0.01},  {0.77, -1.06}, {0.50, 0.89},
            {0.97, 0.62},  {0.62, -0.17}, {0.70, -0.81}, {0.82, -0.12}, {0.77, -0.43}};
}

PersonAbilities generate_persons(const GenConfig& cfg) {
    cfg.validate();
    const int n_testlets = cfg.design.n_testlets();
    Rng rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(Stream::persons)}));
    PersonAbilities persons;
    persons.theta.resize(cfg.n_persons);
    persons.gamma.resize(cfg.n_persons, n_testlets);
    std::vector<double> sd(n_testlets);
    for (int d = 0; d < n_testlets; ++d) sd[d] = std::sqrt(cfg.sigma2[d]);
    for (int i = 0; i < cfg.n_persons; ++i) {
        persons.theta[i] = rng.normal();
        for (int d = 0; d < n_testlets; ++d) persons.gamma(i, d) = sd[d] * rng.normal();
    }
    return persons;
}

ResponseMatrix generate_responses(const GenConfig& cfg, const PersonAbilities& persons,
                                  const std::vector<ItemIrtParams>& items) {
    const auto& design = cfg.design;
    const int n = static_cast<int>(persons.theta.size());
    if (static_cast<int>(items.size()) != design.n_items() ||
        persons.gamma.rows() != n || persons.gamma.cols() != design.n_testlets()) {
        throw InvalidArgument("generate_responses: dimensions do not match design");
    }
    Rng rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(Stream::responses)}));
    ResponseMatrix y(n, design.n_items());
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < design.n_items(); ++j) {
            const int d = design.testlet_of(j);
            const double g = d == TestletDesign::kIndependent ? 0.0 : persons.gamma(i, d);
            y.set(i, j, rng.bernoulli(prob_correct(items[j], persons.theta[i], g)));
        }
    }
    return y;
}

}  // namespace testlet
