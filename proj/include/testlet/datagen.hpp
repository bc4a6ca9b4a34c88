#pragma once

#include <cstdint>
#include <variant>
#include <vector>

#include "testlet/model.hpp"
#include "testlet/random.hpp"

namespace testlet {

// a ~ N(a_mean, a_sd) truncated to a > a_min, b ~ N(b_mean, b_sd).
struct ItemDistribution {
    double a_mean = 1.0;
    double a_sd = 0.2;
    double b_mean = 0.0;
    double b_sd = 1.0;
    double a_min = 0.05;
};

struct GenConfig {
    int n_persons = 500;
    TestletDesign design = TestletDesign::blocks(6, 5);
    std::vector<double> sigma2 = std::vector<double>(6, 0.25);
    std::variant<std::vector<ItemIrtParams>, ItemDistribution> items;
    std::uint64_t seed = 0;

    // Throws InvalidArgument naming the offending field.
    void validate() const;
    // Fixed list as given, or a draw from the distribution (item stream of seed).
    std::vector<ItemIrtParams> resolve_items() const;
};

// Substream ids derived from GenConfig::seed.
enum class Stream : std::uint64_t { persons = 1, responses = 2, items = 3 };

// The 30 generating item parameters of the reference simulation design.
std::vector<ItemIrtParams> table1_fixture();

// theta ~ N(0,1); gamma_d = sqrt(sigma2_d) * z with z ~ N(0,1). Draw order is
// person-major: theta_i, z_i1, ..., z_iD. Standard draws do not depend on
// sigma2, so a fixed seed yields the same latent values across variances.
PersonAbilities generate_persons(const GenConfig& cfg);

// y_ij ~ Bernoulli(prob_correct(item_j, theta_i, gamma_i,d(j))), row-major draws.
ResponseMatrix generate_responses(const GenConfig& cfg, const PersonAbilities& persons,
                                  const std::vector<ItemIrtParams>& items);

}  // namespace testlet
