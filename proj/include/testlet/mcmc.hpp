#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "testlet/fit_result.hpp"
#include "testlet/model.hpp"

namespace testlet {

// Normal priors (variances) on the conditional-metric loading and threshold.
// Testlet variances get a flat prior on (0, inf).
struct PriorSpec {
    double loading_variance = 5.0;
    double threshold_variance = 5.0;
};

struct ChainSpec {
    int n_chains = 4;
    int min_iterations = 4000;
    double burn_in = 0.5;
    int thin = 1;
    double psrf_threshold = 1.1;
    // Chains are extended by min_iterations until converged or this many
    // multiples of min_iterations have run.
    int max_multiple = 10;
    std::uint64_t seed = 1;
    // 0 = one thread per chain, capped by hardware and TESTLET_THREADS.
    int threads = 0;
    bool compute_ppp = true;
    int ppp_draws = 500;

    // Block switches and fixed values, mainly for diagnostics on toy models.
    bool sample_items = true;
    bool sample_persons = true;
    bool sample_variances = true;
    std::optional<ConditionalParams> init;
    std::optional<PersonAbilities> init_persons;
    bool keep_person_draws = false;

    void validate() const;
};

// Structural draws are stored one row per retained iteration with columns
// lambda[0..J), tau[0..J), sigma2[0..D).
struct PosteriorSummary {
    ConditionalParams mean;
    ConditionalParams sd;
    std::vector<double> psrf;  // per structural column; empty if none sampled
    double psrf_max = 1.0;
    bool converged = false;
    std::optional<double> ppp;
    int iterations_per_chain = 0;
    std::vector<Eigen::MatrixXd> draws;         // per chain
    std::vector<Eigen::MatrixXd> theta_draws;   // per chain, if kept
};

struct McmcResult {
    FitResult fit;
    PosteriorSummary summary;
};

McmcResult fit_mcmc(const ResponseMatrix& data, const TestletDesign& design,
                    const PriorSpec& priors = {}, const ChainSpec& chains = {});

// Gelman-Rubin potential scale reduction factor over equal-length chains.
double psrf(std::span<const std::vector<double>> chains);

ConditionalParams unpack_draw(const Eigen::Ref<const Eigen::RowVectorXd>& row, int n_items,
                              int n_testlets);

using Discrepancy =
    std::function<double(const ResponseMatrix&, const ConditionalParams&, const TestletDesign&)>;

// Squared standardized residuals of item proportions plus squared
// standardized residuals of pairwise log odds ratios, against the marginal
// model-implied values under the given parameters.
double default_discrepancy(const ResponseMatrix& data, const ConditionalParams& params,
                           const TestletDesign& design);

// Share of draws whose replicated data (fresh persons) are at least as
// discrepant as the observed data. Requires >= 100 draws.
double posterior_predictive_p(std::span<const ConditionalParams> draws,
                              const ResponseMatrix& data, const TestletDesign& design,
                              std::uint64_t seed, const Discrepancy& discrepancy = default_discrepancy);

// Replicated responses for fresh N(0,1) persons under conditional parameters.
ResponseMatrix simulate_conditional(const ConditionalParams& params, const TestletDesign& design,
                                    int n_persons, std::uint64_t seed);

}  // namespace testlet
