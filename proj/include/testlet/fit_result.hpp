#pragma once

#include <optional>
#include <string>
#include <vector>

#include "testlet/model.hpp"

namespace testlet {

enum class FitStatus { converged, nonconverged, heywood };

const char* to_string(FitStatus status);

// Outcome of any estimator. Parameters are reported in the standardized
// factor metric and converted to the logistic IRT metric; items whose
// conversion is undefined (Heywood, zero loading) carry NaN a/b.
struct FitResult {
    std::string estimator;
    FactorParams factor_params;
    std::vector<ItemIrtParams> irt_params;
    std::vector<double> sigma2;
    double loglik = 0.0;
    bool converged = false;
    FitStatus status = FitStatus::nonconverged;
    int iterations = 0;
    double wall_time_s = 0.0;
    std::string message;

    // mmle
    std::vector<double> loglik_trace;
    ConditionalParams conditional;  // mmle / mcmc working metric

    // mcmc
    std::optional<double> psrf_max;
    std::optional<double> ppp;
    std::optional<int> n_retained;

    // dwls
    std::optional<bool> heywood;
    std::optional<double> objective;
    std::optional<double> min_communality_residual;
};

// Fills irt_params from factor_params item by item (NaN where undefined).
void convert_to_irt(FitResult& fit, const TestletDesign& design);

}  // namespace testlet
