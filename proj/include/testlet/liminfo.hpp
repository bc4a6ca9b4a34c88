#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <vector>

#include "testlet/fit_result.hpp"
#include "testlet/model.hpp"

namespace testlet {

// 2x2 counts for an item pair: counts[a][b] = persons answering a on the
// first item and b on the second.
struct BivariateTable {
    std::array<std::array<double, 2>, 2> counts{};
    double total() const { return counts[0][0] + counts[0][1] + counts[1][0] + counts[1][1]; }
};

inline constexpr double kTetrachoricClamp = 0.999;

struct TetrachoricEstimate {
    double rho = 0.0;
    double asy_var = 0.0;
    bool boundary = false;  // |rho| reached the clamp
};

struct SampleStats {
    int n_persons = 0;
    std::vector<double> thresholds;
    Eigen::MatrixXd tetra;    // unit diagonal
    Eigen::MatrixXd asy_var;  // per pair, zero diagonal
    int boundary_pairs = 0;
};

// tau*_j = Phi^{-1}(share of 0 responses); P(y=1) = Phi(z - tau*).
std::vector<double> estimate_thresholds(const ResponseMatrix& data);

BivariateTable pair_table(const ResponseMatrix& data, int j, int k);

// Maximum-likelihood tetrachoric correlation with thresholds held fixed;
// asy_var is the inverse observed information.
TetrachoricEstimate tetrachoric(const BivariateTable& table, double tau_j, double tau_k);

// Log-likelihood of a 2x2 table under a bivariate normal with fixed thresholds.
double tetrachoric_loglik(const BivariateTable& table, double tau_j, double tau_k, double rho);

SampleStats compute_sample_stats(const ResponseMatrix& data);

enum class WeightMode { dwls, uls };

struct DwlsSettings {
    WeightMode weights = WeightMode::dwls;
    int max_iterations = 500;
    double tolerance = 1e-12;  // relative objective change
    int restarts = 3;          // jittered restarts on non-convergence
    // Unconstrained testlet variances below this count as inadmissible.
    double heywood_tolerance = 1e-6;
    std::uint64_t seed = 1;
};

// Weighted least-squares fit of the constrained bi-factor correlation
// structure. A replication is flagged Heywood when the unconstrained solution
// has a negative testlet variance or a communality >= 1; the reported
// estimates then come from the fit with variances held nonnegative.
FitResult fit_dwls(const SampleStats& stats, const TestletDesign& design,
                   const DwlsSettings& settings = {});

// Weighted sum of squared correlation residuals.
double dwls_objective(const SampleStats& stats, const TestletDesign& design,
                      const std::vector<double>& lambda, const std::vector<double>& sigma2,
                      WeightMode mode);

}  // namespace testlet
