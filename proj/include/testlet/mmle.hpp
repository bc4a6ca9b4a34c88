#pragma once

#include <span>
#include <vector>

#include "testlet/fit_result.hpp"
#include "testlet/model.hpp"
#include "testlet/normal.hpp"

namespace testlet {

// Gauss-Hermite nodes per latent dimension.
struct QuadratureSpec {
    int n_nodes = 21;
};

struct EmSettings {
    int max_iterations = 500;
    // Relative loglik change |dLL| / (1 + |LL|).
    double loglik_tol = 1e-6;
    // Largest absolute change in (lambda, tau, sigma) between iterations.
    double param_tol = 1e-5;
    int newton_iterations = 10;
    // SQUAREM extrapolation between plain EM steps.
    bool accelerate = true;
};

// Marginal log-likelihood with the general dimension integrated on the outer
// grid and each testlet dimension integrated separately on an inner grid.
double marginal_loglik(const FactorParams& params, const ResponseMatrix& data,
                       const TestletDesign& design, const QuadratureSpec& quad = {});
double marginal_loglik(const ConditionalParams& params, const ResponseMatrix& data,
                       const TestletDesign& design, const QuadratureSpec& quad = {});

FitResult fit_mmle(const ResponseMatrix& data, const TestletDesign& design,
                   const QuadratureSpec& quad = {}, const EmSettings& settings = {});

// Posterior means of theta and gamma under fitted parameters (fit.conditional).
PersonAbilities score_eap(const FitResult& fit, const ResponseMatrix& data,
                          const TestletDesign& design, const QuadratureSpec& quad = {});
PersonAbilities score_eap(const ConditionalParams& params, const ResponseMatrix& data,
                          const TestletDesign& design, const QuadratureSpec& quad = {});

namespace detail {

// Expected complete-data counts of one item on a set of latent points x
// (x = theta - gamma at each quadrature node).
struct ItemCounts {
    std::vector<double> x;
    std::vector<double> n;  // expected persons at the node
    std::vector<double> r;  // expected correct responses at the node
};

// Expected complete-data loglik of one probit item, sum r log Phi(eta) +
// (n - r) log Phi(-eta), eta = lambda x - tau. grad = d/d(lambda, tau);
// hess = (d2/dl2, d2/dl dt, d2/dt2).
double item_objective(const ItemCounts& counts, double lambda, double tau, double grad[2],
                      double hess[3]);

// Expected complete-data loglik of a testlet as a function of its standard
// deviation. Node (q, r) sits at theta_q, gamma = sigma z_r; n is Q x R
// row-major, r_counts[k] is Q x R for the k-th item of the testlet.
struct TestletCounts {
    std::vector<double> theta;
    std::vector<double> z;
    std::vector<double> n;
    std::vector<std::vector<double>> r;
};

double testlet_objective(const TestletCounts& counts, std::span<const double> lambda,
                         std::span<const double> tau, double sigma, double* grad, double* hess);

}  // namespace detail

}  // namespace testlet
