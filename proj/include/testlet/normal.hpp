#pragma once

#include <vector>

namespace testlet::normal {

inline constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double pdf(double x);
double cdf(double x);
// log Phi(x), accurate far into the lower tail.
double log_cdf(double x);
// Phi^{-1}(p) for p in (0,1); +-infinity at the endpoints.
double quantile(double p);

// Standard bivariate normal density and lower-orthant probability
// P(X <= x, Y <= y) with correlation rho. The CDF follows Genz's
// Gauss-Legendre scheme and is accurate to ~1e-15 absolute.
double bvn_pdf(double x, double y, double rho);
double bvn_cdf(double x, double y, double rho);

// Gauss-Hermite rule for the standard normal weight: nodes z_k and
// weights w_k with sum(w) = 1, so sum w_k f(z_k) ~ E[f(Z)].
struct GaussHermite {
    std::vector<double> nodes;
    std::vector<double> weights;
};

GaussHermite gauss_hermite(int n_nodes);

}  // namespace testlet::normal
