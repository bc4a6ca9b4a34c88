#include "testlet/liminfo.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "testlet/errors.hpp"
#include "testlet/normal.hpp"
#include "testlet/random.hpp"

namespace testlet {

std::vector<double> estimate_thresholds(const ResponseMatrix& data) {
    data.require_both_categories();
    const auto totals = data.item_totals();
    std::vector<double> tau(totals.size());
    for (std::size_t j = 0; j < totals.size(); ++j) {
        tau[j] = normal::quantile(1.0 - static_cast<double>(totals[j]) / data.n_persons());
    }
    return tau;
}

BivariateTable pair_table(const ResponseMatrix& data, int j, int k) {
    BivariateTable t;
    for (int i = 0; i < data.n_persons(); ++i) t.counts[data(i, j)][data(i, k)] += 1.0;
    return t;
}

namespace {

struct CellProbs {
    double p00, p01, p10, p11;
};

CellProbs cell_probs(double tau_j, double tau_k, double rho) {
    const double p00 = normal::bvn_cdf(tau_j, tau_k, rho);
    const double p01 = normal::cdf(tau_j) - p00;
    const double p10 = normal::cdf(tau_k) - p00;
    const double p11 = 1.0 - normal::cdf(tau_j) - normal::cdf(tau_k) + p00;
    return {p00, p01, p10, p11};
}

// Score and second derivative of the table loglik in rho.
void table_derivatives(const BivariateTable& t, double tau_j, double tau_k, double rho,
                       double& score, double& curvature) {
    const auto p = cell_probs(tau_j, tau_k, rho);
    const double dens = normal::bvn_pdf(tau_j, tau_k, rho);
    const double one = 1.0 - rho * rho;
    const double q = tau_j * tau_j - 2.0 * rho * tau_j * tau_k + tau_k * tau_k;
    const double dlog = rho / one + tau_j * tau_k / one - rho * q / (one * one);
    const double ddens = dens * dlog;
    const double n[4] = {t.counts[0][0], t.counts[0][1], t.counts[1][0], t.counts[1][1]};
    const double pr[4] = {p.p00, p.p01, p.p10, p.p11};
    const double sign[4] = {1.0, -1.0, -1.0, 1.0};
    score = 0.0;
    curvature = 0.0;
    for (int c = 0; c < 4; ++c) {
        if (n[c] <= 0.0) continue;
        const double pc = std::max(pr[c], 1e-300);
        score += n[c] * sign[c] * dens / pc;
        curvature += n[c] * (sign[c] * ddens / pc - dens * dens / (pc * pc));
    }
}

double expected_information(const BivariateTable& t, double tau_j, double tau_k, double rho) {
    const auto p = cell_probs(tau_j, tau_k, rho);
    const double dens = normal::bvn_pdf(tau_j, tau_k, rho);
    double s = 0.0;
    for (double pc : {p.p00, p.p01, p.p10, p.p11}) s += 1.0 / std::max(pc, 1e-300);
    return t.total() * dens * dens * s;
}

}  // namespace

double tetrachoric_loglik(const BivariateTable& t, double tau_j, double tau_k, double rho) {
    const auto p = cell_probs(tau_j, tau_k, rho);
    const double n[4] = {t.counts[0][0], t.counts[0][1], t.counts[1][0], t.counts[1][1]};
    const double pr[4] = {p.p00, p.p01, p.p10, p.p11};
    double ll = 0.0;
    for (int c = 0; c < 4; ++c) {
        if (n[c] > 0.0) ll += n[c] * std::log(std::max(pr[c], 1e-300));
    }
    return ll;
}

TetrachoricEstimate tetrachoric(const BivariateTable& table, double tau_j, double tau_k) {
    for (const auto& row : table.counts) {
        for (double c : row) {
            if (!(c >= 0.0)) throw InvalidArgument("table counts must be nonnegative");
        }
    }
    if (!(table.total() > 0.0)) throw InvalidArgument("empty table");
    if (!std::isfinite(tau_j) || !std::isfinite(tau_k)) {
        throw InvalidArgument("thresholds must be finite");
    }
    constexpr double c = kTetrachoricClamp;
    TetrachoricEstimate out;
    double score, curv;
    // Safeguarded Newton on the score inside a shrinking bracket. Where the
    // density underflows the score is exactly 0 and the loglik is flat at its
    // floor, so the bracket closes towards rho = 0.
    double lo = -c, hi = c, rho = 0.0;
    for (int it = 0; it < 200; ++it) {
        table_derivatives(table, tau_j, tau_k, rho, score, curv);
        if (score == 0.0 && normal::bvn_pdf(tau_j, tau_k, rho) > 0.0) break;
        if (score > 0.0 || (score == 0.0 && rho < 0.0)) {
            lo = rho;
        } else {
            hi = rho;
        }
        double next = curv < 0.0 && score != 0.0 ? rho - score / curv : 0.5 * (lo + hi);
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        const bool done = std::abs(next - rho) < 1e-14 || hi - lo < 1e-14;
        rho = next;
        if (done) break;
    }
    if (rho > c - 1e-9) {
        rho = c;
        out.boundary = true;
    } else if (rho < -c + 1e-9) {
        rho = -c;
        out.boundary = true;
    }
    out.rho = rho;
    table_derivatives(table, tau_j, tau_k, out.rho, score, curv);
    const double info = -curv > 0.0 ? -curv : expected_information(table, tau_j, tau_k, out.rho);
    out.asy_var = 1.0 / info;
    return out;
}

SampleStats compute_sample_stats(const ResponseMatrix& data) {
    SampleStats s;
    s.n_persons = data.n_persons();
    s.thresholds = estimate_thresholds(data);
    const int J = data.n_items(), N = data.n_persons();
    Eigen::MatrixXd y(N, J);
    for (int i = 0; i < N; ++i) {
        for (int j = 0; j < J; ++j) y(i, j) = data(i, j);
    }
    const Eigen::MatrixXd cross = y.transpose() * y;
    s.tetra = Eigen::MatrixXd::Identity(J, J);
    s.asy_var = Eigen::MatrixXd::Zero(J, J);
    for (int j = 0; j < J; ++j) {
        for (int k = j + 1; k < J; ++k) {
            BivariateTable t;
            t.counts[1][1] = cross(j, k);
            t.counts[1][0] = cross(j, j) - cross(j, k);
            t.counts[0][1] = cross(k, k) - cross(j, k);
            t.counts[0][0] = N - cross(j, j) - cross(k, k) + cross(j, k);
            const auto est = tetrachoric(t, s.thresholds[j], s.thresholds[k]);
            s.tetra(j, k) = s.tetra(k, j) = est.rho;
            s.asy_var(j, k) = s.asy_var(k, j) = est.asy_var;
            if (est.boundary) ++s.boundary_pairs;
        }
    }
    return s;
}

namespace {

struct PairTerm {
    int j, k, testlet;  // testlet = -1 unless both items share one
    double observed, weight;
};

std::vector<PairTerm> pair_terms(const SampleStats& stats, const TestletDesign& design,
                                 WeightMode mode) {
    const int J = design.n_items();
    std::vector<PairTerm> terms;
    for (int j = 0; j < J; ++j) {
        for (int k = j + 1; k < J; ++k) {
            double w = 1.0;
            if (mode == WeightMode::dwls) {
                const double v = stats.asy_var(j, k);
                if (!(v > 0.0)) throw InvalidArgument("asymptotic variances must be positive");
                w = 1.0 / v;
            }
            terms.push_back({j, k, design.same_testlet(j, k) ? design.testlet_of(j) : -1,
                             stats.tetra(j, k), w});
        }
    }
    return terms;
}

struct Solution {
    std::vector<double> x;  // lambda then sigma2
    double objective = std::numeric_limits<double>::infinity();
    bool converged = false;
    int iterations = 0;
};

class LeastSquares {
public:
    LeastSquares(std::vector<PairTerm> terms, int n_items, int n_testlets)
        : terms_(std::move(terms)), J_(n_items), D_(n_testlets) {}

    double objective(const std::vector<double>& x) const {
        double f = 0.0;
        for (const auto& t : terms_) {
            const double r = implied(x, t) - t.observed;
            f += t.weight * r * r;
        }
        return f;
    }

    // Bounded Levenberg-Marquardt; variances are kept >= 0 when constrained.
    Solution minimize(std::vector<double> x, bool constrained, int max_iterations,
                      double tolerance) const {
        const int M = J_ + D_;
        if (constrained) project(x);
        Solution sol;
        double f = objective(x);
        double mu = 1e-3;
        for (int it = 1; it <= max_iterations; ++it) {
            sol.iterations = it;
            Eigen::MatrixXd H = Eigen::MatrixXd::Zero(M, M);
            Eigen::VectorXd g = Eigen::VectorXd::Zero(M);
            accumulate(x, H, g);
            std::vector<int> free;
            for (int m = 0; m < M; ++m) {
                const bool at_bound = constrained && m >= J_ && x[m] <= 0.0 && g(m) > 0.0;
                if (!at_bound) free.push_back(m);
            }
            double pg = 0.0;
            for (int m : free) pg = std::max(pg, std::abs(g(m)));
            if (pg < 1e-11 * (1.0 + f) || f < 1e-28) {
                sol.converged = true;
                break;
            }
            const int F = static_cast<int>(free.size());
            Eigen::MatrixXd Hf(F, F);
            Eigen::VectorXd gf(F);
            for (int a = 0; a < F; ++a) {
                gf(a) = g(free[a]);
                for (int b = 0; b < F; ++b) Hf(a, b) = H(free[a], free[b]);
            }
            bool improved = false;
            while (mu < 1e12) {
                Eigen::MatrixXd A = Hf;
                for (int a = 0; a < F; ++a) A(a, a) += mu * std::max(Hf(a, a), 1e-12);
                const Eigen::VectorXd step = A.ldlt().solve(-gf);
                std::vector<double> trial = x;
                for (int a = 0; a < F; ++a) trial[free[a]] += step(a);
                if (constrained) project(trial);
                const double ft = objective(trial);
                if (std::isfinite(ft) && ft <= f) {
                    double change = 0.0;
                    for (int m = 0; m < M; ++m) change = std::max(change, std::abs(trial[m] - x[m]));
                    const double drop = f - ft;
                    x = std::move(trial);
                    f = ft;
                    mu = std::max(mu / 3.0, 1e-12);
                    improved = true;
                    if (drop <= tolerance * f && change < 1e-9) sol.converged = true;
                    break;
                }
                mu *= 4.0;
            }
            if (!improved || sol.converged) {
                // No descent possible: stationary to working precision.
                sol.converged = sol.converged || pg < 1e-6 * (1.0 + f);
                break;
            }
        }
        sol.x = std::move(x);
        sol.objective = f;
        return sol;
    }

    int n_items() const { return J_; }

private:
    double implied(const std::vector<double>& x, const PairTerm& t) const {
        const double shared = t.testlet < 0 ? 1.0 : 1.0 + x[J_ + t.testlet];
        return x[t.j] * x[t.k] * shared;
    }

    // Gauss-Newton pieces of the objective: H = 2 J'WJ, g = 2 J'W r.
    void accumulate(const std::vector<double>& x, Eigen::MatrixXd& H, Eigen::VectorXd& g) const {
        for (const auto& t : terms_) {
            const double shared = t.testlet < 0 ? 1.0 : 1.0 + x[J_ + t.testlet];
            const double r = x[t.j] * x[t.k] * shared - t.observed;
            int idx[3] = {t.j, t.k, t.testlet < 0 ? -1 : J_ + t.testlet};
            double d[3] = {x[t.k] * shared, x[t.j] * shared, x[t.j] * x[t.k]};
            const int n = idx[2] < 0 ? 2 : 3;
            for (int a = 0; a < n; ++a) {
                g(idx[a]) += 2.0 * t.weight * r * d[a];
                for (int b = 0; b < n; ++b) H(idx[a], idx[b]) += 2.0 * t.weight * d[a] * d[b];
            }
        }
    }

    void project(std::vector<double>& x) const {
        for (int d = 0; d < D_; ++d) x[J_ + d] = std::max(x[J_ + d], 0.0);
    }

    std::vector<PairTerm> terms_;
    int J_, D_;
};

std::vector<double> start_values(const SampleStats& stats, int n_testlets) {
    const int J = static_cast<int>(stats.tetra.rows());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(stats.tetra);
    const Eigen::VectorXd v = es.eigenvectors().col(J - 1);
    const double scale = std::sqrt(std::max(es.eigenvalues()(J - 1), 1e-6));
    const double sign = v.sum() >= 0.0 ? 1.0 : -1.0;
    std::vector<double> x(J + n_testlets, 0.2);
    for (int j = 0; j < J; ++j) x[j] = std::clamp(0.8 * sign * v(j) * scale, 0.05, 0.9);
    return x;
}

bool inadmissible(const std::vector<double>& x, const TestletDesign& design, double tol) {
    const int J = design.n_items();
    for (int d = 0; d < design.n_testlets(); ++d) {
        if (x[J + d] < -tol) return true;
    }
    for (int j = 0; j < J; ++j) {
        const int d = design.testlet_of(j);
        const double s2 = d < 0 ? 0.0 : x[J + d];
        if (communality(x[j], s2) >= 1.0) return true;
    }
    return false;
}

}  // namespace

double dwls_objective(const SampleStats& stats, const TestletDesign& design,
                      const std::vector<double>& lambda, const std::vector<double>& sigma2,
                      WeightMode mode) {
    LeastSquares ls(pair_terms(stats, design, mode), design.n_items(), design.n_testlets());
    std::vector<double> x = lambda;
    x.insert(x.end(), sigma2.begin(), sigma2.end());
    return ls.objective(x);
}

FitResult fit_dwls(const SampleStats& stats, const TestletDesign& design,
                   const DwlsSettings& settings) {
    const auto start = std::chrono::steady_clock::now();
    const int J = design.n_items(), D = design.n_testlets();
    if (static_cast<int>(stats.thresholds.size()) != J || stats.tetra.rows() != J ||
        stats.tetra.cols() != J || stats.asy_var.rows() != J || stats.asy_var.cols() != J) {
        throw InvalidArgument("sample statistics do not match the design");
    }
    if (J < 3) throw InvalidArgument("at least three items are needed");
    if (settings.max_iterations < 1 || settings.restarts < 0) {
        throw InvalidArgument("invalid DWLS settings");
    }
    const LeastSquares ls(pair_terms(stats, design, settings.weights), J, D);

    Rng rng(derive_seed(settings.seed, {0xd15ULL}));
    const auto base = start_values(stats, D);
    auto jittered = [&](int attempt) {
        auto x = base;
        if (attempt == 0) return x;
        for (int j = 0; j < J; ++j) x[j] = std::clamp(x[j] * (1.0 + 0.2 * rng.normal()), 0.05, 0.95);
        for (int d = 0; d < D; ++d) x[J + d] = 0.5 * rng.uniform();
        return x;
    };

    Solution free_fit;
    int iterations = 0;
    for (int attempt = 0; attempt <= settings.restarts; ++attempt) {
        free_fit = ls.minimize(jittered(attempt), false, settings.max_iterations, settings.tolerance);
        iterations += free_fit.iterations;
        if (free_fit.converged) break;
    }

    FitResult fit;
    fit.estimator = "dwls";
    const bool heywood = free_fit.converged && inadmissible(free_fit.x, design, settings.heywood_tolerance);
    Solution reported;
    if (free_fit.converged && !heywood) {
        reported = free_fit;
        for (int d = 0; d < D; ++d) reported.x[J + d] = std::max(reported.x[J + d], 0.0);
    } else {
        for (int attempt = 0; attempt <= settings.restarts; ++attempt) {
            auto x0 = attempt == 0 && free_fit.converged ? free_fit.x : jittered(attempt);
            reported = ls.minimize(std::move(x0), true, settings.max_iterations, settings.tolerance);
            iterations += reported.iterations;
            if (reported.converged) break;
        }
    }

    auto& x = reported.x;
    double lambda_sum = 0.0;
    for (int j = 0; j < J; ++j) lambda_sum += x[j];
    if (lambda_sum < 0.0) {
        for (int j = 0; j < J; ++j) x[j] = -x[j];
    }
    fit.factor_params.lambda.assign(x.begin(), x.begin() + J);
    fit.factor_params.tau = stats.thresholds;
    fit.factor_params.sigma2.assign(x.begin() + J, x.end());
    fit.sigma2 = fit.factor_params.sigma2;
    convert_to_irt(fit, design);

    double min_resid = std::numeric_limits<double>::infinity();
    for (int j = 0; j < J; ++j) {
        min_resid = std::min(min_resid, 1.0 - communality(x[j], fit.factor_params.item_sigma2(design, j)));
    }
    const bool final_inadmissible = min_resid <= 0.0;
    fit.heywood = heywood || final_inadmissible;
    fit.min_communality_residual = min_resid;
    fit.objective = reported.objective;
    fit.loglik = std::numeric_limits<double>::quiet_NaN();
    fit.iterations = iterations;
    fit.converged = reported.converged && !*fit.heywood;
    if (*fit.heywood) {
        fit.status = FitStatus::heywood;
        fit.message = free_fit.converged && heywood ? "negative variance or communality >= 1 in the unconstrained solution"
                                                    : "communality >= 1";
    } else if (!reported.converged) {
        fit.status = FitStatus::nonconverged;
        fit.message = "least-squares minimizer stalled";
    } else {
        fit.status = FitStatus::converged;
    }
    fit.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return fit;
}

}  // namespace testlet
