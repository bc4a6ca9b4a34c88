#include "testlet/mcmc.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>

#include "testlet/errors.hpp"
#include "testlet/mmle.hpp"
#include "testlet/normal.hpp"
#include "testlet/parallel.hpp"
#include "testlet/random.hpp"

namespace testlet {

void ChainSpec::validate() const {
    if (n_chains < 2) throw InvalidArgument("n_chains must be at least 2");
    if (min_iterations < 10) throw InvalidArgument("min_iterations must be at least 10");
    if (!(burn_in > 0.0 && burn_in < 1.0)) throw InvalidArgument("burn_in must lie in (0, 1)");
    if (thin < 1) throw InvalidArgument("thin must be positive");
    if (max_multiple < 1) throw InvalidArgument("max_multiple must be positive");
    if (!(psrf_threshold > 1.0)) throw InvalidArgument("psrf_threshold must exceed 1");
    if (ppp_draws < 1) throw InvalidArgument("ppp_draws must be positive");
}

namespace {

// Data-augmentation Gibbs sampler for the probit testlet model
//   y* = lambda (theta - gamma_d) - tau + e,  y = [y* > 0].
class Sampler {
public:
    Sampler(const ResponseMatrix& data, const TestletDesign& design, const PriorSpec& priors,
            const ChainSpec& spec, std::uint64_t seed)
        : data_(data),
          design_(design),
          priors_(priors),
          spec_(spec),
          rng_(seed),
          n_(data.n_persons()),
          j_(data.n_items()),
          d_(design.n_testlets()),
          testlet_of_(design.assignment().begin(), design.assignment().end()),
          ystar_(static_cast<std::size_t>(n_) * j_),
          theta_(n_),
          gamma_(static_cast<std::size_t>(n_) * std::max(d_, 1), 0.0) {
        initialize();
    }

    void step() {
        draw_latent_responses();
        if (spec_.sample_persons) draw_persons();
        if (spec_.sample_items) draw_items();
        if (spec_.sample_variances) draw_variances();
        if (spec_.sample_items && spec_.sample_persons) identify_sign();
        check_finite();
    }

    void record(std::vector<double>& out) const {
        out.insert(out.end(), lambda_.begin(), lambda_.end());
        out.insert(out.end(), tau_.begin(), tau_.end());
        out.insert(out.end(), sigma2_.begin(), sigma2_.end());
    }

    void record_theta(std::vector<double>& out) const {
        out.insert(out.end(), theta_.begin(), theta_.end());
    }

private:
    double& gamma(int i, int d) { return gamma_[static_cast<std::size_t>(i) * d_ + d]; }
    double gamma_of_item(int i, int item) const {
        const int d = testlet_of_[item];
        return d < 0 ? 0.0 : gamma_[static_cast<std::size_t>(i) * d_ + d];
    }

    void initialize() {
        if (spec_.init) {
            lambda_ = spec_.init->lambda;
            tau_ = spec_.init->tau;
            sigma2_ = spec_.init->sigma2;
            if (static_cast<int>(lambda_.size()) != j_ || static_cast<int>(tau_.size()) != j_ ||
                static_cast<int>(sigma2_.size()) != d_) {
                throw InvalidArgument("initial parameters do not match the design");
            }
        } else {
            lambda_.resize(j_);
            tau_.resize(j_);
            sigma2_.resize(d_);
            for (auto& s : sigma2_) s = 0.1 + 0.3 * rng_.uniform();
            const auto totals = data_.item_totals();
            for (int j = 0; j < j_; ++j) {
                lambda_[j] = 0.8 + 0.4 * rng_.uniform();
                const double p = std::clamp(static_cast<double>(totals[j]) / n_, 0.5 / n_,
                                            1.0 - 0.5 / n_);
                const int d = testlet_of_[j];
                const double s2 = d < 0 ? 0.0 : sigma2_[d];
                tau_[j] = -normal::quantile(p) * std::sqrt(1.0 + communality(lambda_[j], s2));
            }
        }
        if (spec_.init_persons) {
            const auto& ip = *spec_.init_persons;
            if (static_cast<int>(ip.theta.size()) != n_ ||
                (d_ > 0 && (ip.gamma.rows() != n_ || ip.gamma.cols() != d_))) {
                throw InvalidArgument("initial abilities do not match the data");
            }
            theta_ = ip.theta;
            for (int i = 0; i < n_; ++i) {
                for (int d = 0; d < d_; ++d) gamma(i, d) = ip.gamma(i, d);
            }
        } else {
            // Standardized total score plus jitter.
            std::vector<double> score(n_, 0.0);
            double mean = 0.0, sq = 0.0;
            for (int i = 0; i < n_; ++i) {
                for (auto v : data_.row(i)) score[i] += v;
                mean += score[i] / n_;
            }
            for (int i = 0; i < n_; ++i) sq += (score[i] - mean) * (score[i] - mean) / n_;
            const double sd = sq > 0.0 ? std::sqrt(sq) : 1.0;
            for (int i = 0; i < n_; ++i) {
                theta_[i] = 0.8 * (score[i] - mean) / sd + 0.3 * rng_.normal();
                for (int d = 0; d < d_; ++d) gamma(i, d) = 0.3 * std::sqrt(sigma2_[d]) * rng_.normal();
            }
        }
    }

    void draw_latent_responses() {
        for (int i = 0; i < n_; ++i) {
            const auto row = data_.row(i);
            double* ys = &ystar_[static_cast<std::size_t>(i) * j_];
            for (int j = 0; j < j_; ++j) {
                const double mean = lambda_[j] * (theta_[i] - gamma_of_item(i, j)) - tau_[j];
                ys[j] = rng_.truncated_unit_normal(mean, row[j] != 0);
            }
        }
    }

    // theta with every gamma integrated out, then each gamma given theta.
    void draw_persons() {
        double base_precision = 1.0;
        std::vector<double> ss(d_, 0.0);
        for (int j = 0; j < j_; ++j) {
            const int d = testlet_of_[j];
            if (d < 0) {
                base_precision += lambda_[j] * lambda_[j];
            } else {
                ss[d] += lambda_[j] * lambda_[j];
            }
        }
        double precision = base_precision;
        std::vector<double> shrink(d_);
        for (int d = 0; d < d_; ++d) {
            shrink[d] = 1.0 / (1.0 + sigma2_[d] * ss[d]);
            precision += ss[d] * shrink[d];
        }
        const double theta_sd = 1.0 / std::sqrt(precision);
        std::vector<double> lw(d_);
        for (int i = 0; i < n_; ++i) {
            const double* ys = &ystar_[static_cast<std::size_t>(i) * j_];
            double num = 0.0;
            std::fill(lw.begin(), lw.end(), 0.0);
            for (int j = 0; j < j_; ++j) {
                const double lwj = lambda_[j] * (ys[j] + tau_[j]);
                const int d = testlet_of_[j];
                if (d < 0) {
                    num += lwj;
                } else {
                    lw[d] += lwj;
                }
            }
            for (int d = 0; d < d_; ++d) num += lw[d] * shrink[d];
            const double th = num / precision + theta_sd * rng_.normal();
            theta_[i] = th;
            for (int d = 0; d < d_; ++d) {
                if (sigma2_[d] <= 0.0) {
                    gamma(i, d) = 0.0;
                    continue;
                }
                const double pg = 1.0 / sigma2_[d] + ss[d];
                gamma(i, d) = -(lw[d] - ss[d] * th) / pg + rng_.normal() / std::sqrt(pg);
            }
        }
    }

    // Bivariate normal regression of y* on (x, -1) with x = theta - gamma.
    void draw_items() {
        std::vector<double> sxx(j_, 0.0), sx(j_, 0.0), sxy(j_, 0.0), sy(j_, 0.0);
        for (int i = 0; i < n_; ++i) {
            const double* ys = &ystar_[static_cast<std::size_t>(i) * j_];
            for (int j = 0; j < j_; ++j) {
                const double x = theta_[i] - gamma_of_item(i, j);
                sxx[j] += x * x;
                sx[j] += x;
                sxy[j] += x * ys[j];
                sy[j] += ys[j];
            }
        }
        for (int j = 0; j < j_; ++j) {
            const double a00 = sxx[j] + 1.0 / priors_.loading_variance;
            const double a01 = -sx[j];
            const double a11 = n_ + 1.0 / priors_.threshold_variance;
            const double b0 = sxy[j], b1 = -sy[j];
            const double det = a00 * a11 - a01 * a01;
            const double m0 = (a11 * b0 - a01 * b1) / det;
            const double m1 = (a00 * b1 - a01 * b0) / det;
            // precision = L L^T; draw = mean + L^{-T} z.
            const double l00 = std::sqrt(a00);
            const double l10 = a01 / l00;
            const double l11 = std::sqrt(a11 - l10 * l10);
            const double z0 = rng_.normal(), z1 = rng_.normal();
            const double v1 = z1 / l11;
            const double v0 = (z0 - l10 * v1) / l00;
            lambda_[j] = m0 + v0;
            tau_[j] = m1 + v1;
        }
    }

    void draw_variances() {
        for (int d = 0; d < d_; ++d) {
            // Centered: flat prior on sigma^2 gives InvGamma(N/2 - 1, S/2).
            double ss = 0.0;
            for (int i = 0; i < n_; ++i) ss += gamma(i, d) * gamma(i, d);
            sigma2_[d] = 0.5 * ss / rng_.gamma(0.5 * n_ - 1.0);
            if (spec_.sample_persons) noncentered_update(d);
        }
    }

    // Interweaving step on sigma with z = gamma / sigma held fixed. The flat
    // prior on sigma^2 is |sigma| on the real line, so an independence
    // proposal from the likelihood accepts with |sigma'| / |sigma|.
    void noncentered_update(int d) {
        const double sigma = std::sqrt(sigma2_[d]);
        if (!(sigma > 0.0)) return;
        const auto& items = design_.items_in(d);
        double ss = 0.0;
        for (int j : items) ss += lambda_[j] * lambda_[j];
        double szz = 0.0, szr = 0.0;
        for (int i = 0; i < n_; ++i) {
            const double z = gamma(i, d) / sigma;
            const double* ys = &ystar_[static_cast<std::size_t>(i) * j_];
            double lr = 0.0;
            for (int j : items) lr += lambda_[j] * (ys[j] + tau_[j] - lambda_[j] * theta_[i]);
            szz += z * z;
            szr -= z * lr;
        }
        const double precision = ss * szz;
        if (!(precision > 0.0)) return;
        const double proposal = szr / precision + rng_.normal() / std::sqrt(precision);
        if (rng_.uniform() >= std::abs(proposal) / sigma) return;
        const double ratio = proposal / sigma;
        for (int i = 0; i < n_; ++i) gamma(i, d) *= ratio;
        sigma2_[d] = proposal * proposal;
    }

    void identify_sign() {
        double sum = 0.0;
        for (double l : lambda_) sum += l;
        if (sum >= 0.0) return;
        for (auto& l : lambda_) l = -l;
        for (auto& t : theta_) t = -t;
        for (auto& g : gamma_) g = -g;
    }

    void check_finite() const {
        auto finite = [](const std::vector<double>& v) {
            return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
        };
        if (!finite(lambda_) || !finite(tau_) || !finite(sigma2_)) {
            throw ChainDivergence("non-finite structural parameter in MCMC chain");
        }
    }

    const ResponseMatrix& data_;
    const TestletDesign& design_;
    const PriorSpec& priors_;
    const ChainSpec& spec_;
    Rng rng_;
    int n_, j_, d_;
    std::vector<int> testlet_of_;
    std::vector<double> ystar_;
    std::vector<double> theta_;
    std::vector<double> gamma_;
    std::vector<double> lambda_, tau_, sigma2_;
};

}  // namespace

double psrf(std::span<const std::vector<double>> chains) {
    const std::size_t m = chains.size();
    if (m < 2) throw InvalidArgument("psrf needs at least two chains");
    const std::size_t n = chains[0].size();
    if (n < 2) throw InvalidArgument("psrf needs at least two draws per chain");
    for (const auto& c : chains) {
        if (c.size() != n) throw InvalidArgument("psrf chains must have equal length");
    }
    std::vector<double> means(m);
    double w = 0.0;
    for (std::size_t c = 0; c < m; ++c) {
        double mean = 0.0;
        for (double v : chains[c]) mean += v;
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (double v : chains[c]) var += (v - mean) * (v - mean);
        w += var / static_cast<double>(n - 1);
        means[c] = mean;
    }
    w /= static_cast<double>(m);
    if (!(w > 0.0)) throw ZeroVariance("within-chain variance is zero");
    double grand = 0.0;
    for (double mu : means) grand += mu;
    grand /= static_cast<double>(m);
    double b = 0.0;
    for (double mu : means) b += (mu - grand) * (mu - grand);
    b *= static_cast<double>(n) / static_cast<double>(m - 1);
    const double nn = static_cast<double>(n);
    return std::sqrt(((nn - 1.0) / nn * w + b / nn) / w);
}

ConditionalParams unpack_draw(const Eigen::Ref<const Eigen::RowVectorXd>& row, int n_items,
                              int n_testlets) {
    ConditionalParams p;
    p.lambda.assign(row.data(), row.data() + n_items);
    p.tau.assign(row.data() + n_items, row.data() + 2 * n_items);
    p.sigma2.assign(row.data() + 2 * n_items, row.data() + 2 * n_items + n_testlets);
    return p;
}

ResponseMatrix simulate_conditional(const ConditionalParams& params, const TestletDesign& design,
                                    int n_persons, std::uint64_t seed) {
    const int J = design.n_items(), D = design.n_testlets();
    Rng rng(seed);
    ResponseMatrix y(n_persons, J);
    std::vector<double> gamma(D);
    for (int i = 0; i < n_persons; ++i) {
        const double theta = rng.normal();
        for (int d = 0; d < D; ++d) gamma[d] = std::sqrt(params.sigma2[d]) * rng.normal();
        for (int j = 0; j < J; ++j) {
            const int d = design.testlet_of(j);
            const double g = d < 0 ? 0.0 : gamma[d];
            y.set(i, j, rng.bernoulli(normal::cdf(params.lambda[j] * (theta - g) - params.tau[j])));
        }
    }
    return y;
}

double default_discrepancy(const ResponseMatrix& data, const ConditionalParams& params,
                           const TestletDesign& design) {
    const int N = data.n_persons(), J = data.n_items();
    Eigen::MatrixXd y(N, J);
    for (int i = 0; i < N; ++i) {
        for (int j = 0; j < J; ++j) y(i, j) = data(i, j);
    }
    const Eigen::MatrixXd cross = y.transpose() * y;

    std::vector<double> h(J), scale(J), p(J);
    for (int j = 0; j < J; ++j) {
        scale[j] = std::sqrt(1.0 + communality(params.lambda[j], params.item_sigma2(design, j)));
        h[j] = -params.tau[j] / scale[j];
        p[j] = normal::cdf(h[j]);
    }
    const double n = N;
    double total = 0.0;
    for (int j = 0; j < J; ++j) {
        const double z = (cross(j, j) / n - p[j]) / std::sqrt(p[j] * (1.0 - p[j]) / n);
        total += z * z;
    }
    for (int j = 0; j < J; ++j) {
        for (int k = j + 1; k < J; ++k) {
            const double shared = 1.0 + (design.same_testlet(j, k) ? params.item_sigma2(design, j) : 0.0);
            const double rho = params.lambda[j] * params.lambda[k] * shared / (scale[j] * scale[k]);
            const double p11 = normal::bvn_cdf(h[j], h[k], rho);
            const double p10 = std::max(p[j] - p11, 1e-300);
            const double p01 = std::max(p[k] - p11, 1e-300);
            const double p00 = std::max(1.0 - p[j] - p[k] + p11, 1e-300);
            const double expected = std::log(std::max(p11, 1e-300) * p00 / (p10 * p01));
            const double n11 = cross(j, k) + 0.5;
            const double n10 = cross(j, j) - cross(j, k) + 0.5;
            const double n01 = cross(k, k) - cross(j, k) + 0.5;
            const double n00 = n - cross(j, j) - cross(k, k) + cross(j, k) + 0.5;
            const double observed = std::log(n11 * n00 / (n10 * n01));
            const double se2 = 1.0 / n11 + 1.0 / n10 + 1.0 / n01 + 1.0 / n00;
            total += (observed - expected) * (observed - expected) / se2;
        }
    }
    return total;
}

double posterior_predictive_p(std::span<const ConditionalParams> draws,
                              const ResponseMatrix& data, const TestletDesign& design,
                              std::uint64_t seed, const Discrepancy& discrepancy) {
    if (draws.size() < 100) throw InvalidArgument("posterior predictive p needs >= 100 draws");
    std::size_t exceed = 0;
    for (std::size_t k = 0; k < draws.size(); ++k) {
        const auto rep = simulate_conditional(draws[k], design, data.n_persons(), derive_seed(seed, {k}));
        if (discrepancy(rep, draws[k], design) >= discrepancy(data, draws[k], design)) ++exceed;
    }
    return static_cast<double>(exceed) / static_cast<double>(draws.size());
}

McmcResult fit_mcmc(const ResponseMatrix& data, const TestletDesign& design,
                    const PriorSpec& priors, const ChainSpec& spec) {
    const auto start = std::chrono::steady_clock::now();
    spec.validate();
    data.require_both_categories();
    if (data.n_items() != design.n_items()) {
        throw InvalidArgument("design and data disagree on the number of items");
    }
    if (spec.sample_variances && design.n_testlets() > 0 && data.n_persons() <= 2) {
        throw InvalidArgument("sampling testlet variances needs more than two persons");
    }
    if (!(priors.loading_variance > 0.0) || !(priors.threshold_variance > 0.0)) {
        throw InvalidArgument("prior variances must be positive");
    }
    const int J = design.n_items(), D = design.n_testlets(), N = data.n_persons();
    const int P = 2 * J + D;
    const int C = spec.n_chains;

    std::vector<Sampler> samplers;
    samplers.reserve(C);
    for (int c = 0; c < C; ++c) {
        samplers.emplace_back(data, design, priors, spec, derive_seed(spec.seed, {static_cast<std::uint64_t>(c) + 1}));
    }
    std::vector<std::vector<double>> traces(C), theta_traces(C);
    const int workers = spec.threads > 0 ? std::min(spec.threads, worker_limit()) : worker_limit();

    std::vector<int> monitored;
    if (spec.sample_items) {
        for (int k = 0; k < 2 * J; ++k) monitored.push_back(k);
    }
    if (spec.sample_variances) {
        for (int k = 2 * J; k < P; ++k) monitored.push_back(k);
    }

    PosteriorSummary summary;
    int total = 0;
    int rows = 0, burn = 0;
    while (true) {
        const int from = total;
        total += spec.min_iterations;
        parallel_for(C, workers, [&](int c) {
            for (int it = from; it < total; ++it) {
                samplers[c].step();
                if ((it + 1) % spec.thin == 0) {
                    samplers[c].record(traces[c]);
                    if (spec.keep_person_draws) samplers[c].record_theta(theta_traces[c]);
                }
            }
        });
        rows = total / spec.thin;
        burn = static_cast<int>(spec.burn_in * rows);
        const int kept = rows - burn;
        summary.psrf.assign(P, 1.0);
        summary.psrf_max = 1.0;
        if (kept >= 2) {
            std::vector<std::vector<double>> column(C, std::vector<double>(kept));
            for (int k : monitored) {
                for (int c = 0; c < C; ++c) {
                    for (int r = 0; r < kept; ++r) {
                        column[c][r] = traces[c][static_cast<std::size_t>(burn + r) * P + k];
                    }
                }
                summary.psrf[k] = psrf(column);
                summary.psrf_max = std::max(summary.psrf_max, summary.psrf[k]);
            }
        }
        summary.converged = summary.psrf_max < spec.psrf_threshold;
        if (summary.converged || total >= spec.max_multiple * spec.min_iterations) break;
    }
    if (monitored.empty()) summary.psrf.clear();
    summary.iterations_per_chain = total;

    const int kept = rows - burn;
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(P), sumsq = Eigen::VectorXd::Zero(P);
    for (int c = 0; c < C; ++c) {
        Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> all(
            traces[c].data(), rows, P);
        summary.draws.emplace_back(all.bottomRows(kept));
        sum += summary.draws.back().colwise().sum().transpose();
        sumsq += summary.draws.back().array().square().colwise().sum().matrix().transpose();
        if (spec.keep_person_draws) {
            Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> th(
                theta_traces[c].data(), rows, N);
            summary.theta_draws.emplace_back(th.bottomRows(kept));
        }
    }
    const double count = static_cast<double>(kept) * C;
    const Eigen::VectorXd mean = sum / count;
    const Eigen::VectorXd var =
        ((sumsq / count).array() - mean.array().square()).max(0.0) * count / std::max(count - 1.0, 1.0);
    summary.mean = unpack_draw(mean.transpose(), J, D);
    summary.sd = unpack_draw(var.cwiseSqrt().transpose(), J, D);

    if (spec.compute_ppp && spec.sample_items) {
        const int available = static_cast<int>(count);
        const int wanted = std::min(spec.ppp_draws, available);
        if (wanted >= 100) {
            std::vector<ConditionalParams> picks;
            picks.reserve(wanted);
            for (int k = 0; k < wanted; ++k) {
                const long long flat = static_cast<long long>(k) * available / wanted;
                const int c = static_cast<int>(flat / kept), r = static_cast<int>(flat % kept);
                picks.push_back(unpack_draw(summary.draws[c].row(r), J, D));
            }
            summary.ppp = posterior_predictive_p(picks, data, design, derive_seed(spec.seed, {0xbbbULL}));
        }
    }

    McmcResult out;
    FitResult& fit = out.fit;
    fit.estimator = "mcmc";
    fit.conditional = summary.mean;
    fit.factor_params = to_factor(summary.mean, design);
    fit.sigma2 = summary.mean.sigma2;
    convert_to_irt(fit, design);
    fit.loglik = marginal_loglik(summary.mean, data, design);
    fit.iterations = total;
    fit.converged = summary.converged;
    fit.status = fit.converged ? FitStatus::converged : FitStatus::nonconverged;
    if (!fit.converged) {
        fit.message = "max PSRF " + std::to_string(summary.psrf_max) + " after " +
                      std::to_string(total) + " iterations per chain";
    }
    fit.psrf_max = summary.psrf_max;
    fit.ppp = summary.ppp;
    fit.n_retained = static_cast<int>(count);
    fit.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out.summary = std::move(summary);
    return out;
}

}  // namespace testlet
