#include "testlet/mmle.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <string>

#include "testlet/errors.hpp"

namespace testlet {

namespace detail {

namespace {

// log Phi(eta), log Phi(-eta) and the Mills ratios phi/Phi(eta), phi/Phi(-eta).
struct ProbitTerms {
    double log_p1, log_p0, m1, m0;
};

ProbitTerms probit_terms(double eta) {
    const double log_p1 = normal::log_cdf(eta);
    const double log_p0 = normal::log_cdf(-eta);
    const double log_phi = -0.5 * eta * eta - 0.5 * std::log(2.0 * std::numbers::pi);
    return {log_p1, log_p0, std::exp(log_phi - log_p1), std::exp(log_phi - log_p0)};
}

// First and second derivative in eta of r log Phi(eta) + (n-r) log Phi(-eta).
void eta_derivatives(const ProbitTerms& t, double eta, double n, double r, double& d1,
                     double& d2) {
    const double w = n - r;
    d1 = r * t.m1 - w * t.m0;
    d2 = -r * t.m1 * (eta + t.m1) - w * t.m0 * (t.m0 - eta);
}

}  // namespace

double item_objective(const ItemCounts& counts, double lambda, double tau, double grad[2],
                      double hess[3]) {
    double f = 0.0;
    double g0 = 0.0, g1 = 0.0, h00 = 0.0, h01 = 0.0, h11 = 0.0;
    for (std::size_t k = 0; k < counts.x.size(); ++k) {
        const double n = counts.n[k];
        if (n <= 0.0) continue;
        const double r = counts.r[k];
        const double x = counts.x[k];
        const double eta = lambda * x - tau;
        const auto t = probit_terms(eta);
        f += r * t.log_p1 + (n - r) * t.log_p0;
        if (grad || hess) {
            double d1, d2;
            eta_derivatives(t, eta, n, r, d1, d2);
            g0 += d1 * x;
            g1 -= d1;
            h00 += d2 * x * x;
            h01 -= d2 * x;
            h11 += d2;
        }
    }
    if (grad) grad[0] = g0, grad[1] = g1;
    if (hess) hess[0] = h00, hess[1] = h01, hess[2] = h11;
    return f;
}

double testlet_objective(const TestletCounts& counts, std::span<const double> lambda,
                         std::span<const double> tau, double sigma, double* grad, double* hess) {
    const std::size_t nq = counts.theta.size();
    const std::size_t nr = counts.z.size();
    double f = 0.0, g = 0.0, h = 0.0;
    for (std::size_t k = 0; k < lambda.size(); ++k) {
        const auto& rk = counts.r[k];
        for (std::size_t q = 0; q < nq; ++q) {
            for (std::size_t s = 0; s < nr; ++s) {
                const std::size_t idx = q * nr + s;
                const double n = counts.n[idx];
                if (n <= 0.0) continue;
                const double r = rk[idx];
                const double eta = lambda[k] * (counts.theta[q] - sigma * counts.z[s]) - tau[k];
                const auto t = probit_terms(eta);
                f += r * t.log_p1 + (n - r) * t.log_p0;
                double d1, d2;
                eta_derivatives(t, eta, n, r, d1, d2);
                const double deta = -lambda[k] * counts.z[s];
                g += d1 * deta;
                h += d2 * deta * deta;
            }
        }
    }
    if (grad) *grad = g;
    if (hess) *hess = h;
    return f;
}

}  // namespace detail

namespace {

constexpr double kMaxSigma2 = 10.0;
constexpr double kMaxAbsLambda = 10.0;
constexpr double kMaxAbsTau = 20.0;
constexpr double kTiny = 1e-300;

// A testlet, or a single independent item (one inner node at gamma = 0).
struct Group {
    int testlet = TestletDesign::kIndependent;
    std::vector<int> items;
    std::vector<std::vector<std::uint8_t>> patterns;  // distinct response patterns
    std::vector<int> pattern_of;                      // per person
};

class Engine {
public:
    Engine(const ResponseMatrix& data, const TestletDesign& design, const QuadratureSpec& quad)
        : data_(data), design_(design) {
        if (quad.n_nodes < 5) throw InvalidArgument("quadrature: n_nodes must be >= 5");
        if (data.n_items() != design.n_items()) {
            throw InvalidArgument("responses have " + std::to_string(data.n_items()) +
                                  " items but the design has " +
                                  std::to_string(design.n_items()));
        }
        rule_ = normal::gauss_hermite(quad.n_nodes);
        nq_ = quad.n_nodes;
        for (int d = 0; d < design.n_testlets(); ++d) {
            add_group(d, design.items_in(d));
        }
        for (int j = 0; j < design.n_items(); ++j) {
            if (design.testlet_of(j) == TestletDesign::kIndependent) {
                add_group(TestletDesign::kIndependent, {j});
            }
        }
        lqr_.resize(groups_.size());
        lq_.resize(groups_.size());
        post_.resize(groups_.size());
        n_.resize(groups_.size());
        r_.resize(groups_.size());
    }

    int nq() const { return nq_; }
    int nr(const Group& g) const { return g.testlet == TestletDesign::kIndependent ? 1 : nq_; }
    const normal::GaussHermite& rule() const { return rule_; }

    double sigma_of(const Group& g, const ConditionalParams& p) const {
        return g.testlet == TestletDesign::kIndependent ? 0.0 : std::sqrt(p.sigma2[g.testlet]);
    }
    double z_node(const Group& g, int s) const {
        return g.testlet == TestletDesign::kIndependent ? 0.0 : rule_.nodes[s];
    }
    double z_weight(const Group& g, int s) const {
        return g.testlet == TestletDesign::kIndependent ? 1.0 : rule_.weights[s];
    }

    // Evaluates pattern likelihood tables and the marginal loglik. When
    // want_counts is set, also accumulates expected counts; when theta_eap /
    // gamma_eap are given, fills posterior means.
    double estep(const ConditionalParams& p, bool want_counts, std::vector<double>* theta_eap,
                 Eigen::MatrixXd* gamma_eap) {
        build_tables(p);
        const int n_persons = data_.n_persons();
        const std::size_t n_groups = groups_.size();
        if (want_counts) {
            for (std::size_t g = 0; g < n_groups; ++g) {
                post_[g].assign(groups_[g].patterns.size() * nq_, 0.0);
            }
        }
        if (theta_eap) theta_eap->assign(n_persons, 0.0);
        if (gamma_eap) gamma_eap->setZero(n_persons, design_.n_testlets());

        std::vector<double> l(nq_);
        double loglik = 0.0;
        for (int i = 0; i < n_persons; ++i) {
            for (int q = 0; q < nq_; ++q) l[q] = std::log(rule_.weights[q]);
            for (std::size_t g = 0; g < n_groups; ++g) {
                const double* row = &log_lq_[g][groups_[g].pattern_of[i] * nq_];
                for (int q = 0; q < nq_; ++q) l[q] += row[q];
            }
            const double mx = *std::max_element(l.begin(), l.end());
            double total = 0.0;
            for (int q = 0; q < nq_; ++q) {
                l[q] = std::exp(l[q] - mx);
                total += l[q];
            }
            loglik += mx + std::log(total);
            for (int q = 0; q < nq_; ++q) l[q] /= total;
            if (want_counts) {
                for (std::size_t g = 0; g < n_groups; ++g) {
                    double* row = &post_[g][groups_[g].pattern_of[i] * nq_];
                    for (int q = 0; q < nq_; ++q) row[q] += l[q];
                }
            }
            if (theta_eap) {
                double m = 0.0;
                for (int q = 0; q < nq_; ++q) m += l[q] * rule_.nodes[q];
                (*theta_eap)[i] = m;
            }
            if (gamma_eap) {
                for (std::size_t g = 0; g < n_groups; ++g) {
                    const auto& grp = groups_[g];
                    if (grp.testlet == TestletDesign::kIndependent) continue;
                    const double sigma = sigma_of(grp, p);
                    const int pat = grp.pattern_of[i];
                    const int r_nodes = nr(grp);
                    double m = 0.0;
                    for (int q = 0; q < nq_; ++q) {
                        const double* lr = &lqr_[g][(pat * nq_ + q) * r_nodes];
                        double inner = 0.0;
                        for (int s = 0; s < r_nodes; ++s) {
                            inner += rule_.weights[s] * lr[s] * sigma * rule_.nodes[s];
                        }
                        m += l[q] * inner / std::max(lq_[g][pat * nq_ + q], kTiny);
                    }
                    (*gamma_eap)(i, grp.testlet) = m;
                }
            }
        }
        if (want_counts) accumulate_counts();
        return loglik;
    }

    // One ECM M-step starting from p, using counts of the last estep.
    ConditionalParams mstep(const ConditionalParams& p, int newton_iterations) const {
        ConditionalParams out = p;
        for (std::size_t g = 0; g < groups_.size(); ++g) {
            const auto& grp = groups_[g];
            const int r_nodes = nr(grp);
            const double sigma = sigma_of(grp, p);
            detail::ItemCounts ic;
            ic.x.resize(nq_ * r_nodes);
            for (int q = 0; q < nq_; ++q) {
                for (int s = 0; s < r_nodes; ++s) {
                    ic.x[q * r_nodes + s] = rule_.nodes[q] - sigma * z_node(grp, s);
                }
            }
            ic.n = n_[g];
            for (std::size_t k = 0; k < grp.items.size(); ++k) {
                const int j = grp.items[k];
                ic.r = r_[g][k];
                newton_item(ic, out.lambda[j], out.tau[j], newton_iterations);
            }
            if (grp.testlet != TestletDesign::kIndependent) {
                detail::TestletCounts tc;
                tc.theta = rule_.nodes;
                tc.z = rule_.nodes;
                tc.n = n_[g];
                tc.r = r_[g];
                std::vector<double> lam, tau;
                for (int j : grp.items) lam.push_back(out.lambda[j]), tau.push_back(out.tau[j]);
                double s = sigma;
                newton_sigma(tc, lam, tau, s, newton_iterations);
                out.sigma2[grp.testlet] = s * s;
            }
        }
        return out;
    }

private:
    void add_group(int testlet, const std::vector<int>& items) {
        Group g;
        g.testlet = testlet;
        g.items = items;
        g.pattern_of.resize(data_.n_persons());
        std::map<std::vector<std::uint8_t>, int> index;
        std::vector<std::uint8_t> key(items.size());
        for (int i = 0; i < data_.n_persons(); ++i) {
            for (std::size_t k = 0; k < items.size(); ++k) key[k] = data_(i, items[k]);
            auto [it, inserted] = index.try_emplace(key, static_cast<int>(g.patterns.size()));
            if (inserted) g.patterns.push_back(key);
            g.pattern_of[i] = it->second;
        }
        groups_.push_back(std::move(g));
    }

    void build_tables(const ConditionalParams& p) {
        log_lq_.resize(groups_.size());
        std::vector<double> prob;
        for (std::size_t g = 0; g < groups_.size(); ++g) {
            const auto& grp = groups_[g];
            const int r_nodes = nr(grp);
            const int n_items = static_cast<int>(grp.items.size());
            const double sigma = sigma_of(grp, p);
            const std::size_t n_pat = grp.patterns.size();
            // prob[(q*R + s)*K + k] = P(correct) for item k of the group.
            prob.resize(static_cast<std::size_t>(nq_) * r_nodes * n_items);
            for (int q = 0; q < nq_; ++q) {
                for (int s = 0; s < r_nodes; ++s) {
                    const double x = rule_.nodes[q] - sigma * z_node(grp, s);
                    for (int k = 0; k < n_items; ++k) {
                        const int j = grp.items[k];
                        prob[(q * r_nodes + s) * n_items + k] =
                            normal::cdf(p.lambda[j] * x - p.tau[j]);
                    }
                }
            }
            auto& lqr = lqr_[g];
            auto& lq = lq_[g];
            auto& log_lq = log_lq_[g];
            lqr.assign(n_pat * nq_ * r_nodes, 0.0);
            lq.assign(n_pat * nq_, 0.0);
            log_lq.assign(n_pat * nq_, 0.0);
            for (std::size_t pat = 0; pat < n_pat; ++pat) {
                const auto& y = grp.patterns[pat];
                for (int q = 0; q < nq_; ++q) {
                    double sum = 0.0;
                    for (int s = 0; s < r_nodes; ++s) {
                        const double* pr = &prob[(q * r_nodes + s) * n_items];
                        double prod = 1.0;
                        for (int k = 0; k < n_items; ++k) prod *= y[k] ? pr[k] : 1.0 - pr[k];
                        lqr[(pat * nq_ + q) * r_nodes + s] = prod;
                        sum += z_weight(grp, s) * prod;
                    }
                    lq[pat * nq_ + q] = sum;
                    log_lq[pat * nq_ + q] = std::log(std::max(sum, kTiny));
                }
            }
        }
    }

    void accumulate_counts() {
        for (std::size_t g = 0; g < groups_.size(); ++g) {
            const auto& grp = groups_[g];
            const int r_nodes = nr(grp);
            const std::size_t n_items = grp.items.size();
            auto& n = n_[g];
            auto& r = r_[g];
            n.assign(static_cast<std::size_t>(nq_) * r_nodes, 0.0);
            r.assign(n_items, std::vector<double>(static_cast<std::size_t>(nq_) * r_nodes, 0.0));
            for (std::size_t pat = 0; pat < grp.patterns.size(); ++pat) {
                const auto& y = grp.patterns[pat];
                for (int q = 0; q < nq_; ++q) {
                    const double w = post_[g][pat * nq_ + q];
                    if (w == 0.0) continue;
                    const double coef = w / std::max(lq_[g][pat * nq_ + q], kTiny);
                    for (int s = 0; s < r_nodes; ++s) {
                        const std::size_t idx = static_cast<std::size_t>(q) * r_nodes + s;
                        const double c =
                            coef * z_weight(grp, s) * lqr_[g][(pat * nq_ + q) * r_nodes + s];
                        n[idx] += c;
                        for (std::size_t k = 0; k < n_items; ++k) {
                            if (y[k]) r[k][idx] += c;
                        }
                    }
                }
            }
        }
    }

    static void newton_item(const detail::ItemCounts& ic, double& lambda, double& tau,
                            int iterations) {
        double grad[2], hess[3];
        double f = detail::item_objective(ic, lambda, tau, grad, hess);
        for (int it = 0; it < iterations; ++it) {
            const double det = hess[0] * hess[2] - hess[1] * hess[1];
            double dl, dt;
            if (hess[0] < 0.0 && det > 0.0) {
                dl = -(hess[2] * grad[0] - hess[1] * grad[1]) / det;
                dt = -(-hess[1] * grad[0] + hess[0] * grad[1]) / det;
            } else {
                // Not concave here; fall back to a small gradient step.
                dl = 1e-3 * grad[0];
                dt = 1e-3 * grad[1];
            }
            double step = 1.0;
            bool improved = false;
            for (int half = 0; half < 30; ++half, step *= 0.5) {
                const double nl = std::clamp(lambda + step * dl, -kMaxAbsLambda, kMaxAbsLambda);
                const double nt = std::clamp(tau + step * dt, -kMaxAbsTau, kMaxAbsTau);
                double ng[2], nh[3];
                const double nf = detail::item_objective(ic, nl, nt, ng, nh);
                if (nf >= f) {
                    lambda = nl, tau = nt, f = nf;
                    std::copy(ng, ng + 2, grad);
                    std::copy(nh, nh + 3, hess);
                    improved = true;
                    break;
                }
            }
            if (!improved || std::max(std::abs(step * dl), std::abs(step * dt)) < 1e-10) break;
        }
    }

    static void newton_sigma(const detail::TestletCounts& tc, std::span<const double> lambda,
                             std::span<const double> tau, double& sigma, int iterations) {
        const double max_sigma = std::sqrt(kMaxSigma2);
        double grad, hess;
        double f = detail::testlet_objective(tc, lambda, tau, sigma, &grad, &hess);
        for (int it = 0; it < iterations; ++it) {
            const double d = hess < 0.0 ? -grad / hess : 1e-3 * grad;
            double step = 1.0;
            bool improved = false;
            for (int half = 0; half < 30; ++half, step *= 0.5) {
                const double ns = std::clamp(sigma + step * d, 0.0, max_sigma);
                double ng, nh;
                const double nf = detail::testlet_objective(tc, lambda, tau, ns, &ng, &nh);
                if (nf >= f) {
                    const double moved = std::abs(ns - sigma);
                    sigma = ns, f = nf, grad = ng, hess = nh;
                    improved = moved > 0.0;
                    break;
                }
            }
            if (!improved || std::abs(step * d) < 1e-10) break;
        }
    }

    const ResponseMatrix& data_;
    const TestletDesign& design_;
    normal::GaussHermite rule_;
    int nq_ = 0;
    std::vector<Group> groups_;
    std::vector<std::vector<double>> lqr_;     // [g][(pat*Q + q)*R + s]
    std::vector<std::vector<double>> lq_;      // [g][pat*Q + q]
    std::vector<std::vector<double>> log_lq_;  // [g][pat*Q + q]
    std::vector<std::vector<double>> post_;    // [g][pat*Q + q] summed posteriors
    std::vector<std::vector<double>> n_;       // [g][q*R + s]
    std::vector<std::vector<std::vector<double>>> r_;  // [g][k][q*R + s]
};

void check_params(const ConditionalParams& p, const TestletDesign& design) {
    if (static_cast<int>(p.lambda.size()) != design.n_items() ||
        static_cast<int>(p.tau.size()) != design.n_items() ||
        static_cast<int>(p.sigma2.size()) != design.n_testlets()) {
        throw InvalidArgument("parameters do not match the design dimensions");
    }
}

// Packs (lambda, tau, sigma) for extrapolation.
std::vector<double> pack(const ConditionalParams& p) {
    std::vector<double> v;
    v.reserve(p.lambda.size() * 2 + p.sigma2.size());
    v.insert(v.end(), p.lambda.begin(), p.lambda.end());
    v.insert(v.end(), p.tau.begin(), p.tau.end());
    for (double s2 : p.sigma2) v.push_back(std::sqrt(s2));
    return v;
}

ConditionalParams unpack(const std::vector<double>& v, std::size_t n_items,
                         std::size_t n_testlets) {
    ConditionalParams p;
    p.lambda.assign(v.begin(), v.begin() + n_items);
    p.tau.assign(v.begin() + n_items, v.begin() + 2 * n_items);
    for (std::size_t d = 0; d < n_testlets; ++d) {
        const double s = std::clamp(v[2 * n_items + d], 0.0, std::sqrt(kMaxSigma2));
        p.sigma2.push_back(s * s);
    }
    for (auto& l : p.lambda) l = std::clamp(l, -kMaxAbsLambda, kMaxAbsLambda);
    for (auto& t : p.tau) t = std::clamp(t, -kMaxAbsTau, kMaxAbsTau);
    return p;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a[k] - b[k]));
    return m;
}

ConditionalParams starting_values(const ResponseMatrix& data, const TestletDesign& design) {
    constexpr double sigma2_start = 0.2;
    const int n = data.n_persons();
    const int n_items = data.n_items();
    std::vector<double> total(n, 0.0);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n_items; ++j) total[i] += data(i, j);
    }
    ConditionalParams p;
    p.sigma2.assign(design.n_testlets(), sigma2_start);
    for (int j = 0; j < n_items; ++j) {
        // Point-biserial of item j with the rest score, turned biserial.
        double sy = 0, sr = 0, syy = 0, srr = 0, syr = 0;
        for (int i = 0; i < n; ++i) {
            const double y = data(i, j);
            const double rest = total[i] - y;
            sy += y, sr += rest, syy += y * y, srr += rest * rest, syr += y * rest;
        }
        const double my = sy / n, mr = sr / n;
        const double vy = syy / n - my * my, vr = srr / n - mr * mr;
        const double pb = (vy > 0 && vr > 0) ? (syr / n - my * mr) / std::sqrt(vy * vr) : 0.3;
        const double p1 = std::clamp(my, 1e-3, 1.0 - 1e-3);
        const double biserial = pb * std::sqrt(p1 * (1.0 - p1)) / normal::pdf(normal::quantile(p1));
        const double s2 = p.item_sigma2(design, j);
        const double lam_max = std::sqrt(0.9 / (1.0 + s2));
        const double lam = std::clamp(biserial, 0.1, lam_max);
        const double tau = normal::quantile(1.0 - p1);
        const auto raw = unstandardize(lam, tau, s2);
        p.lambda.push_back(raw.lambda);
        p.tau.push_back(raw.tau);
    }
    return p;
}

// Reflection: the likelihood is invariant to flipping every loading.
void orient(ConditionalParams& p) {
    double sum = 0.0;
    for (double l : p.lambda) sum += l;
    if (sum < 0.0) {
        for (double& l : p.lambda) l = -l;
    }
}

}  // namespace

double marginal_loglik(const ConditionalParams& params, const ResponseMatrix& data,
                       const TestletDesign& design, const QuadratureSpec& quad) {
    check_params(params, design);
    Engine engine(data, design, quad);
    return engine.estep(params, false, nullptr, nullptr);
}

double marginal_loglik(const FactorParams& params, const ResponseMatrix& data,
                       const TestletDesign& design, const QuadratureSpec& quad) {
    return marginal_loglik(to_conditional(params, design), data, design, quad);
}

FitResult fit_mmle(const ResponseMatrix& data, const TestletDesign& design,
                   const QuadratureSpec& quad, const EmSettings& settings) {
    const auto start = std::chrono::steady_clock::now();
    data.require_both_categories();
    Engine engine(data, design, quad);
    const std::size_t n_items = design.n_items();
    const std::size_t n_testlets = design.n_testlets();

    FitResult fit;
    fit.estimator = "mmle";
    ConditionalParams current = starting_values(data, design);
    double ll = engine.estep(current, true, nullptr, nullptr);
    fit.loglik_trace.push_back(ll);

    bool converged = false;
    int iter = 0;
    for (; iter < settings.max_iterations && !converged; ++iter) {
        // Counts for `current` are loaded; ll is its loglik.
        ConditionalParams p1 = engine.mstep(current, settings.newton_iterations);
        double ll1 = engine.estep(p1, true, nullptr, nullptr);
        ConditionalParams next = p1;
        double ll_next = ll1;

        if (settings.accelerate) {
            ConditionalParams p2 = engine.mstep(p1, settings.newton_iterations);
            double ll2 = engine.estep(p2, true, nullptr, nullptr);
            next = p2;
            ll_next = ll2;
            const auto v0 = pack(current), v1 = pack(p1), v2 = pack(p2);
            double rr = 0.0, vv = 0.0;
            for (std::size_t k = 0; k < v0.size(); ++k) {
                const double r = v1[k] - v0[k];
                const double v = v2[k] - 2.0 * v1[k] + v0[k];
                rr += r * r;
                vv += v * v;
            }
            if (vv > 0.0) {
                double alpha = -std::sqrt(rr) / std::sqrt(vv);
                bool extrapolated = false;
                for (int tries = 0; tries < 8 && alpha < -1.0; ++tries) {
                    std::vector<double> ve(v0.size());
                    for (std::size_t k = 0; k < v0.size(); ++k) {
                        const double r = v1[k] - v0[k];
                        const double v = v2[k] - 2.0 * v1[k] + v0[k];
                        ve[k] = v0[k] - 2.0 * alpha * r + alpha * alpha * v;
                    }
                    ConditionalParams pe = unpack(ve, n_items, n_testlets);
                    const double lle = engine.estep(pe, true, nullptr, nullptr);
                    if (std::isfinite(lle) && lle >= ll2) {
                        next = std::move(pe);
                        ll_next = lle;
                        extrapolated = true;
                        break;
                    }
                    alpha = 0.5 * (alpha - 1.0);
                }
                if (!extrapolated && alpha < -1.0) engine.estep(p2, true, nullptr, nullptr);
            }
        }

        const double change = max_abs_diff(pack(next), pack(current));
        const double rel_ll = std::abs(ll_next - ll) / (1.0 + std::abs(ll_next));
        current = std::move(next);
        ll = ll_next;
        fit.loglik_trace.push_back(ll);
        if (!std::isfinite(ll)) break;
        converged = change < settings.param_tol && rel_ll < settings.loglik_tol;
    }

    orient(current);
    fit.conditional = current;
    fit.factor_params = to_factor(current, design);
    fit.sigma2 = current.sigma2;
    fit.loglik = ll;
    fit.iterations = iter;
    convert_to_irt(fit, design);
    fit.converged = converged && std::isfinite(ll);
    fit.status = fit.converged ? FitStatus::converged : FitStatus::nonconverged;
    if (!fit.converged) {
        fit.message = "EM did not converge within " + std::to_string(settings.max_iterations) +
                      " iterations";
    }
    fit.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return fit;
}

PersonAbilities score_eap(const ConditionalParams& params, const ResponseMatrix& data,
                          const TestletDesign& design, const QuadratureSpec& quad) {
    check_params(params, design);
    Engine engine(data, design, quad);
    PersonAbilities out;
    engine.estep(params, false, &out.theta, &out.gamma);
    return out;
}

PersonAbilities score_eap(const FitResult& fit, const ResponseMatrix& data,
                          const TestletDesign& design, const QuadratureSpec& quad) {
    return score_eap(fit.conditional, data, design, quad);
}

}  // namespace testlet
