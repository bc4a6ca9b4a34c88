// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
//
//   acceptance [--out DIR]   study report files are written to DIR
//                            (default: acceptance_out)

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "testlet/datagen.hpp"
#include "testlet/harness.hpp"
#include "testlet/liminfo.hpp"
#include "testlet/mcmc.hpp"
#include "testlet/mmle.hpp"
#include "testlet/model.hpp"
#include "testlet/normal.hpp"
#include "testlet/random.hpp"

#include "oracles.hpp"
#include "real_data_fixture.hpp"

using namespace testlet;

namespace {

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail << "  failed: " << what << "\n";
        }
    }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string num(double v, int prec = 4) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(prec);
    os << v;
    return os.str();
}

double round2(double v) { return std::round(v * 100.0) / 100.0; }

// ------------------------------------------------------------------ C1

void conversion_fixtures(Outcome& out) {
    const auto design = fixture::real_data_design();
    double worst_ab = 0.0, worst_rescale = 0.0;
    for (int j = 0; j < 19; ++j) {
        const auto& it = fixture::kRealDataItems[j];
        const int d = design.testlet_of(j);
        const auto ip = factor_to_irt({it.wlsmv_lambda, it.wlsmv_tau}, fixture::kRealDataWlsmvVariances[d]);
        const double e_ab = std::max(std::abs(ip.a - it.wlsmv_a), std::abs(ip.b - it.wlsmv_b));
        worst_ab = std::max(worst_ab, e_ab);
        out.require(e_ab <= 0.02, "item " + std::to_string(j + 1) + " a/b off by " + num(e_ab));

        // Reference values are printed to two decimals.
        const auto lt = rescale_unstandardized(it.mlr_lambda, it.mlr_tau, fixture::kRealDataMlrVariances[d]);
        const double e_rs =
            std::max(std::abs(round2(lt.lambda) - it.wlsmv_lambda), std::abs(round2(lt.tau) - it.wlsmv_tau));
        worst_rescale = std::max(worst_rescale, e_rs);
        out.require(e_rs <= 0.02 + 1e-9, "item " + std::to_string(j + 1) + " rescale off by " + num(e_rs));
    }
    out.detail << "  19 items: max |a,b error| " << num(worst_ab) << ", max rescale error " << num(worst_rescale)
               << "\n";
}

// ------------------------------------------------------------------ C2

void metric_identity(const RecoveryReport& rep, Outcome& out) {
    double worst = 0.0;
    int checked = 0;
    for (const auto& cell : rep.cells) {
        for (std::size_t k = 0; k < cell.bias.size(); ++k) {
            if (std::isnan(cell.rmse[k])) continue;
            const double gap = std::abs(cell.rmse[k] * cell.rmse[k] -
                                        (cell.bias[k] * cell.bias[k] + cell.se[k] * cell.se[k]));
            worst = std::max(worst, gap);
            ++checked;
        }
    }
    for (const auto& c : rep.convergence) {
        out.require(c.converged + c.heywood + c.nonconverged == rep.n_replications, "convergence bookkeeping");
    }
    out.require(checked > 0, "no cells to check");
    out.require(worst <= 1e-10, "max |rmse^2 - bias^2 - se^2| = " + std::to_string(worst));
    out.detail << "  " << checked << " cells, max |rmse^2 - (bias^2 + se^2)| = " << worst << "\n";
}

// ------------------------------------------------------------------ C3

void oracle_equivalence(Outcome& out) {
    const TestletDesign design(5, {{0, 1, 2, 3, 4}});
    const auto patterns = oracle::all_patterns(5);
    Rng rng(314);
    double worst_ll = 0.0;
    for (int t = 0; t < 20; ++t) {
        ConditionalParams p;
        for (int j = 0; j < 5; ++j) {
            p.lambda.push_back(0.3 + 1.2 * rng.uniform());
            p.tau.push_back(rng.normal());
        }
        p.sigma2 = {1.5 * rng.uniform()};
        const double gap = std::abs(marginal_loglik(p, patterns, design, QuadratureSpec{61}) -
                                    oracle::dense_loglik_all_patterns(p));
        worst_ll = std::max(worst_ll, gap);
    }
    out.require(worst_ll < 1e-6, "marginal_loglik vs dense grid " + std::to_string(worst_ll));

    Rng trng(2718);
    double worst_rho = 0.0;
    for (int t = 0; t < 20; ++t) {
        BivariateTable table;
        for (auto& row : table.counts) {
            for (auto& c : row) c = 1 + std::floor(100 * trng.uniform());
        }
        const double n = table.total();
        const double tj = normal::quantile((table.counts[0][0] + table.counts[0][1]) / n);
        const double tk = normal::quantile((table.counts[0][0] + table.counts[1][0]) / n);
        const double gap = std::abs(tetrachoric(table, tj, tk).rho - oracle::tetrachoric_grid_mle(table, tj, tk));
        worst_rho = std::max(worst_rho, gap);
    }
    out.require(worst_rho < 1e-4, "tetrachoric vs grid " + std::to_string(worst_rho));
    out.detail << "  loglik max gap " << worst_ll << " (20 draws), tetrachoric max gap " << worst_rho
               << " (20 tables)\n";
}

// ------------------------------------------------------------------ C4

void recovery_ordering(const RecoveryReport& rep, int small, int large, Outcome& out) {
    for (Estimator e : rep.estimators) {
        const std::string name = to_string(e);
        for (ParamClass p : {ParamClass::a, ParamClass::b}) {
            const double r500 = rep.find(small, e, p)->rmse_summary.mean;
            const double r2000 = rep.find(large, e, p)->rmse_summary.mean;
            out.detail << "  " << name << " mean RMSE(" << to_string(p) << "): " << num(r500) << " (500) -> "
                       << num(r2000) << " (2000)\n";
            out.require(r2000 < r500, name + " RMSE(" + to_string(p) + ") does not decrease");
        }
        const double b = rep.find(large, e, ParamClass::sigma2)->bias_summary.mean;
        out.detail << "  " << name << " mean bias(sigma2) at 2000: " << num(b) << "\n";
        out.require(std::abs(b) < 0.01, name + " |mean bias(sigma2)| at 2000 = " + num(b));
    }
}

// ------------------------------------------------------------------ C5

void estimator_agreement(const RecoveryReport& rep, int condition, Outcome& out) {
    std::vector<const FitResult*> fits;
    for (const auto& r : rep.records) {
        if (r.condition == condition && r.replication == 0) fits.push_back(&r.fit);
    }
    out.require(fits.size() == 3, "expected three fits of one data set");
    for (std::size_t x = 0; x < fits.size(); ++x) {
        for (std::size_t y = x + 1; y < fits.size(); ++y) {
            for (bool is_a : {true, false}) {
                std::vector<double> u, v;
                double mad = 0.0;
                for (std::size_t j = 0; j < fits[x]->irt_params.size(); ++j) {
                    u.push_back(is_a ? fits[x]->irt_params[j].a : fits[x]->irt_params[j].b);
                    v.push_back(is_a ? fits[y]->irt_params[j].a : fits[y]->irt_params[j].b);
                    mad += std::abs(u.back() - v.back());
                }
                mad /= static_cast<double>(u.size());
                const double r = oracle::correlation(u, v);
                const std::string pair = fits[x]->estimator + "/" + fits[y]->estimator + " " + (is_a ? "a" : "b");
                out.detail << "  " << pair << ": r = " << num(r) << ", mean |diff| = " << num(mad) << "\n";
                out.require(r > 0.98 && mad < 0.05, pair);
            }
        }
    }
}

// ------------------------------------------------------------------ C6

void convergence_semantics(const RecoveryReport& rep, int hard, int large, Outcome& out) {
    for (Estimator e : rep.estimators) {
        const auto* c = rep.find_counts(hard, e);
        out.detail << "  n500_tv0.25 " << to_string(e) << ": converged " << c->converged << ", heywood "
                   << c->heywood << ", nonconverged " << c->nonconverged << "\n";
    }
    out.require(rep.find_counts(hard, Estimator::dwls)->heywood >= 1, "no dwls Heywood flag at 500/0.25");
    const auto* mc = rep.find_counts(hard, Estimator::mcmc);
    out.require(mc->heywood + mc->nonconverged == 0, "mcmc convergence failures at 500/0.25");
    for (Estimator e : rep.estimators) {
        const auto* c = rep.find_counts(large, e);
        out.detail << "  n2000_tv1 " << to_string(e) << ": converged " << c->converged << "/" << rep.n_replications
                   << "\n";
        out.require(c->converged == rep.n_replications, std::string(to_string(e)) + " failures at 2000");
    }
}

// ------------------------------------------------------------------ C7

void mcmc_calibration(Outcome& out) {
    Rng rng(17);
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<std::vector<double>> iid(4, std::vector<double>(10000));
        for (auto& c : iid) {
            for (auto& v : c) v = rng.normal();
        }
        const double r = psrf(iid);
        out.require(r >= 0.999 && r <= 1.01, "iid psrf " + std::to_string(r));
        if (trial == 0) out.detail << "  iid psrf " << num(r) << "\n";
    }

    // Toy posterior: two persons, two items of one testlet, items fixed.
    const TestletDesign toy(2, {{0, 1}});
    const ConditionalParams params{{1.0, 0.8}, {0.2, -0.3}, {0.5}};
    const ResponseMatrix y(2, 2, {1, 0, 0, 1});
    ChainSpec spec;
    spec.n_chains = 2;
    spec.min_iterations = 40000;
    spec.max_multiple = 1;
    spec.seed = 4242;
    spec.sample_items = false;
    spec.sample_variances = false;
    spec.compute_ppp = false;
    spec.keep_person_draws = true;
    spec.init = params;
    const auto result = fit_mcmc(y, toy, {}, spec);
    const double sigma = std::sqrt(params.sigma2[0]);
    for (int person = 0; person < 2; ++person) {
        const int n = 401;
        const double lo = -8.0, h = 16.0 / (n - 1);
        double mass = 0.0, m1 = 0.0, m2 = 0.0;
        for (int a = 0; a < n; ++a) {
            const double theta = lo + a * h;
            for (int b = 0; b < n; ++b) {
                const double z = lo + b * h;
                double w = normal::pdf(theta) * normal::pdf(z);
                for (int j = 0; j < 2; ++j) {
                    const double p = normal::cdf(params.lambda[j] * (theta - sigma * z) - params.tau[j]);
                    w *= y(person, j) ? p : 1.0 - p;
                }
                mass += w;
                m1 += w * theta;
                m2 += w * theta * theta;
            }
        }
        const auto mean = oracle::batch_moment(result.summary.theta_draws, person, [](double t) { return t; });
        const auto sq = oracle::batch_moment(result.summary.theta_draws, person, [](double t) { return t * t; });
        const double z1 = std::abs(mean.mean - m1 / mass) / mean.se;
        const double z2 = std::abs(sq.mean - m2 / mass) / sq.se;
        out.detail << "  toy person " << person + 1 << ": |E theta error| = " << num(z1, 2) << " SE, |E theta^2 error| = "
                   << num(z2, 2) << " SE\n";
        out.require(z1 < 3.0 && z2 < 3.0, "toy posterior moments person " + std::to_string(person + 1));
    }

    const auto design = TestletDesign::blocks(2, 4);
    const ConditionalParams truth{{1.0, 0.8, 1.2, 0.6, 0.9, 1.1, 0.7, 1.0},
                                  {-0.5, 0.0, 0.4, -0.2, 0.3, -0.7, 0.1, 0.6},
                                  {0.5, 0.8}};
    for (std::uint64_t seed : {21u, 22u, 23u}) {
        const auto data = simulate_conditional(truth, design, 500, seed);
        ChainSpec ppp_spec;
        ppp_spec.min_iterations = 1000;
        ppp_spec.seed = seed;
        const auto r = fit_mcmc(data, design, {}, ppp_spec);
        const double ppp = r.fit.ppp.value_or(-1.0);
        out.detail << "  ppp (seed " << seed << ") = " << num(ppp, 3) << "\n";
        out.require(ppp >= 0.2 && ppp <= 0.8, "ppp " + num(ppp, 3));
    }
}

}  // namespace

int main(int argc, char** argv) {
    std::filesystem::path out_dir = "acceptance_out";
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--out" && i + 1 < argc) {
            out_dir = argv[++i];
        } else {
            std::cerr << "usage: acceptance [--out DIR]\n";
            return 2;
        }
    }

    struct Line {
        const char* title;
        Outcome outcome;
        double secs = 0.0;
    };
    Line lines[7] = {{"conversion fixtures"}, {"metric identity"},     {"oracle equivalence"},
                     {"recovery ordering"},   {"estimator agreement"}, {"convergence semantics"},
                     {"MCMC calibration"}};
    auto timed = [](Line& line, const std::function<void(Outcome&)>& body) {
        const auto t0 = std::chrono::steady_clock::now();
        body(line.outcome);
        line.secs += seconds_since(t0);
    };

    timed(lines[0], conversion_fixtures);
    timed(lines[2], oracle_equivalence);
    timed(lines[6], mcmc_calibration);

    // One desk study feeds C2, C4, C5 and C6.
    StudyConfig cfg = StudyConfig::defaults();
    cfg.grid = {{500, 1.0}, {2000, 1.0}, {500, 0.25}};
    cfg.n_replications = 20;
    cfg.estimators = {Estimator::mmle, Estimator::mcmc, Estimator::dwls};
    cfg.seed = 20190101;
    cfg.runs_dir = out_dir / "runs";
    const auto t0 = std::chrono::steady_clock::now();
    const auto rep = run_study(cfg, [](const FitRecord& r, int done, int total) {
        if (done % 10 == 0 || done == total) {
            std::cerr << "study: " << done << "/" << total << " fits (last: " << to_string(r.estimator) << " "
                      << to_string(r.fit.status) << ")\n";
        }
    });
    const double study_secs = seconds_since(t0);
    rep.write(out_dir);
    double mcmc_secs = 0.0;
    for (const auto& r : rep.records) {
        if (r.estimator == Estimator::mcmc) mcmc_secs += r.fit.wall_time_s;
    }

    timed(lines[1], [&](Outcome& o) { metric_identity(rep, o); });
    lines[3].secs = study_secs;
    timed(lines[3], [&](Outcome& o) { recovery_ordering(rep, 0, 1, o); });
    timed(lines[4], [&](Outcome& o) { estimator_agreement(rep, 1, o); });
    timed(lines[5], [&](Outcome& o) { convergence_semantics(rep, 2, 1, o); });

    std::cout << "study: conditions n500_tv1, n2000_tv1, n500_tv0.25; 20 replications; mmle, mcmc (4 x 4000), "
                 "dwls; seed "
              << cfg.seed << "; " << num(study_secs, 0) << " s (" << num(mcmc_secs, 0)
              << " s in mcmc); report in " << out_dir.string() << "\n";
    bool all_pass = true;
    for (int k = 0; k < 7; ++k) {
        const auto& l = lines[k];
        all_pass = all_pass && l.outcome.pass;
        std::cout << "C" << k + 1 << " " << (l.outcome.pass ? "PASS" : "FAIL") << "  " << l.title << " ("
                  << num(l.secs, 1) << " s)\n"
                  << l.outcome.detail.str();
    }
    std::cout << (all_pass ? "ALL PASS" : "SOME CRITERIA FAILED") << "\n";
    return all_pass ? 0 : 1;
}
