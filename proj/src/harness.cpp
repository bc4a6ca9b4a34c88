#include "testlet/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>
#include <tuple>

#include "testlet/datagen.hpp"
#include "testlet/errors.hpp"
#include "testlet/parallel.hpp"
#include "testlet/random.hpp"

namespace testlet {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void require_nonempty(std::span<const double> v, const char* what) {
    if (v.empty()) throw InvalidArgument(std::string(what) + ": no estimates");
}

double mean_of(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

Spread spread(const std::vector<double>& v) {
    std::vector<double> finite;
    for (double x : v) {
        if (std::isfinite(x)) finite.push_back(x);
    }
    if (finite.empty()) return {kNaN, kNaN};
    const double m = mean_of(finite);
    double ss = 0.0;
    for (double x : finite) ss += (x - m) * (x - m);
    return {m, std::sqrt(ss / static_cast<double>(finite.size()))};
}

// Shortest round-trip representation, "NA" for non-finite values.
std::string fmt(double v) {
    if (!std::isfinite(v)) return "NA";
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

io::Json number(double v) { return std::isfinite(v) ? io::Json(v) : io::Json(nullptr); }

std::vector<double> truth_values(const StudyConfig& cfg, const Condition& cond, ParamClass p) {
    std::vector<double> out;
    switch (p) {
        case ParamClass::a:
            for (const auto& ip : cfg.items) out.push_back(ip.a);
            break;
        case ParamClass::b:
            for (const auto& ip : cfg.items) out.push_back(ip.b);
            break;
        case ParamClass::sigma2:
            out.assign(cfg.design.n_testlets(), cond.testlet_variance);
            break;
    }
    return out;
}

double estimate_of(const FitResult& fit, ParamClass p, std::size_t k) {
    switch (p) {
        case ParamClass::a: return k < fit.irt_params.size() ? fit.irt_params[k].a : kNaN;
        case ParamClass::b: return k < fit.irt_params.size() ? fit.irt_params[k].b : kNaN;
        case ParamClass::sigma2: return k < fit.sigma2.size() ? fit.sigma2[k] : kNaN;
    }
    return kNaN;
}

}  // namespace

double bias(std::span<const double> estimates, double truth) {
    require_nonempty(estimates, "bias");
    return mean_of(estimates) - truth;
}

double se(std::span<const double> estimates) {
    if (estimates.size() < 2) throw InvalidArgument("se: need at least 2 estimates");
    const double m = mean_of(estimates);
    double ss = 0.0;
    for (double x : estimates) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(estimates.size()));
}

double rmse(std::span<const double> estimates, double truth) {
    require_nonempty(estimates, "rmse");
    double ss = 0.0;
    for (double x : estimates) ss += (x - truth) * (x - truth);
    return std::sqrt(ss / static_cast<double>(estimates.size()));
}

const char* to_string(Estimator e) {
    switch (e) {
        case Estimator::mmle: return "mmle";
        case Estimator::mcmc: return "mcmc";
        case Estimator::dwls: return "dwls";
    }
    return "unknown";
}

Estimator parse_estimator(const std::string& name) {
    if (name == "mmle") return Estimator::mmle;
    if (name == "mcmc") return Estimator::mcmc;
    if (name == "dwls") return Estimator::dwls;
    throw InvalidArgument("unknown estimator '" + name + "' (expected mmle, mcmc or dwls)");
}

const char* to_string(ParamClass p) {
    switch (p) {
        case ParamClass::a: return "a";
        case ParamClass::b: return "b";
        case ParamClass::sigma2: return "sigma2";
    }
    return "unknown";
}

std::string Condition::label() const {
    std::ostringstream os;
    os << "n" << n_persons << "_tv" << testlet_variance;
    return os.str();
}

StudyConfig StudyConfig::defaults() {
    StudyConfig cfg;
    for (int n : {500, 1000, 2000}) {
        for (double tv : {0.25, 0.5, 1.0}) cfg.grid.push_back({n, tv});
    }
    cfg.items = table1_fixture();
    cfg.chains.compute_ppp = false;
    return cfg;
}

void StudyConfig::validate() const {
    if (grid.empty()) throw InvalidArgument("grid: must contain at least one condition");
    for (const auto& c : grid) {
        if (c.n_persons < 2) throw InvalidArgument("grid: n_persons must be >= 2");
        if (!(c.testlet_variance >= 0.0) || !std::isfinite(c.testlet_variance)) {
            throw InvalidArgument("grid: testlet_variance must be finite and >= 0");
        }
    }
    if (n_replications < 2) throw InvalidArgument("n_replications: must be >= 2");
    if (static_cast<int>(items.size()) != design.n_items()) {
        throw InvalidArgument("items: " + std::to_string(items.size()) + " items but design has " +
                              std::to_string(design.n_items()));
    }
    for (std::size_t i = 0; i < estimators.size(); ++i) {
        for (std::size_t k = i + 1; k < estimators.size(); ++k) {
            if (estimators[i] == estimators[k]) throw InvalidArgument("estimators: duplicate entry");
        }
    }
    if (quadrature.n_nodes < 2) throw InvalidArgument("quadrature_nodes: must be >= 2");
    if (threads < 0) throw InvalidArgument("threads: must be >= 0");
    chains.validate();
}

StudyConfig study_config_from_json(const io::Json& j) {
    StudyConfig cfg = StudyConfig::defaults();
    try {
        if (!j.is_object()) throw InvalidArgument("study config: expected a JSON object");
        if (j.contains("grid")) {
            cfg.grid.clear();
            for (const auto& c : j.at("grid")) {
                cfg.grid.push_back({c.at("n_persons").get<int>(), c.at("testlet_variance").get<double>()});
            }
        } else if (j.contains("sample_sizes") || j.contains("testlet_variances")) {
            const auto sizes = j.value("sample_sizes", std::vector<int>{500, 1000, 2000});
            const auto tvs = j.value("testlet_variances", std::vector<double>{0.25, 0.5, 1.0});
            cfg.grid.clear();
            for (int n : sizes) {
                for (double tv : tvs) cfg.grid.push_back({n, tv});
            }
        }
        cfg.n_replications = j.value("n_replications", cfg.n_replications);
        if (j.contains("estimators")) {
            cfg.estimators.clear();
            for (const auto& e : j.at("estimators")) cfg.estimators.push_back(parse_estimator(e.get<std::string>()));
        }
        cfg.seed = j.value("seed", cfg.seed);
        if (j.contains("design")) cfg.design = io::design_from_json(j.at("design"));
        if (j.contains("items")) {
            const auto& items = j.at("items");
            if (items.is_string()) {
                if (items.get<std::string>() != "table1") {
                    throw InvalidArgument("items: expected \"table1\" or a list of {a, b}");
                }
                cfg.items = table1_fixture();
            } else {
                cfg.items.clear();
                for (const auto& it : items) cfg.items.push_back({it.at("a").get<double>(), it.at("b").get<double>()});
            }
        }
        cfg.quadrature.n_nodes = j.value("quadrature_nodes", cfg.quadrature.n_nodes);
        cfg.threads = j.value("threads", cfg.threads);
        if (j.contains("persons")) {
            const auto mode = j.at("persons").get<std::string>();
            if (mode == "fixed") cfg.persons = PersonsMode::fixed;
            else if (mode == "fresh") cfg.persons = PersonsMode::fresh;
            else throw InvalidArgument("persons: expected \"fixed\" or \"fresh\"");
        }
        if (j.contains("mcmc")) {
            const auto& m = j.at("mcmc");
            cfg.chains.n_chains = m.value("chains", cfg.chains.n_chains);
            cfg.chains.min_iterations = m.value("min_iterations", cfg.chains.min_iterations);
            cfg.chains.max_multiple = m.value("max_multiple", cfg.chains.max_multiple);
            cfg.chains.compute_ppp = m.value("ppp", cfg.chains.compute_ppp);
        }
        if (j.contains("runs_dir")) cfg.runs_dir = j.at("runs_dir").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("study config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

std::uint64_t replication_seed(std::uint64_t base, int condition, int replication) {
    return derive_seed(base, {static_cast<std::uint64_t>(condition) + 1,
                              static_cast<std::uint64_t>(replication) + 1});
}

ResponseMatrix replication_data(const StudyConfig& cfg, int condition, int replication) {
    const Condition& cond = cfg.grid.at(condition);
    GenConfig gen;
    gen.n_persons = cond.n_persons;
    gen.design = cfg.design;
    gen.sigma2.assign(cfg.design.n_testlets(), cond.testlet_variance);
    gen.items = cfg.items;
    gen.seed = replication_seed(cfg.seed, condition, replication);
    if (cfg.persons == PersonsMode::fresh) return generate_responses(gen, generate_persons(gen), cfg.items);
    GenConfig person_gen = gen;
    person_gen.seed = derive_seed(cfg.seed, {0x9e75, static_cast<std::uint64_t>(cond.n_persons)});
    return generate_responses(gen, generate_persons(person_gen), cfg.items);
}

FitResult fit_one(Estimator e, const ResponseMatrix& data, const StudyConfig& cfg, std::uint64_t seed) {
    const auto start = std::chrono::steady_clock::now();
    try {
        switch (e) {
            case Estimator::mmle: return fit_mmle(data, cfg.design, cfg.quadrature, cfg.em);
            case Estimator::mcmc: {
                ChainSpec chains = cfg.chains;
                chains.seed = derive_seed(seed, {0x3c3c});
                chains.threads = 1;
                return fit_mcmc(data, cfg.design, cfg.priors, chains).fit;
            }
            case Estimator::dwls: {
                DwlsSettings settings = cfg.dwls;
                settings.seed = derive_seed(seed, {0xd15});
                return fit_dwls(compute_sample_stats(data), cfg.design, settings);
            }
        }
    } catch (const Error& err) {
        FitResult failed;
        failed.estimator = to_string(e);
        failed.status = FitStatus::nonconverged;
        failed.converged = false;
        failed.loglik = kNaN;
        failed.message = err.what();
        failed.wall_time_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        return failed;
    }
    throw InvalidArgument("fit_one: unknown estimator");
}

RecoveryReport summarize(const StudyConfig& cfg, std::vector<FitRecord> records) {
    RecoveryReport rep;
    rep.grid = cfg.grid;
    rep.n_replications = cfg.n_replications;
    rep.estimators = cfg.estimators;
    rep.seed = cfg.seed;
    std::sort(records.begin(), records.end(), [](const FitRecord& x, const FitRecord& y) {
        return std::tuple(x.condition, x.replication, static_cast<int>(x.estimator)) <
               std::tuple(y.condition, y.replication, static_cast<int>(y.estimator));
    });
    rep.records = std::move(records);

    for (int c = 0; c < static_cast<int>(cfg.grid.size()); ++c) {
        for (Estimator e : cfg.estimators) {
            ConvergenceCounts counts;
            counts.condition = c;
            counts.estimator = e;
            std::vector<const FitResult*> used;
            for (const auto& r : rep.records) {
                if (r.condition != c || r.estimator != e) continue;
                switch (r.fit.status) {
                    case FitStatus::converged: ++counts.converged; break;
                    case FitStatus::heywood: ++counts.heywood; break;
                    case FitStatus::nonconverged: ++counts.nonconverged; break;
                }
                if (r.fit.status == FitStatus::converged) used.push_back(&r.fit);
            }
            rep.convergence.push_back(counts);

            for (ParamClass p : {ParamClass::a, ParamClass::b, ParamClass::sigma2}) {
                CellMetrics cell;
                cell.condition = c;
                cell.estimator = e;
                cell.parameter = p;
                const auto truth = truth_values(cfg, cfg.grid[c], p);
                for (std::size_t k = 0; k < truth.size(); ++k) {
                    std::vector<double> est;
                    for (const FitResult* f : used) {
                        const double v = estimate_of(*f, p, k);
                        if (std::isfinite(v)) est.push_back(v);
                    }
                    cell.n_used.push_back(static_cast<int>(est.size()));
                    if (est.size() < 2) {
                        cell.bias.push_back(kNaN);
                        cell.se.push_back(kNaN);
                        cell.rmse.push_back(kNaN);
                        continue;
                    }
                    cell.bias.push_back(bias(est, truth[k]));
                    cell.se.push_back(se(est));
                    cell.rmse.push_back(rmse(est, truth[k]));
                }
                cell.bias_summary = spread(cell.bias);
                cell.se_summary = spread(cell.se);
                cell.rmse_summary = spread(cell.rmse);
                rep.cells.push_back(std::move(cell));
            }
        }
    }
    return rep;
}

RecoveryReport run_study(const StudyConfig& cfg, const ProgressFn& progress) {
    cfg.validate();
    struct Job {
        int condition, replication;
        Estimator estimator;
    };
    // Longest fits first so the pool drains evenly.
    std::vector<Job> jobs;
    for (Estimator e : {Estimator::mcmc, Estimator::mmle, Estimator::dwls}) {
        if (std::find(cfg.estimators.begin(), cfg.estimators.end(), e) == cfg.estimators.end()) continue;
        for (int c = 0; c < static_cast<int>(cfg.grid.size()); ++c) {
            for (int r = 0; r < cfg.n_replications; ++r) jobs.push_back({c, r, e});
        }
    }
    std::vector<FitRecord> records(jobs.size());
    std::mutex mu;
    int done = 0;
    const int workers = cfg.threads > 0 ? std::min(cfg.threads, worker_limit()) : worker_limit();

    parallel_for(static_cast<int>(jobs.size()), workers, [&](int idx) {
        const Job& job = jobs[idx];
        const Condition& cond = cfg.grid[job.condition];
        const auto data = replication_data(cfg, job.condition, job.replication);
        const auto seed = replication_seed(cfg.seed, job.condition, job.replication);

        FitRecord rec{job.condition, job.replication, job.estimator,
                      fit_one(job.estimator, data, cfg, seed)};
        if (cfg.runs_dir) {
            io::write_json(*cfg.runs_dir / cond.label() / std::to_string(job.replication + 1) /
                               (std::string(to_string(job.estimator)) + ".json"),
                           io::fit_to_json(rec.fit));
        }
        records[idx] = std::move(rec);
        if (progress) {
            std::lock_guard lock(mu);
            progress(records[idx], ++done, static_cast<int>(jobs.size()));
        }
    });
    return summarize(cfg, std::move(records));
}

const CellMetrics* RecoveryReport::find(int condition, Estimator e, ParamClass p) const {
    for (const auto& c : cells) {
        if (c.condition == condition && c.estimator == e && c.parameter == p) return &c;
    }
    return nullptr;
}

const ConvergenceCounts* RecoveryReport::find_counts(int condition, Estimator e) const {
    for (const auto& c : convergence) {
        if (c.condition == condition && c.estimator == e) return &c;
    }
    return nullptr;
}

std::string RecoveryReport::report_csv() const {
    std::ostringstream os;
    os << "condition,estimator,parameter,item,bias,se,rmse\n";
    for (const auto& cell : cells) {
        const std::string prefix = grid[cell.condition].label() + "," + to_string(cell.estimator) + "," +
                                   to_string(cell.parameter) + ",";
        for (std::size_t k = 0; k < cell.bias.size(); ++k) {
            os << prefix << k + 1 << "," << fmt(cell.bias[k]) << "," << fmt(cell.se[k]) << ","
               << fmt(cell.rmse[k]) << "\n";
        }
        os << prefix << "mean," << fmt(cell.bias_summary.mean) << "," << fmt(cell.se_summary.mean) << ","
           << fmt(cell.rmse_summary.mean) << "\n";
        os << prefix << "sd," << fmt(cell.bias_summary.sd) << "," << fmt(cell.se_summary.sd) << ","
           << fmt(cell.rmse_summary.sd) << "\n";
    }
    return os.str();
}

std::string RecoveryReport::convergence_csv() const {
    std::ostringstream os;
    os << "condition,estimator,converged,heywood,nonconverged,replications\n";
    for (const auto& c : convergence) {
        os << grid[c.condition].label() << "," << to_string(c.estimator) << "," << c.converged << ","
           << c.heywood << "," << c.nonconverged << "," << n_replications << "\n";
    }
    return os.str();
}

io::Json RecoveryReport::summary_json() const {
    io::Json conditions = io::Json::array();
    for (int c = 0; c < static_cast<int>(grid.size()); ++c) {
        io::Json by_est = io::Json::object();
        for (Estimator e : estimators) {
            io::Json entry = io::Json::object();
            if (const auto* counts = find_counts(c, e)) {
                entry["converged"] = counts->converged;
                entry["heywood"] = counts->heywood;
                entry["nonconverged"] = counts->nonconverged;
            }
            for (ParamClass p : {ParamClass::a, ParamClass::b, ParamClass::sigma2}) {
                const auto* cell = find(c, e, p);
                if (!cell) continue;
                entry[to_string(p)] = {
                    {"bias", {{"mean", number(cell->bias_summary.mean)}, {"sd", number(cell->bias_summary.sd)}}},
                    {"se", {{"mean", number(cell->se_summary.mean)}, {"sd", number(cell->se_summary.sd)}}},
                    {"rmse", {{"mean", number(cell->rmse_summary.mean)}, {"sd", number(cell->rmse_summary.sd)}}}};
            }
            by_est[to_string(e)] = std::move(entry);
        }
        conditions.push_back({{"label", grid[c].label()},
                              {"n_persons", grid[c].n_persons},
                              {"testlet_variance", grid[c].testlet_variance},
                              {"estimators", std::move(by_est)}});
    }
    std::vector<std::string> names;
    for (Estimator e : estimators) names.emplace_back(to_string(e));
    return {{"seed", seed}, {"n_replications", n_replications}, {"estimators", names},
            {"n_fits", records.size()}, {"conditions", std::move(conditions)}};
}

void RecoveryReport::write(const std::filesystem::path& dir) const {
    io::write_text(dir / "report.csv", report_csv());
    io::write_text(dir / "convergence.csv", convergence_csv());
    io::write_json(dir / "summary.json", summary_json());
}

}  // namespace testlet
