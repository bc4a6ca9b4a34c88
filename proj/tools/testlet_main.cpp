// testlet: simulate, estimate, convert, study, diagnose.
//
// Exit codes: 0 success, 2 usage, 3 I/O, 4 numerical non-convergence.

#include <CLI11.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "testlet/datagen.hpp"
#include "testlet/errors.hpp"
#include "testlet/harness.hpp"
#include "testlet/io.hpp"
#include "testlet/liminfo.hpp"
#include "testlet/mcmc.hpp"
#include "testlet/mmle.hpp"
#include "testlet/model.hpp"

namespace fs = std::filesystem;
using namespace testlet;

namespace {

enum Exit { kOk = 0, kUsage = 2, kIo = 3, kNumerical = 4 };

struct Global {
    int verbosity = 1;  // 0 quiet, 1 normal, 2 verbose
};

void log(const Global& g, int level, const std::string& msg) {
    if (g.verbosity >= level) std::cerr << msg << "\n";
}

std::uint64_t effective_seed(const std::optional<std::uint64_t>& seed, const Global& g) {
    std::uint64_t s = 0;
    if (seed) {
        s = *seed;
    } else {
        std::random_device rd;
        s = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
    }
    log(g, 1, "seed: " + std::to_string(s));
    return s;
}

void require_file(const fs::path& p, const char* what) {
    if (!fs::is_regular_file(p)) throw IoError(std::string(what) + ": no such file '" + p.string() + "'");
}

// A design file, or any document carrying a "design" member (e.g. truth.json).
TestletDesign load_design(const fs::path& p) {
    require_file(p, "--design");
    const auto j = io::read_json(p);
    if (j.is_object() && j.contains("design")) return io::design_from_json(j.at("design"));
    return io::design_from_json(j);
}

std::vector<double> get_doubles(const io::Json& j, const char* key) {
    std::vector<double> out;
    for (const auto& x : j.at(key)) out.push_back(x.is_null() ? std::nan("") : x.get<double>());
    return out;
}

std::string fixed(double v, int prec = 3) {
    if (!std::isfinite(v)) return "NA";
    std::ostringstream os;
    os << std::fixed << std::setprecision(prec) << v;
    return os.str();
}

// ---------------------------------------------------------------- simulate

struct SimulateOpts {
    int n = 500;
    double tv = 0.25;
    std::vector<double> sigma2;
    std::string design_path;
    std::string items_path;
    std::optional<std::uint64_t> seed;
    std::string out = ".";
};

int cmd_simulate(const SimulateOpts& o, const Global& g) {
    GenConfig cfg;
    cfg.n_persons = o.n;
    cfg.design = o.design_path.empty() ? TestletDesign::blocks(6, 5) : load_design(o.design_path);
    if (o.items_path.empty()) {
        if (cfg.design.n_items() != 30) throw InvalidArgument("--items is required unless the design has 30 items");
        cfg.items = table1_fixture();
    } else {
        require_file(o.items_path, "--items");
        const auto j = io::read_json(o.items_path);
        std::vector<ItemIrtParams> items;
        for (const auto& it : (j.is_object() ? j.at("items") : j)) items.push_back({it.at("a"), it.at("b")});
        cfg.items = items;
    }
    cfg.sigma2 = o.sigma2.empty() ? std::vector<double>(cfg.design.n_testlets(), o.tv) : o.sigma2;
    cfg.seed = effective_seed(o.seed, g);
    cfg.validate();

    const auto items = cfg.resolve_items();
    const auto data = generate_responses(cfg, generate_persons(cfg), items);
    const fs::path out(o.out);
    io::write_responses(out / "responses.csv", data);
    io::write_json(out / "truth.json", io::truth_to_json({items, cfg.sigma2, cfg.design}));
    log(g, 1, "wrote " + (out / "responses.csv").string() + " (" + std::to_string(data.n_persons()) + " x " +
                  std::to_string(data.n_items()) + ") and " + (out / "truth.json").string());
    return kOk;
}

// ---------------------------------------------------------------- estimate

struct EstimateOpts {
    std::string data;
    std::string design;
    std::vector<std::string> estimators{"mmle"};
    std::optional<std::uint64_t> seed;
    std::string out;
    int nodes = 21;
    int chains = 4;
    int iterations = 4000;
    int max_multiple = 10;
    bool no_ppp = false;
    bool uls = false;
    int threads = 0;
};

std::vector<Estimator> expand_estimators(const std::vector<std::string>& names) {
    std::vector<Estimator> out;
    for (const auto& n : names) {
        if (n == "all") {
            out = {Estimator::mmle, Estimator::mcmc, Estimator::dwls};
            continue;
        }
        const auto e = parse_estimator(n);
        if (std::find(out.begin(), out.end(), e) == out.end()) out.push_back(e);
    }
    return out;
}

std::string side_by_side(const std::vector<FitResult>& fits) {
    std::ostringstream os;
    os << std::setw(6) << "item";
    for (const auto& f : fits) {
        for (const char* col : {"lambda", "tau", "a", "b"}) os << std::setw(9) << (f.estimator + ":" + col).substr(0, 8);
    }
    os << "\n";
    const std::size_t n_items = fits.front().irt_params.size();
    for (std::size_t j = 0; j < n_items; ++j) {
        os << std::setw(6) << j + 1;
        for (const auto& f : fits) {
            const bool ok = j < f.irt_params.size() && j < f.factor_params.lambda.size();
            os << std::setw(9) << (ok ? fixed(f.factor_params.lambda[j], 2) : "NA") << std::setw(9)
               << (ok ? fixed(f.factor_params.tau[j], 2) : "NA") << std::setw(9)
               << (ok ? fixed(f.irt_params[j].a, 2) : "NA") << std::setw(9)
               << (ok ? fixed(f.irt_params[j].b, 2) : "NA");
        }
        os << "\n";
    }
    os << std::setw(6) << "var";
    for (const auto& f : fits) {
        std::string s;
        for (std::size_t d = 0; d < f.sigma2.size(); ++d) s += (d ? " " : "") + fixed(f.sigma2[d]);
        os << "  " << f.estimator << ": " << s;
    }
    os << "\n";
    return os.str();
}

// Like the harness's fit_one, but chains may run in parallel and degenerate
// data is a usage error rather than a failed fit.
FitResult run_estimator(Estimator e, const ResponseMatrix& data, const StudyConfig& cfg, std::uint64_t seed,
                        int threads) {
    data.require_both_categories();
    if (e != Estimator::mcmc) return fit_one(e, data, cfg, seed);
    ChainSpec chains = cfg.chains;
    chains.seed = derive_seed(seed, {0x3c3c});
    chains.threads = threads;
    try {
        return fit_mcmc(data, cfg.design, cfg.priors, chains).fit;
    } catch (const ChainDivergence& err) {
        FitResult failed;
        failed.estimator = "mcmc";
        failed.loglik = std::nan("");
        failed.message = err.what();
        return failed;
    }
}

int cmd_estimate(const EstimateOpts& o, const Global& g) {
    require_file(o.data, "--data");
    const auto design = load_design(o.design);
    const auto estimators = expand_estimators(o.estimators);
    const auto data = io::read_responses(o.data);
    if (data.n_items() != design.n_items()) {
        throw InvalidArgument("--design: design has " + std::to_string(design.n_items()) + " items but data has " +
                              std::to_string(data.n_items()));
    }
    StudyConfig cfg;
    cfg.design = design;
    cfg.quadrature.n_nodes = o.nodes;
    cfg.chains.n_chains = o.chains;
    cfg.chains.min_iterations = o.iterations;
    cfg.chains.max_multiple = o.max_multiple;
    cfg.chains.compute_ppp = !o.no_ppp;
    cfg.dwls.weights = o.uls ? WeightMode::uls : WeightMode::dwls;
    cfg.chains.validate();
    const std::uint64_t seed = effective_seed(o.seed, g);

    std::vector<FitResult> fits;
    bool all_converged = true;
    for (Estimator e : estimators) {
        log(g, 2, std::string("fitting ") + to_string(e) + " ...");
        FitResult fit = run_estimator(e, data, cfg, seed, o.threads);
        log(g, 1, fit.estimator + ": " + to_string(fit.status) + " (" + fixed(fit.wall_time_s, 2) + " s" +
                      (fit.message.empty() ? "" : ", " + fit.message) + ")");
        all_converged = all_converged && fit.converged;
        fits.push_back(std::move(fit));
    }

    io::Json doc;
    if (fits.size() == 1) {
        doc = io::fit_to_json(fits.front());
    } else {
        doc = io::Json::object();
        for (const auto& f : fits) doc[f.estimator] = io::fit_to_json(f);
    }
    if (o.out.empty()) {
        std::cout << doc.dump(2) << "\n";
    } else {
        io::write_json(o.out, doc);
    }
    if (fits.size() > 1) log(g, 1, side_by_side(fits));
    return all_converged ? kOk : kNumerical;
}

// ---------------------------------------------------------------- convert

struct ConvertOpts {
    std::string params;
    std::string design;
    std::string direction = "auto";
    bool rescale = false;
    std::string out;
};

int cmd_convert(const ConvertOpts& o, const Global&) {
    require_file(o.params, "--params");
    const auto j = io::read_json(o.params);
    if (!j.is_object()) throw InvalidArgument("--params: expected a JSON object");
    TestletDesign design;
    if (!o.design.empty()) {
        design = load_design(o.design);
    } else if (j.contains("design")) {
        design = io::design_from_json(j.at("design"));
    } else {
        throw InvalidArgument("--design is required when the parameter file has no \"design\" member");
    }
    const auto sigma2 = get_doubles(j, "sigma2");
    if (static_cast<int>(sigma2.size()) != design.n_testlets()) {
        throw InvalidArgument("sigma2: expected " + std::to_string(design.n_testlets()) + " values");
    }

    std::string direction = o.direction;
    if (direction == "auto") direction = j.contains("lambda") ? "to-irt" : "to-factor";
    const auto assignment = design.assignment();
    io::Json out{{"sigma2", sigma2}, {"design", std::vector<int>(assignment.begin(), assignment.end())}};

    if (direction == "to-irt") {
        FactorParams fp{get_doubles(j, "lambda"), get_doubles(j, "tau"), sigma2};
        if (static_cast<int>(fp.lambda.size()) != design.n_items() || fp.tau.size() != fp.lambda.size()) {
            throw InvalidArgument("lambda/tau: expected " + std::to_string(design.n_items()) + " values");
        }
        if (o.rescale) fp = to_factor(ConditionalParams{fp.lambda, fp.tau, sigma2}, design);
        std::vector<double> a, b;
        for (const auto& ip : factor_to_irt(fp, design)) {
            a.push_back(ip.a);
            b.push_back(ip.b);
        }
        if (o.rescale) {
            out["lambda"] = fp.lambda;
            out["tau"] = fp.tau;
        }
        out["a"] = a;
        out["b"] = b;
    } else if (direction == "to-factor") {
        if (o.rescale) throw InvalidArgument("--rescale applies to factor-metric input only");
        const auto a = get_doubles(j, "a");
        const auto b = get_doubles(j, "b");
        if (static_cast<int>(a.size()) != design.n_items() || a.size() != b.size()) {
            throw InvalidArgument("a/b: expected " + std::to_string(design.n_items()) + " values");
        }
        std::vector<ItemIrtParams> items;
        for (std::size_t k = 0; k < a.size(); ++k) items.push_back({a[k], b[k]});
        const auto fp = irt_to_factor(items, sigma2, design);
        out["lambda"] = fp.lambda;
        out["tau"] = fp.tau;
    } else {
        throw InvalidArgument("--direction: expected auto, to-irt or to-factor");
    }
    if (o.out.empty()) {
        std::cout << out.dump(2) << "\n";
    } else {
        io::write_json(o.out, out);
    }
    return kOk;
}

// ---------------------------------------------------------------- study

struct StudyOpts {
    std::string config;
    std::optional<int> reps;
    std::vector<std::string> estimators;
    std::optional<std::uint64_t> seed;
    std::string out = "study_out";
    bool save_runs = false;
    bool paper_scale = false;
    std::optional<int> threads;
};

int cmd_study(const StudyOpts& o, const Global& g) {
    require_file(o.config, "--config");
    auto cfg = study_config_from_json(io::read_json(o.config));
    if (o.reps) cfg.n_replications = *o.reps;
    if (!o.estimators.empty()) cfg.estimators = expand_estimators(o.estimators);
    if (o.threads) cfg.threads = *o.threads;
    if (o.paper_scale) cfg.chains.min_iterations = 20000;
    cfg.seed = effective_seed(o.seed ? o.seed : std::optional<std::uint64_t>(cfg.seed), g);
    const fs::path out(o.out);
    if (o.save_runs) cfg.runs_dir = out / "runs";
    cfg.validate();

    const auto report = run_study(cfg, [&](const FitRecord& r, int done, int total) {
        log(g, 2, "[" + std::to_string(done) + "/" + std::to_string(total) + "] " +
                      cfg.grid[r.condition].label() + " rep " + std::to_string(r.replication + 1) + " " +
                      to_string(r.estimator) + ": " + to_string(r.fit.status));
    });
    report.write(out);
    log(g, 1, "wrote " + (out / "report.csv").string() + ", convergence.csv, summary.json");
    if (g.verbosity >= 1) std::cerr << report.convergence_csv();
    return kOk;
}

// ---------------------------------------------------------------- diagnose

int cmd_diagnose(const std::string& path, const Global& g) {
    const fs::path root(path);
    if (!fs::exists(root)) throw IoError("diagnose: no such path '" + path + "'");
    std::vector<fs::path> files;
    if (fs::is_regular_file(root)) {
        files.push_back(root);
    } else {
        for (const auto& entry : fs::recursive_directory_iterator(root)) {
            if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());

    std::map<std::string, std::array<int, 3>> counts;  // estimator -> converged, heywood, nonconverged
    std::vector<std::string> failures;
    double worst_psrf = 0.0;
    int n_fits = 0;
    for (const auto& f : files) {
        const auto j = io::read_json(f);
        if (!j.is_object() || !j.contains("estimator")) continue;
        const auto fit = io::fit_from_json(j);
        ++n_fits;
        const std::string where = fs::is_regular_file(root) ? f.string() : fs::relative(f, root).string();
        counts[fit.estimator][static_cast<int>(fit.status)]++;
        if (fit.psrf_max && std::isfinite(*fit.psrf_max)) worst_psrf = std::max(worst_psrf, *fit.psrf_max);
        std::string line = where + ": " + to_string(fit.status);
        if (fit.psrf_max) line += ", psrf_max " + fixed(*fit.psrf_max);
        if (fit.heywood && *fit.heywood) line += ", heywood";
        if (!fit.message.empty()) line += ", " + fit.message;
        if (fit.status != FitStatus::converged) failures.push_back(line);
        log(g, 2, line);
    }
    if (n_fits == 0) throw IoError("diagnose: no fit results under '" + path + "'");

    std::cout << "estimator,converged,heywood,nonconverged\n";
    for (const auto& [est, c] : counts) {
        std::cout << est << "," << c[0] << "," << c[2] << "," << c[1] << "\n";
    }
    if (worst_psrf > 0.0) std::cout << "max psrf: " << fixed(worst_psrf) << "\n";
    for (const auto& f : failures) std::cout << "not converged: " << f << "\n";
    return failures.empty() ? kOk : kNumerical;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Estimation and recovery studies for the 2PL testlet model"};
    app.require_subcommand(1);
    Global g;
    bool quiet = false, verbose = false;
    app.add_flag("-q,--quiet", quiet, "Only print errors");
    app.add_flag("-v,--verbose", verbose, "Print progress");

    SimulateOpts sim;
    auto* s = app.add_subcommand("simulate", "Generate responses and write responses.csv + truth.json");
    s->add_option("--n", sim.n, "Number of persons")->check(CLI::PositiveNumber)->capture_default_str();
    s->add_option("--tv", sim.tv, "Testlet variance for every testlet")->check(CLI::NonNegativeNumber)->capture_default_str();
    s->add_option("--sigma2", sim.sigma2, "Per-testlet variances (overrides --tv)")->check(CLI::NonNegativeNumber);
    s->add_option("--design", sim.design_path, "Design JSON (default: 6 testlets x 5 items)");
    s->add_option("--items", sim.items_path, "Item parameters JSON, list of {a, b} (default: reference set)");
    s->add_option("--seed", sim.seed, "Random seed");
    s->add_option("--out", sim.out, "Output directory")->capture_default_str();

    EstimateOpts est;
    auto* e = app.add_subcommand("estimate", "Fit one or more estimators to a response matrix");
    e->add_option("--data", est.data, "Responses CSV (headerless 0/1)")->required();
    e->add_option("--design", est.design, "Design JSON or truth.json")->required();
    e->add_option("--estimator", est.estimators, "mmle, mcmc, dwls or all (repeatable, comma-separated)")
        ->delimiter(',')
        ->capture_default_str();
    e->add_option("--seed", est.seed, "Random seed (mcmc, dwls restarts)");
    e->add_option("--out", est.out, "Output JSON file (default: stdout)");
    e->add_option("--nodes", est.nodes, "Quadrature nodes per dimension (mmle)")->check(CLI::Range(2, 200))->capture_default_str();
    e->add_option("--chains", est.chains, "Number of chains (mcmc)")->check(CLI::Range(2, 64))->capture_default_str();
    e->add_option("--iterations", est.iterations, "Minimum iterations per chain (mcmc)")->check(CLI::PositiveNumber)->capture_default_str();
    e->add_option("--max-multiple", est.max_multiple, "Extension limit in multiples of --iterations (mcmc)")
        ->check(CLI::PositiveNumber)->capture_default_str();
    e->add_flag("--no-ppp", est.no_ppp, "Skip the posterior predictive check (mcmc)");
    e->add_flag("--uls", est.uls, "Unweighted least squares instead of DWLS");
    e->add_option("--threads", est.threads, "Chain threads (mcmc, 0 = auto)")->check(CLI::NonNegativeNumber);

    ConvertOpts conv;
    auto* c = app.add_subcommand("convert", "Convert item parameters between factor and IRT metrics");
    c->add_option("--params", conv.params, "Parameter JSON: {lambda, tau, sigma2} or {a, b, sigma2}")->required();
    c->add_option("--design", conv.design, "Design JSON (if the parameter file has none)");
    c->add_option("--direction", conv.direction, "auto, to-irt or to-factor")
        ->check(CLI::IsMember({"auto", "to-irt", "to-factor"}))
        ->capture_default_str();
    c->add_flag("--rescale", conv.rescale, "Input loadings/thresholds are in the conditional (unit residual) metric");
    c->add_option("--out", conv.out, "Output JSON file (default: stdout)");

    StudyOpts st;
    auto* y = app.add_subcommand("study", "Run a parameter recovery study");
    y->add_option("--config", st.config, "Study config JSON")->required();
    y->add_option("--reps", st.reps, "Override the number of replications")->check(CLI::Range(2, 100000));
    y->add_option("--estimator", st.estimators, "Override estimators")->delimiter(',');
    y->add_option("--seed", st.seed, "Override the base seed");
    y->add_option("--out", st.out, "Output directory")->capture_default_str();
    y->add_flag("--save-runs", st.save_runs, "Keep every fit under <out>/runs/<condition>/<rep>/<estimator>.json");
    y->add_flag("--paper-scale", st.paper_scale, "MCMC with 20000 minimum iterations per chain");
    y->add_option("--threads", st.threads, "Worker threads (0 = auto)")->check(CLI::NonNegativeNumber);

    std::string diag_path;
    auto* d = app.add_subcommand("diagnose", "Summarize convergence of saved fits");
    d->add_option("path", diag_path, "Runs directory or a single fit JSON")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int rc = app.exit(err);
        return rc == 0 ? kOk : kUsage;
    }
    g.verbosity = quiet ? 0 : (verbose ? 2 : 1);

    try {
        if (*s) return cmd_simulate(sim, g);
        if (*e) return cmd_estimate(est, g);
        if (*c) return cmd_convert(conv, g);
        if (*y) return cmd_study(st, g);
        if (*d) return cmd_diagnose(diag_path, g);
    } catch (const IoError& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kIo;
    } catch (const InvalidArgument& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kUsage;
    } catch (const DegenerateData& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kUsage;
    } catch (const Error& err) {
        // Heywood, degenerate loadings, diverging chains.
        std::cerr << "error: " << err.what() << "\n";
        return kNumerical;
    } catch (const fs::filesystem_error& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kIo;
    }
    return kUsage;
}
