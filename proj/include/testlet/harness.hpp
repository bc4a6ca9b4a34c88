#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "testlet/fit_result.hpp"
#include "testlet/io.hpp"
#include "testlet/liminfo.hpp"
#include "testlet/mcmc.hpp"
#include "testlet/mmle.hpp"
#include "testlet/model.hpp"

namespace testlet {

// Recovery metrics over replications. All three share the divisor R, so
// rmse^2 = bias^2 + se^2 exactly (up to rounding).
double bias(std::span<const double> estimates, double truth);  // >= 1 estimate
double se(std::span<const double> estimates);                  // >= 2 estimates
double rmse(std::span<const double> estimates, double truth);  // >= 1 estimate

enum class Estimator { mmle, mcmc, dwls };

const char* to_string(Estimator e);
// Throws InvalidArgument on unknown names.
Estimator parse_estimator(const std::string& name);

struct Condition {
    int n_persons = 500;
    double testlet_variance = 0.25;
    // Directory-safe label, e.g. "n500_tv0.25".
    std::string label() const;
};

// fixed: one ability set per sample size, reused across replications and
// testlet variances (gamma = sqrt(variance) * shared standard draws).
// fresh: new persons for every replication.
enum class PersonsMode { fixed, fresh };

struct StudyConfig {
    std::vector<Condition> grid;
    int n_replications = 20;
    std::vector<Estimator> estimators{Estimator::mmle, Estimator::mcmc, Estimator::dwls};
    std::uint64_t seed = 20190101;
    std::vector<ItemIrtParams> items;
    TestletDesign design = TestletDesign::blocks(6, 5);
    PersonsMode persons = PersonsMode::fixed;

    QuadratureSpec quadrature;
    EmSettings em;
    PriorSpec priors;
    ChainSpec chains;  // seed and threads are set per fit
    DwlsSettings dwls;

    int threads = 0;  // 0 = worker_limit()
    // When set, every fit is written to <runs_dir>/<condition>/<rep>/<estimator>.json.
    std::optional<std::filesystem::path> runs_dir;

    // {500,1000,2000} x {0.25,0.5,1.0}, reference items, desk-scale chains without PPP.
    static StudyConfig defaults();
    // Throws InvalidArgument naming the offending field.
    void validate() const;
};

// Reads the JSON study config; absent fields keep StudyConfig::defaults().
StudyConfig study_config_from_json(const io::Json& j);

struct FitRecord {
    int condition = 0;
    int replication = 0;
    Estimator estimator = Estimator::mmle;
    FitResult fit;
};

enum class ParamClass { a, b, sigma2 };
const char* to_string(ParamClass p);

struct Spread {
    double mean = 0.0;
    double sd = 0.0;  // across items or testlets, divisor n
};

struct CellMetrics {
    int condition = 0;
    Estimator estimator = Estimator::mmle;
    ParamClass parameter = ParamClass::a;
    // One entry per item (a, b) or testlet (sigma2); NaN if fewer than 2 usable reps.
    std::vector<double> bias, se, rmse;
    std::vector<int> n_used;
    Spread bias_summary, se_summary, rmse_summary;
};

struct ConvergenceCounts {
    int condition = 0;
    Estimator estimator = Estimator::mmle;
    int converged = 0;
    int heywood = 0;
    int nonconverged = 0;
};

struct RecoveryReport {
    std::vector<Condition> grid;
    int n_replications = 0;
    std::vector<Estimator> estimators;
    std::uint64_t seed = 0;
    std::vector<FitRecord> records;  // sorted by (condition, replication, estimator)
    std::vector<CellMetrics> cells;
    std::vector<ConvergenceCounts> convergence;

    const CellMetrics* find(int condition, Estimator e, ParamClass p) const;
    const ConvergenceCounts* find_counts(int condition, Estimator e) const;

    std::string report_csv() const;
    std::string convergence_csv() const;
    io::Json summary_json() const;
    // report.csv, convergence.csv and summary.json in dir.
    void write(const std::filesystem::path& dir) const;
};

// Seed of the data set for one (condition, replication).
std::uint64_t replication_seed(std::uint64_t base, int condition, int replication);

// Responses for one (condition, replication) under the config's persons mode.
ResponseMatrix replication_data(const StudyConfig& cfg, int condition, int replication);

// Fits one estimator on one data set; library errors become a nonconverged
// result with the error message.
FitResult fit_one(Estimator e, const ResponseMatrix& data, const StudyConfig& cfg, std::uint64_t seed);

// Aggregates fit records against the generating values; only converged fits
// enter the metrics. The result does not depend on the order of records.
RecoveryReport summarize(const StudyConfig& cfg, std::vector<FitRecord> records);

using ProgressFn = std::function<void(const FitRecord&, int done, int total)>;

RecoveryReport run_study(const StudyConfig& cfg, const ProgressFn& progress = {});

}  // namespace testlet
