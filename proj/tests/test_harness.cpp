#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <vector>

#include "testlet/datagen.hpp"
#include "testlet/errors.hpp"
#include "testlet/harness.hpp"
#include "testlet/random.hpp"

using namespace testlet;

namespace {

void check_identity(const RecoveryReport& rep) {
    for (const auto& cell : rep.cells) {
        for (std::size_t k = 0; k < cell.bias.size(); ++k) {
            if (std::isnan(cell.rmse[k])) continue;
            CHECK(std::abs(cell.rmse[k] * cell.rmse[k] -
                           (cell.bias[k] * cell.bias[k] + cell.se[k] * cell.se[k])) < 1e-10);
        }
    }
}

// Two-item, one-testlet study whose fits are supplied by hand.
StudyConfig tiny_config() {
    StudyConfig cfg;
    cfg.grid = {{100, 0.5}};
    cfg.n_replications = 4;
    cfg.estimators = {Estimator::mmle, Estimator::dwls};
    cfg.items = {{1.0, 0.0}, {2.0, -1.0}};
    cfg.design = TestletDesign::blocks(1, 2);
    return cfg;
}

FitRecord fake(int rep, Estimator e, double a0, double b1, double s2, FitStatus status) {
    FitRecord r;
    r.replication = rep;
    r.estimator = e;
    r.fit.irt_params = {{a0, 0.0}, {2.0, b1}};
    r.fit.sigma2 = {s2};
    r.fit.status = status;
    r.fit.converged = status == FitStatus::converged;
    return r;
}

}  // namespace

TEST_CASE("bias, se and rmse examples") {
    const std::vector<double> ones{1, 1, 1}, sym{0.9, 1.1}, up{1.1, 1.3};
    CHECK(bias(ones, 1.0) == 0.0);
    CHECK(std::abs(bias(sym, 1.0)) < 1e-15);
    CHECK(bias(up, 1.0) == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(se(ones) == 0.0);
    CHECK(se(sym) == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(se(up) == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(rmse(ones, 1.0) == 0.0);
    CHECK(rmse(sym, 1.0) == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(rmse(up, 1.0) == doctest::Approx(std::sqrt(0.05)).epsilon(1e-12));

    const std::vector<double> empty, single{1.0};
    CHECK_THROWS_AS(bias(empty, 0.0), InvalidArgument);
    CHECK_THROWS_AS(rmse(empty, 0.0), InvalidArgument);
    CHECK_THROWS_AS(se(single), InvalidArgument);
    CHECK(bias(single, 0.5) == 0.5);
}

TEST_CASE("rmse decomposes into bias and se") {
    Rng rng(77);
    for (int t = 0; t < 200; ++t) {
        const int n = 2 + static_cast<int>(rng.uniform() * 50);
        std::vector<double> v(n);
        for (auto& x : v) x = 3.0 * rng.normal() + 1.0;
        const double truth = rng.normal();
        const double r = rmse(v, truth), b = bias(v, truth), s = se(v);
        CHECK(std::abs(r * r - (b * b + s * s)) < 1e-10);
    }
}

TEST_CASE("summarize uses converged fits only") {
    const auto cfg = tiny_config();
    std::vector<FitRecord> recs{
        fake(0, Estimator::mmle, 1.1, -1.2, 0.4, FitStatus::converged),
        fake(1, Estimator::mmle, 1.3, -0.8, 0.8, FitStatus::converged),
        fake(2, Estimator::mmle, 9.0, 9.0, 9.0, FitStatus::nonconverged),
        fake(3, Estimator::mmle, 0.9, -1.0, 0.3, FitStatus::converged),
        fake(0, Estimator::dwls, 1.0, -1.0, 0.5, FitStatus::converged),
        fake(1, Estimator::dwls, 7.0, 7.0, 7.0, FitStatus::heywood),
        fake(2, Estimator::dwls, 1.2, -1.0, 0.6, FitStatus::converged),
        fake(3, Estimator::dwls, 1.0, -1.0, 0.4, FitStatus::converged),
    };
    const auto rep = summarize(cfg, recs);
    CHECK(rep.records.size() == 8);

    const auto* mm = rep.find_counts(0, Estimator::mmle);
    CHECK(mm->converged == 3);
    CHECK(mm->nonconverged == 1);
    CHECK(mm->heywood == 0);
    const auto* dw = rep.find_counts(0, Estimator::dwls);
    CHECK(dw->heywood == 1);
    CHECK(dw->converged + dw->heywood + dw->nonconverged == cfg.n_replications);

    const auto* a = rep.find(0, Estimator::mmle, ParamClass::a);
    CHECK(a->n_used[0] == 3);
    CHECK(a->bias[0] == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(a->bias[1] == 0.0);
    CHECK(a->se[1] == 0.0);
    CHECK(a->bias_summary.mean == doctest::Approx(0.05).epsilon(1e-12));
    CHECK(a->bias_summary.sd == doctest::Approx(0.05).epsilon(1e-12));
    const auto* s2 = rep.find(0, Estimator::dwls, ParamClass::sigma2);
    CHECK(s2->bias[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(s2->rmse[0] == doctest::Approx(std::sqrt(0.02 / 3.0)).epsilon(1e-12));
    check_identity(rep);

    // Execution order does not change the report.
    std::mt19937 shuffler(4);
    for (int t = 0; t < 5; ++t) {
        std::shuffle(recs.begin(), recs.end(), shuffler);
        const auto again = summarize(cfg, recs);
        CHECK(again.report_csv() == rep.report_csv());
        CHECK(again.convergence_csv() == rep.convergence_csv());
        CHECK(again.summary_json().dump() == rep.summary_json().dump());
    }
}

TEST_CASE("summarize with too few usable fits reports NA") {
    const auto cfg = tiny_config();
    const auto rep = summarize(cfg, {fake(0, Estimator::mmle, 1.0, -1.0, 0.5, FitStatus::converged)});
    const auto* a = rep.find(0, Estimator::mmle, ParamClass::a);
    CHECK(std::isnan(a->bias[0]));
    CHECK(std::isnan(a->bias_summary.mean));
    CHECK(rep.report_csv().find(",NA,NA,NA") != std::string::npos);
}

TEST_CASE("run_study with no estimators") {
    auto cfg = StudyConfig::defaults();
    cfg.estimators.clear();
    const auto rep = run_study(cfg);
    CHECK(rep.records.empty());
    CHECK(rep.cells.empty());
    CHECK(rep.convergence.empty());
    CHECK(rep.report_csv() == "condition,estimator,parameter,item,bias,se,rmse\n");
}

TEST_CASE("run_study smoke") {
    auto cfg = StudyConfig::defaults();
    cfg.grid = {{200, 0.5}};
    cfg.n_replications = 2;
    cfg.estimators = {Estimator::mmle};
    const auto runs = std::filesystem::temp_directory_path() / "testlet_harness_runs";
    std::filesystem::remove_all(runs);
    cfg.runs_dir = runs;
    const auto rep = run_study(cfg);
    CHECK(rep.records.size() == 2);
    CHECK(std::filesystem::exists(runs / "n200_tv0.5" / "1" / "mmle.json"));
    CHECK(std::filesystem::exists(runs / "n200_tv0.5" / "2" / "mmle.json"));
    const auto* counts = rep.find_counts(0, Estimator::mmle);
    CHECK(counts->converged + counts->heywood + counts->nonconverged == 2);
    check_identity(rep);

    cfg.runs_dir.reset();
    cfg.threads = 1;
    CHECK(run_study(cfg).report_csv() == rep.report_csv());

    rep.write(runs / "report");
    CHECK(std::filesystem::exists(runs / "report" / "report.csv"));
    CHECK(std::filesystem::exists(runs / "report" / "convergence.csv"));
    CHECK(std::filesystem::exists(runs / "report" / "summary.json"));
}

TEST_CASE("replication data sets differ across reps and conditions") {
    CHECK(replication_seed(1, 0, 0) != replication_seed(1, 0, 1));
    CHECK(replication_seed(1, 0, 1) != replication_seed(1, 1, 0));
    CHECK(replication_seed(1, 2, 3) == replication_seed(1, 2, 3));
}

TEST_CASE("study config JSON") {
    auto cfg = study_config_from_json(io::Json::parse(R"({
        "sample_sizes": [500, 2000], "testlet_variances": [1.0],
        "n_replications": 3, "estimators": ["dwls", "mmle"], "seed": 9,
        "mcmc": {"chains": 2, "min_iterations": 100}
    })"));
    REQUIRE(cfg.grid.size() == 2);
    CHECK(cfg.grid[1].n_persons == 2000);
    CHECK(cfg.grid[1].label() == "n2000_tv1");
    CHECK(cfg.n_replications == 3);
    CHECK(cfg.estimators == std::vector<Estimator>{Estimator::dwls, Estimator::mmle});
    CHECK(cfg.seed == 9);
    CHECK(cfg.chains.n_chains == 2);
    CHECK(cfg.items.size() == 30);

    const auto defaults = study_config_from_json(io::Json::object());
    CHECK(defaults.grid.size() == 9);
    CHECK(defaults.n_replications == 20);

    CHECK_THROWS_AS(study_config_from_json(io::Json::parse(R"({"estimators": ["ml"]})")), InvalidArgument);
    CHECK_THROWS_AS(study_config_from_json(io::Json::parse(R"({"n_replications": 1})")), InvalidArgument);
    CHECK_THROWS_AS(study_config_from_json(io::Json::parse(R"({"grid": []})")), InvalidArgument);
    CHECK_THROWS_AS(study_config_from_json(io::Json::parse(R"({"items": [{"a": 1, "b": 0}]})")),
                    InvalidArgument);
    CHECK_THROWS_AS(study_config_from_json(io::Json::parse(R"({"estimators": ["mmle", "mmle"]})")),
                    InvalidArgument);
}

TEST_CASE("difficulty recovery improves with sample size") {
    auto cfg = StudyConfig::defaults();
    cfg.grid = {{500, 1.0}, {2000, 1.0}};
    cfg.n_replications = 20;
    cfg.estimators = {Estimator::mmle};
    const auto rep = run_study(cfg);
    check_identity(rep);
    const double small = rep.find(0, Estimator::mmle, ParamClass::b)->rmse_summary.mean;
    const double large = rep.find(1, Estimator::mmle, ParamClass::b)->rmse_summary.mean;
    CAPTURE(small);
    CAPTURE(large);
    CHECK(large < small);
    for (int c = 0; c < 2; ++c) {
        const auto* counts = rep.find_counts(c, Estimator::mmle);
        CHECK(counts->converged + counts->heywood + counts->nonconverged == 20);
    }
}

TEST_CASE("replication data under both persons modes") {
    auto cfg = StudyConfig::defaults();
    cfg.grid = {{300, 0.25}, {300, 1.0}};
    const auto r0 = replication_data(cfg, 0, 0);
    CHECK(r0.n_persons() == 300);
    CHECK(r0 == replication_data(cfg, 0, 0));
    CHECK_FALSE(r0 == replication_data(cfg, 0, 1));
    cfg.persons = PersonsMode::fresh;
    CHECK_FALSE(r0 == replication_data(cfg, 0, 0));

    const auto parsed = study_config_from_json(io::Json::parse(R"({"persons": "fresh"})"));
    CHECK(parsed.persons == PersonsMode::fresh);
    CHECK_THROWS_AS(study_config_from_json(io::Json::parse(R"({"persons": "other"})")), InvalidArgument);
}
