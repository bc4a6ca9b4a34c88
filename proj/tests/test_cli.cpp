#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "real_data_fixture.hpp"
#include "testlet/io.hpp"

namespace fs = std::filesystem;
using testlet::io::Json;

namespace {

const fs::path kWork = fs::temp_directory_path() / "testlet_cli_tests";

struct Run {
    int code;
    std::string out, err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Run run(const std::string& args) {
    fs::create_directories(kWork);
    const auto out = kWork / "stdout.txt", err = kWork / "stderr.txt";
    const std::string cmd = "cd '" + kWork.string() + "' && '" TESTLET_CLI "' " + args + " > '" + out.string() +
                            "' 2> '" + err.string() + "'";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

double round2(double v) { return std::round(v * 100.0) / 100.0; }

void write(const fs::path& p, const Json& j) { testlet::io::write_json(kWork / p, j); }

Json real_data_params(bool mlr) {
    Json j;
    std::vector<double> lambda, tau;
    for (const auto& it : testlet::fixture::kRealDataItems) {
        lambda.push_back(mlr ? it.mlr_lambda : it.wlsmv_lambda);
        tau.push_back(mlr ? it.mlr_tau : it.wlsmv_tau);
    }
    j["lambda"] = lambda;
    j["tau"] = tau;
    j["sigma2"] = mlr ? testlet::fixture::kRealDataMlrVariances : testlet::fixture::kRealDataWlsmvVariances;
    j["design"] = testlet::io::design_to_json(testlet::fixture::real_data_design());
    return j;
}

}  // namespace

TEST_CASE("usage errors") {
    CHECK(run("").code == 2);
    CHECK(run("frobnicate").code == 2);
    CHECK(run("simulate --bogus").code == 2);
    const auto bad = run("simulate --tv -1");
    CHECK(bad.code == 2);
    CHECK(bad.err.find("--tv") != std::string::npos);
    CHECK(run("estimate --data x.csv").code == 2);
    CHECK(run("--help").code == 0);
}

TEST_CASE("simulate") {
    fs::remove_all(kWork / "sim");
    const auto first = run("simulate --n 500 --tv 0.25 --seed 7 --out sim/a");
    CHECK(first.code == 0);
    CHECK(first.err.find("seed: 7") != std::string::npos);
    CHECK(run("simulate --n 500 --tv 0.25 --seed 7 --out sim/b").code == 0);
    CHECK(slurp(kWork / "sim/a/responses.csv") == slurp(kWork / "sim/b/responses.csv"));
    CHECK(slurp(kWork / "sim/a/truth.json") == slurp(kWork / "sim/b/truth.json"));

    CHECK(run("simulate --seed 3 --out sim/default").code == 0);
    const auto data = testlet::io::read_responses(kWork / "sim/default/responses.csv");
    CHECK(data.n_persons() == 500);
    CHECK(data.n_items() == 30);
    const auto truth = testlet::io::truth_from_json(testlet::io::read_json(kWork / "sim/default/truth.json"));
    CHECK(truth.design == testlet::TestletDesign::blocks(6, 5));
    CHECK(truth.sigma2 == std::vector<double>(6, 0.25));

    const auto unseeded = run("simulate --n 20 --out sim/u");
    CHECK(unseeded.code == 0);
    CHECK(unseeded.err.find("seed: ") != std::string::npos);
}

TEST_CASE("estimate") {
    fs::remove_all(kWork / "est");
    REQUIRE(run("simulate --n 500 --tv 0.5 --seed 11 --out est").code == 0);
    const auto fit = run("estimate --estimator mmle --data est/responses.csv --design est/truth.json --seed 1");
    CHECK(fit.code == 0);
    const auto j = Json::parse(fit.out);
    CHECK(j.at("estimator") == "mmle");
    CHECK(j.at("a").size() == 30);
    CHECK(j.at("converged") == true);
    CHECK(j.contains("loglik"));
    CHECK(j.contains("wall_time_s"));

    write("est/design.json", testlet::io::design_to_json(testlet::TestletDesign::blocks(6, 5)));
    const auto dwls = run("estimate --estimator dwls --data est/responses.csv --design est/design.json --out est/fit.json");
    CHECK(dwls.code == 0);
    CHECK(testlet::io::read_json(kWork / "est/fit.json").contains("heywood"));

    CHECK(run("estimate --estimator mmle --data est/missing.csv --design est/design.json").code == 3);
    CHECK(run("estimate --estimator mmle --data est/responses.csv --design est/missing.json").code == 3);
    CHECK(run("estimate --estimator ml --data est/responses.csv --design est/design.json").code == 2);
    write("est/small.json", testlet::io::design_to_json(testlet::TestletDesign::blocks(2, 5)));
    CHECK(run("estimate --data est/responses.csv --design est/small.json").code == 2);
}

TEST_CASE("estimate with all estimators agrees") {
    fs::remove_all(kWork / "all");
    REQUIRE(run("simulate --n 2000 --tv 1.0 --seed 2024 --out all").code == 0);
    const auto r = run("estimate --estimator all --data all/responses.csv --design all/truth.json --seed 5 "
                       "--iterations 1000 --no-ppp");
    CHECK(r.code == 0);
    CHECK(r.err.find("mcmc:") != std::string::npos);
    const auto j = Json::parse(r.out);
    const std::vector<std::string> names{"mmle", "mcmc", "dwls"};
    for (std::size_t x = 0; x < names.size(); ++x) {
        for (std::size_t y = x + 1; y < names.size(); ++y) {
            const auto ax = j.at(names[x]).at("a").get<std::vector<double>>();
            const auto ay = j.at(names[y]).at("a").get<std::vector<double>>();
            CAPTURE(names[x]);
            CAPTURE(names[y]);
            CHECK(testlet::oracle::correlation(ax, ay) > 0.98);
        }
    }
}

TEST_CASE("convert") {
    fs::create_directories(kWork / "conv");
    write("conv/wlsmv.json", real_data_params(false));
    const auto r = run("convert --params conv/wlsmv.json --out conv/irt.json");
    CHECK(r.code == 0);
    const auto irt = testlet::io::read_json(kWork / "conv/irt.json");
    for (std::size_t j = 0; j < 19; ++j) {
        CAPTURE(j);
        CHECK(std::abs(irt.at("a")[j].get<double>() - testlet::fixture::kRealDataItems[j].wlsmv_a) <= 0.02);
        CHECK(std::abs(irt.at("b")[j].get<double>() - testlet::fixture::kRealDataItems[j].wlsmv_b) <= 0.02);
    }

    // Round trip back to the factor metric.
    CHECK(run("convert --params conv/irt.json --out conv/back.json").code == 0);
    const auto back = testlet::io::read_json(kWork / "conv/back.json");
    const auto orig = real_data_params(false);
    for (std::size_t j = 0; j < 19; ++j) {
        CHECK(std::abs(back.at("lambda")[j].get<double>() - orig.at("lambda")[j].get<double>()) < 1e-10);
        CHECK(std::abs(back.at("tau")[j].get<double>() - orig.at("tau")[j].get<double>()) < 1e-10);
    }

    // Conditional-metric input rescaled onto the standardized metric; the
    // reference values are printed to two decimals.
    write("conv/mlr.json", real_data_params(true));
    CHECK(run("convert --params conv/mlr.json --rescale --out conv/mlr_out.json").code == 0);
    const auto resc = testlet::io::read_json(kWork / "conv/mlr_out.json");
    for (std::size_t j = 0; j < 19; ++j) {
        CAPTURE(j);
        CHECK(std::abs(round2(resc.at("lambda")[j].get<double>()) - testlet::fixture::kRealDataItems[j].wlsmv_lambda) <=
              0.02 + 1e-9);
        CHECK(std::abs(round2(resc.at("tau")[j].get<double>()) - testlet::fixture::kRealDataItems[j].wlsmv_tau) <=
              0.02 + 1e-9);
    }

    // Byte-identical reruns.
    CHECK(run("convert --params conv/wlsmv.json --out conv/irt2.json").code == 0);
    CHECK(slurp(kWork / "conv/irt.json") == slurp(kWork / "conv/irt2.json"));

    auto heywood = real_data_params(false);
    heywood["lambda"][0] = 0.99;
    write("conv/heywood.json", heywood);
    const auto h = run("convert --params conv/heywood.json");
    CHECK(h.code == 4);
    CHECK(h.err.find("communality") != std::string::npos);
    CHECK(run("convert --params conv/none.json").code == 3);
}

TEST_CASE("study and diagnose") {
    fs::remove_all(kWork / "study");
    write("study/grid.json", Json::parse(R"({"grid": [{"n_persons": 300, "testlet_variance": 0.5}],
                                             "estimators": ["mmle", "dwls"], "seed": 17})"));
    const auto r = run("study --config study/grid.json --reps 2 --out study/out --save-runs");
    CHECK(r.code == 0);
    CHECK(r.err.find("seed: 17") != std::string::npos);
    const auto report = slurp(kWork / "study/out/report.csv");
    CHECK(report.rfind("condition,estimator,parameter,item,bias,se,rmse\n", 0) == 0);
    CHECK(report.find("n300_tv0.5,mmle,a,1,") != std::string::npos);
    CHECK(fs::exists(kWork / "study/out/convergence.csv"));
    CHECK(fs::exists(kWork / "study/out/summary.json"));

    // Same seed, same report.
    CHECK(run("study --config study/grid.json --reps 2 --out study/again").code == 0);
    CHECK(slurp(kWork / "study/again/report.csv") == report);

    const auto runs = kWork / "study/out/runs";
    const auto ok = run("diagnose '" + runs.string() + "'");
    CHECK(ok.code == 0);
    CHECK(ok.out.find("mmle,2,0,0") != std::string::npos);

    // Mark one replication as a Heywood case.
    const auto target = runs / "n300_tv0.5" / "2" / "dwls.json";
    auto j = testlet::io::read_json(target);
    j["status"] = "heywood";
    j["converged"] = false;
    j["heywood"] = true;
    testlet::io::write_json(target, j);
    const auto bad = run("diagnose '" + runs.string() + "'");
    CHECK(bad.code == 4);
    CHECK(bad.out.find("n300_tv0.5/2/dwls.json") != std::string::npos);
    CHECK(bad.out.find("dwls,1,1,0") != std::string::npos);

    CHECK(run("diagnose study/nowhere").code == 3);
    CHECK(run("study --config study/missing.json").code == 3);
}
