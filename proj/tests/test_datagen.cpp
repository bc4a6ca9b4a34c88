#include <doctest.h>

#include <cmath>
#include <map>

#include "testlet/datagen.hpp"
#include "testlet/errors.hpp"
#include "testlet/normal.hpp"

using namespace testlet;

namespace {

GenConfig table1_config(int n, double tv, std::uint64_t seed) {
    GenConfig cfg;
    cfg.n_persons = n;
    cfg.design = TestletDesign::blocks(6, 5);
    cfg.sigma2.assign(6, tv);
    cfg.items = table1_fixture();
    cfg.seed = seed;
    return cfg;
}

// Mean within-testlet correlation of residuals y - E[y | total score].
double within_testlet_residual_corr(const ResponseMatrix& y, const TestletDesign& design) {
    const int n = y.n_persons(), J = y.n_items();
    std::vector<int> total(n, 0);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < J; ++j) total[i] += y(i, j);
    }
    std::map<int, std::vector<double>> sums;
    std::map<int, int> counts;
    for (int i = 0; i < n; ++i) {
        auto& s = sums[total[i]];
        s.resize(J, 0.0);
        for (int j = 0; j < J; ++j) s[j] += y(i, j);
        ++counts[total[i]];
    }
    std::vector<std::vector<double>> e(J, std::vector<double>(n));
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < J; ++j) e[j][i] = y(i, j) - sums[total[i]][j] / counts[total[i]];
    }
    double acc = 0.0;
    int pairs = 0;
    for (int j = 0; j < J; ++j) {
        for (int k = j + 1; k < J; ++k) {
            if (!design.same_testlet(j, k)) continue;
            double sjk = 0, sjj = 0, skk = 0;
            for (int i = 0; i < n; ++i) {
                sjk += e[j][i] * e[k][i], sjj += e[j][i] * e[j][i], skk += e[k][i] * e[k][i];
            }
            acc += sjk / std::sqrt(sjj * skk);
            ++pairs;
        }
    }
    return acc / pairs;
}

}  // namespace

TEST_CASE("table1_fixture") {
    const auto items = table1_fixture();
    REQUIRE(items.size() == 30);
    CHECK(items[0].a == 1.17);
    CHECK(items[0].b == -1.55);
    CHECK(items[29].a == 0.77);
    CHECK(items[29].b == -0.43);
}

TEST_CASE("generate_persons") {
    auto cfg = table1_config(200, 0.5, 7);
    const auto p1 = generate_persons(cfg);
    const auto p2 = generate_persons(cfg);
    CHECK(p1.theta == p2.theta);
    CHECK(p1.gamma == p2.gamma);

    cfg.sigma2[2] = 0.0;
    const auto p0 = generate_persons(cfg);
    CHECK(p0.gamma.col(2).cwiseAbs().maxCoeff() == 0.0);
    // Same standard draws regardless of the variances.
    CHECK(p0.theta == p1.theta);

    auto big = table1_config(100000, 1.0, 3);
    const auto pb = generate_persons(big);
    for (int d = 0; d < 6; ++d) {
        const double mean = pb.gamma.col(d).mean();
        const double var = (pb.gamma.col(d).array() - mean).square().mean();
        CHECK(var > 0.97);
        CHECK(var < 1.03);
    }

    auto bad = table1_config(10, -1.0, 1);
    CHECK_THROWS_AS(generate_persons(bad), InvalidArgument);
    auto zero = table1_config(0, 0.5, 1);
    CHECK_THROWS_AS(generate_persons(zero), InvalidArgument);
}

TEST_CASE("generate_responses") {
    SUBCASE("extreme easiness gives all ones") {
        // a = 2 keeps every p above 0.999 for |theta - gamma| < 6.5.
        auto cfg = table1_config(300, 1.0, 9);
        std::vector<ItemIrtParams> easy(30, {2.0, -10.0});
        cfg.items = easy;
        const auto y = generate_responses(cfg, generate_persons(cfg), easy);
        int ones = 0;
        for (auto v : y.raw()) ones += v;
        CHECK(ones == 300 * 30);
    }
    SUBCASE("determinism") {
        auto cfg = table1_config(100, 0.25, 42);
        const auto persons = generate_persons(cfg);
        CHECK(generate_responses(cfg, persons, table1_fixture()) ==
              generate_responses(cfg, persons, table1_fixture()));
        cfg.seed = 43;
        CHECK_FALSE(generate_responses(cfg, persons, table1_fixture()) ==
                    generate_responses(table1_config(100, 0.25, 42), persons, table1_fixture()));
    }
    SUBCASE("proportion correct matches the quadrature expectation") {
        auto cfg = table1_config(50000, 0.0, 17);
        const auto items = table1_fixture();
        const auto y = generate_responses(cfg, generate_persons(cfg), items);
        const auto rule = normal::gauss_hermite(61);
        double expected = 0.0;
        for (int k = 0; k < 61; ++k) {
            expected += rule.weights[k] * prob_correct(items[0], rule.nodes[k], 0.0);
        }
        const double observed = static_cast<double>(y.item_totals()[0]) / 50000.0;
        CHECK(std::abs(observed - expected) < 0.01);
    }
    SUBCASE("dimension mismatch") {
        auto cfg = table1_config(10, 0.25, 1);
        const auto persons = generate_persons(cfg);
        std::vector<ItemIrtParams> short_items(29, {1.0, 0.0});
        CHECK_THROWS_AS(generate_responses(cfg, persons, short_items), InvalidArgument);
    }
}

TEST_CASE("testlet variance induces within-testlet residual association") {
    auto dep = table1_config(20000, 1.0, 5);
    auto ind = table1_config(20000, 0.0, 5);
    const auto items = table1_fixture();
    const double r_dep =
        within_testlet_residual_corr(generate_responses(dep, generate_persons(dep), items), dep.design);
    const double r_ind =
        within_testlet_residual_corr(generate_responses(ind, generate_persons(ind), items), ind.design);
    CHECK(r_dep > r_ind + 0.02);
}

TEST_CASE("distributional item parameters are truncated and seeded") {
    GenConfig cfg;
    cfg.items = ItemDistribution{1.0, 0.8, 0.0, 1.0, 0.05};
    cfg.seed = 77;
    const auto a = cfg.resolve_items();
    const auto b = cfg.resolve_items();
    REQUIRE(a.size() == 30);
    for (std::size_t j = 0; j < a.size(); ++j) {
        CHECK(a[j].a > 0.05);
        CHECK(a[j].a == b[j].a);
    }
}
