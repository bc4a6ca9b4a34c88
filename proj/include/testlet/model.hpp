#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <vector>

namespace testlet {

// Normal-ogive to logistic scaling constant.
inline constexpr double kLogisticScale = 1.702;
// Loadings below this magnitude leave the difficulty undefined.
inline constexpr double kDegenerateLoadingTol = 1e-8;

// Assignment of items to testlets. Items outside every testlet are
// "independent" and carry no testlet effect.
class TestletDesign {
public:
    static constexpr int kIndependent = -1;

    TestletDesign() = default;
    // testlets[d] lists the item indices of testlet d.
    TestletDesign(int n_items, std::vector<std::vector<int>> testlets);

    // n_testlets consecutive blocks of items_per_testlet items each.
    static TestletDesign blocks(int n_testlets, int items_per_testlet);
    // Every item independent (unidimensional 2PL).
    static TestletDesign independent(int n_items);

    int n_items() const { return static_cast<int>(testlet_of_.size()); }
    int n_testlets() const { return static_cast<int>(testlets_.size()); }
    int testlet_of(int item) const { return testlet_of_.at(item); }
    const std::vector<int>& items_in(int testlet) const { return testlets_.at(testlet); }
    const std::vector<std::vector<int>>& testlets() const { return testlets_; }
    std::span<const int> assignment() const { return testlet_of_; }
    bool same_testlet(int j, int k) const {
        return testlet_of_[j] != kIndependent && testlet_of_[j] == testlet_of_[k];
    }

    // Design seen after reordering items so new item i is old item perm[i].
    TestletDesign permuted(std::span<const int> perm) const;

    bool operator==(const TestletDesign&) const = default;

private:
    std::vector<int> testlet_of_;
    std::vector<std::vector<int>> testlets_;
};

// Logistic-metric item parameters.
struct ItemIrtParams {
    double a = 1.0;
    double b = 0.0;
};

// Standardized (delta-metric) loading and threshold of one item.
struct LoadingThreshold {
    double lambda = 0.0;
    double tau = 0.0;
};

// Factor-analytic parameters in the standardized metric: the latent response
// has unit variance, P(y=1) = Phi((lambda*(theta - gamma) - tau) / resid_sd).
struct FactorParams {
    std::vector<double> lambda;
    std::vector<double> tau;
    std::vector<double> sigma2;  // one per testlet

    double item_sigma2(const TestletDesign& design, int item) const {
        const int d = design.testlet_of(item);
        return d == TestletDesign::kIndependent ? 0.0 : sigma2[d];
    }
};

// Conditional (theta-parameterized) probit parameters with unit residual
// variance: P(y=1 | theta, gamma) = Phi(lambda*(theta - gamma) - tau).
// This is the metric the full-information estimators work in.
struct ConditionalParams {
    std::vector<double> lambda;
    std::vector<double> tau;
    std::vector<double> sigma2;

    double item_sigma2(const TestletDesign& design, int item) const {
        const int d = design.testlet_of(item);
        return d == TestletDesign::kIndependent ? 0.0 : sigma2[d];
    }
};

struct PersonAbilities {
    std::vector<double> theta;
    Eigen::MatrixXd gamma;  // persons x testlets
};

// Persons x items matrix of 0/1 responses, row-major.
class ResponseMatrix {
public:
    ResponseMatrix() = default;
    ResponseMatrix(int n_persons, int n_items);
    ResponseMatrix(int n_persons, int n_items, std::vector<std::uint8_t> data);

    int n_persons() const { return n_persons_; }
    int n_items() const { return n_items_; }
    std::uint8_t operator()(int person, int item) const { return data_[index(person, item)]; }
    void set(int person, int item, bool value) { data_[index(person, item)] = value ? 1 : 0; }
    std::span<const std::uint8_t> row(int person) const {
        return {data_.data() + static_cast<std::size_t>(person) * n_items_,
                static_cast<std::size_t>(n_items_)};
    }
    const std::vector<std::uint8_t>& raw() const { return data_; }

    // Number of 1 responses per item.
    std::vector<int> item_totals() const;
    // Throws DegenerateData if empty or any column is constant.
    void require_both_categories() const;
    ResponseMatrix permuted_items(std::span<const int> perm) const;

    bool operator==(const ResponseMatrix&) const = default;

private:
    std::size_t index(int person, int item) const {
        return static_cast<std::size_t>(person) * n_items_ + item;
    }
    int n_persons_ = 0;
    int n_items_ = 0;
    std::vector<std::uint8_t> data_;
};

// Probability of a correct response under the 2PL testlet model.
double prob_correct(const ItemIrtParams& item, double theta, double gamma);

// lambda^2 * (1 + sigma2): share of latent-response variance explained.
inline double communality(double lambda, double sigma2) {
    return lambda * lambda * (1.0 + sigma2);
}

// Standardized loading/threshold of one item -> logistic a, b.
// Throws HeywoodError if communality >= 1, DegenerateLoading if |lambda| < 1e-8.
ItemIrtParams factor_to_irt(const LoadingThreshold& lt, double sigma2);
ItemIrtParams factor_to_irt(const FactorParams& fp, const TestletDesign& design, int item);
std::vector<ItemIrtParams> factor_to_irt(const FactorParams& fp, const TestletDesign& design);

LoadingThreshold irt_to_factor(const ItemIrtParams& ip, double sigma2);
FactorParams irt_to_factor(std::span<const ItemIrtParams> items, std::span<const double> sigma2,
                           const TestletDesign& design);

// Conditional (unit residual variance) estimates -> standardized metric via
// the explained-variance share R^2 = c / (1 + c), c = lambda_raw^2 (1 + sigma2).
LoadingThreshold rescale_unstandardized(double lambda_raw, double tau_raw, double sigma2);
// Inverse of rescale_unstandardized. Throws HeywoodError if communality >= 1.
LoadingThreshold unstandardize(double lambda, double tau, double sigma2);

FactorParams to_factor(const ConditionalParams& cp, const TestletDesign& design);
ConditionalParams to_conditional(const FactorParams& fp, const TestletDesign& design);

// Model-implied latent correlations: lambda_j lambda_k (1 + sigma2_d [same testlet]).
Eigen::MatrixXd implied_tetrachorics(const FactorParams& fp, const TestletDesign& design);

}  // namespace testlet
