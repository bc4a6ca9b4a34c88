#include "testlet/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "testlet/errors.hpp"

namespace testlet {

TestletDesign::TestletDesign(int n_items, std::vector<std::vector<int>> testlets)
    : testlet_of_(n_items, kIndependent), testlets_(std::move(testlets)) {
    if (n_items <= 0) throw InvalidArgument("design: n_items must be positive");
    for (std::size_t d = 0; d < testlets_.size(); ++d) {
        auto& items = testlets_[d];
        if (items.size() < 2) {
            throw InvalidArgument("design: testlet " + std::to_string(d) +
                                  " has fewer than 2 items; its variance is unidentified");
        }
        std::sort(items.begin(), items.end());
        for (int j : items) {
            if (j < 0 || j >= n_items) {
                throw InvalidArgument("design: item index " + std::to_string(j) +
                                      " out of range");
            }
            if (testlet_of_[j] != kIndependent) {
                throw InvalidArgument("design: item " + std::to_string(j) +
                                      " assigned to more than one testlet");
            }
            testlet_of_[j] = static_cast<int>(d);
        }
    }
}

TestletDesign TestletDesign::blocks(int n_testlets, int items_per_testlet) {
    std::vector<std::vector<int>> t(n_testlets);
    for (int d = 0; d < n_testlets; ++d) {
        for (int k = 0; k < items_per_testlet; ++k) t[d].push_back(d * items_per_testlet + k);
    }
    return {n_testlets * items_per_testlet, std::move(t)};
}

TestletDesign TestletDesign::independent(int n_items) { return {n_items, {}}; }

TestletDesign TestletDesign::permuted(std::span<const int> perm) const {
    if (static_cast<int>(perm.size()) != n_items()) {
        throw InvalidArgument("design: permutation size mismatch");
    }
    std::vector<int> new_index(n_items());
    for (int i = 0; i < n_items(); ++i) new_index[perm[i]] = i;
    std::vector<std::vector<int>> t = testlets_;
    for (auto& items : t) {
        for (int& j : items) j = new_index[j];
    }
    return {n_items(), std::move(t)};
}

ResponseMatrix::ResponseMatrix(int n_persons, int n_items)
    : n_persons_(n_persons), n_items_(n_items),
      data_(static_cast<std::size_t>(n_persons) * n_items, 0) {
    if (n_persons < 0 || n_items < 0) throw InvalidArgument("responses: negative dimension");
}

ResponseMatrix::ResponseMatrix(int n_persons, int n_items, std::vector<std::uint8_t> data)
    : n_persons_(n_persons), n_items_(n_items), data_(std::move(data)) {
    if (n_persons < 0 || n_items < 0) throw InvalidArgument("responses: negative dimension");
    if (data_.size() != static_cast<std::size_t>(n_persons) * n_items) {
        throw InvalidArgument("responses: data size does not match dimensions");
    }
    for (auto v : data_) {
        if (v > 1) throw InvalidArgument("responses: entries must be 0 or 1");
    }
}

std::vector<int> ResponseMatrix::item_totals() const {
    std::vector<int> totals(n_items_, 0);
    for (int i = 0; i < n_persons_; ++i) {
        const auto r = row(i);
        for (int j = 0; j < n_items_; ++j) totals[j] += r[j];
    }
    return totals;
}

void ResponseMatrix::require_both_categories() const {
    if (n_persons_ == 0 || n_items_ == 0) throw DegenerateData("responses: empty data");
    const auto totals = item_totals();
    for (int j = 0; j < n_items_; ++j) {
        if (totals[j] == 0 || totals[j] == n_persons_) {
            throw DegenerateData("responses: item " + std::to_string(j) +
                                 " has a single observed category");
        }
    }
}

ResponseMatrix ResponseMatrix::permuted_items(std::span<const int> perm) const {
    ResponseMatrix out(n_persons_, n_items_);
    for (int i = 0; i < n_persons_; ++i) {
        for (int j = 0; j < n_items_; ++j) out.set(i, j, (*this)(i, perm[j]));
    }
    return out;
}

double prob_correct(const ItemIrtParams& item, double theta, double gamma) {
    return 1.0 / (1.0 + std::exp(-item.a * (theta - item.b - gamma)));
}

ItemIrtParams factor_to_irt(const LoadingThreshold& lt, double sigma2) {
    const double comm = communality(lt.lambda, sigma2);
    if (!(comm < 1.0)) {
        throw HeywoodError("factor_to_irt: communality " + std::to_string(comm) + " >= 1");
    }
    if (std::abs(lt.lambda) < kDegenerateLoadingTol) {
        throw DegenerateLoading("factor_to_irt: loading too close to zero");
    }
    return {kLogisticScale * lt.lambda / std::sqrt(1.0 - comm), lt.tau / lt.lambda};
}

ItemIrtParams factor_to_irt(const FactorParams& fp, const TestletDesign& design, int item) {
    return factor_to_irt({fp.lambda.at(item), fp.tau.at(item)}, fp.item_sigma2(design, item));
}

std::vector<ItemIrtParams> factor_to_irt(const FactorParams& fp, const TestletDesign& design) {
    std::vector<ItemIrtParams> out;
    out.reserve(design.n_items());
    for (int j = 0; j < design.n_items(); ++j) out.push_back(factor_to_irt(fp, design, j));
    return out;
}

LoadingThreshold irt_to_factor(const ItemIrtParams& ip, double sigma2) {
    if (!(ip.a > 0.0)) throw InvalidArgument("irt_to_factor: a must be positive");
    if (sigma2 < 0.0) throw InvalidArgument("irt_to_factor: sigma2 must be nonnegative");
    const double s = ip.a / kLogisticScale;
    const double lambda = s / std::sqrt(1.0 + s * s * (1.0 + sigma2));
    return {lambda, ip.b * lambda};
}

FactorParams irt_to_factor(std::span<const ItemIrtParams> items, std::span<const double> sigma2,
                           const TestletDesign& design) {
    if (static_cast<int>(items.size()) != design.n_items() ||
        static_cast<int>(sigma2.size()) != design.n_testlets()) {
        throw InvalidArgument("irt_to_factor: dimensions do not match design");
    }
    FactorParams fp;
    fp.sigma2.assign(sigma2.begin(), sigma2.end());
    for (int j = 0; j < design.n_items(); ++j) {
        const auto lt = irt_to_factor(items[j], fp.item_sigma2(design, j));
        fp.lambda.push_back(lt.lambda);
        fp.tau.push_back(lt.tau);
    }
    return fp;
}

LoadingThreshold rescale_unstandardized(double lambda_raw, double tau_raw, double sigma2) {
    const double c = communality(lambda_raw, sigma2);
    const double r2 = c / (1.0 + c);
    const double k = std::sqrt(1.0 - r2);
    return {lambda_raw * k, tau_raw * k};
}

LoadingThreshold unstandardize(double lambda, double tau, double sigma2) {
    const double comm = communality(lambda, sigma2);
    if (!(comm < 1.0)) {
        throw HeywoodError("unstandardize: communality " + std::to_string(comm) + " >= 1");
    }
    const double k = 1.0 / std::sqrt(1.0 - comm);
    return {lambda * k, tau * k};
}

FactorParams to_factor(const ConditionalParams& cp, const TestletDesign& design) {
    FactorParams fp;
    fp.sigma2 = cp.sigma2;
    fp.lambda.resize(cp.lambda.size());
    fp.tau.resize(cp.tau.size());
    for (int j = 0; j < design.n_items(); ++j) {
        const auto lt = rescale_unstandardized(cp.lambda[j], cp.tau[j], cp.item_sigma2(design, j));
        fp.lambda[j] = lt.lambda;
        fp.tau[j] = lt.tau;
    }
    return fp;
}

ConditionalParams to_conditional(const FactorParams& fp, const TestletDesign& design) {
    ConditionalParams cp;
    cp.sigma2 = fp.sigma2;
    cp.lambda.resize(fp.lambda.size());
    cp.tau.resize(fp.tau.size());
    for (int j = 0; j < design.n_items(); ++j) {
        const auto lt = unstandardize(fp.lambda[j], fp.tau[j], fp.item_sigma2(design, j));
        cp.lambda[j] = lt.lambda;
        cp.tau[j] = lt.tau;
    }
    return cp;
}

Eigen::MatrixXd implied_tetrachorics(const FactorParams& fp, const TestletDesign& design) {
    const int n = design.n_items();
    Eigen::MatrixXd rho = Eigen::MatrixXd::Identity(n, n);
    for (int j = 0; j < n; ++j) {
        for (int k = j + 1; k < n; ++k) {
            double r = fp.lambda[j] * fp.lambda[k];
            if (design.same_testlet(j, k)) r *= 1.0 + fp.sigma2[design.testlet_of(j)];
            rho(j, k) = rho(k, j) = r;
        }
    }
    return rho;
}

}  // namespace testlet
