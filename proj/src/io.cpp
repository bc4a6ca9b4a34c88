#include "testlet/io.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "testlet/errors.hpp"

namespace testlet::io {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Json number(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

double to_double(const Json& j) {
    if (j.is_null()) return kNaN;
    if (!j.is_number()) throw InvalidArgument("expected a number, got " + j.dump());
    return j.get<double>();
}

Json number_array(const std::vector<double>& v) {
    Json out = Json::array();
    for (double x : v) out.push_back(number(x));
    return out;
}

std::vector<double> double_array(const Json& j, const char* key) {
    if (!j.contains(key) || !j.at(key).is_array()) {
        throw InvalidArgument(std::string("missing array field '") + key + "'");
    }
    std::vector<double> out;
    for (const auto& x : j.at(key)) out.push_back(to_double(x));
    return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    return out;
}

}  // namespace

ResponseMatrix read_responses(const std::filesystem::path& path) {
    auto in = open_in(path);
    std::vector<std::uint8_t> cells;
    int n_items = -1, n_persons = 0, line_no = 0;
    std::string line;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        int count = 0;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) {
            const auto first = field.find_first_not_of(" \t");
            const auto last = field.find_last_not_of(" \t");
            const std::string v = first == std::string::npos ? "" : field.substr(first, last - first + 1);
            if (v != "0" && v != "1") {
                throw InvalidArgument(path.string() + ":" + std::to_string(line_no) +
                                      ": expected 0 or 1, got '" + v + "'");
            }
            cells.push_back(v == "1");
            ++count;
        }
        if (n_items < 0) n_items = count;
        if (count != n_items) {
            throw InvalidArgument(path.string() + ":" + std::to_string(line_no) + ": expected " +
                                  std::to_string(n_items) + " columns, got " + std::to_string(count));
        }
        ++n_persons;
    }
    if (n_persons == 0) throw InvalidArgument(path.string() + ": no responses");
    return {n_persons, n_items, std::move(cells)};
}

void write_responses(const std::filesystem::path& path, const ResponseMatrix& data) {
    auto out = open_out(path);
    std::string line;
    for (int i = 0; i < data.n_persons(); ++i) {
        line.clear();
        for (int j = 0; j < data.n_items(); ++j) {
            if (j) line += ',';
            line += data(i, j) ? '1' : '0';
        }
        line += '\n';
        out << line;
    }
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

Json design_to_json(const TestletDesign& design) {
    return Json{{"n_items", design.n_items()}, {"testlets", design.testlets()}};
}

TestletDesign design_from_json(const Json& j) {
    try {
        if (j.is_array()) {
            const int n = static_cast<int>(j.size());
            std::vector<std::vector<int>> testlets;
            for (int item = 0; item < n; ++item) {
                const int d = j[item].get<int>();
                if (d == TestletDesign::kIndependent) continue;
                if (d < 0) throw InvalidArgument("design: negative testlet index");
                if (d >= static_cast<int>(testlets.size())) testlets.resize(d + 1);
                testlets[d].push_back(item);
            }
            return {n, std::move(testlets)};
        }
        return {j.at("n_items").get<int>(), j.at("testlets").get<std::vector<std::vector<int>>>()};
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("design: ") + e.what());
    }
}

Json truth_to_json(const Truth& truth) {
    Json items = Json::array();
    for (const auto& ip : truth.items) items.push_back({{"a", ip.a}, {"b", ip.b}});
    const auto assignment = truth.design.assignment();
    return Json{{"items", items},
                {"sigma2", number_array(truth.sigma2)},
                {"design", std::vector<int>(assignment.begin(), assignment.end())}};
}

Truth truth_from_json(const Json& j) {
    try {
        Truth t;
        for (const auto& it : j.at("items")) t.items.push_back({to_double(it.at("a")), to_double(it.at("b"))});
        t.sigma2 = double_array(j, "sigma2");
        t.design = design_from_json(j.at("design"));
        if (t.design.n_items() != static_cast<int>(t.items.size()) ||
            t.design.n_testlets() != static_cast<int>(t.sigma2.size())) {
            throw InvalidArgument("truth: items, sigma2 and design sizes disagree");
        }
        return t;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("truth: ") + e.what());
    }
}

Json fit_to_json(const FitResult& fit) {
    std::vector<double> a, b;
    for (const auto& ip : fit.irt_params) {
        a.push_back(ip.a);
        b.push_back(ip.b);
    }
    Json j{{"estimator", fit.estimator},
           {"lambda", number_array(fit.factor_params.lambda)},
           {"tau", number_array(fit.factor_params.tau)},
           {"sigma2", number_array(fit.sigma2)},
           {"a", number_array(a)},
           {"b", number_array(b)},
           {"loglik", number(fit.loglik)},
           {"converged", fit.converged},
           {"status", to_string(fit.status)},
           {"iterations", fit.iterations},
           {"wall_time_s", fit.wall_time_s}};
    if (!fit.message.empty()) j["message"] = fit.message;
    if (fit.psrf_max) j["psrf_max"] = number(*fit.psrf_max);
    if (fit.ppp) j["ppp"] = number(*fit.ppp);
    if (fit.n_retained) j["n_retained"] = *fit.n_retained;
    if (fit.heywood) j["heywood"] = *fit.heywood;
    if (fit.objective) j["objective"] = number(*fit.objective);
    if (fit.min_communality_residual) j["min_communality_residual"] = number(*fit.min_communality_residual);
    return j;
}

FitResult fit_from_json(const Json& j) {
    try {
        FitResult fit;
        fit.estimator = j.at("estimator").get<std::string>();
        fit.factor_params.lambda = double_array(j, "lambda");
        fit.factor_params.tau = double_array(j, "tau");
        fit.sigma2 = double_array(j, "sigma2");
        fit.factor_params.sigma2 = fit.sigma2;
        const auto a = double_array(j, "a");
        const auto b = double_array(j, "b");
        if (a.size() != b.size()) throw InvalidArgument("fit: a and b lengths differ");
        for (std::size_t k = 0; k < a.size(); ++k) fit.irt_params.push_back({a[k], b[k]});
        fit.loglik = to_double(j.at("loglik"));
        fit.converged = j.at("converged").get<bool>();
        const auto status = j.value("status", std::string(fit.converged ? "converged" : "nonconverged"));
        if (status == "converged") fit.status = FitStatus::converged;
        else if (status == "heywood") fit.status = FitStatus::heywood;
        else if (status == "nonconverged") fit.status = FitStatus::nonconverged;
        else throw InvalidArgument("fit: unknown status '" + status + "'");
        fit.iterations = j.value("iterations", 0);
        fit.wall_time_s = j.value("wall_time_s", 0.0);
        fit.message = j.value("message", std::string());
        if (j.contains("psrf_max")) fit.psrf_max = to_double(j["psrf_max"]);
        if (j.contains("ppp")) fit.ppp = to_double(j["ppp"]);
        if (j.contains("n_retained")) fit.n_retained = j["n_retained"].get<int>();
        if (j.contains("heywood")) fit.heywood = j["heywood"].get<bool>();
        if (j.contains("objective")) fit.objective = to_double(j["objective"]);
        if (j.contains("min_communality_residual")) {
            fit.min_communality_residual = to_double(j["min_communality_residual"]);
        }
        return fit;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("fit: ") + e.what());
    }
}

Json read_json(const std::filesystem::path& path) {
    auto in = open_in(path);
    try {
        return Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw InvalidArgument(path.string() + ": " + e.what());
    }
}

void write_json(const std::filesystem::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

void write_text(const std::filesystem::path& path, const std::string& text) {
    auto out = open_out(path);
    out << text;
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace testlet::io
