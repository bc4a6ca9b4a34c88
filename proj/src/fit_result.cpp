#include "testlet/fit_result.hpp"

#include <limits>

#include "testlet/errors.hpp"

namespace testlet {

const char* to_string(FitStatus status) {
    switch (status) {
        case FitStatus::converged: return "converged";
        case FitStatus::nonconverged: return "nonconverged";
        case FitStatus::heywood: return "heywood";
    }
    return "unknown";
}

void convert_to_irt(FitResult& fit, const TestletDesign& design) {
    constexpr double nan = std::numeric_limits<double>::quiet_NaN();
    fit.irt_params.assign(design.n_items(), {nan, nan});
    for (int j = 0; j < design.n_items(); ++j) {
        try {
            fit.irt_params[j] = factor_to_irt(fit.factor_params, design, j);
        } catch (const HeywoodError&) {
        } catch (const DegenerateLoading&) {
        }
    }
}

}  // namespace testlet
