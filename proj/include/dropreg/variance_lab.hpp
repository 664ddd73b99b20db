#pragma once

#include <cstddef>
#include <cstdint>

namespace dropreg {

// One train/test variance-shift setting: inputs are drawn with mean mu and
// variance v; dropout keeps units with probability keep_p (inverted scaling),
// uout multiplies by (1 + r), r ~ U[-beta, beta].
struct ShiftScenario {
    double mu = 0.0;
    double v = 1.0;
    double keep_p = 0.9;
    double beta = 0.1;
    std::size_t n_samples = 1'000'000;
    std::uint64_t seed = 0;

    void validate() const;
};

struct ShiftReport {
    double closed_form = 0.0;
    double monte_carlo = 0.0;
    double standard_error = 0.0;
};

enum class ShiftMethod { Dropout, UOut };

// v / ((1/keep_p)(mu^2 + v) - mu^2); for mu = 0 this is exactly keep_p.
double dropout_shift_closed_form(const ShiftScenario& s);

// v / ((mu^2 + v)(1 + beta^2/3) - mu^2); the uniform noise second moment is
// beta^2/3, so for mu = 0, v = 1 the ratio is 1/(1 + beta^2/3).
double uout_shift_closed_form(const ShiftScenario& s);

// Samples x ~ N(mu, v), applies the train-time transform, and estimates
// ratio = v / Var_train with a leave-one-out jackknife standard error.
ShiftReport monte_carlo_shift(const ShiftScenario& s, ShiftMethod method);

}  // namespace dropreg
