#include "dropreg/variance_lab.hpp"

#include <cmath>
#include <vector>

#include "dropreg/errors.hpp"
#include "dropreg/rng.hpp"

namespace dropreg {

void ShiftScenario::validate() const {
    if (!(v > 0.0)) throw ConfigError("varshift: v must be positive");
    if (!(keep_p > 0.0 && keep_p <= 1.0)) throw ConfigError("varshift: keep_p must be in (0,1]");
    if (beta < 0.0) throw ConfigError("varshift: beta must be >= 0");
    if (n_samples < 10'000) throw ConfigError("varshift: need at least 1e4 samples");
}

double dropout_shift_closed_form(const ShiftScenario& s) {
    if (s.keep_p <= 0.0) throw ConfigError("varshift: ratio undefined for keep_p = 0");
    const double mu2 = s.mu * s.mu;
    return s.v / ((mu2 + s.v) / s.keep_p - mu2);
}

double uout_shift_closed_form(const ShiftScenario& s) {
    if (s.beta < 0.0) throw ConfigError("varshift: beta must be >= 0");
    const double mu2 = s.mu * s.mu;
    return s.v / ((mu2 + s.v) * (1.0 + s.beta * s.beta / 3.0) - mu2);
}

ShiftReport monte_carlo_shift(const ShiftScenario& s, ShiftMethod method) {
    s.validate();
    const std::size_t n = s.n_samples;
    const double sigma = std::sqrt(s.v);

    // Paired estimator: the test-time variance (transform off) and the
    // train-time variance (transform on) come from the same draws, so the
    // ratio is exactly 1 for a degenerate transform and the shared sampling
    // noise largely cancels.
    KeyedRng rng(s.seed, 0x76617273ULL);  // "vars"
    std::vector<double> xs(n), ys(n);
    double sum_x = 0.0, sq_x = 0.0, sum_y = 0.0, sq_y = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = rng.normal(s.mu, sigma);
        double y;
        if (method == ShiftMethod::Dropout) {
            y = rng.bernoulli(s.keep_p) ? x / s.keep_p : 0.0;
        } else {
            y = x * (1.0 + rng.uniform(-s.beta, s.beta));
        }
        xs[i] = x;
        ys[i] = y;
        sum_x += x;
        sq_x += x * x;
        sum_y += y;
        sq_y += y * y;
    }

    const double dn = static_cast<double>(n);
    auto pop_var = [](double sum, double sq, double count) {
        const double mean = sum / count;
        return sq / count - mean * mean;
    };

    ShiftReport report;
    report.closed_form =
        method == ShiftMethod::Dropout ? dropout_shift_closed_form(s) : uout_shift_closed_form(s);
    report.monte_carlo = pop_var(sum_x, sq_x, dn) / pop_var(sum_y, sq_y, dn);

    // Leave-one-out jackknife over the ratio; each deletion re-derives both
    // variances from the running sums in O(1).
    const double dm1 = dn - 1.0;
    double theta_sum = 0.0, theta_sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double vx = pop_var(sum_x - xs[i], sq_x - xs[i] * xs[i], dm1);
        const double vy = pop_var(sum_y - ys[i], sq_y - ys[i] * ys[i], dm1);
        const double theta = vx / vy;
        theta_sum += theta;
        theta_sq += theta * theta;
    }
    const double theta_bar = theta_sum / dn;
    const double ss = theta_sq - dn * theta_bar * theta_bar;
    report.standard_error = std::sqrt(std::max(0.0, dm1 / dn * ss));
    return report;
}

}  // namespace dropreg
