#include "forge/integrate.hpp"

#include <algorithm>
#include <cmath>

namespace forge {

namespace {

bool all_finite(std::span<const double> v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

// Dormand-Prince 4(5) tableau
constexpr double C2 = 1.0 / 5, C3 = 3.0 / 10, C4 = 4.0 / 5, C5 = 8.0 / 9;
constexpr double A21 = 1.0 / 5;
constexpr double A31 = 3.0 / 40, A32 = 9.0 / 40;
constexpr double A41 = 44.0 / 45, A42 = -56.0 / 15, A43 = 32.0 / 9;
constexpr double A51 = 19372.0 / 6561, A52 = -25360.0 / 2187, A53 = 64448.0 / 6561,
                 A54 = -212.0 / 729;
constexpr double A61 = 9017.0 / 3168, A62 = -355.0 / 33, A63 = 46732.0 / 5247, A64 = 49.0 / 176,
                 A65 = -5103.0 / 18656;
constexpr double B1 = 35.0 / 384, B3 = 500.0 / 1113, B4 = 125.0 / 192, B5 = -2187.0 / 6784,
                 B6 = 11.0 / 84;
// embedded 4th-order weights
constexpr double E1 = 5179.0 / 57600, E3 = 7571.0 / 16695, E4 = 393.0 / 640,
                 E5 = -92097.0 / 339200, E6 = 187.0 / 2100, E7 = 1.0 / 40;

struct Dopri5Stepper {
    const FieldFn& f;
    std::size_t d;
    std::vector<double> k1, k2, k3, k4, k5, k6, k7, tmp, y5, y4;

    Dopri5Stepper(const FieldFn& f_, std::size_t d_)
        : f(f_), d(d_), k1(d_), k2(d_), k3(d_), k4(d_), k5(d_), k6(d_), k7(d_), tmp(d_), y5(d_),
          y4(d_) {}

    // one trial step of size h from y; returns the scaled error norm.
    // k1 must hold f(y) on entry (FSAL: k7 of an accepted step feeds the next k1).
    double attempt(std::span<const double> y, double h, double rtol, double atol) {
        for (std::size_t i = 0; i < d; ++i) tmp[i] = y[i] + h * A21 * k1[i];
        f(tmp, k2);
        for (std::size_t i = 0; i < d; ++i) tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        f(tmp, k3);
        for (std::size_t i = 0; i < d; ++i)
            tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        f(tmp, k4);
        for (std::size_t i = 0; i < d; ++i)
            tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        f(tmp, k5);
        for (std::size_t i = 0; i < d; ++i)
            tmp[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        f(tmp, k6);
        for (std::size_t i = 0; i < d; ++i)
            y5[i] = y[i] + h * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i]);
        f(y5, k7);
        for (std::size_t i = 0; i < d; ++i)
            y4[i] = y[i] +
                    h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        double err = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            double sc = atol + rtol * std::max(std::abs(y[i]), std::abs(y5[i]));
            double e = (y5[i] - y4[i]) / sc;
            err += e * e;
        }
        return std::sqrt(err / static_cast<double>(d));
    }
};

}  // namespace

std::vector<double> step_rk4(const FieldFn& f, std::span<const double> z, double h) {
    const std::size_t d = z.size();
    std::vector<double> k1(d), k2(d), k3(d), k4(d), tmp(d), out(d);
    f(z, k1);
    for (std::size_t i = 0; i < d; ++i) tmp[i] = z[i] + 0.5 * h * k1[i];
    f(tmp, k2);
    for (std::size_t i = 0; i < d; ++i) tmp[i] = z[i] + 0.5 * h * k2[i];
    f(tmp, k3);
    for (std::size_t i = 0; i < d; ++i) tmp[i] = z[i] + h * k3[i];
    f(tmp, k4);
    for (std::size_t i = 0; i < d; ++i)
        out[i] = z[i] + (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    if (!all_finite(out)) throw NonFiniteStateError("rk4 step produced a non-finite state");
    return out;
}

namespace {

Trajectory integrate_rk4(const FieldFn& f, std::span<const double> z0,
                         std::span<const double> times, const IntegratorConfig& cfg) {
    Trajectory out;
    out.times.assign(times.begin(), times.end());
    out.states.reserve(times.size());
    std::vector<double> z(z0.begin(), z0.end());
    out.states.push_back(z);
    long steps = 0;
    for (std::size_t k = 1; k < times.size(); ++k) {
        double t = times[k - 1];
        const double target = times[k];
        while (t < target) {
            double h = std::min(cfg.h, target - t);
            z = step_rk4(f, z, h);
            t += h;
            if (++steps > cfg.max_steps)
                throw MaxStepsExceededError("rk4 exceeded max step count");
        }
        out.states.push_back(z);
    }
    return out;
}

Trajectory integrate_dopri5(const FieldFn& f, std::span<const double> z0,
                            std::span<const double> times, const IntegratorConfig& cfg) {
    const std::size_t d = z0.size();
    Trajectory out;
    out.times.assign(times.begin(), times.end());
    out.states.reserve(times.size());
    std::vector<double> y(z0.begin(), z0.end());
    out.states.push_back(y);

    Dopri5Stepper st(f, d);
    f(y, st.k1);
    if (!all_finite(st.k1)) throw NonFiniteStateError("field non-finite at initial state");

    const double span = times.back() - times.front();
    const double h_min = 1e-12 * span;
    // PI controller state: error of the previously accepted step
    double err_prev = 1.0;
    double h = std::min(0.01 * span, times[1] - times[0]);
    long steps = 0;
    double t = times.front();

    for (std::size_t k = 1; k < times.size(); ++k) {
        const double target = times[k];
        while (t < target) {
            bool clipped = t + h >= target;
            double h_try = clipped ? target - t : h;
            if (h_try < h_min)
                throw StepUnderflowError("required step below 1e-12 of the integration span");
            if (++steps > cfg.max_steps)
                throw MaxStepsExceededError("dopri5 exceeded max step count");

            double err = st.attempt(y, h_try, cfg.rtol, cfg.atol);
            if (!std::isfinite(err) || !all_finite(st.y5)) {
                // treat as a rejected step with a large error
                err = 10.0;
            }
            // PI controller (0.7/5 and 0.4/5 exponents)
            double factor = cfg.safety * std::pow(err > 0 ? err : 1e-10, -0.7 / 5.0) *
                            std::pow(err_prev > 0 ? err_prev : 1e-10, 0.4 / 5.0);
            factor = std::clamp(factor, cfg.min_factor, cfg.max_factor);
            if (err <= 1.0) {
                t += h_try;
                y = st.y5;
                std::swap(st.k1, st.k7);  // FSAL
                err_prev = std::max(err, 1e-4);
                if (!clipped) h = h_try * factor;
                else h = std::max(h, h_try * factor);
            } else {
                // rejected: k1 still holds f(y); shrink and retry
                if (clipped) h = h_try * factor;
                else h *= factor;
            }
        }
        out.states.push_back(y);
    }
    return out;
}

}  // namespace

Trajectory integrate(const FieldFn& f, std::span<const double> z0, std::span<const double> times,
                     const IntegratorConfig& cfg) {
    if (times.size() < 2) throw DomainError("integrate needs at least two times");
    for (std::size_t i = 1; i < times.size(); ++i)
        if (!(times[i] > times[i - 1]))
            throw DomainError("times must be strictly increasing");
    if (cfg.h <= 0 || cfg.rtol <= 0 || cfg.atol <= 0 || cfg.max_steps <= 0)
        throw ConfigError("integrator config values must be positive");
    Trajectory out = cfg.method == Method::Rk4Fixed ? integrate_rk4(f, z0, times, cfg)
                                                    : integrate_dopri5(f, z0, times, cfg);
    for (const auto& s : out.states)
        if (!all_finite(s)) throw NonFiniteStateError("integration produced a non-finite state");
    return out;
}

}  // namespace forge
