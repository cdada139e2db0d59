#ifndef FORGE_INTEGRATE_HPP
#define FORGE_INTEGRATE_HPP

#include <functional>
#include <span>
#include <vector>

#include "forge/errors.hpp"
#include "forge/trajectory.hpp"

namespace forge {

// z -> dz/dt, writing into dz (same length as z).
using FieldFn = std::function<void(std::span<const double>, std::span<double>)>;

enum class Method { Rk4Fixed, Dopri5Adaptive };

struct IntegratorConfig {
    Method method = Method::Dopri5Adaptive;
    double h = 0.01;          // rk4 fixed step
    double rtol = 1e-7;
    double atol = 1e-9;
    double safety = 0.9;
    double min_factor = 0.2;
    double max_factor = 5.0;
    long max_steps = 1000000;
};

// One classical RK4 step from z with step h; returns the updated state.
std::vector<double> step_rk4(const FieldFn& f, std::span<const double> z, double h);

// Integrates from z0 at times[0], producing a state at every requested time.
// Dopri5 steps onto the requested times exactly (no dense output).
Trajectory integrate(const FieldFn& f, std::span<const double> z0,
                     std::span<const double> times, const IntegratorConfig& cfg);

}  // namespace forge

#endif
