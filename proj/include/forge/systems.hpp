#ifndef FORGE_SYSTEMS_HPP
#define FORGE_SYSTEMS_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "forge/expr.hpp"
#include "forge/integrate.hpp"
#include "forge/trajectory.hpp"

namespace forge {

struct LabeledInvariant {
    std::string label;
    Expr expr;
};

// A canonical dynamical system: closed-form field, ground-truth invariants,
// and the box initial conditions are drawn from.
struct SystemSpec {
    std::string name;
    int dim = 0;
    std::vector<std::string> variables;
    FieldFn field;
    std::vector<LabeledInvariant> invariants;
    std::vector<double> box_lo, box_hi;
    // extra acceptance rule for sampled ICs (bound Kepler orbits); empty = accept all
    std::function<bool(std::span<const double>)> ic_accept;
    double default_t_span = 10.0;
};

// Fixed catalog: harmonic oscillator, pendulum, 2D Kepler, Lorenz (no known
// invariant; kept for exploratory runs). Specs are conservation-checked once
// on first access.
const std::vector<SystemSpec>& catalog();
const SystemSpec& find_system(const std::string& name);

// max over n sampled states of |grad K . f| / (|grad K||f| + 1e-12), worst
// invariant; the catalog self-check.
double conservation_defect(const SystemSpec& spec, int n, std::uint64_t seed);

std::vector<std::vector<double>> sample_initial_conditions(const SystemSpec& spec, int n,
                                                           std::uint64_t seed);

struct Dataset {
    std::string system;
    double sigma_rel = 0.0;
    std::uint64_t seed = 0;
    std::vector<Trajectory> trajectories;
    std::vector<int> train_idx, val_idx;

    std::size_t dim() const { return trajectories.empty() ? 0 : trajectories.front().dim(); }
};

// Integrates n_traj sampled ICs with dopri5 at defaults, observes each at
// n_obs sorted uniform-random times in [0, t_span], adds relative Gaussian
// noise (sigma scaled by per-coordinate clean-trajectory std), and splits
// 80/20 by whole trajectories.
Dataset generate_dataset(const SystemSpec& spec, int n_traj, double t_span, int n_obs,
                         double sigma_rel, std::uint64_t seed, int jobs = 1);

// per-coordinate bounding box over the training-split states
void dataset_bounding_box(const Dataset& ds, std::vector<double>& lo, std::vector<double>& hi);
// per-coordinate mean/std over the training-split states (std floored at 1e-12)
void dataset_statistics(const Dataset& ds, std::vector<double>& mean, std::vector<double>& stddev);

void save_dataset_json(const Dataset& ds, const std::string& path);
Dataset load_dataset_json(const std::string& path);
void save_dataset_csv(const Dataset& ds, const std::string& path);

}  // namespace forge

#endif
