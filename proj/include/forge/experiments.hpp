#ifndef FORGE_EXPERIMENTS_HPP
#define FORGE_EXPERIMENTS_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "forge/generator.hpp"
#include "forge/policy.hpp"
#include "forge/systems.hpp"
#include "forge/train.hpp"
#include "forge/verifier.hpp"

namespace forge {

enum class TrialMode { Hybrid, Direct };

std::string mode_name(TrialMode m);

// What counts as having discovered a labeled invariant: certified by the
// verifier, non-trivial (gradient screen plus >= 2 distinct variables),
// affine-equivalent to the ground truth on a fresh probe, and drifting less
// than tau along true trajectories.
struct SuccessCriteria {
    int probe_points = 200;
    double drift_tau = 1e-2;
    void validate() const;
};

// Shared knobs for a batch of trials. Per-trial seeds drive data, training,
// and PPO; pre-training depends only on the system's grammar, so one policy
// per system is reused across every trial (see run_grid).
struct HarnessConfig {
    TrainConfig train;
    // trials dredge the pool wholesale (certification does the ranking), so
    // they keep a much deeper pool than interactive runs need
    PpoConfig ppo{.pool_capacity = 256};
    RewardConfig reward;
    SuccessCriteria criteria;
    int n_obs = 80;
    double t_span = 0.0;  // <= 0: the system's default span
    int pretrain_corpus = 3000;
    int pretrain_epochs = 6;
    std::uint64_t pretrain_seed = 424243;
    // Independent PPO runs per trial, pools merged before certification. A
    // single run either climbs onto the conserved family or collapses onto
    // junk early; restarts hedge that variance far better than longer runs.
    int ppo_restarts = 4;
    int certify_points = 2000;
    // Candidate search samples reward states from the data box scaled about
    // its center. Wide boxes separate conserved expressions from coincidental
    // fits: the gradient bonus grows with |z| while spurious candidates lose
    // their fit. Certification stays on the data hull regardless. Direct mode
    // keeps the raw box; its interpolant means nothing beyond the sites.
    double box_inflate = 2.0;
    // Certification happens at hull points where the field estimate is strong
    // enough to define an angle: |f_hat| >= field_floor x its RMS over the
    // hull. Near a fixed point both |f| and a conserved gradient vanish, so
    // the normalized defect there measures nothing but noise.
    double field_floor = 0.2;
    double eps_hybrid = 0.15;  // normalized-defect gates, several times the
    double eps_direct = 0.15;  // field's angular error, far below junk (~0.5)
    int drift_traj = 8;
    double drift_t_span = 10.0;
    // The underfit flag fires when validation MSE exceeds this plus the
    // noise-explained floor (observation noise amplified through rollout
    // windows, roughly 16 sigma_rel^2 Var[z]). Diagnostic only.
    double underfit_mse = 1e-3;
    bool exact_field = false;  // bypass training (diagnostic runs)
    int jobs = 1;
};

struct TrialResult {
    std::string system;
    std::string target;  // invariant label
    TrialMode mode = TrialMode::Hybrid;
    std::uint64_t seed = 0;
    double sigma_rel = 0.0;
    int n_traj = 0;
    bool success = false;
    std::string discovered;  // prefix string, empty if none
    std::string reason;      // why the trial failed, empty on success
    bool underfit = false;
    double field_fidelity = -1.0;
    VerificationReport verification;  // adjudicated candidate's report
    double drift = -1.0;
    double wall_time_s = 0.0;
};

// One end-to-end run against one system: data -> field (learned or
// finite-difference) -> candidates -> certification -> adjudication per
// labeled invariant. Returns one result per invariant. Deterministic per
// (seed, config); the pretrained policy must come from pretrain_policy below.
std::vector<TrialResult> run_trial(const SystemSpec& spec, TrialMode mode, double sigma_rel,
                                   int n_traj, std::uint64_t seed, const HarnessConfig& cfg,
                                   const Policy& pretrained);

// The per-system pretrained policy the trials share.
Policy pretrain_policy(const SystemSpec& spec, const HarnessConfig& cfg);

// Wilson score interval for k successes in n trials.
std::pair<double, double> wilson_ci(int k, int n, double z = 1.959964);

struct ExperimentGrid {
    std::vector<std::string> systems{"ho"};
    std::vector<double> noise_levels{0.02};
    std::vector<int> traj_counts{16};
    std::vector<TrialMode> modes{TrialMode::Hybrid, TrialMode::Direct};
    int runs = 20;
    std::uint64_t base_seed = 0;
    HarnessConfig harness;
    void validate() const;
};

struct CellStat {
    std::string system;
    std::string target;
    TrialMode mode = TrialMode::Hybrid;
    double sigma_rel = 0.0;
    int n_traj = 0;
    int runs = 0;
    int successes = 0;
    double rate = 0.0;  // in [0,1]
    double ci_lo = 0.0, ci_hi = 0.0;
};

struct GridResult {
    std::vector<TrialResult> trials;  // flat, deterministic order
    std::vector<CellStat> table;      // aggregated per (system, target, mode, cell)
};

// Runs every cell x run; trial seeds are base_seed + run index, so the two
// modes see identical datasets run-for-run. Trials run in parallel under
// harness.jobs; aggregation is a deterministic fold.
GridResult run_grid(const ExperimentGrid& grid);

// run_grid restricted to one system with sigma (resp. trajectory count) as
// the swept axis.
GridResult noise_sweep(const std::string& system, const std::vector<double>& levels, int runs,
                       const HarnessConfig& harness, std::uint64_t base_seed,
                       int n_traj = 16);
GridResult sample_efficiency(const std::string& system, const std::vector<int>& traj_counts,
                             int runs, const HarnessConfig& harness, std::uint64_t base_seed,
                             double sigma_rel = 0.02);

// grid.csv + grid.md (rate with bracketed CI, best mode bold) + trials/*.json
// + optional curves/<name>.csv keyed on the swept axis. Aggregate files are
// byte-stable across reruns; the per-trial logs carry wall times.
void emit_report(const GridResult& grid, const std::string& out_dir);
void emit_curve(const GridResult& grid, const std::string& axis, const std::string& path);

}  // namespace forge

#endif
