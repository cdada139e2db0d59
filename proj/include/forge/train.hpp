#ifndef FORGE_TRAIN_HPP
#define FORGE_TRAIN_HPP

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "forge/mlp.hpp"
#include "forge/systems.hpp"

namespace forge {

// A short observation window used as one rollout target.
struct Segment {
    std::vector<double> times;                // >= 2, strictly increasing
    std::vector<std::vector<double>> states;  // same length as times
};

struct TrainConfig {
    int epochs = 200;
    double lr = 1e-3;
    int batch_size = 64;
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    int segment_len = 8;          // observations per rollout window
    double target_val_mse = 1e-5; // desk-scale runs relax this to 1e-4
    int patience = 30;            // epochs without validation improvement
    int hidden_width = 64;
    int n_layers = 4;             // weight layers
    std::uint64_t seed = 0;
    int jobs = 1;
};

struct TrainReport {
    std::vector<double> train_mse, val_mse;  // one entry per epoch
    double final_val_mse = 0.0;              // last val entry
    double best_val_mse = 0.0;               // val MSE of the returned model
    double wall_time_s = 0.0;
    std::string stop_reason;                 // "epochs" | "target" | "patience"
};

// Splits a trajectory into windows of len observations, stride len-1 so
// consecutive windows share an endpoint; a shorter tail window is kept if it
// still has >= 2 observations.
std::vector<Segment> make_segments(const Trajectory& traj, int len);

// Loss and exact parameter gradient of the trajectory-matching MSE: roll the
// field from each segment's first state to every later observation time with
// fixed-step RK4 (substep ~h_target), squared error averaged over all
// predicted entries. scale (optional) divides each coordinate's residual.
struct GradResult {
    double loss = 0.0;
    std::vector<double> grad;
};
GradResult grad_params(const MlpField& field, std::span<const Segment> batch, double h_target,
                       std::span<const double> scale = {}, int jobs = 1);

// Adam over shuffled segment batches; returns the best-validation snapshot.
std::pair<MlpField, TrainReport> train(const Dataset& ds, const TrainConfig& cfg);

// z uniform in [lo, hi], paired with f(z).
std::vector<std::pair<std::vector<double>, std::vector<double>>> sample_pairs(
    const FieldFn& f, std::span<const double> lo, std::span<const double> hi, int n,
    std::uint64_t seed);

// mean over n sampled box states of |f_hat(z) - f(z)|^2 / (|f(z)|^2 + 1e-12)
double field_fidelity(const FieldFn& f_hat, const SystemSpec& spec, int n,
                      std::uint64_t seed = 1234567ULL);
double field_fidelity(const MlpField& field, const SystemSpec& spec, int n,
                      std::uint64_t seed = 1234567ULL);

}  // namespace forge

#endif
