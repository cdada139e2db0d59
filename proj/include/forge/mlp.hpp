#ifndef FORGE_MLP_HPP
#define FORGE_MLP_HPP

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "forge/errors.hpp"
#include "forge/integrate.hpp"

namespace forge {

// Fully-connected net with Swish hidden activations and a linear last layer;
// parameters live in one flat vector (per layer: row-major W, then b).
// Shared by the learned vector field and the generator policy.
struct DenseNet {
    std::vector<int> dims;          // [in, hidden..., out]
    std::vector<double> params;

    static std::size_t param_count(const std::vector<int>& dims);
    std::size_t layer_count() const { return dims.size() - 1; }
    int in_dim() const { return dims.front(); }
    int out_dim() const { return dims.back(); }

    // He-normal init; zero_last zeroes the final layer so the net starts as
    // the zero map (stabilizes early rollout training).
    void init(std::vector<int> dims_, std::uint64_t seed, bool zero_last);

    void forward(std::span<const double> in, std::span<double> out) const;

    // Stored activations for one forward pass, consumed by vjp.
    struct Trace {
        std::vector<std::vector<double>> inputs;  // per layer: input activation
        std::vector<std::vector<double>> pre;     // per layer: pre-activation
    };
    void forward_trace(std::span<const double> in, Trace& tr, std::span<double> out) const;

    // Reverse-mode: accumulates into dparams (+=) and writes dL/din.
    void vjp(const Trace& tr, std::span<const double> dout, std::span<double> dparams,
             std::span<double> din) const;
};

double swish(double x);
double swish_derivative(double x);

struct Adam {
    double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::vector<double> m, v;
    long t = 0;

    void step(std::vector<double>& params, std::span<const double> grad);
};

// The learned vector field f_theta.
struct MlpField {
    DenseNet net;  // dims = [d, w, ..., d]
    std::uint64_t seed = 0;
    double final_val_mse = std::numeric_limits<double>::quiet_NaN();

    int dim() const { return net.in_dim(); }
    // adapter for the integrators; validates output finiteness
    FieldFn as_field() const;
};

// n_layers counts weight layers (n_layers - 1 hidden activations).
MlpField make_mlp_field(int d, int hidden_width, int n_layers, std::uint64_t seed);

void save_model_json(const MlpField& f, const std::string& path);
MlpField load_model_json(const std::string& path);

// FNV-1a over the serialized model; stamps verification reports.
std::uint64_t model_fingerprint(const MlpField& f);

}  // namespace forge

#endif
