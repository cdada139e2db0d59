#include "forge/mlp.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "forge/rng.hpp"

namespace forge {

double swish(double x) { return x / (1.0 + std::exp(-x)); }

double swish_derivative(double x) {
    const double s = 1.0 / (1.0 + std::exp(-x));
    return s * (1.0 + x * (1.0 - s));
}

std::size_t DenseNet::param_count(const std::vector<int>& dims) {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l)
        n += static_cast<std::size_t>(dims[l + 1]) * dims[l] + dims[l + 1];
    return n;
}

void DenseNet::init(std::vector<int> dims_, std::uint64_t seed, bool zero_last) {
    if (dims_.size() < 2) throw ConfigError("net needs at least one layer");
    for (int d : dims_)
        if (d < 1) throw ConfigError("net layer sizes must be positive");
    dims = std::move(dims_);
    params.assign(param_count(dims), 0.0);
    Rng rng(seed);
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        const int in = dims[l], out = dims[l + 1];
        const bool last = l + 2 == dims.size();
        const double scale = std::sqrt(2.0 / in);
        for (int i = 0; i < out * in; ++i)
            params[off + i] = (last && zero_last) ? 0.0 : rng.normal(0.0, scale);
        off += static_cast<std::size_t>(out) * in + out;  // biases stay zero
    }
}

void DenseNet::forward(std::span<const double> in, std::span<double> out) const {
    if (static_cast<int>(in.size()) != in_dim())
        throw DimensionMismatchError("net input size mismatch");
    std::vector<double> a(in.begin(), in.end()), next;
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        const int ni = dims[l], no = dims[l + 1];
        const bool last = l + 2 == dims.size();
        next.assign(static_cast<std::size_t>(no), 0.0);
        for (int i = 0; i < no; ++i) {
            double acc = params[off + static_cast<std::size_t>(no) * ni + i];  // bias
            const double* w = &params[off + static_cast<std::size_t>(i) * ni];
            for (int j = 0; j < ni; ++j) acc += w[j] * a[static_cast<std::size_t>(j)];
            next[static_cast<std::size_t>(i)] = last ? acc : swish(acc);
        }
        a.swap(next);
        off += static_cast<std::size_t>(no) * ni + no;
    }
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i];
}

void DenseNet::forward_trace(std::span<const double> in, Trace& tr, std::span<double> out) const {
    const std::size_t L = layer_count();
    tr.inputs.resize(L);
    tr.pre.resize(L);
    std::vector<double> a(in.begin(), in.end());
    std::size_t off = 0;
    for (std::size_t l = 0; l < L; ++l) {
        const int ni = dims[l], no = dims[l + 1];
        const bool last = l + 1 == L;
        tr.inputs[l] = a;
        auto& pre = tr.pre[l];
        pre.assign(static_cast<std::size_t>(no), 0.0);
        for (int i = 0; i < no; ++i) {
            double acc = params[off + static_cast<std::size_t>(no) * ni + i];
            const double* w = &params[off + static_cast<std::size_t>(i) * ni];
            for (int j = 0; j < ni; ++j) acc += w[j] * a[static_cast<std::size_t>(j)];
            pre[static_cast<std::size_t>(i)] = acc;
        }
        a.resize(static_cast<std::size_t>(no));
        for (int i = 0; i < no; ++i)
            a[static_cast<std::size_t>(i)] = last ? pre[static_cast<std::size_t>(i)]
                                                  : swish(pre[static_cast<std::size_t>(i)]);
        off += static_cast<std::size_t>(no) * ni + no;
    }
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i];
}

void DenseNet::vjp(const Trace& tr, std::span<const double> dout, std::span<double> dparams,
                   std::span<double> din) const {
    const std::size_t L = layer_count();
    // layer parameter offsets
    std::vector<std::size_t> offs(L);
    std::size_t off = 0;
    for (std::size_t l = 0; l < L; ++l) {
        offs[l] = off;
        off += static_cast<std::size_t>(dims[l + 1]) * dims[l] + dims[l + 1];
    }
    std::vector<double> dpre(dout.begin(), dout.end());  // last layer is linear
    std::vector<double> da;
    for (std::size_t l = L; l-- > 0;) {
        const int ni = dims[l], no = dims[l + 1];
        const auto& a_in = tr.inputs[l];
        // dW, db
        for (int i = 0; i < no; ++i) {
            const double g = dpre[static_cast<std::size_t>(i)];
            double* dw = &dparams[offs[l] + static_cast<std::size_t>(i) * ni];
            for (int j = 0; j < ni; ++j) dw[j] += g * a_in[static_cast<std::size_t>(j)];
            dparams[offs[l] + static_cast<std::size_t>(no) * ni + i] += g;
        }
        // da_in = W^T dpre
        da.assign(static_cast<std::size_t>(ni), 0.0);
        for (int i = 0; i < no; ++i) {
            const double g = dpre[static_cast<std::size_t>(i)];
            const double* w = &params[offs[l] + static_cast<std::size_t>(i) * ni];
            for (int j = 0; j < ni; ++j) da[static_cast<std::size_t>(j)] += w[j] * g;
        }
        if (l == 0) {
            for (std::size_t j = 0; j < da.size(); ++j) din[j] = da[j];
        } else {
            // previous layer's activation was swish(pre)
            const auto& pre_prev = tr.pre[l - 1];
            dpre.assign(da.size(), 0.0);
            for (std::size_t j = 0; j < da.size(); ++j)
                dpre[j] = da[j] * swish_derivative(pre_prev[j]);
        }
    }
}

void Adam::step(std::vector<double>& params, std::span<const double> grad) {
    if (m.empty()) {
        m.assign(params.size(), 0.0);
        v.assign(params.size(), 0.0);
    }
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
        params[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
    }
}

FieldFn MlpField::as_field() const {
    // copies the net by value: the returned callable outlives this object
    DenseNet copy = net;
    return [copy = std::move(copy)](std::span<const double> z, std::span<double> dz) {
        copy.forward(z, dz);
        for (double v : dz)
            if (!std::isfinite(v)) throw NonFiniteError("learned field produced non-finite output");
    };
}

MlpField make_mlp_field(int d, int hidden_width, int n_layers, std::uint64_t seed) {
    if (n_layers < 1) throw ConfigError("need at least one layer");
    std::vector<int> dims;
    dims.push_back(d);
    for (int l = 0; l < n_layers - 1; ++l) dims.push_back(hidden_width);
    dims.push_back(d);
    MlpField f;
    f.seed = seed;
    f.net.init(std::move(dims), derive_seed(seed, "init"), /*zero_last=*/true);
    return f;
}

namespace {

nlohmann::json model_to_json(const MlpField& f) {
    nlohmann::json j;
    j["arch"] = {{"dims", f.net.dims}, {"activation", "swish"}};
    j["layers"] = nlohmann::json::array();
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < f.net.dims.size(); ++l) {
        const int ni = f.net.dims[l], no = f.net.dims[l + 1];
        nlohmann::json layer;
        auto& w = layer["w"] = nlohmann::json::array();
        for (int i = 0; i < no; ++i) {
            nlohmann::json row = nlohmann::json::array();
            for (int j2 = 0; j2 < ni; ++j2)
                row.push_back(f.net.params[off + static_cast<std::size_t>(i) * ni + j2]);
            w.push_back(std::move(row));
        }
        auto& b = layer["b"] = nlohmann::json::array();
        for (int i = 0; i < no; ++i)
            b.push_back(f.net.params[off + static_cast<std::size_t>(no) * ni + i]);
        j["layers"].push_back(std::move(layer));
        off += static_cast<std::size_t>(no) * ni + no;
    }
    j["train_meta"] = {{"seed", f.seed}, {"final_val_mse", f.final_val_mse}};
    return j;
}

}  // namespace

void save_model_json(const MlpField& f, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << model_to_json(f).dump(2) << '\n';
}

MlpField load_model_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path);
    nlohmann::json j;
    in >> j;
    MlpField f;
    f.net.dims = j.at("arch").at("dims").get<std::vector<int>>();
    if (j.at("arch").at("activation").get<std::string>() != "swish")
        throw ConfigError("unsupported activation in model file");
    f.net.params.assign(DenseNet::param_count(f.net.dims), 0.0);
    std::size_t off = 0;
    std::size_t l = 0;
    for (const auto& layer : j.at("layers")) {
        const int ni = f.net.dims[l], no = f.net.dims[l + 1];
        const auto& w = layer.at("w");
        for (int i = 0; i < no; ++i)
            for (int j2 = 0; j2 < ni; ++j2)
                f.net.params[off + static_cast<std::size_t>(i) * ni + j2] =
                    w.at(static_cast<std::size_t>(i)).at(static_cast<std::size_t>(j2)).get<double>();
        const auto& b = layer.at("b");
        for (int i = 0; i < no; ++i)
            f.net.params[off + static_cast<std::size_t>(no) * ni + i] =
                b.at(static_cast<std::size_t>(i)).get<double>();
        off += static_cast<std::size_t>(no) * ni + no;
        ++l;
    }
    for (double p : f.net.params)
        if (!std::isfinite(p)) throw NonFiniteError("model file holds non-finite parameters");
    f.seed = j.at("train_meta").at("seed").get<std::uint64_t>();
    f.final_val_mse = j.at("train_meta").at("final_val_mse").is_null()
                          ? std::numeric_limits<double>::quiet_NaN()
                          : j.at("train_meta").at("final_val_mse").get<double>();
    return f;
}

std::uint64_t model_fingerprint(const MlpField& f) {
    const std::string s = model_to_json(f).dump();
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace forge
