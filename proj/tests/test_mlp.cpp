#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "forge/mlp.hpp"
#include "forge/rng.hpp"

using namespace forge;

TEST_CASE("swish values and asymptote") {
    CHECK(swish(0.0) == 0.0);
    CHECK(std::abs(swish(30.0) / 30.0 - 1.0) <= 1e-9);
    // derivative oracle by central differences
    for (double x : {-2.0, -0.5, 0.0, 0.3, 1.7}) {
        double h = 1e-6;
        double fd = (swish(x + h) - swish(x - h)) / (2 * h);
        CHECK(swish_derivative(x) == doctest::Approx(fd).epsilon(1e-7));
    }
}

TEST_CASE("all-zero net maps everything to zero") {
    DenseNet net;
    net.init({2, 8, 2}, 1, false);
    for (auto& p : net.params) p = 0.0;
    std::vector<double> out(2);
    net.forward(std::vector<double>{1.5, -2.0}, out);
    CHECK(out[0] == 0.0);
    CHECK(out[1] == 0.0);
}

TEST_CASE("single linear layer with identity weights is the identity") {
    DenseNet net;
    net.init({3, 3}, 1, false);
    for (auto& p : net.params) p = 0.0;
    // row-major W then b
    net.params[0] = 1.0;
    net.params[4] = 1.0;
    net.params[8] = 1.0;
    std::vector<double> out(3);
    std::vector<double> z{0.3, -1.2, 2.5};
    net.forward(z, out);
    CHECK(out == z);
}

TEST_CASE("forward is deterministic across calls") {
    DenseNet net;
    net.init({2, 16, 16, 2}, 99, false);
    std::vector<double> a(2), b(2);
    std::vector<double> z{0.7, -0.4};
    net.forward(z, a);
    net.forward(z, b);
    CHECK(a == b);
}

TEST_CASE("vjp matches finite differences for params and inputs") {
    Rng rng(4242);
    for (int trial = 0; trial < 3; ++trial) {
        DenseNet net;
        net.init({3, 10, 7, 2}, 1000 + static_cast<std::uint64_t>(trial), false);
        std::vector<double> z{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        std::vector<double> w{rng.uniform(-1, 1), rng.uniform(-1, 1)};  // cotangent

        DenseNet::Trace tr;
        std::vector<double> out(2);
        net.forward_trace(z, tr, out);
        std::vector<double> dparams(net.params.size(), 0.0), din(3);
        net.vjp(tr, w, dparams, din);

        auto scalar = [&](const DenseNet& n, std::span<const double> zz) {
            std::vector<double> o(2);
            n.forward(zz, o);
            return w[0] * o[0] + w[1] * o[1];
        };
        const double h = 1e-6;
        // spot-check 20 randomly chosen parameter coordinates
        for (int c = 0; c < 20; ++c) {
            std::size_t i = rng.uniform_index(net.params.size());
            DenseNet pert = net;
            pert.params[i] += h;
            double up = scalar(pert, z);
            pert.params[i] -= 2 * h;
            double dn = scalar(pert, z);
            double fd = (up - dn) / (2 * h);
            CHECK(std::abs(fd - dparams[i]) <= 1e-4 * std::max(1.0, std::abs(dparams[i])));
        }
        for (int j = 0; j < 3; ++j) {
            auto zp = z, zm = z;
            zp[static_cast<std::size_t>(j)] += h;
            zm[static_cast<std::size_t>(j)] -= h;
            double fd = (scalar(net, zp) - scalar(net, zm)) / (2 * h);
            CHECK(std::abs(fd - din[static_cast<std::size_t>(j)]) <=
                  1e-4 * std::max(1.0, std::abs(din[static_cast<std::size_t>(j)])));
        }
    }
}

TEST_CASE("adam minimizes a quadratic") {
    std::vector<double> p{5.0, -3.0};
    Adam adam;
    adam.lr = 0.05;
    for (int i = 0; i < 2000; ++i) {
        std::vector<double> g{2 * p[0], 2 * p[1]};
        adam.step(p, g);
    }
    CHECK(std::abs(p[0]) < 1e-3);
    CHECK(std::abs(p[1]) < 1e-3);
}

TEST_CASE("zero-init last layer makes the field start at zero") {
    MlpField f = make_mlp_field(2, 16, 3, 7);
    std::vector<double> out(2);
    f.net.forward(std::vector<double>{0.9, -1.1}, out);
    CHECK(out[0] == 0.0);
    CHECK(out[1] == 0.0);
}

TEST_CASE("model json round-trips exactly") {
    namespace fs = std::filesystem;
    MlpField f = make_mlp_field(2, 8, 3, 123);
    Rng rng(5);
    for (auto& p : f.net.params) p = rng.normal();
    f.final_val_mse = 3.25e-5;
    fs::path p = fs::temp_directory_path() / "forge_model_test.json";
    save_model_json(f, p.string());
    MlpField back = load_model_json(p.string());
    CHECK(back.net.dims == f.net.dims);
    CHECK(back.net.params == f.net.params);  // bit-exact through shortest round-trip
    CHECK(back.seed == f.seed);
    CHECK(back.final_val_mse == f.final_val_mse);
    CHECK(model_fingerprint(back) == model_fingerprint(f));
    fs::remove(p);
}

TEST_CASE("fingerprint tracks parameter changes") {
    MlpField a = make_mlp_field(2, 8, 2, 1);
    MlpField b = a;
    auto fa = model_fingerprint(a);
    CHECK(fa == model_fingerprint(b));
    b.net.params[3] += 1e-9;
    CHECK(fa != model_fingerprint(b));
}

TEST_CASE("as_field integrates with the solver contract") {
    MlpField f = make_mlp_field(2, 8, 2, 3);
    FieldFn fn = f.as_field();
    std::vector<double> out(2);
    fn(std::vector<double>{0.1, 0.2}, out);
    CHECK(out[0] == 0.0);  // zero-init last layer
}
