#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "forge/rng.hpp"
#include "forge/train.hpp"

using namespace forge;

namespace {

Trajectory make_traj(std::vector<double> times, std::vector<std::vector<double>> states) {
    Trajectory t;
    t.system = "test";
    t.times = std::move(times);
    t.states = states;
    t.clean_states = std::move(states);
    return t;
}

}  // namespace

TEST_CASE("make_segments shares endpoints and keeps a >=2 tail") {
    std::vector<double> times;
    std::vector<std::vector<double>> states;
    for (int i = 0; i < 20; ++i) {
        times.push_back(0.1 * i);
        states.push_back({static_cast<double>(i), -static_cast<double>(i)});
    }
    auto segs = make_segments(make_traj(times, states), 8);
    REQUIRE(segs.size() == 3);
    CHECK(segs[0].times.size() == 8);
    CHECK(segs[1].times.size() == 8);
    CHECK(segs[2].times.size() == 6);  // tail
    CHECK(segs[1].times.front() == segs[0].times.back());
    CHECK(segs[2].times.front() == segs[1].times.back());
    CHECK(segs[0].states[7] == segs[1].states[0]);
    CHECK(segs[2].times.back() == times.back());

    // exactly one window when the trajectory fits
    auto one = make_segments(make_traj({0.0, 0.1, 0.2}, {{0.0}, {1.0}, {2.0}}), 8);
    REQUIRE(one.size() == 1);
    CHECK(one[0].times.size() == 3);

    // a leftover single observation is the shared endpoint, never its own window
    auto cover = make_segments(make_traj({0.0, 0.1, 0.2, 0.3, 0.4},
                                         {{0.0}, {1.0}, {2.0}, {3.0}, {4.0}}),
                               3);
    REQUIRE(cover.size() == 2);
    CHECK(cover[1].times.size() == 3);
}

TEST_CASE("zero field on constant observations gives zero loss and gradient") {
    MlpField f = make_mlp_field(2, 8, 3, 11);  // zero-init last layer => zero map
    Segment s;
    s.times = {0.0, 0.5, 1.0};
    s.states = {{0.3, -0.7}, {0.3, -0.7}, {0.3, -0.7}};
    auto r = grad_params(f, std::vector<Segment>{s}, 0.1);
    CHECK(r.loss == 0.0);
    for (double g : r.grad) CHECK(g == 0.0);
}

TEST_CASE("grad_params matches finite differences through the unrolled solver") {
    MlpField f;
    f.net.init({2, 10, 10, 2}, 2024, false);
    f.seed = 2024;

    std::vector<Segment> batch(2);
    batch[0].times = {0.0, 0.17, 0.31, 0.5};
    batch[0].states = {{1.0, 0.0}, {0.95, -0.2}, {0.9, -0.35}, {0.82, -0.5}};
    batch[1].times = {0.0, 0.25, 0.55};
    batch[1].states = {{0.0, 1.0}, {0.22, 0.96}, {0.5, 0.83}};
    std::vector<double> scale{0.8, 1.3};

    auto r = grad_params(f, batch, 0.07, scale);
    REQUIRE(r.grad.size() == f.net.params.size());
    CHECK(std::isfinite(r.loss));

    Rng rng(99);
    const double h = 1e-6;
    for (int c = 0; c < 25; ++c) {
        std::size_t i = rng.uniform_index(f.net.params.size());
        MlpField pert = f;
        pert.net.params[i] += h;
        double up = grad_params(pert, batch, 0.07, scale).loss;
        pert.net.params[i] -= 2 * h;
        double dn = grad_params(pert, batch, 0.07, scale).loss;
        double fd = (up - dn) / (2 * h);
        CHECK(std::abs(fd - r.grad[i]) <= 1e-4 * std::max(1.0, std::abs(r.grad[i])));
    }
}

TEST_CASE("loss and gradient are invariant under batch duplication") {
    MlpField f;
    f.net.init({2, 8, 2}, 7, false);
    Segment s1, s2;
    s1.times = {0.0, 0.2, 0.4};
    s1.states = {{0.5, 0.1}, {0.45, 0.0}, {0.42, -0.1}};
    s2.times = {0.0, 0.3};
    s2.states = {{-0.2, 0.9}, {-0.1, 0.8}};

    auto once = grad_params(f, std::vector<Segment>{s1, s2}, 0.1);
    auto twice = grad_params(f, std::vector<Segment>{s1, s2, s1, s2}, 0.1);
    CHECK(twice.loss == doctest::Approx(once.loss).epsilon(1e-12));
    for (std::size_t i = 0; i < once.grad.size(); ++i)
        CHECK(std::abs(twice.grad[i] - once.grad[i]) <=
              1e-12 * std::max(1.0, std::abs(once.grad[i])));
}

TEST_CASE("grad_params is independent of job count") {
    MlpField f;
    f.net.init({2, 12, 2}, 31, false);
    std::vector<Segment> batch;
    Rng rng(5);
    for (int k = 0; k < 6; ++k) {
        Segment s;
        double t = 0;
        for (int i = 0; i < 4; ++i) {
            s.times.push_back(t);
            s.states.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1)});
            t += rng.uniform(0.1, 0.3);
        }
        batch.push_back(std::move(s));
    }
    auto a = grad_params(f, batch, 0.05, {}, 1);
    auto b = grad_params(f, batch, 0.05, {}, 4);
    CHECK(a.loss == b.loss);
    CHECK(a.grad == b.grad);  // fixed-order reduction => bitwise equal
}

TEST_CASE("training fits the harmonic oscillator without noise") {
    const auto& spec = find_system("ho");
    Dataset ds = generate_dataset(spec, 8, 6.28, 60, 0.0, 41);

    TrainConfig cfg;
    cfg.epochs = 150;
    cfg.lr = 2e-3;
    cfg.hidden_width = 48;
    cfg.n_layers = 3;
    cfg.segment_len = 8;
    cfg.target_val_mse = 1e-4;
    cfg.patience = 120;
    cfg.seed = 17;

    auto [field, report] = train(ds, cfg);
    CHECK(report.best_val_mse <= 1e-4);
    CHECK(field.final_val_mse == report.best_val_mse);
    CHECK(report.train_mse.size() == report.val_mse.size());
    CHECK(report.final_val_mse == report.val_mse.back());
    CHECK((report.stop_reason == "target" || report.stop_reason == "epochs" ||
           report.stop_reason == "patience"));

    // the learned field should be close to the true one on the data region
    double fid = field_fidelity(field, spec, 200, 99);
    CHECK(fid < 0.05);
}

TEST_CASE("training is bitwise deterministic for a fixed seed") {
    const auto& spec = find_system("ho");
    Dataset ds = generate_dataset(spec, 3, 4.0, 12, 0.01, 7);

    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.hidden_width = 16;
    cfg.n_layers = 3;
    cfg.seed = 3;

    auto [f1, r1] = train(ds, cfg);
    auto [f2, r2] = train(ds, cfg);
    CHECK(f1.net.params == f2.net.params);
    CHECK(r1.train_mse == r2.train_mse);
    CHECK(r1.val_mse == r2.val_mse);

    TrainConfig other = cfg;
    other.seed = 4;
    auto [f3, r3] = train(ds, other);
    CHECK(f1.net.params != f3.net.params);
}

TEST_CASE("train validates inputs") {
    const auto& spec = find_system("ho");
    Dataset empty;
    TrainConfig cfg;
    CHECK_THROWS_AS(train(empty, cfg), DomainError);

    Dataset ds = generate_dataset(spec, 2, 4.0, 10, 0.0, 1);
    TrainConfig bad = cfg;
    bad.epochs = 0;
    CHECK_THROWS_AS(train(ds, bad), ConfigError);
    bad = cfg;
    bad.segment_len = 1;
    CHECK_THROWS_AS(train(ds, bad), ConfigError);
    bad = cfg;
    bad.lr = -1.0;
    CHECK_THROWS_AS(train(ds, bad), ConfigError);
}

TEST_CASE("sample_pairs draws inside the box and pairs f(z)") {
    FieldFn f = [](std::span<const double> z, std::span<double> dz) {
        dz[0] = z[1];
        dz[1] = -z[0];
    };
    std::vector<double> lo{-1.0, 0.0}, hi{2.0, 3.0};
    auto pairs = sample_pairs(f, lo, hi, 64, 12345);
    REQUIRE(pairs.size() == 64);
    for (const auto& [z, dz] : pairs) {
        REQUIRE(z.size() == 2);
        CHECK(z[0] >= -1.0);
        CHECK(z[0] <= 2.0);
        CHECK(z[1] >= 0.0);
        CHECK(z[1] <= 3.0);
        CHECK(dz[0] == z[1]);
        CHECK(dz[1] == -z[0]);
    }
    auto again = sample_pairs(f, lo, hi, 64, 12345);
    CHECK(pairs == again);
    auto other = sample_pairs(f, lo, hi, 64, 54321);
    CHECK(pairs != other);
}

TEST_CASE("field_fidelity is zero for the exact field and ~1 for the zero map") {
    const auto& spec = find_system("ho");
    double exact = field_fidelity(spec.field, spec, 500, 2);
    CHECK(exact == 0.0);

    MlpField zero = make_mlp_field(2, 8, 2, 1);  // zero map by construction
    double off = field_fidelity(zero, spec, 500, 2);
    CHECK(off >= 0.99);
    CHECK(off <= 1.0);

    CHECK_THROWS_AS(field_fidelity(spec.field, spec, 0, 2), DomainError);
}
