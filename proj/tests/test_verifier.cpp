#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "forge/errors.hpp"
#include "forge/rng.hpp"
#include "forge/systems.hpp"
#include "forge/verifier.hpp"

using namespace forge;

namespace {

const std::vector<std::string> kHoVars{"x", "v"};

std::vector<std::vector<double>> unit_square_corners() {
    return {{0.0, 0.0}, {1.0, 0.0}, {0.0, 1.0}, {1.0, 1.0}};
}

std::vector<std::vector<double>> circle_points(int n) {
    std::vector<std::vector<double>> pts;
    for (int i = 0; i < n; ++i) {
        double th = 2.0 * M_PI * i / n;
        pts.push_back({std::cos(th), std::sin(th)});
    }
    return pts;
}

}  // namespace

TEST_CASE("hull samples stay near the cloud and inside the inflated box") {
    auto cloud = unit_square_corners();
    auto pts = hull_sample(cloud, 100, 7);
    REQUIRE(pts.size() == 100);

    // rho = 5% of the box diagonal = 0.05 * sqrt(2)
    const double rho = 0.05 * std::sqrt(2.0);
    for (const auto& z : pts) {
        CHECK(z[0] >= 0.0);
        CHECK(z[0] <= 1.0);
        CHECK(z[1] >= 0.0);
        CHECK(z[1] <= 1.0);
        double best = 1e300;
        for (const auto& c : cloud)
            best = std::min(best, std::hypot(z[0] - c[0], z[1] - c[1]));
        CHECK(best <= rho + 1e-12);
    }
}

TEST_CASE("hull sampling is deterministic and n=0 yields nothing") {
    std::vector<std::vector<double>> cloud;
    Rng rng(3);
    for (int i = 0; i < 40; ++i) cloud.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1)});

    auto a = hull_sample(cloud, 50, 11);
    auto b = hull_sample(cloud, 50, 11);
    CHECK(a == b);
    auto c = hull_sample(cloud, 50, 12);
    CHECK(a != c);
    CHECK(hull_sample(cloud, 0, 11).empty());

    CHECK_THROWS_AS(hull_sample({{0.0, 0.0}, {1.0, 1.0}}, 10, 1), DomainError);
    CHECK_THROWS_AS(hull_sample(cloud, -1, 1), ConfigError);
}

TEST_CASE("hull sampling with a tiny cluster in a huge box gives up") {
    // cloud collapsed to a corner of a box stretched by one far outlier:
    // acceptance region is ~0.25% of the box, below the 1% floor
    std::vector<std::vector<double>> cloud = {
        {0.0, 0.0}, {1e-4, 0.0}, {0.0, 1e-4}, {100.0, 100.0}};
    CHECK_THROWS_AS(hull_sample(cloud, 10000, 5), AcceptanceTooLowError);
}

TEST_CASE("true energy certifies against the exact field, coordinate fails") {
    const auto& ho = find_system("ho");
    auto pts = circle_points(64);

    Expr energy = parse_prefix_string("add mul x x mul v v", kHoVars);
    auto rep = certify(energy, ho.field, pts, 1e-6, DefectMode::Raw);
    CHECK(rep.verdict);
    CHECK(rep.max_defect <= 1e-12);
    CHECK(rep.n_points == 64);
    CHECK(rep.skipped == 0);
    CHECK(rep.reason.empty());

    // C = x on the unit circle: raw defect |d/dt x| = |v|, max over the
    // circle = 1 exactly at v = +/-1
    Expr coord = parse_prefix_string("x", kHoVars);
    auto bad = certify(coord, ho.field, pts, 1e-6, DefectMode::Raw);
    CHECK_FALSE(bad.verdict);
    CHECK(bad.max_defect == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("constant candidate fails with a degeneracy reason, not a throw") {
    const auto& ho = find_system("ho");
    Expr c = parse_prefix_string("5", kHoVars);
    auto rep = certify(c, ho.field, circle_points(32), 1e-6, DefectMode::Raw);
    CHECK_FALSE(rep.verdict);
    CHECK(rep.degenerate == 32);
    CHECK(rep.reason.find("degenerate") != std::string::npos);
    // the defect itself is zero everywhere; only the screen fails it
    CHECK(rep.max_defect == 0.0);
}

TEST_CASE("defect matches a hand-computed value in both modes") {
    // f = (1, 0), C = x*v: grad = (v, x), defect_raw = |v|,
    // normalized = |v| / (sqrt(v^2+x^2) * 1 + 1e-12)
    FieldFn f = [](std::span<const double>, std::span<double> out) {
        out[0] = 1.0;
        out[1] = 0.0;
    };
    Expr c = parse_prefix_string("mul x v", kHoVars);
    std::vector<std::vector<double>> pts = {{2.0, 3.0}, {1.0, -0.5}};

    auto raw = certify(c, f, pts, 10.0, DefectMode::Raw);
    CHECK(raw.max_defect == doctest::Approx(3.0).epsilon(1e-15));
    CHECK(raw.mean_defect == doctest::Approx((3.0 + 0.5) / 2).epsilon(1e-15));
    CHECK(raw.verdict);

    auto norm = certify(c, f, pts, 10.0, DefectMode::Normalized);
    double d0 = 3.0 / (std::hypot(3.0, 2.0) + 1e-12);
    double d1 = 0.5 / (std::hypot(0.5, 1.0) + 1e-12);
    CHECK(norm.max_defect == doctest::Approx(std::max(d0, d1)).epsilon(1e-14));
    CHECK(norm.mean_defect == doctest::Approx((d0 + d1) / 2).epsilon(1e-14));
}

TEST_CASE("adding points can only raise the max defect") {
    const auto& ho = find_system("ho");
    Expr c = parse_prefix_string("add mul x x v", kHoVars);  // x^2 + v, not invariant
    auto few = circle_points(16);
    auto many = circle_points(16);
    auto extra = circle_points(48);
    many.insert(many.end(), extra.begin(), extra.end());

    auto r1 = certify(c, ho.field, few, 1e-6, DefectMode::Normalized);
    auto r2 = certify(c, ho.field, many, 1e-6, DefectMode::Normalized);
    CHECK(r2.max_defect >= r1.max_defect);
    CHECK(r1.max_defect >= r1.mean_defect);
    CHECK(r1.mean_defect >= 0.0);
}

TEST_CASE("singular points are skipped and too many of them fail the verdict") {
    FieldFn f = [](std::span<const double>, std::span<double> out) {
        out[0] = 1.0;
        out[1] = 1.0;
    };
    Expr c = parse_prefix_string("div 1 x", kHoVars);  // grad blows up at x=0
    std::vector<std::vector<double>> pts(100, std::vector<double>{2.0, 0.0});
    pts[0] = {0.0, 0.0};  // 1% skipped: verdict can still pass
    auto ok = certify(c, f, pts, 10.0, DefectMode::Normalized);
    CHECK(ok.skipped == 1);
    CHECK(ok.verdict);

    pts[1] = {0.0, 1.0};  // 2% skipped: fails
    auto bad = certify(c, f, pts, 10.0, DefectMode::Normalized);
    CHECK(bad.skipped == 2);
    CHECK_FALSE(bad.verdict);
    CHECK(bad.reason.find("skipped") != std::string::npos);
}

TEST_CASE("true invariants drift at solver level, coordinates drift visibly") {
    const auto& pend = find_system("pendulum");
    CHECK(drift_check(pend.invariants[0].expr, pend, 5, 10.0) <= 1e-5);

    Expr q = parse_prefix_string("q", pend.variables);
    CHECK(drift_check(q, pend, 5, 10.0) > 0.5);
}

TEST_CASE("a near-miss energy lookalike drifts beyond the certification gate") {
    // 0.8(p^2+q^2) + 0.3 sin(q): quasi-conserved on small librations only
    const auto& pend = find_system("pendulum");
    Expr fake = parse_prefix_string(
        "add mul 0.8 add mul p p mul q q mul 0.3 sin q", pend.variables);
    CHECK(drift_check(fake, pend, 8, 10.0) > 0.05);
}

TEST_CASE("drift is deterministic per seed") {
    const auto& ho = find_system("ho");
    Expr e = parse_prefix_string("add mul x x v", kHoVars);
    double a = drift_check(e, ho, 4, 5.0, 123);
    double b = drift_check(e, ho, 4, 5.0, 123);
    CHECK(a == b);
}

TEST_CASE("verification report round-trips through json") {
    const auto& ho = find_system("ho");
    Expr energy = parse_prefix_string("add mul x x mul v v", kHoVars);
    auto rep = certify(energy, ho.field, circle_points(32), 1e-3, DefectMode::Normalized);

    std::string path = "verifier_report_test.json";
    save_verification_json(rep, energy, "fp-01234567", path);
    auto back = load_verification_json(path);
    CHECK(back.n_points == rep.n_points);
    CHECK(back.max_defect == rep.max_defect);
    CHECK(back.mean_defect == rep.mean_defect);
    CHECK(back.mode == rep.mode);
    CHECK(back.threshold == rep.threshold);
    CHECK(back.verdict == rep.verdict);
    CHECK(back.skipped == rep.skipped);
    std::remove(path.c_str());

    CHECK_THROWS_AS(load_verification_json("does_not_exist.json"), IoError);
}

TEST_CASE("certify validates its inputs") {
    const auto& ho = find_system("ho");
    Expr e = parse_prefix_string("x", kHoVars);
    CHECK_THROWS_AS(certify(e, ho.field, {}, 1e-3), DomainError);
    CHECK_THROWS_AS(certify(e, ho.field, circle_points(4), 0.0), ConfigError);
    CHECK_THROWS_AS(drift_check(e, ho, 0, 1.0), ConfigError);
    CHECK_THROWS_AS(drift_check(e, ho, 1, 0.0), ConfigError);
}
