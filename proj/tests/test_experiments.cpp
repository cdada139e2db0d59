#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "forge/errors.hpp"
#include "forge/experiments.hpp"

using namespace forge;
namespace fs = std::filesystem;

namespace {

// small budgets so the structural tests stay fast; discovery rates get their
// own long-running binaries
HarnessConfig tiny_harness() {
    HarnessConfig cfg;
    cfg.exact_field = true;
    cfg.ppo.iters = 20;
    cfg.ppo.batch_episodes = 16;
    cfg.ppo_restarts = 1;
    cfg.certify_points = 200;
    cfg.criteria.probe_points = 50;
    cfg.n_obs = 20;
    return cfg;
}

bool same_modulo_time(const TrialResult& a, const TrialResult& b) {
    return a.system == b.system && a.target == b.target && a.mode == b.mode &&
           a.seed == b.seed && a.sigma_rel == b.sigma_rel && a.n_traj == b.n_traj &&
           a.success == b.success && a.discovered == b.discovered && a.reason == b.reason &&
           a.underfit == b.underfit && a.field_fidelity == b.field_fidelity &&
           a.drift == b.drift && a.verification.n_points == b.verification.n_points &&
           a.verification.max_defect == b.verification.max_defect &&
           a.verification.verdict == b.verification.verdict;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("wilson interval endpoints match the closed forms at k=0 and k=n") {
    const double z = 1.959964;
    for (int n : {1, 5, 20, 100}) {
        auto [lo0, hi0] = wilson_ci(0, n);
        CHECK(lo0 == 0.0);
        CHECK(hi0 == doctest::Approx(z * z / (n + z * z)).epsilon(1e-12));
        auto [lon, hin] = wilson_ci(n, n);
        CHECK(hin == 1.0);
        CHECK(lon == doctest::Approx(static_cast<double>(n) / (n + z * z)).epsilon(1e-12));
    }
    // the two-sided 95% bracket for 20/20 and 0/20
    auto [lo, hi] = wilson_ci(20, 20);
    CHECK(lo == doctest::Approx(0.8389).epsilon(1e-4));
    CHECK(hi == 1.0);
    auto [l0, h0] = wilson_ci(0, 20);
    CHECK(l0 == 0.0);
    CHECK(h0 == doctest::Approx(0.1611).epsilon(1e-4));
}

TEST_CASE("wilson interval agrees with the textbook formula everywhere") {
    const double z = 1.959964;
    for (int n = 1; n <= 60; ++n)
        for (int k = 0; k <= n; ++k) {
            auto [lo, hi] = wilson_ci(k, n);
            const double p = static_cast<double>(k) / n, z2 = z * z;
            const double c = (p + z2 / (2 * n)) / (1 + z2 / n);
            const double h =
                z * std::sqrt(p * (1 - p) / n + z2 / (4.0 * n * n)) / (1 + z2 / n);
            CHECK(lo == doctest::Approx(std::max(0.0, c - h)).epsilon(1e-12));
            CHECK(hi == doctest::Approx(std::min(1.0, c + h)).epsilon(1e-12));
            CHECK(lo <= p);
            CHECK(hi >= p);
        }
}

TEST_CASE("wilson interval mirrors under k -> n-k and rejects bad input") {
    for (int k = 0; k <= 30; ++k) {
        auto [lo, hi] = wilson_ci(k, 30);
        auto [mlo, mhi] = wilson_ci(30 - k, 30);
        CHECK(lo == doctest::Approx(1.0 - mhi).epsilon(1e-12));
        CHECK(hi == doctest::Approx(1.0 - mlo).epsilon(1e-12));
    }
    CHECK_THROWS_AS(wilson_ci(0, 0), DomainError);
    CHECK_THROWS_AS(wilson_ci(-1, 5), DomainError);
    CHECK_THROWS_AS(wilson_ci(6, 5), DomainError);
    CHECK_THROWS_AS(wilson_ci(1, 5, 0.0), DomainError);
}

TEST_CASE("config validation rejects empty axes and bad criteria") {
    ExperimentGrid g;
    g.runs = 0;
    CHECK_THROWS_AS(g.validate(), ConfigError);
    g.runs = 1;
    g.systems.clear();
    CHECK_THROWS_AS(g.validate(), ConfigError);
    g.systems = {"ho"};
    g.noise_levels = {-0.1};
    CHECK_THROWS_AS(g.validate(), ConfigError);
    g.noise_levels = {0.0};
    g.traj_counts = {1};
    CHECK_THROWS_AS(g.validate(), ConfigError);
    g.traj_counts = {4};
    g.validate();

    SuccessCriteria c;
    c.drift_tau = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.drift_tau = 1e-2;
    c.probe_points = 5;
    CHECK_THROWS_AS(c.validate(), ConfigError);

    CHECK(mode_name(TrialMode::Hybrid) == "hybrid");
    CHECK(mode_name(TrialMode::Direct) == "direct");
}

TEST_CASE("a trial reports one result per labeled invariant, deterministically") {
    const SystemSpec& ho = find_system("ho");
    HarnessConfig cfg = tiny_harness();
    Policy pre = pretrain_policy(ho, cfg);

    auto a = run_trial(ho, TrialMode::Hybrid, 0.0, 4, 11, cfg, pre);
    auto b = run_trial(ho, TrialMode::Hybrid, 0.0, 4, 11, cfg, pre);
    REQUIRE(a.size() == ho.invariants.size());
    REQUIRE(b.size() == a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].system == "ho");
        CHECK(a[i].target == ho.invariants[i].label);
        CHECK(a[i].mode == TrialMode::Hybrid);
        CHECK(a[i].seed == 11);
        CHECK(a[i].n_traj == 4);
        CHECK(a[i].wall_time_s > 0.0);
        CHECK(same_modulo_time(a[i], b[i]));
        if (!a[i].success) CHECK_FALSE(a[i].reason.empty());
    }

    auto c = run_trial(ho, TrialMode::Hybrid, 0.0, 4, 12, cfg, pre);
    CHECK(c.front().seed == 12);  // seed is carried through, not recycled
}

TEST_CASE("hopeless training raises the underfit flag but the trial completes") {
    const SystemSpec& ho = find_system("ho");
    HarnessConfig cfg = tiny_harness();
    cfg.exact_field = false;
    cfg.train.epochs = 2;
    cfg.train.patience = 2;
    cfg.ppo.iters = 4;
    cfg.ppo.batch_episodes = 8;
    Policy pre = pretrain_policy(ho, cfg);

    auto res = run_trial(ho, TrialMode::Hybrid, 0.05, 4, 3, cfg, pre);
    REQUIRE(res.size() == 1);
    CHECK(res.front().underfit);
    CHECK(res.front().field_fidelity >= 0.0);
}

TEST_CASE("starved observation budgets are rejected before any work happens") {
    const SystemSpec& ho = find_system("ho");
    HarnessConfig cfg = tiny_harness();
    cfg.n_obs = 2;
    Policy pre = pretrain_policy(ho, cfg);
    CHECK_THROWS_AS(run_trial(ho, TrialMode::Direct, 0.0, 4, 5, cfg, pre), DomainError);
}

TEST_CASE("the grid pairs modes seed-for-seed and aggregates per cell") {
    ExperimentGrid g;
    g.systems = {"ho"};
    g.noise_levels = {0.0};
    g.traj_counts = {4};
    g.runs = 2;
    g.base_seed = 40;
    g.harness = tiny_harness();
    GridResult r = run_grid(g);

    const auto n_inv = find_system("ho").invariants.size();
    REQUIRE(r.trials.size() == 2 * 2 * n_inv);  // modes x runs x invariants
    REQUIRE(r.table.size() == 2 * n_inv);

    std::vector<std::uint64_t> hybrid_seeds, direct_seeds;
    for (const auto& t : r.trials)
        (t.mode == TrialMode::Hybrid ? hybrid_seeds : direct_seeds).push_back(t.seed);
    CHECK(hybrid_seeds == direct_seeds);
    CHECK(hybrid_seeds.front() == 40);

    for (const auto& c : r.table) {
        CHECK(c.runs == 2);
        CHECK(c.successes >= 0);
        CHECK(c.successes <= c.runs);
        CHECK(c.rate == doctest::Approx(c.successes / 2.0));
        auto [lo, hi] = wilson_ci(c.successes, c.runs);
        CHECK(c.ci_lo == lo);
        CHECK(c.ci_hi == hi);
    }

    GridResult r2 = run_grid(g);
    REQUIRE(r2.trials.size() == r.trials.size());
    for (std::size_t i = 0; i < r.trials.size(); ++i)
        CHECK(same_modulo_time(r.trials[i], r2.trials[i]));
}

TEST_CASE("reports land on disk byte-stable with parseable trial logs") {
    ExperimentGrid g;
    g.systems = {"ho"};
    g.noise_levels = {0.0};
    g.traj_counts = {4};
    g.runs = 1;
    g.base_seed = 7;
    g.harness = tiny_harness();
    GridResult r = run_grid(g);

    fs::path dir = fs::temp_directory_path() / "forge_report_test";
    fs::remove_all(dir);
    emit_report(r, dir.string());

    std::string csv = slurp(dir / "grid.csv");
    CHECK(csv.rfind("system,invariant,mode,sigma_rel,n_traj,runs,successes,rate,ci_lo,ci_hi\n",
                    0) == 0);
    std::size_t lines = std::count(csv.begin(), csv.end(), '\n');
    CHECK(lines == r.table.size() + 1);

    std::string md = slurp(dir / "grid.md");
    CHECK(md.find("| System | Invariant |") == 0);
    CHECK(md.find("hybrid") != std::string::npos);
    CHECK(md.find("direct") != std::string::npos);

    auto j = nlohmann::json::parse(slurp(dir / "trials" / "trial_0000.json"));
    CHECK(j["system"] == r.trials[0].system);
    CHECK(j["mode"] == mode_name(r.trials[0].mode));
    CHECK(j["seed"] == r.trials[0].seed);
    CHECK(j["success"] == r.trials[0].success);
    CHECK(j["wall_time_s"].get<double>() > 0.0);

    emit_report(r, dir.string());
    CHECK(slurp(dir / "grid.csv") == csv);
    CHECK(slurp(dir / "grid.md") == md);

    emit_curve(r, "sigma_rel", (dir / "curves" / "noise.csv").string());
    std::string curve = slurp(dir / "curves" / "noise.csv");
    CHECK(curve.rfind("sigma_rel,invariant,mode,", 0) == 0);
    CHECK_THROWS_AS(emit_curve(r, "bogus", (dir / "x.csv").string()), ConfigError);

    fs::remove_all(dir);
}
