#include "forge/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "forge/errors.hpp"
#include "forge/grammar.hpp"
#include "forge/parallel.hpp"
#include "forge/rng.hpp"

namespace forge {

std::string mode_name(TrialMode m) { return m == TrialMode::Hybrid ? "hybrid" : "direct"; }

void SuccessCriteria::validate() const {
    if (probe_points < 10) throw ConfigError("probe_points must be >= 10");
    if (!(drift_tau > 0)) throw ConfigError("drift_tau must be > 0");
}

void ExperimentGrid::validate() const {
    if (systems.empty() || noise_levels.empty() || traj_counts.empty() || modes.empty())
        throw ConfigError("experiment grid has an empty axis");
    if (runs < 1) throw ConfigError("runs must be >= 1");
    for (double s : noise_levels)
        if (s < 0) throw ConfigError("noise level must be >= 0");
    for (int n : traj_counts)
        if (n < 2) throw ConfigError("trajectory count must be >= 2");
    harness.criteria.validate();
}

std::pair<double, double> wilson_ci(int k, int n, double z) {
    if (n < 1) throw DomainError("wilson_ci needs n >= 1");
    if (k < 0 || k > n) throw DomainError("wilson_ci needs 0 <= k <= n");
    if (!(z > 0)) throw DomainError("wilson_ci needs z > 0");
    const double nn = n, p = static_cast<double>(k) / nn, z2 = z * z;
    const double denom = 1.0 + z2 / nn;
    const double center = (p + z2 / (2 * nn)) / denom;
    const double half = z * std::sqrt(p * (1 - p) / nn + z2 / (4 * nn * nn)) / denom;
    // the boundary cases collapse exactly; don't let rounding pull them off
    const double lo = k == 0 ? 0.0 : std::max(0.0, center - half);
    const double hi = k == n ? 1.0 : std::min(1.0, center + half);
    return {lo, hi};
}

Policy pretrain_policy(const SystemSpec& spec, const HarnessConfig& cfg) {
    Grammar g = make_grammar(spec.variables);
    Policy p = make_policy(g, cfg.pretrain_seed);
    pretrain_mle(p, g, cfg.pretrain_corpus, cfg.pretrain_epochs, cfg.pretrain_seed);
    return p;
}

namespace {

// depends on >= 2 distinct state variables (the non-triviality rule beyond
// the verifier's gradient screen)
bool uses_two_variables(const Expr& e, const std::vector<std::string>& variables) {
    std::set<std::string> seen;
    for (const auto& tok : to_prefix(e))
        if (std::find(variables.begin(), variables.end(), tok) != variables.end())
            seen.insert(tok);
    return seen.size() >= 2;
}

std::vector<std::vector<double>> observed_states(const Dataset& ds) {
    std::vector<std::vector<double>> cloud;
    for (const auto& traj : ds.trajectories)
        for (const auto& z : traj.states) cloud.push_back(z);
    return cloud;
}

}  // namespace

std::vector<TrialResult> run_trial(const SystemSpec& spec, TrialMode mode, double sigma_rel,
                                   int n_traj, std::uint64_t seed, const HarnessConfig& cfg,
                                   const Policy& pretrained) {
    cfg.criteria.validate();
    const auto t_start = std::chrono::steady_clock::now();
    const double t_span = cfg.t_span > 0 ? cfg.t_span : spec.default_t_span;

    TrialResult proto;
    proto.system = spec.name;
    proto.mode = mode;
    proto.seed = seed;
    proto.sigma_rel = sigma_rel;
    proto.n_traj = n_traj;

    auto finish = [&](TrialResult r, const std::string& label) {
        r.target = label;
        auto dt = std::chrono::steady_clock::now() - t_start;
        r.wall_time_s = std::chrono::duration<double>(dt).count();
        return r;
    };
    auto fail_all = [&](const std::string& why) {
        std::vector<TrialResult> out;
        TrialResult r = proto;
        r.reason = why;
        for (const auto& inv : spec.invariants) out.push_back(finish(r, inv.label));
        return out;
    };

    Dataset ds = generate_dataset(spec, n_traj, t_span, cfg.n_obs, sigma_rel,
                                  derive_seed(seed, "data"));

    FieldFn field;
    std::vector<std::vector<double>> cloud;
    if (mode == TrialMode::Hybrid) {
        cloud = observed_states(ds);
        if (cfg.exact_field) {
            field = spec.field;
            proto.field_fidelity = 0.0;
        } else {
            TrainConfig tc = cfg.train;
            tc.seed = derive_seed(seed, "train");
            tc.jobs = 1;
            auto [mlp, rep] = train(ds, tc);
            std::vector<double> mu, sd;
            dataset_statistics(ds, mu, sd);
            double var = 0.0;
            for (double s : sd) var += s * s;
            var /= static_cast<double>(sd.size());
            proto.underfit =
                rep.best_val_mse > cfg.underfit_mse + 16.0 * sigma_rel * sigma_rel * var;
            proto.field_fidelity = field_fidelity(mlp, spec, 500, derive_seed(seed, "fidelity"));
            field = mlp.as_field();
        }
    } else {
        PairBatch pairs = direct_mode_pairs(ds);
        if (pairs.empty()) return fail_all("too few observations for derivative estimates");
        for (const auto& [z, f] : pairs) cloud.push_back(z);
        field = direct_field(pairs, 4);
        proto.field_fidelity = field_fidelity(field, spec, 500, derive_seed(seed, "fidelity"));
    }

    std::vector<double> lo = cloud.front(), hi = cloud.front();
    for (const auto& z : cloud)
        for (std::size_t j = 0; j < z.size(); ++j) {
            lo[j] = std::min(lo[j], z[j]);
            hi[j] = std::max(hi[j], z[j]);
        }
    if (mode == TrialMode::Hybrid && cfg.box_inflate > 1.0)
        for (std::size_t j = 0; j < lo.size(); ++j) {
            const double c = 0.5 * (lo[j] + hi[j]), w = 0.5 * (hi[j] - lo[j]);
            lo[j] = c - cfg.box_inflate * w;
            hi[j] = c + cfg.box_inflate * w;
        }

    if (cfg.ppo_restarts < 1) throw ConfigError("ppo_restarts must be >= 1");
    CandidatePool pool(static_cast<std::size_t>(cfg.ppo.pool_capacity) *
                       static_cast<std::size_t>(cfg.ppo_restarts));
    for (int k = 0; k < cfg.ppo_restarts; ++k) {
        Policy policy = pretrained;
        PpoConfig pc = cfg.ppo;
        pc.lo = lo;
        pc.hi = hi;
        pc.seed = derive_seed(seed, "ppo", static_cast<std::uint64_t>(k));
        pc.jobs = 1;
        auto [run_pool, ppo_rep] = ppo_finetune(policy, field, cfg.reward, pc);
        for (const auto& c : run_pool.entries()) pool.insert(c.expr, c.reward, c.err);
    }
    if (pool.empty()) return fail_all("empty candidate pool");

    auto hull = hull_sample(cloud, cfg.certify_points, derive_seed(seed, "hull"));
    {
        std::vector<double> mag(hull.size(), 0.0), fz(static_cast<std::size_t>(spec.dim), 0.0);
        double ms = 0.0;
        for (std::size_t i = 0; i < hull.size(); ++i) {
            field(hull[i], fz);
            double m2 = 0.0;
            for (double v : fz) m2 += v * v;
            mag[i] = std::sqrt(m2);
            ms += m2;
        }
        const double floor_mag =
            cfg.field_floor * std::sqrt(ms / std::max<std::size_t>(hull.size(), 1));
        std::vector<std::vector<double>> kept;
        for (std::size_t i = 0; i < hull.size(); ++i)
            if (mag[i] >= floor_mag) kept.push_back(hull[i]);
        if (kept.size() >= 32) hull = std::move(kept);
    }
    const double eps = mode == TrialMode::Hybrid ? cfg.eps_hybrid : cfg.eps_direct;
    std::vector<std::pair<Candidate, VerificationReport>> certified;
    for (const auto& cand : pool.entries()) {
        auto rep = certify(cand.expr, field, hull, eps, DefectMode::Normalized);
        if (rep.verdict) certified.push_back({cand, rep});
    }

    auto probe = hull_sample(cloud, cfg.criteria.probe_points, derive_seed(seed, "probe"));
    std::vector<TrialResult> out;
    for (const auto& inv : spec.invariants) {
        TrialResult r = proto;
        for (const auto& [cand, rep] : certified) {
            if (!uses_two_variables(cand.expr, spec.variables)) continue;
            bool matches = false;
            try {
                matches = equivalent_affine(cand.expr, inv.expr, probe);
            } catch (const Error&) {
                continue;  // candidate not evaluable on the probe
            }
            if (!matches) continue;
            double dr = drift_check(cand.expr, spec, cfg.drift_traj, cfg.drift_t_span);
            if (dr > cfg.criteria.drift_tau) continue;
            r.success = true;
            r.discovered = cand.key;
            r.verification = rep;
            r.drift = dr;
            break;
        }
        if (!r.success)
            r.reason = certified.empty() ? "no candidate certified"
                                         : "no certified candidate matched";
        out.push_back(finish(r, inv.label));
    }
    return out;
}

GridResult run_grid(const ExperimentGrid& grid) {
    grid.validate();

    std::map<std::string, Policy> pretrained;
    for (const auto& sys : grid.systems)
        if (!pretrained.count(sys))
            pretrained.emplace(sys, pretrain_policy(find_system(sys), grid.harness));

    struct Job {
        std::string system;
        double sigma = 0.0;
        int n_traj = 0;
        TrialMode mode = TrialMode::Hybrid;
        std::uint64_t seed = 0;
    };
    std::vector<Job> jobs;
    for (const auto& sys : grid.systems)
        for (double sigma : grid.noise_levels)
            for (int nt : grid.traj_counts)
                for (TrialMode m : grid.modes)
                    for (int run = 0; run < grid.runs; ++run)
                        jobs.push_back({sys, sigma, nt, m,
                                        grid.base_seed + static_cast<std::uint64_t>(run)});

    std::vector<std::vector<TrialResult>> slots(jobs.size());
    parallel_for(jobs.size(), grid.harness.jobs, [&](std::size_t i) {
        const Job& jb = jobs[i];
        slots[i] = run_trial(find_system(jb.system), jb.mode, jb.sigma, jb.n_traj, jb.seed,
                             grid.harness, pretrained.at(jb.system));
    });

    GridResult out;
    for (auto& s : slots)
        for (auto& r : s) out.trials.push_back(std::move(r));

    // aggregate in first-appearance order (deterministic: trials are ordered)
    std::vector<CellStat> table;
    for (const auto& r : out.trials) {
        auto it = std::find_if(table.begin(), table.end(), [&](const CellStat& c) {
            return c.system == r.system && c.target == r.target && c.mode == r.mode &&
                   c.sigma_rel == r.sigma_rel && c.n_traj == r.n_traj;
        });
        if (it == table.end()) {
            CellStat c;
            c.system = r.system;
            c.target = r.target;
            c.mode = r.mode;
            c.sigma_rel = r.sigma_rel;
            c.n_traj = r.n_traj;
            table.push_back(c);
            it = std::prev(table.end());
        }
        ++it->runs;
        if (r.success) ++it->successes;
    }
    for (auto& c : table) {
        c.rate = static_cast<double>(c.successes) / static_cast<double>(c.runs);
        auto [lo, hi] = wilson_ci(c.successes, c.runs);
        c.ci_lo = lo;
        c.ci_hi = hi;
    }
    out.table = std::move(table);
    return out;
}

GridResult noise_sweep(const std::string& system, const std::vector<double>& levels, int runs,
                       const HarnessConfig& harness, std::uint64_t base_seed, int n_traj) {
    ExperimentGrid g;
    g.systems = {system};
    g.noise_levels = levels;
    g.traj_counts = {n_traj};
    g.runs = runs;
    g.base_seed = base_seed;
    g.harness = harness;
    return run_grid(g);
}

GridResult sample_efficiency(const std::string& system, const std::vector<int>& traj_counts,
                             int runs, const HarnessConfig& harness, std::uint64_t base_seed,
                             double sigma_rel) {
    ExperimentGrid g;
    g.systems = {system};
    g.noise_levels = {sigma_rel};
    g.traj_counts = traj_counts;
    g.runs = runs;
    g.base_seed = base_seed;
    g.harness = harness;
    return run_grid(g);
}

namespace {

std::string fmt(double v, const char* spec = "%.6g") {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

nlohmann::json verification_json(const VerificationReport& rep) {
    return {{"n_points", rep.n_points},
            {"max_defect", rep.max_defect},
            {"mean_defect", rep.mean_defect},
            {"mode", rep.mode == DefectMode::Raw ? "raw" : "normalized"},
            {"threshold", rep.threshold},
            {"verdict", rep.verdict},
            {"skipped", rep.skipped},
            {"degenerate", rep.degenerate},
            {"reason", rep.reason}};
}

void write_file(const std::string& path, const std::string& body) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << body;
    if (!out) throw IoError("failed writing " + path);
}

}  // namespace

void emit_report(const GridResult& grid, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    fs::create_directories(out_dir + "/trials");

    std::string csv = "system,invariant,mode,sigma_rel,n_traj,runs,successes,rate,ci_lo,ci_hi\n";
    for (const auto& c : grid.table)
        csv += c.system + "," + c.target + "," + mode_name(c.mode) + "," + fmt(c.sigma_rel) +
               "," + std::to_string(c.n_traj) + "," + std::to_string(c.runs) + "," +
               std::to_string(c.successes) + "," + fmt(c.rate, "%.6f") + "," +
               fmt(c.ci_lo, "%.6f") + "," + fmt(c.ci_hi, "%.6f") + "\n";
    write_file(out_dir + "/grid.csv", csv);

    // one markdown row per (system, invariant, cell); one column per mode
    std::vector<TrialMode> modes;
    for (const auto& c : grid.table)
        if (std::find(modes.begin(), modes.end(), c.mode) == modes.end()) modes.push_back(c.mode);
    std::string md = "| System | Invariant | sigma | n_traj |";
    std::string sep = "|---|---|---|---|";
    for (TrialMode m : modes) {
        md += " " + mode_name(m) + (m == TrialMode::Direct ? " (internal baseline)" : "") + " |";
        sep += "---|";
    }
    md += "\n" + sep + "\n";
    std::vector<const CellStat*> done;
    for (const auto& c : grid.table) {
        bool seen = std::any_of(done.begin(), done.end(), [&](const CellStat* d) {
            return d->system == c.system && d->target == c.target &&
                   d->sigma_rel == c.sigma_rel && d->n_traj == c.n_traj;
        });
        if (seen) continue;
        done.push_back(&c);
        double best = -1.0;
        for (TrialMode m : modes)
            for (const auto& o : grid.table)
                if (o.system == c.system && o.target == c.target && o.mode == m &&
                    o.sigma_rel == c.sigma_rel && o.n_traj == c.n_traj)
                    best = std::max(best, o.rate);
        md += "| " + c.system + " | " + c.target + " | " + fmt(c.sigma_rel) + " | " +
              std::to_string(c.n_traj) + " |";
        for (TrialMode m : modes) {
            const CellStat* cell = nullptr;
            for (const auto& o : grid.table)
                if (o.system == c.system && o.target == c.target && o.mode == m &&
                    o.sigma_rel == c.sigma_rel && o.n_traj == c.n_traj)
                    cell = &o;
            if (!cell) {
                md += " – |";
                continue;
            }
            std::string text = fmt(100 * cell->rate, "%.0f") + " [" +
                               fmt(100 * cell->ci_lo, "%.0f") + ", " +
                               fmt(100 * cell->ci_hi, "%.0f") + "]";
            if (cell->rate == best && best >= 0) text = "**" + text + "**";
            md += " " + text + " |";
        }
        md += "\n";
    }
    write_file(out_dir + "/grid.md", md);

    for (std::size_t i = 0; i < grid.trials.size(); ++i) {
        const auto& r = grid.trials[i];
        nlohmann::json j;
        j["system"] = r.system;
        j["target"] = r.target;
        j["mode"] = mode_name(r.mode);
        j["seed"] = r.seed;
        j["sigma_rel"] = r.sigma_rel;
        j["n_traj"] = r.n_traj;
        j["success"] = r.success;
        j["discovered"] = r.discovered;
        j["reason"] = r.reason;
        j["underfit"] = r.underfit;
        j["field_fidelity"] = r.field_fidelity;
        j["verification"] = verification_json(r.verification);
        j["drift"] = r.drift;
        j["wall_time_s"] = r.wall_time_s;
        char name[64];
        std::snprintf(name, sizeof name, "/trials/trial_%04zu.json", i);
        write_file(out_dir + name, j.dump(2) + "\n");
    }
}

void emit_curve(const GridResult& grid, const std::string& axis, const std::string& path) {
    if (axis != "sigma_rel" && axis != "n_traj")
        throw ConfigError("curve axis must be sigma_rel or n_traj");
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::string csv = axis + ",invariant,mode,runs,successes,rate,ci_lo,ci_hi\n";
    for (const auto& c : grid.table) {
        std::string x = axis == "sigma_rel" ? fmt(c.sigma_rel) : std::to_string(c.n_traj);
        csv += x + "," + c.target + "," + mode_name(c.mode) + "," + std::to_string(c.runs) +
               "," + std::to_string(c.successes) + "," + fmt(c.rate, "%.6f") + "," +
               fmt(c.ci_lo, "%.6f") + "," + fmt(c.ci_hi, "%.6f") + "\n";
    }
    write_file(path, csv);
}

}  // namespace forge
