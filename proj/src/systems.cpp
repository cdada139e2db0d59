#include "forge/systems.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "forge/parallel.hpp"
#include "forge/rng.hpp"

namespace forge {

namespace {

Expr inv(const std::string& prefix, const std::vector<std::string>& vars) {
    return parse_prefix_string(prefix, vars);
}

std::vector<SystemSpec> build_catalog() {
    std::vector<SystemSpec> specs;

    {
        SystemSpec ho;
        ho.name = "ho";
        ho.dim = 2;
        ho.variables = {"x", "v"};
        ho.field = [](std::span<const double> z, std::span<double> dz) {
            dz[0] = z[1];
            dz[1] = -z[0];
        };
        ho.invariants = {{"Energy", inv("div add mul x x mul v v 2", ho.variables)}};
        ho.box_lo = {-1.5, -1.5};
        ho.box_hi = {1.5, 1.5};
        ho.default_t_span = 10.0;
        specs.push_back(std::move(ho));
    }
    {
        SystemSpec pend;
        pend.name = "pendulum";
        pend.dim = 2;
        pend.variables = {"q", "p"};
        pend.field = [](std::span<const double> z, std::span<double> dz) {
            dz[0] = z[1];
            dz[1] = -std::sin(z[0]);
        };
        pend.invariants = {{"Energy", inv("sub div mul p p 2 cos q", pend.variables)}};
        // librating orbits only: E = p^2/2 - cos q < 1 everywhere in this box
        pend.box_lo = {-1.5, -1.0};
        pend.box_hi = {1.5, 1.0};
        pend.default_t_span = 10.0;
        specs.push_back(std::move(pend));
    }
    {
        SystemSpec kep;
        kep.name = "kepler";
        kep.dim = 4;
        kep.variables = {"x", "y", "vx", "vy"};
        kep.field = [](std::span<const double> z, std::span<double> dz) {
            const double r2 = z[0] * z[0] + z[1] * z[1];
            const double inv_r3 = 1.0 / (r2 * std::sqrt(r2));
            dz[0] = z[2];
            dz[1] = z[3];
            dz[2] = -z[0] * inv_r3;
            dz[3] = -z[1] * inv_r3;
        };
        kep.invariants = {
            {"Energy",
             inv("sub div add mul vx vx mul vy vy 2 pow add mul x x mul y y -0.5", kep.variables)},
            {"AngMom", inv("sub mul x vy mul y vx", kep.variables)},
        };
        kep.box_lo = {-1.5, -1.5, -1.0, -1.0};
        kep.box_hi = {1.5, 1.5, 1.0, 1.0};
        kep.ic_accept = [](std::span<const double> z) {
            const double r = std::hypot(z[0], z[1]);
            if (r < 0.5 || r > 2.0) return false;
            const double energy = 0.5 * (z[2] * z[2] + z[3] * z[3]) - 1.0 / r;
            if (energy >= 0.0) return false;
            // keep perihelion away from the singularity: near-collision orbits
            // blow the default-tolerance conservation budget during generation
            const double ang = z[0] * z[3] - z[1] * z[2];
            const double ecc = std::sqrt(std::max(0.0, 1.0 + 2.0 * energy * ang * ang));
            return ang * ang / (1.0 + ecc) >= 0.2;
        };
        kep.default_t_span = 20.0;
        specs.push_back(std::move(kep));
    }
    {
        SystemSpec lorenz;
        lorenz.name = "lorenz";
        lorenz.dim = 3;
        lorenz.variables = {"x", "y", "z"};
        lorenz.field = [](std::span<const double> z, std::span<double> dz) {
            const double sigma = 10.0, rho = 28.0, beta = 8.0 / 3.0;
            dz[0] = sigma * (z[1] - z[0]);
            dz[1] = z[0] * (rho - z[2]) - z[1];
            dz[2] = z[0] * z[1] - beta * z[2];
        };
        // chaotic and dissipative: no conserved quantity is claimed here
        lorenz.box_lo = {-15.0, -15.0, 5.0};
        lorenz.box_hi = {15.0, 15.0, 35.0};
        lorenz.default_t_span = 5.0;
        specs.push_back(std::move(lorenz));
    }
    return specs;
}

}  // namespace

double conservation_defect(const SystemSpec& spec, int n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> z(spec.dim), f(spec.dim);
    double worst = 0.0;
    for (const auto& [label, expr] : spec.invariants) {
        auto grad = grad_symbolic(expr, spec.dim);
        for (int k = 0; k < n; ++k) {
            bool valid = true;
            for (int i = 0; i < spec.dim; ++i) z[i] = rng.uniform(spec.box_lo[i], spec.box_hi[i]);
            if (spec.ic_accept && !spec.ic_accept(z)) { --k; continue; }
            spec.field(z, f);
            double dot = 0.0, gn = 0.0, fn = 0.0;
            for (int i = 0; i < spec.dim; ++i) {
                auto gi = try_evaluate(grad[i], z);
                if (!gi) { valid = false; break; }
                dot += *gi * f[i];
                gn += *gi * *gi;
                fn += f[i] * f[i];
            }
            if (!valid) continue;
            worst = std::max(worst, std::abs(dot) / (std::sqrt(gn) * std::sqrt(fn) + 1e-12));
        }
    }
    return worst;
}

const std::vector<SystemSpec>& catalog() {
    static const std::vector<SystemSpec> specs = [] {
        auto s = build_catalog();
        for (const auto& spec : s) {
            if (conservation_defect(spec, 1000, 20240417ULL) > 1e-10)
                throw ConfigError("catalog system '" + spec.name +
                                  "' fails its conservation self-check");
        }
        return s;
    }();
    return specs;
}

const SystemSpec& find_system(const std::string& name) {
    for (const auto& s : catalog())
        if (s.name == name) return s;
    std::string known;
    for (const auto& s : catalog()) known += (known.empty() ? "" : ", ") + s.name;
    throw ConfigError("unknown system '" + name + "' (known: " + known + ")");
}

std::vector<std::vector<double>> sample_initial_conditions(const SystemSpec& spec, int n,
                                                           std::uint64_t seed) {
    if (n < 1) throw DomainError("need n >= 1 initial conditions");
    Rng rng(derive_seed(seed, "ic"));
    std::vector<std::vector<double>> out;
    out.reserve(static_cast<std::size_t>(n));
    long attempts = 0;
    const long max_attempts = 10000L * n;
    while (static_cast<int>(out.size()) < n) {
        if (++attempts > max_attempts)
            throw RejectionExhaustedError("initial-condition rejection rate too high for '" +
                                          spec.name + "'");
        std::vector<double> z(spec.dim);
        for (int i = 0; i < spec.dim; ++i) z[i] = rng.uniform(spec.box_lo[i], spec.box_hi[i]);
        if (spec.ic_accept && !spec.ic_accept(z)) continue;
        out.push_back(std::move(z));
    }
    return out;
}

Dataset generate_dataset(const SystemSpec& spec, int n_traj, double t_span, int n_obs,
                         double sigma_rel, std::uint64_t seed, int jobs) {
    if (n_traj < 2) throw DomainError("need at least 2 trajectories for a train/val split");
    if (n_obs < 8) throw DomainError("need at least 8 observations per trajectory");
    if (sigma_rel < 0) throw DomainError("sigma_rel must be >= 0");
    if (t_span <= 0) throw DomainError("t_span must be positive");

    Dataset ds;
    ds.system = spec.name;
    ds.sigma_rel = sigma_rel;
    ds.seed = seed;
    ds.trajectories.resize(static_cast<std::size_t>(n_traj));

    auto ics = sample_initial_conditions(spec, n_traj, seed);
    IntegratorConfig cfg;  // dopri5 defaults

    parallel_for(static_cast<std::size_t>(n_traj), jobs, [&](std::size_t ti) {
        // per-trajectory streams keep results independent of execution order
        Rng trng(derive_seed(seed, "times", ti));
        std::vector<double> times(static_cast<std::size_t>(n_obs));
        for (int attempt = 0;; ++attempt) {
            for (auto& t : times) t = trng.uniform(0.0, t_span);
            std::sort(times.begin(), times.end());
            bool strict = true;
            for (std::size_t i = 1; i < times.size(); ++i)
                if (times[i] - times[i - 1] < 1e-9 * t_span) strict = false;
            if (strict) break;
            if (attempt >= 100) throw RejectionExhaustedError("could not draw distinct times");
        }
        Trajectory traj = integrate(spec.field, ics[ti], times, cfg);
        traj.system = spec.name;
        traj.sigma_rel = sigma_rel;
        traj.clean_states = traj.states;
        if (sigma_rel > 0) {
            // noise scale: sigma_rel times the per-coordinate std of the clean trajectory
            const std::size_t d = traj.dim();
            std::vector<double> mean(d, 0.0), sd(d, 0.0);
            for (const auto& s : traj.clean_states)
                for (std::size_t j = 0; j < d; ++j) mean[j] += s[j];
            for (auto& m : mean) m /= static_cast<double>(traj.size());
            for (const auto& s : traj.clean_states)
                for (std::size_t j = 0; j < d; ++j) sd[j] += (s[j] - mean[j]) * (s[j] - mean[j]);
            for (auto& v : sd) v = std::sqrt(v / static_cast<double>(traj.size()));
            Rng nrng(derive_seed(seed, "noise", ti));
            for (auto& s : traj.states)
                for (std::size_t j = 0; j < d; ++j) s[j] += nrng.normal(0.0, sigma_rel * sd[j]);
        }
        ds.trajectories[ti] = std::move(traj);
    });

    const int n_val = std::max(1, (n_traj + 2) / 5);
    for (int i = 0; i < n_traj - n_val; ++i) ds.train_idx.push_back(i);
    for (int i = n_traj - n_val; i < n_traj; ++i) ds.val_idx.push_back(i);
    return ds;
}

void dataset_bounding_box(const Dataset& ds, std::vector<double>& lo, std::vector<double>& hi) {
    const std::size_t d = ds.dim();
    lo.assign(d, std::numeric_limits<double>::infinity());
    hi.assign(d, -std::numeric_limits<double>::infinity());
    for (int ti : ds.train_idx)
        for (const auto& s : ds.trajectories[static_cast<std::size_t>(ti)].states)
            for (std::size_t j = 0; j < d; ++j) {
                lo[j] = std::min(lo[j], s[j]);
                hi[j] = std::max(hi[j], s[j]);
            }
}

void dataset_statistics(const Dataset& ds, std::vector<double>& mean, std::vector<double>& stddev) {
    const std::size_t d = ds.dim();
    mean.assign(d, 0.0);
    stddev.assign(d, 0.0);
    std::size_t n = 0;
    for (int ti : ds.train_idx) {
        for (const auto& s : ds.trajectories[static_cast<std::size_t>(ti)].states) {
            for (std::size_t j = 0; j < d; ++j) mean[j] += s[j];
            ++n;
        }
    }
    for (auto& m : mean) m /= static_cast<double>(n);
    for (int ti : ds.train_idx)
        for (const auto& s : ds.trajectories[static_cast<std::size_t>(ti)].states)
            for (std::size_t j = 0; j < d; ++j) stddev[j] += (s[j] - mean[j]) * (s[j] - mean[j]);
    for (auto& v : stddev) v = std::max(std::sqrt(v / static_cast<double>(n)), 1e-12);
}

void save_dataset_json(const Dataset& ds, const std::string& path) {
    nlohmann::json j;
    j["system"] = ds.system;
    j["sigma_rel"] = ds.sigma_rel;
    j["seed"] = ds.seed;
    j["trajectories"] = nlohmann::json::array();
    for (const auto& t : ds.trajectories) {
        nlohmann::json jt;
        jt["times"] = t.times;
        jt["states"] = t.states;
        jt["clean_states"] = t.clean_states;
        j["trajectories"].push_back(std::move(jt));
    }
    j["split"] = {{"train", ds.train_idx}, {"val", ds.val_idx}};
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << j.dump(2) << '\n';
}

Dataset load_dataset_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path);
    nlohmann::json j;
    in >> j;
    Dataset ds;
    ds.system = j.at("system").get<std::string>();
    ds.sigma_rel = j.at("sigma_rel").get<double>();
    ds.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& jt : j.at("trajectories")) {
        Trajectory t;
        t.system = ds.system;
        t.sigma_rel = ds.sigma_rel;
        t.times = jt.at("times").get<std::vector<double>>();
        t.states = jt.at("states").get<std::vector<std::vector<double>>>();
        t.clean_states = jt.at("clean_states").get<std::vector<std::vector<double>>>();
        ds.trajectories.push_back(std::move(t));
    }
    ds.train_idx = j.at("split").at("train").get<std::vector<int>>();
    ds.val_idx = j.at("split").at("val").get<std::vector<int>>();
    return ds;
}

void save_dataset_csv(const Dataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    const std::size_t d = ds.dim();
    out << "traj_id,t";
    for (std::size_t j = 0; j < d; ++j) out << ",z_" << j;
    out << '\n';
    for (std::size_t ti = 0; ti < ds.trajectories.size(); ++ti) {
        const auto& t = ds.trajectories[ti];
        for (std::size_t k = 0; k < t.size(); ++k) {
            out << ti << ',' << format_double(t.times[k]);
            for (std::size_t j = 0; j < d; ++j) out << ',' << format_double(t.states[k][j]);
            out << '\n';
        }
    }
}

}  // namespace forge
