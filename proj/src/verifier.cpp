#include "forge/verifier.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "forge/errors.hpp"
#include "forge/rng.hpp"

namespace forge {

std::vector<std::vector<double>> hull_sample(const std::vector<std::vector<double>>& cloud, int n,
                                             std::uint64_t seed) {
    if (n < 0) throw ConfigError("hull_sample n must be >= 0");
    if (cloud.empty()) throw DomainError("hull_sample needs a point cloud");
    const std::size_t d = cloud.front().size();
    if (cloud.size() < d + 1)
        throw DomainError("hull_sample cloud must have at least dim+1 points");
    for (const auto& p : cloud)
        if (p.size() != d) throw DomainError("hull_sample cloud points disagree on dimension");
    if (n == 0) return {};

    std::vector<double> lo(cloud.front()), hi(cloud.front());
    for (const auto& p : cloud)
        for (std::size_t j = 0; j < d; ++j) {
            lo[j] = std::min(lo[j], p[j]);
            hi[j] = std::max(hi[j], p[j]);
        }
    double diag2 = 0.0;
    for (std::size_t j = 0; j < d; ++j) diag2 += (hi[j] - lo[j]) * (hi[j] - lo[j]);
    const double rho2 = 0.05 * 0.05 * diag2;  // within 5% of the diagonal

    Rng rng(derive_seed(seed, "hull"));
    std::vector<std::vector<double>> out;
    out.reserve(static_cast<std::size_t>(n));
    std::vector<double> z(d);
    long draws = 0;
    while (out.size() < static_cast<std::size_t>(n)) {
        ++draws;
        for (std::size_t j = 0; j < d; ++j) z[j] = rng.uniform(lo[j], hi[j]);
        double best = std::numeric_limits<double>::infinity();
        for (const auto& p : cloud) {
            double dist2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) dist2 += (z[j] - p[j]) * (z[j] - p[j]);
            best = std::min(best, dist2);
            if (best <= rho2) break;
        }
        if (best <= rho2) out.push_back(z);
        if (draws >= 1000000 && out.size() < static_cast<std::size_t>(0.01 * draws))
            throw AcceptanceTooLowError("hull_sample acceptance below 1% after 1e6 draws");
    }
    return out;
}

VerificationReport certify(const Expr& e, const FieldFn& field,
                           const std::vector<std::vector<double>>& points, double eps,
                           DefectMode mode) {
    if (points.empty()) throw DomainError("certify needs a nonempty point set");
    if (!(eps > 0)) throw ConfigError("certify threshold must be > 0");
    const std::size_t d = points.front().size();
    auto grads = grad_symbolic(e, static_cast<int>(d));

    VerificationReport rep;
    rep.n_points = points.size();
    rep.mode = mode;
    rep.threshold = eps;

    std::vector<double> g(d), f(d);
    double sum = 0.0, comp = 0.0;  // Kahan: order-stable mean
    std::size_t valid = 0;
    for (const auto& z : points) {
        if (z.size() != d) throw DomainError("certify points disagree on dimension");
        bool ok = true;
        for (std::size_t j = 0; j < d; ++j) {
            auto gj = try_evaluate(grads[j], z);
            if (!gj) {
                ok = false;
                break;
            }
            g[j] = *gj;
        }
        if (ok) {
            field(z, f);
            for (std::size_t j = 0; j < d; ++j) ok = ok && std::isfinite(f[j]);
        }
        double defect = 0.0;
        if (ok) {
            double dot = 0.0, g2 = 0.0, f2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                dot += g[j] * f[j];
                g2 += g[j] * g[j];
                f2 += f[j] * f[j];
            }
            if (std::sqrt(g2) < 1e-9) ++rep.degenerate;
            defect = mode == DefectMode::Raw
                         ? std::abs(dot)
                         : std::abs(dot) / (std::sqrt(g2) * std::sqrt(f2) + 1e-12);
            ok = std::isfinite(defect);
        }
        if (!ok) {
            ++rep.skipped;
            continue;
        }
        ++valid;
        rep.max_defect = std::max(rep.max_defect, defect);
        double y = defect - comp;
        double t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    rep.mean_defect = valid == 0 ? 0.0 : sum / static_cast<double>(valid);

    bool degenerate_fail = rep.degenerate > rep.n_points / 2;
    rep.verdict = rep.max_defect < eps &&
                  static_cast<double>(rep.skipped) <= 0.01 * static_cast<double>(rep.n_points) &&
                  !degenerate_fail;
    if (degenerate_fail)
        rep.reason = "gradient degenerate at " + std::to_string(rep.degenerate) + " of " +
                     std::to_string(rep.n_points) + " points";
    else if (static_cast<double>(rep.skipped) > 0.01 * static_cast<double>(rep.n_points))
        rep.reason = "skipped " + std::to_string(rep.skipped) + " of " +
                     std::to_string(rep.n_points) + " points";
    return rep;
}

double drift_check(const Expr& e, const SystemSpec& spec, int n_traj, double t_span,
                   std::uint64_t seed) {
    if (n_traj < 1) throw ConfigError("drift_check needs n_traj >= 1");
    if (!(t_span > 0)) throw ConfigError("drift_check needs t_span > 0");

    IntegratorConfig icfg;
    icfg.rtol = 1e-10;
    icfg.atol = 1e-12;
    const int n_samples = 200;
    std::vector<double> times(n_samples);
    for (int i = 0; i < n_samples; ++i)
        times[static_cast<std::size_t>(i)] = t_span * i / (n_samples - 1);

    auto ics = sample_initial_conditions(spec, n_traj, derive_seed(seed, "drift"));
    double worst = 0.0;
    double cmin = std::numeric_limits<double>::infinity(), cmax = -cmin;
    std::vector<double> deviation(ics.size(), 0.0);
    for (std::size_t i = 0; i < ics.size(); ++i) {
        Trajectory traj = integrate(spec.field, ics[i], times, icfg);
        double c0 = evaluate(e, traj.states.front());
        for (const auto& z : traj.states) {
            double c = evaluate(e, z);
            cmin = std::min(cmin, c);
            cmax = std::max(cmax, c);
            deviation[i] = std::max(deviation[i], std::abs(c - c0));
        }
    }
    for (double dev : deviation) worst = std::max(worst, dev);
    return worst / (cmax - cmin + 1e-12);
}

void save_verification_json(const VerificationReport& rep, const Expr& e,
                            const std::string& field_fingerprint, const std::string& path) {
    nlohmann::json j;
    j["n_points"] = rep.n_points;
    j["max_defect"] = rep.max_defect;
    j["mean_defect"] = rep.mean_defect;
    j["mode"] = rep.mode == DefectMode::Raw ? "raw" : "normalized";
    j["threshold"] = rep.threshold;
    j["verdict"] = rep.verdict;
    j["skipped"] = rep.skipped;
    j["degenerate"] = rep.degenerate;
    j["reason"] = rep.reason;
    j["expr_prefix"] = to_prefix_string(e);
    j["field_fingerprint"] = field_fingerprint;
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << j.dump(2) << "\n";
    if (!out) throw IoError("failed writing " + path);
}

VerificationReport load_verification_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    nlohmann::json j;
    in >> j;
    VerificationReport rep;
    rep.n_points = j.at("n_points").get<std::size_t>();
    rep.max_defect = j.at("max_defect").get<double>();
    rep.mean_defect = j.at("mean_defect").get<double>();
    rep.mode = j.at("mode").get<std::string>() == "raw" ? DefectMode::Raw : DefectMode::Normalized;
    rep.threshold = j.at("threshold").get<double>();
    rep.verdict = j.at("verdict").get<bool>();
    rep.skipped = j.at("skipped").get<std::size_t>();
    rep.degenerate = j.at("degenerate").get<std::size_t>();
    rep.reason = j.at("reason").get<std::string>();
    return rep;
}

}  // namespace forge
