#ifndef FORGE_VERIFIER_HPP
#define FORGE_VERIFIER_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "forge/expr.hpp"
#include "forge/integrate.hpp"
#include "forge/systems.hpp"

namespace forge {

enum class DefectMode { Raw, Normalized };

// default certification thresholds: a learned field cannot support the strict
// raw bound, so the normalized defect carries a looser one
inline constexpr double kEpsRawExact = 1e-6;
inline constexpr double kEpsNormalizedLearned = 1e-3;

struct VerificationReport {
    std::size_t n_points = 0;
    double max_defect = 0.0;
    double mean_defect = 0.0;
    DefectMode mode = DefectMode::Normalized;
    double threshold = kEpsNormalizedLearned;
    bool verdict = false;
    std::size_t skipped = 0;     // non-finite evaluations
    std::size_t degenerate = 0;  // points with ||grad C|| < 1e-9
    std::string reason;          // non-empty iff auto-failed
};

// Rejection sampler for "inside the data region": uniform in the cloud's
// bounding box, accepted within 5% of the box diagonal of the nearest cloud
// point. Throws AcceptanceTooLowError if acceptance < 1% after 1e6 draws,
// DomainError for clouds smaller than dim+1.
std::vector<std::vector<double>> hull_sample(const std::vector<std::vector<double>>& cloud, int n,
                                             std::uint64_t seed);

// Defect |grad C . f| (optionally normalized by ||grad C|| ||f|| + 1e-12) over
// the points; verdict = max < eps, <= 1% skipped, and no gradient degeneracy
// (||grad C|| < 1e-9 at > 50% of points fails with a reason instead of a
// throw, so a trivial candidate is an outcome rather than an abort).
VerificationReport certify(const Expr& e, const FieldFn& field,
                           const std::vector<std::vector<double>>& points, double eps,
                           DefectMode mode = DefectMode::Normalized);

// Max over trajectories of max_t |C(z(t)) - C(z(0))|, relative to the range
// of C over the whole trajectory set; integrates the true system at tight
// tolerances. A conserved quantity drifts at solver-error level only.
double drift_check(const Expr& e, const SystemSpec& spec, int n_traj, double t_span,
                   std::uint64_t seed = 99991);

void save_verification_json(const VerificationReport& rep, const Expr& e,
                            const std::string& field_fingerprint, const std::string& path);
VerificationReport load_verification_json(const std::string& path);

}  // namespace forge

#endif
