#ifndef FORGE_GENERATOR_HPP
#define FORGE_GENERATOR_HPP

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "forge/expr.hpp"
#include "forge/policy.hpp"
#include "forge/systems.hpp"

namespace forge {

using PairBatch = std::vector<std::pair<std::vector<double>, std::vector<double>>>;

enum class ErrMode { Raw, Normalized };

// Reward R(C) = exp(-lambda1 * err) + lambda2 * min(mean ||grad C||, g_max).
// The raw err is the mean squared invariance defect; the normalized form
// divides each defect by ||grad C||^2 ||f||^2 so rescaling a candidate cannot
// fake invariance. The cap keeps the non-degeneracy bonus bounded.
struct RewardConfig {
    double lambda1 = 10.0;
    double lambda2 = 0.1;
    double g_max = 10.0;
    ErrMode mode = ErrMode::Normalized;
    PairBatch pairs;  // state-derivative batch the candidate is scored on

    void validate() const;  // ConfigError
};

struct RewardBreakdown {
    double reward = 0.0;
    double err = 0.0;
    double grad_term = 0.0;
    int n_skipped = 0;  // non-finite points (<= 10% of batch)
};

RewardBreakdown reward_detail(const Expr& e, const RewardConfig& cfg);
double reward(const Expr& e, const RewardConfig& cfg);  // throws TooManyInvalidPoints

struct Candidate {
    Expr expr;
    std::string key;  // simplified prefix string, the dedup identity
    double reward = 0.0;
    double err = 0.0;
    int complexity = 0;
};

// Bounded best-k set of scored candidates. Ordered by reward descending;
// ties break toward lower complexity, then lexicographic key, so pool state
// is a pure function of the insertion set.
class CandidatePool {
public:
    explicit CandidatePool(std::size_t capacity = 32);

    // keeps the better-rewarded entry on key collision
    void insert(const Expr& e, double reward_value, double err_value);
    // reward-descending, truncated to capacity (sorted lazily: inserts are
    // O(1) against a key index, ordering settles on read)
    const std::vector<Candidate>& entries() const {
        normalize();
        return entries_;
    }
    std::size_t size() const {
        normalize();
        return entries_.size();
    }
    std::size_t capacity() const { return capacity_; }
    bool empty() const { return entries_.empty(); }
    double mean_reward() const;

private:
    void normalize() const;

    std::size_t capacity_;
    mutable std::vector<Candidate> entries_;
    mutable std::unordered_map<std::string, std::size_t> index_;
    mutable bool dirty_ = false;
};

struct PpoConfig {
    int iters = 200;
    int batch_episodes = 64;
    double clip = 0.2;
    int update_epochs = 4;
    double lr = 1e-3;
    double baseline_decay = 0.9;   // EMA baseline instead of a critic
    double entropy_coef = 0.0;     // optional bonus toward uniform sampling
    double kl_coef = 0.15;         // anchor to the pre-trained policy; keeps
                                   // exploration alive instead of collapsing
                                   // onto high-gradient junk
    int pair_batch = 256;          // refreshed via sample_pairs every iteration
    std::vector<double> lo, hi;    // state box the pair batch is drawn from
    std::uint64_t seed = 0;
    int jobs = 1;
    int pool_capacity = 32;
};

struct PpoReport {
    std::vector<double> mean_batch_reward;  // per iteration
    std::vector<double> mean_pool_reward;   // per iteration, after insertions
    double wellformed_rate = 0.0;           // over all sampled episodes
};

// Bandit-style PPO: one expression per episode, terminal reward, advantage
// against an exponential-moving-average baseline, clipped-surrogate updates.
// Incomplete or unevaluable samples score 0. Every evaluable candidate lands
// in the pool.
std::pair<CandidatePool, PpoReport> ppo_finetune(Policy& p, const FieldFn& field,
                                                 RewardConfig reward_cfg, const PpoConfig& cfg);

// Derivative estimates straight from (noisy) observations: 3-point Lagrange
// differentiation on irregular times, one-sided at the ends. Trajectories
// with fewer than 3 observations are skipped.
PairBatch direct_mode_pairs(const Dataset& ds);

// Nearest-neighbour inverse-distance interpolant over a pair set; the
// direct mode's stand-in for a learned field.
FieldFn direct_field(PairBatch pairs, int k = 4);

void save_candidates_json(const CandidatePool& pool, const std::string& path, std::uint64_t seed,
                          const std::string& mode);
struct CandidateRecord {
    std::string expr_prefix;
    double reward = 0.0;
    double err = 0.0;
    int complexity = 0;
    std::uint64_t seed = 0;
    std::string mode;
};
std::vector<CandidateRecord> load_candidates_json(const std::string& path);

}  // namespace forge

#endif
