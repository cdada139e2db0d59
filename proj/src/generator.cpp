#include "forge/generator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "forge/errors.hpp"
#include "forge/parallel.hpp"
#include "forge/train.hpp"

namespace forge {

void RewardConfig::validate() const {
    if (!(lambda1 > 0)) throw ConfigError("lambda1 must be > 0");
    if (!(lambda2 >= 0)) throw ConfigError("lambda2 must be >= 0");
    if (!(g_max > 0)) throw ConfigError("g_max must be > 0");
    if (pairs.empty()) throw ConfigError("reward batch is empty");
}

RewardBreakdown reward_detail(const Expr& e, const RewardConfig& cfg) {
    cfg.validate();
    const std::size_t n = cfg.pairs.size();
    const int dim = static_cast<int>(cfg.pairs.front().first.size());
    auto grads = grad_symbolic(e, dim);

    double err_sum = 0.0, gnorm_sum = 0.0;
    int skipped = 0;
    std::vector<double> g(static_cast<std::size_t>(dim));
    for (const auto& [z, f] : cfg.pairs) {
        bool ok = try_evaluate(e, z).has_value();
        for (int j = 0; ok && j < dim; ++j) {
            auto gj = try_evaluate(grads[static_cast<std::size_t>(j)], z);
            if (!gj) {
                ok = false;
                break;
            }
            g[static_cast<std::size_t>(j)] = *gj;
        }
        if (!ok) {
            ++skipped;
            continue;
        }
        double dot = 0.0, g2 = 0.0, f2 = 0.0;
        for (int j = 0; j < dim; ++j) {
            dot += g[static_cast<std::size_t>(j)] * f[static_cast<std::size_t>(j)];
            g2 += g[static_cast<std::size_t>(j)] * g[static_cast<std::size_t>(j)];
            f2 += f[static_cast<std::size_t>(j)] * f[static_cast<std::size_t>(j)];
        }
        // finite components can still overflow in the products
        double term = cfg.mode == ErrMode::Raw ? dot * dot : dot * dot / (g2 * f2 + 1e-12);
        if (!std::isfinite(term) || !std::isfinite(g2)) {
            ++skipped;
            continue;
        }
        err_sum += term;
        gnorm_sum += std::sqrt(g2);
    }
    if (skipped > 0.10 * static_cast<double>(n))
        throw TooManyInvalidPointsError("candidate not evaluable on " + std::to_string(skipped) +
                                        " of " + std::to_string(n) + " batch points");

    const double n_valid = static_cast<double>(n - static_cast<std::size_t>(skipped));
    RewardBreakdown out;
    out.n_skipped = skipped;
    out.err = err_sum / n_valid;
    out.grad_term = cfg.lambda2 * std::min(gnorm_sum / n_valid, cfg.g_max);
    out.reward = std::exp(-cfg.lambda1 * out.err) + out.grad_term;
    return out;
}

double reward(const Expr& e, const RewardConfig& cfg) { return reward_detail(e, cfg).reward; }

CandidatePool::CandidatePool(std::size_t capacity) : capacity_(capacity) {
    if (capacity_ == 0) throw ConfigError("pool capacity must be >= 1");
}

double CandidatePool::mean_reward() const {
    normalize();
    if (entries_.empty()) return 0.0;
    double s = 0.0;
    for (const auto& c : entries_) s += c.reward;
    return s / static_cast<double>(entries_.size());
}

void CandidatePool::normalize() const {
    if (!dirty_) return;
    std::sort(entries_.begin(), entries_.end(), [](const Candidate& a, const Candidate& b) {
        if (a.reward != b.reward) return a.reward > b.reward;
        if (a.complexity != b.complexity) return a.complexity < b.complexity;
        return a.key < b.key;
    });
    if (entries_.size() > capacity_) entries_.resize(capacity_);
    index_.clear();
    for (std::size_t i = 0; i < entries_.size(); ++i) index_.emplace(entries_[i].key, i);
    dirty_ = false;
}

void CandidatePool::insert(const Expr& e, double reward_value, double err_value) {
    Candidate c;
    c.expr = simplify(e);
    c.key = to_prefix_string(c.expr);
    c.reward = reward_value;
    c.err = err_value;
    c.complexity = node_count(c.expr);

    auto dup = index_.find(c.key);
    if (dup != index_.end()) {
        Candidate& d = entries_[dup->second];
        if (reward_value > d.reward) {
            d = std::move(c);
            dirty_ = true;
        }
        return;
    }
    index_.emplace(c.key, entries_.size());
    entries_.push_back(std::move(c));
    dirty_ = true;
    if (entries_.size() >= capacity_ + std::max<std::size_t>(capacity_, 64)) normalize();
}

namespace {

struct Episode {
    PolicySample sample;
    Expr expr;            // valid iff evaluable
    bool evaluable = false;
    RewardBreakdown detail;
    double reward = 0.0;
};

void validate_ppo(const PpoConfig& cfg) {
    if (cfg.iters < 1) throw ConfigError("iters must be >= 1");
    if (cfg.batch_episodes < 1) throw ConfigError("batch_episodes must be >= 1");
    if (!(cfg.clip > 0)) throw ConfigError("clip must be > 0");
    if (cfg.update_epochs < 1) throw ConfigError("update_epochs must be >= 1");
    if (!(cfg.lr > 0)) throw ConfigError("lr must be > 0");
    if (cfg.baseline_decay < 0 || cfg.baseline_decay >= 1)
        throw ConfigError("baseline_decay must be in [0, 1)");
    if (cfg.entropy_coef < 0) throw ConfigError("entropy_coef must be >= 0");
    if (cfg.kl_coef < 0) throw ConfigError("kl_coef must be >= 0");
    if (cfg.pair_batch < 1) throw ConfigError("pair_batch must be >= 1");
    if (cfg.lo.empty() || cfg.lo.size() != cfg.hi.size())
        throw ConfigError("pair sampling box is missing or mismatched");
    for (std::size_t j = 0; j < cfg.lo.size(); ++j)
        if (!(cfg.lo[j] < cfg.hi[j])) throw ConfigError("pair sampling box is empty");
    if (cfg.pool_capacity < 1) throw ConfigError("pool capacity must be >= 1");
}

}  // namespace

std::pair<CandidatePool, PpoReport> ppo_finetune(Policy& p, const FieldFn& field,
                                                 RewardConfig reward_cfg, const PpoConfig& cfg) {
    validate_ppo(cfg);
    CandidatePool pool(static_cast<std::size_t>(cfg.pool_capacity));
    PpoReport report;
    Adam adam_emb, adam_trunk;
    adam_emb.lr = adam_trunk.lr = cfg.lr;
    const Policy ref = p;  // frozen pre-trained policy, KL anchor

    double baseline = 0.0;
    long n_sampled = 0, n_wellformed = 0;
    std::vector<double> demb(p.embeddings.size()), dtrunk(p.trunk.params.size());

    for (int iter = 0; iter < cfg.iters; ++iter) {
        reward_cfg.pairs = sample_pairs(field, cfg.lo, cfg.hi, cfg.pair_batch,
                                        derive_seed(cfg.seed, "pairs", static_cast<std::uint64_t>(iter)));

        // episodes are independent given their derived seeds
        std::vector<Episode> eps(static_cast<std::size_t>(cfg.batch_episodes));
        parallel_for(static_cast<std::size_t>(cfg.batch_episodes), cfg.jobs, [&](std::size_t i) {
            std::uint64_t gidx = static_cast<std::uint64_t>(iter) *
                                     static_cast<std::uint64_t>(cfg.batch_episodes) +
                                 i;
            Episode& ep = eps[i];
            ep.sample = sample_from_policy(p, p.window, derive_seed(cfg.seed, "episode", gidx));
            if (!ep.sample.complete) return;
            try {
                ep.expr = parse_prefix(sample_tokens(p, ep.sample), p.variables);
            } catch (const Error&) {
                return;  // cannot happen for closed arity, kept as a guard
            }
            try {
                ep.detail = reward_detail(ep.expr, reward_cfg);
                ep.reward = ep.detail.reward;
                ep.evaluable = true;
            } catch (const TooManyInvalidPointsError&) {
                ep.reward = 0.0;  // scored but worthless
            }
        });

        double mean_r = 0.0;
        for (const auto& ep : eps) {
            ++n_sampled;
            if (ep.sample.complete) ++n_wellformed;
            if (ep.evaluable) pool.insert(ep.expr, ep.reward, ep.detail.err);
            mean_r += ep.reward;
        }
        mean_r /= static_cast<double>(cfg.batch_episodes);
        baseline = iter == 0 ? mean_r
                             : cfg.baseline_decay * baseline + (1 - cfg.baseline_decay) * mean_r;
        report.mean_batch_reward.push_back(mean_r);
        report.mean_pool_reward.push_back(pool.mean_reward());

        std::size_t total_steps = 0;
        for (const auto& ep : eps) total_steps += ep.sample.ids.size();
        if (total_steps == 0) continue;

        // clipped surrogate, advantages broadcast over an episode's tokens
        for (int epoch = 0; epoch < cfg.update_epochs; ++epoch) {
            std::fill(demb.begin(), demb.end(), 0.0);
            std::fill(dtrunk.begin(), dtrunk.end(), 0.0);
            std::vector<double> x, s, prob, dscores, dx, qprob, lograt(p.vocab.size());
            DenseNet::Trace tr;
            const int begin_row = p.vocab_size();
            for (const auto& ep : eps) {
                double adv = ep.reward - baseline;
                std::vector<int> ctx;
                int pending = 1;
                for (std::size_t t = 0; t < ep.sample.ids.size(); ++t) {
                    int a = ep.sample.ids[t];
                    p.features(ctx, pending, x);
                    s.assign(p.vocab.size(), 0.0);
                    p.trunk.forward_trace(x, tr, s);
                    softmax(s, prob);
                    double lp_new = std::log(std::max(prob[static_cast<std::size_t>(a)], 1e-300));
                    double ratio = std::exp(lp_new - ep.sample.logprobs[t]);
                    double clamped = std::clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);
                    // d min(r*A, clamp(r)*A) / d lp = r*A unless the clipped
                    // branch is strictly smaller (then the surrogate is flat)
                    double coef = ratio * adv <= clamped * adv ? ratio * adv : 0.0;
                    double scale = coef / static_cast<double>(total_steps);
                    dscores = prob;
                    for (auto& v : dscores) v *= scale;
                    dscores[static_cast<std::size_t>(a)] -= scale;
                    if (cfg.entropy_coef > 0.0) {
                        // push scores toward higher entropy: dH/ds_j = -p_j (ln p_j + H)
                        double H = 0.0;
                        for (double q : prob) H -= q * std::log(std::max(q, 1e-300));
                        double es = cfg.entropy_coef / static_cast<double>(total_steps);
                        for (std::size_t j = 0; j < prob.size(); ++j)
                            dscores[j] +=
                                es * prob[j] * (std::log(std::max(prob[j], 1e-300)) + H);
                    }
                    if (cfg.kl_coef > 0.0) {
                        // d KL(p||q) / ds_j = p_j ((ln p_j - ln q_j) - KL)
                        ref.probs(ctx, pending, qprob);
                        double kl = 0.0;
                        for (std::size_t j = 0; j < prob.size(); ++j) {
                            lograt[j] = std::log(std::max(prob[j], 1e-300)) -
                                        std::log(std::max(qprob[j], 1e-300));
                            kl += prob[j] * lograt[j];
                        }
                        double ks = cfg.kl_coef / static_cast<double>(total_steps);
                        for (std::size_t j = 0; j < prob.size(); ++j)
                            dscores[j] += ks * prob[j] * (lograt[j] - kl);
                    }
                    dx.assign(x.size(), 0.0);
                    p.trunk.vjp(tr, dscores, dtrunk, dx);

                    int last = ctx.empty() ? begin_row : ctx.back();
                    int prev = ctx.size() < 2 ? begin_row : ctx[ctx.size() - 2];
                    double* gl = demb.data() + static_cast<std::size_t>(last) * p.emb_dim;
                    double* gp = demb.data() + static_cast<std::size_t>(prev) * p.emb_dim;
                    for (int k = 0; k < p.emb_dim; ++k) {
                        gl[k] += dx[static_cast<std::size_t>(k)];
                        gp[k] += dx[static_cast<std::size_t>(p.emb_dim + k)];
                    }
                    std::size_t n_ctx = std::min(ctx.size() + 1, static_cast<std::size_t>(p.window));
                    std::size_t first = ctx.size() + 1 - n_ctx;
                    for (std::size_t i = first; i < ctx.size() + 1; ++i) {
                        int id = (i == 0) ? begin_row : ctx[i - 1];
                        double* ge = demb.data() + static_cast<std::size_t>(id) * p.emb_dim;
                        for (int k = 0; k < p.emb_dim; ++k)
                            ge[k] += dx[static_cast<std::size_t>(2 * p.emb_dim + k)] /
                                     static_cast<double>(n_ctx);
                    }

                    ctx.push_back(a);
                    if (a != p.end_index()) pending += p.arity[static_cast<std::size_t>(a)] - 1;
                }
            }
            adam_emb.step(p.embeddings, demb);
            adam_trunk.step(p.trunk.params, dtrunk);
        }
    }

    report.wellformed_rate =
        n_sampled == 0 ? 0.0 : static_cast<double>(n_wellformed) / static_cast<double>(n_sampled);
    return {std::move(pool), std::move(report)};
}

PairBatch direct_mode_pairs(const Dataset& ds) {
    PairBatch out;
    for (const auto& traj : ds.trajectories) {
        const std::size_t n = traj.size();
        if (n < 3) continue;
        const std::size_t d = traj.dim();
        for (std::size_t j = 0; j < n; ++j) {
            // 3-point Lagrange derivative on irregular times
            std::size_t a = j == 0 ? 0 : (j == n - 1 ? n - 3 : j - 1);
            double ta = traj.times[a], tb = traj.times[a + 1], tc = traj.times[a + 2];
            double t = traj.times[j];
            double wa = (2 * t - tb - tc) / ((ta - tb) * (ta - tc));
            double wb = (2 * t - ta - tc) / ((tb - ta) * (tb - tc));
            double wc = (2 * t - ta - tb) / ((tc - ta) * (tc - tb));
            std::vector<double> dz(d);
            for (std::size_t k = 0; k < d; ++k)
                dz[k] = wa * traj.states[a][k] + wb * traj.states[a + 1][k] +
                        wc * traj.states[a + 2][k];
            out.emplace_back(traj.states[j], std::move(dz));
        }
    }
    return out;
}

FieldFn direct_field(PairBatch pairs, int k) {
    if (pairs.empty()) throw DomainError("direct field needs a nonempty pair set");
    if (k < 1) throw ConfigError("neighbour count must be >= 1");
    auto shared = std::make_shared<PairBatch>(std::move(pairs));
    std::size_t kk = std::min(static_cast<std::size_t>(k), shared->size());
    return [shared, kk](std::span<const double> z, std::span<double> dz) {
        std::vector<std::pair<double, std::size_t>> dist;
        dist.reserve(shared->size());
        for (std::size_t i = 0; i < shared->size(); ++i) {
            const auto& zi = (*shared)[i].first;
            double d2 = 0.0;
            for (std::size_t j = 0; j < zi.size(); ++j) {
                double dd = z[j] - zi[j];
                d2 += dd * dd;
            }
            dist.emplace_back(d2, i);
        }
        std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(kk),
                          dist.end());
        std::fill(dz.begin(), dz.end(), 0.0);
        double wsum = 0.0;
        for (std::size_t r = 0; r < kk; ++r) {
            double w = 1.0 / (dist[r].first + 1e-12);
            const auto& fi = (*shared)[dist[r].second].second;
            for (std::size_t j = 0; j < dz.size(); ++j) dz[j] += w * fi[j];
            wsum += w;
        }
        for (auto& v : dz) v /= wsum;
    };
}

void save_candidates_json(const CandidatePool& pool, const std::string& path, std::uint64_t seed,
                          const std::string& mode) {
    nlohmann::json doc = nlohmann::json::array();
    for (const auto& c : pool.entries()) {
        doc.push_back({{"expr_prefix", c.key},
                       {"reward", c.reward},
                       {"err", c.err},
                       {"complexity", c.complexity},
                       {"seed", seed},
                       {"mode", mode}});
    }
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << doc.dump(2) << "\n";
}

std::vector<CandidateRecord> load_candidates_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path);
    nlohmann::json doc = nlohmann::json::parse(in, nullptr, true);
    std::vector<CandidateRecord> out;
    for (const auto& j : doc) {
        CandidateRecord r;
        r.expr_prefix = j.at("expr_prefix").get<std::string>();
        r.reward = j.at("reward").get<double>();
        r.err = j.at("err").get<double>();
        r.complexity = j.at("complexity").get<int>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.mode = j.at("mode").get<std::string>();
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace forge
