#include "forge/policy.hpp"

#include <algorithm>
#include <cmath>

#include "forge/errors.hpp"
#include "forge/expr.hpp"

namespace forge {

namespace {

constexpr const char* kEndToken = "<end>";

// pending counts open subtree slots; /8 keeps the feature O(1)
double pending_feature(int pending) { return pending / 8.0; }

}  // namespace

void Policy::features(const std::vector<int>& ids, int pending, std::vector<double>& x) const {
    const int begin_row = vocab_size();  // extra embedding row for "no token yet"
    x.assign(static_cast<std::size_t>(3 * emb_dim + 2), 0.0);

    int last = ids.empty() ? begin_row : ids.back();
    int prev = ids.size() < 2 ? begin_row : ids[ids.size() - 2];
    const double* e_last = embeddings.data() + static_cast<std::size_t>(last) * emb_dim;
    const double* e_prev = embeddings.data() + static_cast<std::size_t>(prev) * emb_dim;
    for (int k = 0; k < emb_dim; ++k) {
        x[static_cast<std::size_t>(k)] = e_last[k];
        x[static_cast<std::size_t>(emb_dim + k)] = e_prev[k];
    }

    // mean embedding over the window, the begin row standing in at position -1
    std::size_t n_ctx = std::min(ids.size() + 1, static_cast<std::size_t>(window));
    std::size_t first = ids.size() + 1 - n_ctx;
    for (std::size_t i = first; i < ids.size() + 1; ++i) {
        int id = (i == 0) ? begin_row : ids[i - 1];
        const double* e = embeddings.data() + static_cast<std::size_t>(id) * emb_dim;
        for (int k = 0; k < emb_dim; ++k)
            x[static_cast<std::size_t>(2 * emb_dim + k)] += e[k] / static_cast<double>(n_ctx);
    }
    x[static_cast<std::size_t>(3 * emb_dim)] = pending_feature(pending);
    x[static_cast<std::size_t>(3 * emb_dim + 1)] =
        static_cast<double>(ids.size()) / static_cast<double>(window);
}

void Policy::scores(const std::vector<int>& ids, int pending, std::vector<double>& s) const {
    std::vector<double> x;
    features(ids, pending, x);
    s.assign(vocab.size(), 0.0);
    trunk.forward(x, s);
}

void Policy::probs(const std::vector<int>& ids, int pending, std::vector<double>& p) const {
    std::vector<double> s;
    scores(ids, pending, s);
    softmax(s, p);
}

void softmax(std::span<const double> scores, std::vector<double>& out) {
    out.assign(scores.size(), 0.0);
    double m = *std::max_element(scores.begin(), scores.end());
    double z = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        out[i] = std::exp(scores[i] - m);
        z += out[i];
    }
    for (auto& v : out) v /= z;
}

Policy make_policy(const Grammar& g, std::uint64_t seed, int window) {
    if (window < 2) throw ConfigError("policy window must be >= 2");
    Policy p;
    p.vocab = g.vocabulary();
    p.vocab.push_back(kEndToken);
    p.variables = g.variables;
    p.window = window;
    p.arity.reserve(p.vocab.size());
    for (const auto& tok : p.vocab) {
        int a = op_arity(tok);
        p.arity.push_back(a < 0 ? 0 : a);
    }

    std::size_t rows = p.vocab.size() + 1;  // + begin row
    p.embeddings.assign(rows * static_cast<std::size_t>(p.emb_dim), 0.0);
    Rng rng(derive_seed(seed, "policy_emb"));
    for (auto& e : p.embeddings) e = rng.normal(0.0, 0.2);

    // zero final layer => exactly uniform initial distribution
    p.trunk.init({3 * p.emb_dim + 2, 64, 64, p.vocab_size()}, derive_seed(seed, "policy_trunk"),
                 true);
    return p;
}

std::vector<std::string> sample_tokens(const Policy& p, const PolicySample& s) {
    std::vector<std::string> out;
    out.reserve(s.ids.size());
    for (int id : s.ids)
        if (id != p.end_index()) out.push_back(p.vocab[static_cast<std::size_t>(id)]);
    return out;
}

PolicySample sample_from_policy(const Policy& p, int max_len, std::uint64_t seed) {
    Rng rng(seed);
    return sample_from_policy(p, max_len, rng);
}

PolicySample sample_from_policy(const Policy& p, int max_len, Rng& rng) {
    if (max_len < 1 || max_len > p.window)
        throw ConfigError("max_len must be in [1, context window]");
    PolicySample s;
    int pending = 1;
    std::vector<double> pr;
    while (static_cast<int>(s.ids.size()) < max_len) {
        p.probs(s.ids, pending, pr);
        std::size_t a = rng.categorical(pr);
        s.ids.push_back(static_cast<int>(a));
        s.logprobs.push_back(std::log(pr[a]));
        if (static_cast<int>(a) == p.end_index()) return s;  // mid-expression stop
        pending += p.arity[a] - 1;
        if (pending == 0) {
            s.complete = true;
            return s;
        }
    }
    return s;  // length cap hit mid-expression
}

namespace {

struct TokenStep {
    std::vector<int> context;  // ids before this step
    int pending = 1;
    int target = 0;
};

std::vector<TokenStep> flatten_steps(const Policy& p, const std::vector<std::vector<int>>& seqs) {
    std::vector<TokenStep> steps;
    for (const auto& ids : seqs) {
        TokenStep st;
        st.pending = 1;
        for (int id : ids) {
            st.target = id;
            steps.push_back(st);
            st.context.push_back(id);
            if (id != p.end_index()) st.pending += p.arity[static_cast<std::size_t>(id)] - 1;
        }
    }
    return steps;
}

// gradient of mean cross-entropy over steps; returns the summed CE
double mle_pass(const Policy& p, const std::vector<TokenStep>& steps, double inv_total,
                std::vector<double>* demb, std::vector<double>* dtrunk) {
    double ce_sum = 0.0;
    std::vector<double> x, s, prob, dscores, dx;
    DenseNet::Trace tr;
    const int begin_row = p.vocab_size();
    for (const auto& st : steps) {
        p.features(st.context, st.pending, x);
        s.assign(p.vocab.size(), 0.0);
        if (demb) {
            p.trunk.forward_trace(x, tr, s);
        } else {
            p.trunk.forward(x, s);
        }
        softmax(s, prob);
        double pt = std::max(prob[static_cast<std::size_t>(st.target)], 1e-300);
        ce_sum += -std::log(pt);
        if (!demb) continue;

        dscores = prob;
        dscores[static_cast<std::size_t>(st.target)] -= 1.0;
        for (auto& v : dscores) v *= inv_total;
        dx.assign(x.size(), 0.0);
        p.trunk.vjp(tr, dscores, *dtrunk, dx);

        // embedding rows: last/prev token slots, then the window mean
        int last = st.context.empty() ? begin_row : st.context.back();
        int prev = st.context.size() < 2 ? begin_row : st.context[st.context.size() - 2];
        double* gl = demb->data() + static_cast<std::size_t>(last) * p.emb_dim;
        double* gp = demb->data() + static_cast<std::size_t>(prev) * p.emb_dim;
        for (int k = 0; k < p.emb_dim; ++k) {
            gl[k] += dx[static_cast<std::size_t>(k)];
            gp[k] += dx[static_cast<std::size_t>(p.emb_dim + k)];
        }
        std::size_t n_ctx = std::min(st.context.size() + 1, static_cast<std::size_t>(p.window));
        std::size_t first = st.context.size() + 1 - n_ctx;
        for (std::size_t i = first; i < st.context.size() + 1; ++i) {
            int id = (i == 0) ? begin_row : st.context[i - 1];
            double* ge = demb->data() + static_cast<std::size_t>(id) * p.emb_dim;
            for (int k = 0; k < p.emb_dim; ++k)
                ge[k] +=
                    dx[static_cast<std::size_t>(2 * p.emb_dim + k)] / static_cast<double>(n_ctx);
        }
    }
    return ce_sum;
}

}  // namespace

std::vector<int> tokenize_expr(const Policy& p, const Expr& e) {
    auto toks = to_prefix(e);
    std::vector<int> ids;
    ids.reserve(toks.size() + 1);
    for (const auto& t : toks) {
        auto it = std::find(p.vocab.begin(), p.vocab.end(), t);
        if (it == p.vocab.end())
            throw ConfigError("expression token missing from vocabulary: " + t);
        ids.push_back(static_cast<int>(it - p.vocab.begin()));
    }
    ids.push_back(p.end_index());
    return ids;
}

double sequence_nll(const Policy& p, const std::vector<std::vector<int>>& seqs) {
    auto steps = flatten_steps(p, seqs);
    if (steps.empty()) throw DomainError("no tokens to score");
    return mle_pass(p, steps, 0.0, nullptr, nullptr) / static_cast<double>(steps.size());
}

double sequence_nll_grad(const Policy& p, const std::vector<std::vector<int>>& seqs,
                         std::vector<double>& demb, std::vector<double>& dtrunk) {
    auto steps = flatten_steps(p, seqs);
    if (steps.empty()) throw DomainError("no tokens to score");
    demb.assign(p.embeddings.size(), 0.0);
    dtrunk.assign(p.trunk.params.size(), 0.0);
    return mle_pass(p, steps, 1.0 / static_cast<double>(steps.size()), &demb, &dtrunk) /
           static_cast<double>(steps.size());
}

PretrainReport pretrain_mle(Policy& p, const Grammar& g, int n_corpus, int epochs,
                            std::uint64_t seed, double lr) {
    if (n_corpus < 1000) throw ConfigError("pretraining corpus must have >= 1000 expressions");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");

    // tokenized corpus, one trailing end-marker per expression
    std::vector<std::vector<int>> corpus;
    corpus.reserve(static_cast<std::size_t>(n_corpus));
    Rng corpus_rng(derive_seed(seed, "corpus"));
    for (int i = 0; i < n_corpus; ++i) corpus.push_back(tokenize_expr(p, sample_expr(g, corpus_rng)));

    auto steps = flatten_steps(p, corpus);

    PretrainReport rep;
    rep.n_corpus = n_corpus;
    rep.epochs = epochs;
    rep.initial_perplexity =
        std::exp(mle_pass(p, steps, 0.0, nullptr, nullptr) / static_cast<double>(steps.size()));

    Adam adam_emb, adam_trunk;
    adam_emb.lr = adam_trunk.lr = lr;
    std::vector<double> demb(p.embeddings.size()), dtrunk(p.trunk.params.size());
    std::vector<std::size_t> order(steps.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    const std::size_t batch = 64;
    for (int ep = 0; ep < epochs; ++ep) {
        Rng shuffle_rng(derive_seed(seed, "shuffle", static_cast<std::uint64_t>(ep)));
        shuffle_rng.shuffle(order);
        for (std::size_t b = 0; b < order.size(); b += batch) {
            std::size_t hi = std::min(b + batch, order.size());
            std::vector<TokenStep> chunk;
            chunk.reserve(hi - b);
            for (std::size_t i = b; i < hi; ++i) chunk.push_back(steps[order[i]]);
            std::fill(demb.begin(), demb.end(), 0.0);
            std::fill(dtrunk.begin(), dtrunk.end(), 0.0);
            mle_pass(p, chunk, 1.0 / static_cast<double>(chunk.size()), &demb, &dtrunk);
            adam_emb.step(p.embeddings, demb);
            adam_trunk.step(p.trunk.params, dtrunk);
        }
    }

    rep.final_perplexity =
        std::exp(mle_pass(p, steps, 0.0, nullptr, nullptr) / static_cast<double>(steps.size()));
    return rep;
}

double wellformed_rate(const Policy& p, int n, std::uint64_t seed) {
    if (n < 1) throw DomainError("sample count must be >= 1");
    int ok = 0;
    for (int i = 0; i < n; ++i) {
        auto s = sample_from_policy(p, p.window, derive_seed(seed, "wf", static_cast<std::uint64_t>(i)));
        if (!s.complete) continue;
        try {
            parse_prefix(sample_tokens(p, s), p.variables);
            ++ok;
        } catch (const Error&) {
        }
    }
    return static_cast<double>(ok) / static_cast<double>(n);
}

}  // namespace forge
