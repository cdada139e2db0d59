#ifndef FORGE_POLICY_HPP
#define FORGE_POLICY_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "forge/grammar.hpp"
#include "forge/mlp.hpp"
#include "forge/rng.hpp"

namespace forge {

// Autoregressive next-token scorer over the grammar vocabulary plus an
// end-marker. Deliberately small: token embeddings feed a fixed-width trunk
// ([emb(last), emb(prev), mean emb over the context window, open slots,
// length] -> 2 hidden blocks of 64 -> scores). The fixed window stands in for real
// sequence models; everything downstream only needs a samplable, trainable
// distribution over prefix token sequences.
struct Policy {
    std::vector<std::string> vocab;  // grammar tokens, then the end-marker
    std::vector<int> arity;          // per vocab entry; end-marker = 0
    std::vector<std::string> variables;
    int window = 40;
    int emb_dim = 16;
    std::vector<double> embeddings;  // (vocab+1) x emb_dim; extra row = begin
    DenseNet trunk;                  // [3*emb_dim + 2, 64, 64, vocab]

    int vocab_size() const { return static_cast<int>(vocab.size()); }
    int end_index() const { return vocab_size() - 1; }

    // features for the state (ids emitted so far, open subtree slots)
    void features(const std::vector<int>& ids, int pending, std::vector<double>& x) const;
    void scores(const std::vector<int>& ids, int pending, std::vector<double>& s) const;
    // softmax of scores; positive, sums to 1 within 1e-9
    void probs(const std::vector<int>& ids, int pending, std::vector<double>& p) const;
};

Policy make_policy(const Grammar& g, std::uint64_t seed, int window = 40);

void softmax(std::span<const double> scores, std::vector<double>& out);

// One sampled episode. complete=false means the draw hit the length cap (or
// the end-marker) while subtrees were still open; that is a value, downstream
// assigns it zero reward.
struct PolicySample {
    bool complete = false;
    std::vector<int> ids;           // sampled actions, end-marker included
    std::vector<double> logprobs;   // log pi(a_t | s_t), same length
};

// grammar tokens of a sample (end-marker dropped)
std::vector<std::string> sample_tokens(const Policy& p, const PolicySample& s);

PolicySample sample_from_policy(const Policy& p, int max_len, std::uint64_t seed);
PolicySample sample_from_policy(const Policy& p, int max_len, Rng& rng);

// prefix tokens as vocabulary ids, with the trailing end-marker
std::vector<int> tokenize_expr(const Policy& p, const Expr& e);

// mean next-token negative log-likelihood over tokenized sequences
double sequence_nll(const Policy& p, const std::vector<std::vector<int>>& seqs);
// same value; accumulates d(mean nll) into demb / dtrunk
double sequence_nll_grad(const Policy& p, const std::vector<std::vector<int>>& seqs,
                         std::vector<double>& demb, std::vector<double>& dtrunk);

struct PretrainReport {
    double initial_perplexity = 0.0;
    double final_perplexity = 0.0;
    int n_corpus = 0;
    int epochs = 0;
};

// Next-token maximum likelihood on a corpus of grammar samples (each
// tokenized with a trailing end-marker). Trains the policy in place.
PretrainReport pretrain_mle(Policy& p, const Grammar& g, int n_corpus, int epochs,
                            std::uint64_t seed, double lr = 3e-3);

// fraction of n samples that close into a parseable expression
double wellformed_rate(const Policy& p, int n, std::uint64_t seed);

}  // namespace forge

#endif
