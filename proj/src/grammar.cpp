#include "forge/grammar.hpp"

#include <cmath>

namespace forge {

namespace {

void check_weights(const std::vector<double>& w, std::size_t expected, const char* what) {
    if (w.size() != expected)
        throw ConfigError(std::string(what) + ": expected " + std::to_string(expected) + " weights");
    double sum = 0.0;
    for (double v : w) {
        if (!(v >= 0.0)) throw ConfigError(std::string(what) + ": negative weight");
        sum += v;
    }
    if (sum <= 0.0) throw ConfigError(std::string(what) + ": weights sum to zero");
}

std::vector<double> normalized(const std::vector<double>& w) {
    double sum = 0.0;
    for (double v : w) sum += v;
    std::vector<double> out(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) out[i] = w[i] / sum;
    return out;
}

// Sampler walks top-down; depth budget decrements per level, leaves forced at 1.
Expr sample_rec(const Grammar& g, Rng& rng, const std::vector<double>& kind_w,
                const std::vector<double>& unary_w, const std::vector<double>& binary_w,
                int depth_left) {
    std::size_t kind;
    if (depth_left <= 1) {
        // leaf only: renormalize over {constant, variable}
        double pc = kind_w[0], pv = kind_w[1];
        double u = rng.uniform() * (pc + pv);
        kind = u < pc ? 0 : 1;
    } else {
        kind = rng.categorical(kind_w);
    }
    switch (kind) {
        case 0: {
            std::size_t i = rng.uniform_index(g.constant_palette.size());
            return Expr::constant(g.constant_palette[i]);
        }
        case 1: {
            std::size_t i = rng.uniform_index(g.variables.size());
            return Expr::variable(static_cast<int>(i), g.variables[i]);
        }
        case 2: {
            static const UnaryOp ops[] = {UnaryOp::Neg, UnaryOp::Sin, UnaryOp::Cos};
            UnaryOp op = ops[rng.categorical(unary_w)];
            return Expr::unary(op, sample_rec(g, rng, kind_w, unary_w, binary_w, depth_left - 1));
        }
        default: {
            static const BinaryOp ops[] = {BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul,
                                           BinaryOp::Div, BinaryOp::Pow};
            BinaryOp op = ops[rng.categorical(binary_w)];
            Expr left = sample_rec(g, rng, kind_w, unary_w, binary_w, depth_left - 1);
            if (op == BinaryOp::Pow) {
                std::size_t i = rng.uniform_index(g.pow_exponents.size());
                return Expr::pow(left, Expr::constant(g.pow_exponents[i]));
            }
            Expr right = sample_rec(g, rng, kind_w, unary_w, binary_w, depth_left - 1);
            return Expr::binary(op, left, right);
        }
    }
}

}  // namespace

std::vector<std::string> Grammar::vocabulary() const {
    std::vector<std::string> vocab = {"add", "sub", "mul", "div", "pow", "neg", "sin", "cos"};
    for (const auto& v : variables) vocab.push_back(v);
    auto add_const = [&](double c) {
        std::string t = format_double(c);
        for (const auto& existing : vocab)
            if (existing == t) return;
        vocab.push_back(t);
    };
    for (double c : constant_palette) add_const(c);
    for (double c : pow_exponents) add_const(c);
    return vocab;
}

Grammar make_grammar(std::vector<std::string> variables) {
    Grammar g;
    g.variables = std::move(variables);
    validate(g);
    return g;
}

void validate(const Grammar& g) {
    if (g.variables.empty()) throw ConfigError("grammar needs at least one variable");
    check_weights(g.kind_weights, 4, "kind_weights");
    check_weights(g.unary_weights, 3, "unary_weights");
    check_weights(g.binary_weights, 5, "binary_weights");
    if (g.constant_palette.empty()) throw ConfigError("constant palette is empty");
    if (g.pow_exponents.empty()) throw ConfigError("pow exponent list is empty");
    for (double c : g.pow_exponents) {
        if (std::rint(c) != c || std::abs(c) > 3.0)
            throw ConfigError("pow exponents must be integers in [-3, 3]");
    }
    if (g.max_depth < 1) throw ConfigError("max_depth must be >= 1");
    if (g.max_tokens < 1) throw ConfigError("max_tokens must be >= 1");
}

Expr sample_expr(const Grammar& g, Rng& rng) {
    validate(g);
    const auto kind_w = normalized(g.kind_weights);
    const auto unary_w = normalized(g.unary_weights);
    const auto binary_w = normalized(g.binary_weights);
    for (int attempt = 0; attempt < 100; ++attempt) {
        Expr e = sample_rec(g, rng, kind_w, unary_w, binary_w, g.max_depth);
        if (static_cast<int>(to_prefix(e).size()) <= g.max_tokens) return e;
    }
    throw ResampleExhaustedError("100 samples exceeded the token cap");
}

Expr sample_expr(const Grammar& g, std::uint64_t seed) {
    Rng rng(seed);
    return sample_expr(g, rng);
}

}  // namespace forge
