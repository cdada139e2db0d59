#ifndef FORGE_GRAMMAR_HPP
#define FORGE_GRAMMAR_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "forge/expr.hpp"
#include "forge/rng.hpp"

namespace forge {

// Weighted production rules for random expression sampling. Weights are
// normalized per choice point at validation time.
struct Grammar {
    std::vector<std::string> variables;  // state variable names, index order

    // node-kind weights at an expandable position: {constant, variable, unary, binary}
    std::vector<double> kind_weights{0.10, 0.44, 0.06, 0.40};
    // unary operator weights over {neg, sin, cos}
    std::vector<double> unary_weights{0.34, 0.33, 0.33};
    // binary operator weights over {add, sub, mul, div, pow}
    std::vector<double> binary_weights{0.35, 0.10, 0.42, 0.065, 0.065};

    // constants the sampler may emit (leaf palette) and allowed pow exponents
    std::vector<double> constant_palette{0.5, 1.0, 2.0, 3.0};
    std::vector<double> pow_exponents{-3.0, -2.0, -1.0, 2.0, 3.0};

    int max_depth = 8;    // depth 1 = a single leaf
    int max_tokens = 40;

    // token vocabulary: operators, variables, palette constants, pow exponents
    std::vector<std::string> vocabulary() const;
};

// Builds a grammar for the given state variables with default weights.
Grammar make_grammar(std::vector<std::string> variables);

// Throws ConfigError on invalid weights or caps.
void validate(const Grammar& g);

// Random expression respecting depth and token caps; resamples up to 100
// times when a draw exceeds the caps, then throws ResampleExhausted.
Expr sample_expr(const Grammar& g, std::uint64_t seed);
Expr sample_expr(const Grammar& g, Rng& rng);

}  // namespace forge

#endif
