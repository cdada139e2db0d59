#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "forge/expr.hpp"
#include "forge/grammar.hpp"
#include "forge/rng.hpp"

using namespace forge;

namespace {

// walks a tree checking every pow right child against the sampler contract
void check_pow_exponents(const Expr& e, bool& ok) {
    const auto& n = e.node();
    if (n.kind == ExprKind::Binary) {
        if (n.bop == BinaryOp::Pow) {
            if (n.b->kind != ExprKind::Constant) ok = false;
            else {
                double c = n.b->value;
                if (std::rint(c) != c || std::abs(c) > 3.0) ok = false;
            }
        }
        check_pow_exponents(Expr(n.a), ok);
        check_pow_exponents(Expr(n.b), ok);
    } else if (n.kind == ExprKind::Unary) {
        check_pow_exponents(Expr(n.a), ok);
    }
}

int depth_of(const Expr& e) {
    const auto& n = e.node();
    switch (n.kind) {
        case ExprKind::Constant:
        case ExprKind::Variable: return 1;
        case ExprKind::Unary: return 1 + depth_of(Expr(n.a));
        case ExprKind::Binary: return 1 + std::max(depth_of(Expr(n.a)), depth_of(Expr(n.b)));
    }
    return 0;
}

}  // namespace

TEST_CASE("depth cap 1 forces a leaf") {
    Grammar g = make_grammar({"x", "v"});
    g.max_depth = 1;
    for (std::uint64_t seed = 1; seed <= 50; ++seed) {
        Expr e = sample_expr(g, seed);
        bool leaf = e.is_constant() || e.is_variable();
        CHECK(leaf);
    }
}

TEST_CASE("samples respect depth and token caps") {
    Grammar g = make_grammar({"x", "v"});
    Rng rng(99ULL);
    for (int i = 0; i < 2000; ++i) {
        Expr e = sample_expr(g, rng);
        CHECK(static_cast<int>(to_prefix(e).size()) <= g.max_tokens);
        CHECK(depth_of(e) <= g.max_depth);
    }
}

TEST_CASE("sampled pow exponents stay integer in [-3,3]") {
    Grammar g = make_grammar({"x", "v"});
    Rng rng(5ULL);
    int bad = 0;
    for (int i = 0; i < 10000; ++i) {
        Expr e = sample_expr(g, rng);
        bool ok = true;
        check_pow_exponents(e, ok);
        if (!ok) ++bad;
    }
    CHECK(bad == 0);
}

TEST_CASE("sampling is deterministic per seed") {
    Grammar g = make_grammar({"q", "p"});
    for (std::uint64_t seed : {7ULL, 123ULL, 424242ULL}) {
        Expr a = sample_expr(g, seed);
        Expr b = sample_expr(g, seed);
        CHECK(structural_equal(a, b));
        CHECK(to_prefix_string(a) == to_prefix_string(b));
    }
}

TEST_CASE("prefix round-trip holds over bulk random samples") {
    Grammar g = make_grammar({"x", "y", "vx", "vy"});
    Rng rng(314159ULL);
    for (int i = 0; i < 100000; ++i) {
        Expr e = sample_expr(g, rng);
        TokenSeq toks = to_prefix(e);
        Expr back = parse_prefix(toks, g.variables);
        REQUIRE(structural_equal(back, e));
    }
}

TEST_CASE("vocabulary covers operators, variables, and palette") {
    Grammar g = make_grammar({"x", "v"});
    auto vocab = g.vocabulary();
    std::set<std::string> vs(vocab.begin(), vocab.end());
    for (const char* t : {"add", "sub", "mul", "div", "pow", "neg", "sin", "cos", "x", "v",
                          "0.5", "1", "2", "3", "-1", "-2", "-3"})
        CHECK(vs.count(t) == 1);
    CHECK(vs.size() == vocab.size());  // no duplicate tokens
    // every sampled expression tokenizes inside the vocabulary
    Rng rng(8ULL);
    for (int i = 0; i < 500; ++i) {
        for (const auto& tok : to_prefix(sample_expr(g, rng))) CHECK(vs.count(tok) == 1);
    }
}

TEST_CASE("grammar validation rejects bad configs") {
    Grammar g = make_grammar({"x"});
    g.kind_weights = {0.5, 0.5};
    CHECK_THROWS_AS(validate(g), ConfigError);
    g = make_grammar({"x"});
    g.pow_exponents = {2.5};
    CHECK_THROWS_AS(validate(g), ConfigError);
    g = make_grammar({"x"});
    g.max_depth = 0;
    CHECK_THROWS_AS(validate(g), ConfigError);
    Grammar empty;
    CHECK_THROWS_AS(validate(empty), ConfigError);
}
