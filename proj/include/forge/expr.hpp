#ifndef FORGE_EXPR_HPP
#define FORGE_EXPR_HPP

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "forge/errors.hpp"

namespace forge {

enum class ExprKind { Constant, Variable, Unary, Binary };

// sin/cos/neg come from the search grammar; exp/log exist so that the
// derivative of pow with a non-constant exponent stays expressible.
enum class UnaryOp { Neg, Sin, Cos, Exp, Log };
enum class BinaryOp { Add, Sub, Mul, Div, Pow };

// Immutable expression tree. Copies share structure; all operations on
// expressions are pure, so concurrent use is safe.
class Expr {
  public:
    struct Node {
        ExprKind kind;
        double value = 0.0;      // Constant
        int var_index = -1;      // Variable
        std::string var_name;    // Variable
        UnaryOp uop = UnaryOp::Neg;
        BinaryOp bop = BinaryOp::Add;
        std::shared_ptr<const Node> a;  // unary child / binary left
        std::shared_ptr<const Node> b;  // binary right
    };
    using NodePtr = std::shared_ptr<const Node>;

    Expr() = default;
    explicit Expr(NodePtr node) : node_(std::move(node)) {}

    static Expr constant(double value);
    static Expr variable(int index, std::string name);
    static Expr unary(UnaryOp op, const Expr& child);
    static Expr binary(BinaryOp op, const Expr& left, const Expr& right);

    // convenience builders
    static Expr add(const Expr& l, const Expr& r) { return binary(BinaryOp::Add, l, r); }
    static Expr sub(const Expr& l, const Expr& r) { return binary(BinaryOp::Sub, l, r); }
    static Expr mul(const Expr& l, const Expr& r) { return binary(BinaryOp::Mul, l, r); }
    static Expr div(const Expr& l, const Expr& r) { return binary(BinaryOp::Div, l, r); }
    static Expr pow(const Expr& l, const Expr& r) { return binary(BinaryOp::Pow, l, r); }
    static Expr neg(const Expr& e) { return unary(UnaryOp::Neg, e); }
    static Expr sin(const Expr& e) { return unary(UnaryOp::Sin, e); }
    static Expr cos(const Expr& e) { return unary(UnaryOp::Cos, e); }

    bool empty() const { return node_ == nullptr; }
    const Node& node() const { return *node_; }
    NodePtr ptr() const { return node_; }

    ExprKind kind() const { return node_->kind; }
    bool is_constant() const { return node_ && node_->kind == ExprKind::Constant; }
    bool is_variable() const { return node_ && node_->kind == ExprKind::Variable; }
    double constant_value() const { return node_->value; }

  private:
    NodePtr node_;
};

using TokenSeq = std::vector<std::string>;

int op_arity(const std::string& token);                 // -1 if not an operator
std::string unary_op_name(UnaryOp op);
std::string binary_op_name(BinaryOp op);

// Shortest-round-trip decimal rendering; also used for token vocabulary keys.
std::string format_double(double v);

// --- serialization ---
TokenSeq to_prefix(const Expr& e);
std::string to_prefix_string(const Expr& e);
Expr parse_prefix(const TokenSeq& tokens, std::span<const std::string> variables);
Expr parse_prefix_string(const std::string& text, std::span<const std::string> variables);
std::string to_infix(const Expr& e);  // human-readable rendering for reports

// --- evaluation ---
// Returns nullopt if any intermediate value is non-finite (poles, pow domain).
std::optional<double> try_evaluate(const Expr& e, std::span<const double> point);
// Same, but throws NonFiniteError / DimensionMismatchError.
double evaluate(const Expr& e, std::span<const double> point);

// --- calculus / structure ---
Expr differentiate(const Expr& e, int var);                 // unsimplified
std::vector<Expr> grad_symbolic(const Expr& e, int dim);    // simplified components
Expr simplify(const Expr& e);
int node_count(const Expr& e);
int complexity(const Expr& e);             // node count of simplified expression
int max_var_index(const Expr& e);          // -1 if no variables
int distinct_var_count(const Expr& e);
bool structural_equal(const Expr& a, const Expr& b);

// Affine functional equivalence: true iff alpha*a + beta matches b over the
// probe within 1e-3 of b's range, with alpha, beta fit by least squares and
// alpha != 0. Throws DegenerateProbeError when b is constant over the probe.
struct AffineFit {
    bool equivalent = false;
    double alpha = 0.0;
    double beta = 0.0;
    double max_residual = 0.0;
};
AffineFit affine_match(const Expr& a, const Expr& b, std::span<const std::vector<double>> probe);
bool equivalent_affine(const Expr& a, const Expr& b, std::span<const std::vector<double>> probe);

}  // namespace forge

#endif
