#include "forge/expr.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

namespace forge {

namespace {

bool finite(double v) { return std::isfinite(v); }

Expr::NodePtr make_node(Expr::Node n) { return std::make_shared<const Expr::Node>(std::move(n)); }

}  // namespace

Expr Expr::constant(double value) {
    if (!finite(value)) throw NonFiniteError("constant must be finite");
    Node n;
    n.kind = ExprKind::Constant;
    n.value = value;
    return Expr(make_node(std::move(n)));
}

Expr Expr::variable(int index, std::string name) {
    if (index < 0) throw DomainError("variable index must be >= 0");
    Node n;
    n.kind = ExprKind::Variable;
    n.var_index = index;
    n.var_name = std::move(name);
    return Expr(make_node(std::move(n)));
}

Expr Expr::unary(UnaryOp op, const Expr& child) {
    Node n;
    n.kind = ExprKind::Unary;
    n.uop = op;
    n.a = child.ptr();
    return Expr(make_node(std::move(n)));
}

Expr Expr::binary(BinaryOp op, const Expr& left, const Expr& right) {
    Node n;
    n.kind = ExprKind::Binary;
    n.bop = op;
    n.a = left.ptr();
    n.b = right.ptr();
    return Expr(make_node(std::move(n)));
}

std::string unary_op_name(UnaryOp op) {
    switch (op) {
        case UnaryOp::Neg: return "neg";
        case UnaryOp::Sin: return "sin";
        case UnaryOp::Cos: return "cos";
        case UnaryOp::Exp: return "exp";
        case UnaryOp::Log: return "log";
    }
    return "?";
}

std::string binary_op_name(BinaryOp op) {
    switch (op) {
        case BinaryOp::Add: return "add";
        case BinaryOp::Sub: return "sub";
        case BinaryOp::Mul: return "mul";
        case BinaryOp::Div: return "div";
        case BinaryOp::Pow: return "pow";
    }
    return "?";
}

int op_arity(const std::string& token) {
    if (token == "neg" || token == "sin" || token == "cos" || token == "exp" || token == "log") return 1;
    if (token == "add" || token == "sub" || token == "mul" || token == "div" || token == "pow") return 2;
    return -1;
}

std::string format_double(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

namespace {

void to_prefix_rec(const Expr::Node& n, TokenSeq& out) {
    switch (n.kind) {
        case ExprKind::Constant:
            out.push_back(format_double(n.value));
            break;
        case ExprKind::Variable:
            out.push_back(n.var_name);
            break;
        case ExprKind::Unary:
            out.push_back(unary_op_name(n.uop));
            to_prefix_rec(*n.a, out);
            break;
        case ExprKind::Binary:
            out.push_back(binary_op_name(n.bop));
            to_prefix_rec(*n.a, out);
            to_prefix_rec(*n.b, out);
            break;
    }
}

std::optional<UnaryOp> unary_from_name(const std::string& t) {
    if (t == "neg") return UnaryOp::Neg;
    if (t == "sin") return UnaryOp::Sin;
    if (t == "cos") return UnaryOp::Cos;
    if (t == "exp") return UnaryOp::Exp;
    if (t == "log") return UnaryOp::Log;
    return std::nullopt;
}

std::optional<BinaryOp> binary_from_name(const std::string& t) {
    if (t == "add") return BinaryOp::Add;
    if (t == "sub") return BinaryOp::Sub;
    if (t == "mul") return BinaryOp::Mul;
    if (t == "div") return BinaryOp::Div;
    if (t == "pow") return BinaryOp::Pow;
    return std::nullopt;
}

Expr parse_rec(const TokenSeq& tokens, std::size_t& pos, std::span<const std::string> variables) {
    if (pos >= tokens.size())
        throw IncompleteExpressionError("tokens exhausted mid-subtree");
    const std::string& t = tokens[pos++];
    if (auto u = unary_from_name(t)) {
        Expr child = parse_rec(tokens, pos, variables);
        return Expr::unary(*u, child);
    }
    if (auto b = binary_from_name(t)) {
        Expr left = parse_rec(tokens, pos, variables);
        Expr right = parse_rec(tokens, pos, variables);
        return Expr::binary(*b, left, right);
    }
    for (std::size_t i = 0; i < variables.size(); ++i) {
        if (variables[i] == t) return Expr::variable(static_cast<int>(i), t);
    }
    double v = 0.0;
    auto res = std::from_chars(t.data(), t.data() + t.size(), v);
    if (res.ec == std::errc() && res.ptr == t.data() + t.size()) {
        if (!finite(v)) throw NonFiniteError("constant token is not finite: " + t);
        return Expr::constant(v);
    }
    throw UnknownTokenError("unknown token: '" + t + "'");
}

}  // namespace

TokenSeq to_prefix(const Expr& e) {
    TokenSeq out;
    to_prefix_rec(e.node(), out);
    return out;
}

std::string to_prefix_string(const Expr& e) {
    TokenSeq tokens = to_prefix(e);
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += ' ';
        out += tokens[i];
    }
    return out;
}

Expr parse_prefix(const TokenSeq& tokens, std::span<const std::string> variables) {
    std::size_t pos = 0;
    Expr e = parse_rec(tokens, pos, variables);
    if (pos != tokens.size())
        throw TrailingTokensError("unused tokens after a complete expression");
    return e;
}

Expr parse_prefix_string(const std::string& text, std::span<const std::string> variables) {
    TokenSeq tokens;
    std::istringstream in(text);
    std::string t;
    while (in >> t) tokens.push_back(t);
    return parse_prefix(tokens, variables);
}

namespace {

int precedence(const Expr::Node& n) {
    if (n.kind == ExprKind::Binary) {
        switch (n.bop) {
            case BinaryOp::Add:
            case BinaryOp::Sub: return 1;
            case BinaryOp::Mul:
            case BinaryOp::Div: return 2;
            case BinaryOp::Pow: return 3;
        }
    }
    if (n.kind == ExprKind::Unary && n.uop == UnaryOp::Neg) return 2;
    return 4;
}

void to_infix_rec(const Expr::Node& n, std::string& out, int parent_prec) {
    int prec = precedence(n);
    bool need_parens = prec < parent_prec;
    if (need_parens) out += '(';
    switch (n.kind) {
        case ExprKind::Constant: out += format_double(n.value); break;
        case ExprKind::Variable: out += n.var_name; break;
        case ExprKind::Unary:
            if (n.uop == UnaryOp::Neg) {
                out += '-';
                to_infix_rec(*n.a, out, prec + 1);
            } else {
                out += unary_op_name(n.uop);
                out += '(';
                to_infix_rec(*n.a, out, 0);
                out += ')';
            }
            break;
        case ExprKind::Binary: {
            const char* sym = n.bop == BinaryOp::Add   ? " + "
                              : n.bop == BinaryOp::Sub ? " - "
                              : n.bop == BinaryOp::Mul ? "*"
                              : n.bop == BinaryOp::Div ? "/"
                                                       : "^";
            to_infix_rec(*n.a, out, prec);
            out += sym;
            to_infix_rec(*n.b, out, prec + 1);
            break;
        }
    }
    if (need_parens) out += ')';
}

}  // namespace

std::string to_infix(const Expr& e) {
    std::string out;
    to_infix_rec(e.node(), out, 0);
    return out;
}

namespace {

// NaN signals a domain violation; checked after every node so poles cannot
// cancel into a finite result.
double eval_rec(const Expr::Node& n, std::span<const double> point, bool& ok) {
    if (!ok) return 0.0;
    switch (n.kind) {
        case ExprKind::Constant:
            return n.value;
        case ExprKind::Variable:
            return point[static_cast<std::size_t>(n.var_index)];
        case ExprKind::Unary: {
            double c = eval_rec(*n.a, point, ok);
            if (!ok) return 0.0;
            double v = 0.0;
            switch (n.uop) {
                case UnaryOp::Neg: v = -c; break;
                case UnaryOp::Sin: v = std::sin(c); break;
                case UnaryOp::Cos: v = std::cos(c); break;
                case UnaryOp::Exp: v = std::exp(c); break;
                case UnaryOp::Log: v = std::log(c); break;
            }
            if (!finite(v)) ok = false;
            return v;
        }
        case ExprKind::Binary: {
            double l = eval_rec(*n.a, point, ok);
            if (!ok) return 0.0;
            double r = eval_rec(*n.b, point, ok);
            if (!ok) return 0.0;
            double v = 0.0;
            switch (n.bop) {
                case BinaryOp::Add: v = l + r; break;
                case BinaryOp::Sub: v = l - r; break;
                case BinaryOp::Mul: v = l * r; break;
                case BinaryOp::Div: v = l / r; break;
                case BinaryOp::Pow: v = std::pow(l, r); break;
            }
            if (!finite(v)) ok = false;
            return v;
        }
    }
    ok = false;
    return 0.0;
}

}  // namespace

std::optional<double> try_evaluate(const Expr& e, std::span<const double> point) {
    if (max_var_index(e) >= static_cast<int>(point.size()))
        throw DimensionMismatchError("point dimension smaller than max variable index + 1");
    bool ok = true;
    double v = eval_rec(e.node(), point, ok);
    if (!ok) return std::nullopt;
    return v;
}

double evaluate(const Expr& e, std::span<const double> point) {
    auto v = try_evaluate(e, point);
    if (!v) throw NonFiniteError("expression evaluated to a non-finite value");
    return *v;
}

Expr differentiate(const Expr& e, int var) {
    const Expr::Node& n = e.node();
    switch (n.kind) {
        case ExprKind::Constant:
            return Expr::constant(0.0);
        case ExprKind::Variable:
            return Expr::constant(n.var_index == var ? 1.0 : 0.0);
        case ExprKind::Unary: {
            Expr u(n.a);
            Expr du = differentiate(u, var);
            switch (n.uop) {
                case UnaryOp::Neg: return Expr::neg(du);
                case UnaryOp::Sin: return Expr::mul(Expr::cos(u), du);
                case UnaryOp::Cos: return Expr::mul(Expr::neg(Expr::sin(u)), du);
                case UnaryOp::Exp: return Expr::mul(Expr::unary(UnaryOp::Exp, u), du);
                case UnaryOp::Log: return Expr::div(du, u);
            }
            break;
        }
        case ExprKind::Binary: {
            Expr a(n.a), b(n.b);
            Expr da = differentiate(a, var);
            Expr db = differentiate(b, var);
            switch (n.bop) {
                case BinaryOp::Add: return Expr::add(da, db);
                case BinaryOp::Sub: return Expr::sub(da, db);
                case BinaryOp::Mul: return Expr::add(Expr::mul(da, b), Expr::mul(a, db));
                case BinaryOp::Div:
                    return Expr::div(Expr::sub(Expr::mul(da, b), Expr::mul(a, db)), Expr::mul(b, b));
                case BinaryOp::Pow: {
                    if (b.is_constant()) {
                        const double c = b.constant_value();
                        // d(a^c) = c * a^(c-1) * a'
                        Expr body = Expr::mul(Expr::constant(c), Expr::pow(a, Expr::constant(c - 1.0)));
                        return Expr::mul(body, da);
                    }
                    // general rule via a^b = exp(b ln a):
                    // d(a^b) = a^b * (b' ln a + b a'/a)
                    Expr self = Expr::pow(a, b);
                    Expr term1 = Expr::mul(db, Expr::unary(UnaryOp::Log, a));
                    Expr term2 = Expr::mul(b, Expr::div(da, a));
                    return Expr::mul(self, Expr::add(term1, term2));
                }
            }
            break;
        }
    }
    throw Error("unreachable expression kind in differentiate");
}

std::vector<Expr> grad_symbolic(const Expr& e, int dim) {
    if (dim <= max_var_index(e))
        throw DimensionMismatchError("gradient dimension smaller than expression arity");
    std::vector<Expr> out;
    out.reserve(static_cast<std::size_t>(dim));
    for (int i = 0; i < dim; ++i) out.push_back(simplify(differentiate(e, i)));
    return out;
}

namespace {

bool is_const(const Expr& e, double v) { return e.is_constant() && e.constant_value() == v; }

Expr simplify_node(const Expr& e);

Expr simplify_rec(const Expr& e) {
    const Expr::Node& n = e.node();
    switch (n.kind) {
        case ExprKind::Constant:
        case ExprKind::Variable:
            return e;
        case ExprKind::Unary:
            return simplify_node(Expr::unary(n.uop, simplify_rec(Expr(n.a))));
        case ExprKind::Binary:
            return simplify_node(Expr::binary(n.bop, simplify_rec(Expr(n.a)), simplify_rec(Expr(n.b))));
    }
    return e;
}

// Local rewrites; children are already simplified. Folding is skipped when
// the folded value would be non-finite, so poles stay visible to evaluate().
Expr simplify_node(const Expr& e) {
    const Expr::Node& n = e.node();
    if (n.kind == ExprKind::Unary) {
        Expr c(n.a);
        if (c.is_constant()) {
            bool ok = true;
            double v = eval_rec(n, {}, ok);
            if (ok) return Expr::constant(v);
        }
        if (n.uop == UnaryOp::Neg && c.node().kind == ExprKind::Unary && c.node().uop == UnaryOp::Neg)
            return Expr(c.node().a);
        return e;
    }
    if (n.kind != ExprKind::Binary) return e;
    Expr a(n.a), b(n.b);
    if (a.is_constant() && b.is_constant()) {
        bool ok = true;
        double v = eval_rec(n, {}, ok);
        if (ok) return Expr::constant(v);
    }
    switch (n.bop) {
        case BinaryOp::Add:
            if (is_const(a, 0.0)) return b;
            if (is_const(b, 0.0)) return a;
            break;
        case BinaryOp::Sub:
            if (is_const(b, 0.0)) return a;
            if (is_const(a, 0.0)) return simplify_node(Expr::neg(b));
            if (structural_equal(a, b)) return Expr::constant(0.0);
            break;
        case BinaryOp::Mul:
            if (is_const(a, 1.0)) return b;
            if (is_const(b, 1.0)) return a;
            if (is_const(a, 0.0) || is_const(b, 0.0)) return Expr::constant(0.0);
            break;
        case BinaryOp::Div:
            if (is_const(b, 1.0)) return a;
            if (is_const(a, 0.0)) return Expr::constant(0.0);
            break;
        case BinaryOp::Pow:
            if (is_const(b, 1.0)) return a;
            if (is_const(b, 0.0)) return Expr::constant(1.0);
            break;
    }
    return e;
}

}  // namespace

Expr simplify(const Expr& e) { return simplify_rec(e); }

int node_count(const Expr& e) {
    const Expr::Node& n = e.node();
    switch (n.kind) {
        case ExprKind::Constant:
        case ExprKind::Variable: return 1;
        case ExprKind::Unary: return 1 + node_count(Expr(n.a));
        case ExprKind::Binary: return 1 + node_count(Expr(n.a)) + node_count(Expr(n.b));
    }
    return 0;
}

int complexity(const Expr& e) { return node_count(simplify(e)); }

int max_var_index(const Expr& e) {
    const Expr::Node& n = e.node();
    switch (n.kind) {
        case ExprKind::Constant: return -1;
        case ExprKind::Variable: return n.var_index;
        case ExprKind::Unary: return max_var_index(Expr(n.a));
        case ExprKind::Binary: return std::max(max_var_index(Expr(n.a)), max_var_index(Expr(n.b)));
    }
    return -1;
}

namespace {

void collect_vars(const Expr::Node& n, std::set<int>& vars) {
    switch (n.kind) {
        case ExprKind::Constant: return;
        case ExprKind::Variable: vars.insert(n.var_index); return;
        case ExprKind::Unary: collect_vars(*n.a, vars); return;
        case ExprKind::Binary:
            collect_vars(*n.a, vars);
            collect_vars(*n.b, vars);
            return;
    }
}

}  // namespace

int distinct_var_count(const Expr& e) {
    std::set<int> vars;
    collect_vars(e.node(), vars);
    return static_cast<int>(vars.size());
}

bool structural_equal(const Expr& a, const Expr& b) {
    if (a.ptr() == b.ptr()) return true;
    const Expr::Node& x = a.node();
    const Expr::Node& y = b.node();
    if (x.kind != y.kind) return false;
    switch (x.kind) {
        case ExprKind::Constant: return x.value == y.value;
        case ExprKind::Variable: return x.var_index == y.var_index;
        case ExprKind::Unary:
            return x.uop == y.uop && structural_equal(Expr(x.a), Expr(y.a));
        case ExprKind::Binary:
            return x.bop == y.bop && structural_equal(Expr(x.a), Expr(y.a)) &&
                   structural_equal(Expr(x.b), Expr(y.b));
    }
    return false;
}

AffineFit affine_match(const Expr& a, const Expr& b, std::span<const std::vector<double>> probe) {
    if (probe.size() < 50) throw DomainError("affine match requires at least 50 probe points");
    const std::size_t n = probe.size();
    std::vector<double> av(n), bv(n);
    for (std::size_t i = 0; i < n; ++i) {
        av[i] = evaluate(a, probe[i]);
        bv[i] = evaluate(b, probe[i]);
    }
    double bmin = bv[0], bmax = bv[0];
    for (double v : bv) {
        bmin = std::min(bmin, v);
        bmax = std::max(bmax, v);
    }
    const double brange = bmax - bmin;
    if (brange <= 1e-9)
        throw DegenerateProbeError("reference expression is constant over the probe");

    // least squares for alpha*a + beta = b
    double sa = 0, sb = 0, saa = 0, sab = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sa += av[i];
        sb += bv[i];
        saa += av[i] * av[i];
        sab += av[i] * bv[i];
    }
    const double nn = static_cast<double>(n);
    const double var_a = saa - sa * sa / nn;
    AffineFit fit;
    if (!(var_a > 1e-14 * (1.0 + saa))) {
        // candidate is constant over the probe; cannot match a varying b
        fit.max_residual = brange;
        return fit;
    }
    fit.alpha = (sab - sa * sb / nn) / var_a;
    fit.beta = (sb - fit.alpha * sa) / nn;
    double max_res = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        max_res = std::max(max_res, std::abs(fit.alpha * av[i] + fit.beta - bv[i]));
    fit.max_residual = max_res;
    fit.equivalent = fit.alpha != 0.0 && max_res <= 1e-3 * brange;
    return fit;
}

bool equivalent_affine(const Expr& a, const Expr& b, std::span<const std::vector<double>> probe) {
    return affine_match(a, b, probe).equivalent;
}

}  // namespace forge
