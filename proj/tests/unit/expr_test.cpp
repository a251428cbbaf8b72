#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "drsr/expr.hpp"

using namespace drsr;
using namespace drsr::expr;

namespace {

const std::vector<std::string> kVars = {"x", "v"};

Expression must_parse(std::string_view text, std::span<const std::string> vars = kVars) {
    auto r = parse(text, vars);
    if (!r) throw std::runtime_error(r.error().describe());
    return std::move(r).value();
}

NodePtr random_tree(std::mt19937_64& rng, int depth) {
    std::uniform_int_distribution<int> pick(0, depth <= 0 ? 2 : 4);
    switch (pick(rng)) {
        case 0: return var(kVars[rng() % kVars.size()]);
        case 1: {
            if (rng() % 2 == 0) return lit(static_cast<double>(rng() % 20));
            std::uniform_real_distribution<double> u(0.0, 100.0);
            return lit(u(rng));
        }
        case 2: return param(rng() % 10);
        case 3: return unary(static_cast<UnaryOp>(rng() % 9), random_tree(rng, depth - 1));
        default:
            return binary(static_cast<BinaryOp>(rng() % 5), random_tree(rng, depth - 1), random_tree(rng, depth - 1));
    }
}

// Plain recursive evaluator used as a reference.
double reference_eval(const AstNode& n, const std::vector<double>& params, double x, double v) {
    return std::visit(
        [&](const auto& k) -> double {
            using K = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<K, Variable>) {
                return k.name == "x" ? x : v;
            } else if constexpr (std::is_same_v<K, Constant>) {
                return k.value;
            } else if constexpr (std::is_same_v<K, Param>) {
                return params.at(k.index);
            } else if constexpr (std::is_same_v<K, Unary>) {
                const double a = reference_eval(*k.child, params, x, v);
                switch (k.op) {
                    case UnaryOp::neg: return -a;
                    case UnaryOp::sin: return std::sin(a);
                    case UnaryOp::cos: return std::cos(a);
                    case UnaryOp::tan: return std::tan(a);
                    case UnaryOp::tanh: return std::tanh(a);
                    case UnaryOp::exp: return std::exp(a);
                    case UnaryOp::log: return std::log(a);
                    case UnaryOp::sqrt: return std::sqrt(a);
                    case UnaryOp::abs: return std::fabs(a);
                }
                return NAN;
            } else {
                const double a = reference_eval(*k.lhs, params, x, v);
                const double b = reference_eval(*k.rhs, params, x, v);
                switch (k.op) {
                    case BinaryOp::add: return a + b;
                    case BinaryOp::sub: return a - b;
                    case BinaryOp::mul: return a * b;
                    case BinaryOp::div: return a / b;
                    case BinaryOp::pow: return std::pow(a, b);
                }
                return NAN;
            }
        },
        n.kind);
}

}  // namespace

TEST(ExprParse, RendersCanonicalForm) {
    const std::vector<std::string> vars = {"x"};
    auto e = must_parse("params[0]*x", vars);
    EXPECT_EQ(render(e), "(params[0] * x)");
    EXPECT_EQ(e.param_count(), 1u);
}

TEST(ExprParse, PrecedenceAndAssociativity) {
    EXPECT_EQ(render(must_parse("x + v * x")), render(must_parse("x + (v * x)")));
    EXPECT_EQ(render(must_parse("x - v - x")), render(must_parse("(x - v) - x")));
    EXPECT_EQ(render(must_parse("x ^ 2 ^ 3")), render(must_parse("x ^ (2 ^ 3)")));
    EXPECT_EQ(render(must_parse("x ** 2")), render(must_parse("x ^ 2")));
    EXPECT_EQ(render(must_parse("pow(x, 2)")), render(must_parse("x ^ 2")));
}

TEST(ExprParse, RejectsOperatorsOutsideTheClosedSet) {
    for (const char* text : {"erf(x)", "gamma(x)", "max(x, v)", "x % 2", "x & v", "sinh(x)"}) {
        auto r = parse(text, kVars);
        ASSERT_FALSE(r) << text;
    }
    EXPECT_EQ(parse("erf(x)", kVars).error().kind, ParseErrorKind::unknown_symbol);
    EXPECT_EQ(parse("y + 1", kVars).error().kind, ParseErrorKind::unknown_symbol);
    EXPECT_EQ(parse("sin(x, v)", kVars).error().kind, ParseErrorKind::arity);
    EXPECT_EQ(parse("x +", kVars).error().kind, ParseErrorKind::syntax);
    EXPECT_EQ(parse("", kVars).error().kind, ParseErrorKind::syntax);
    EXPECT_EQ(parse("params[-1]", kVars).error().kind, ParseErrorKind::syntax);
}

TEST(ExprParse, EnforcesLimits) {
    Limits tight;
    tight.max_depth = 4;
    tight.max_nodes = 200;
    auto r = parse("sin(sin(sin(sin(sin(x)))))", kVars, tight);
    ASSERT_FALSE(r);
    EXPECT_EQ(r.error().kind, ParseErrorKind::depth_exceeded);

    Limits few_params;
    few_params.max_params = 2;
    auto p = parse("params[2] * x", kVars, few_params);
    ASSERT_FALSE(p);
    EXPECT_EQ(p.error().kind, ParseErrorKind::depth_exceeded);
}

TEST(ExprParse, ErrorCarriesPosition) {
    auto r = parse("x + foo", kVars);
    ASSERT_FALSE(r);
    EXPECT_EQ(r.error().position, 4u);
}

TEST(ExprParse, VariableNameRules) {
    EXPECT_TRUE(is_valid_variable_name("x_1"));
    EXPECT_FALSE(is_valid_variable_name("sin"));
    EXPECT_FALSE(is_valid_variable_name("params"));
    EXPECT_FALSE(is_valid_variable_name("1x"));
    const std::vector<std::string> dup = {"x", "x"};
    EXPECT_THROW((void)parse("x", dup), std::invalid_argument);
}

TEST(ExprRoundTrip, TenThousandRandomTrees) {
    std::mt19937_64 rng(20240501);
    std::size_t checked = 0;
    for (int i = 0; i < 10000; ++i) {
        auto tree = random_tree(rng, 5);
        auto e = Expression::from_tree(tree);
        const auto text = render(e);
        auto back = parse(text, kVars);
        ASSERT_TRUE(back) << text << ": " << back.error().describe();
        ASSERT_TRUE(*back == e) << text;
        ASSERT_EQ(render(*back), text);
        ++checked;
    }
    EXPECT_EQ(checked, 10000u);
}

TEST(ExprEval, MatchesReferenceEvaluator) {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    std::size_t compared = 0;
    for (int i = 0; i < 2000; ++i) {
        auto e = Expression::from_tree(random_tree(rng, 4));
        std::vector<double> params(e.param_count());
        for (auto& p : params) p = u(rng);
        const double x = u(rng), v = u(rng);
        const double row[] = {x, v};
        auto got = evaluate_row(e, params, row, kVars);
        const double want = reference_eval(e.root(), params, x, v);
        if (!got) continue;
        ASSERT_TRUE(std::isfinite(*got));
        const double scale = std::max(1.0, std::fabs(want));
        ASSERT_NEAR(*got, want, 1e-12 * scale) << render(e);
        ++compared;
    }
    EXPECT_GT(compared, 1000u);
}

TEST(ExprEval, ThreeErrorKinds) {
    const std::vector<std::string> vars = {"x"};
    Matrix m(1, 1, -1.0);
    std::vector<double> none;

    auto domain = evaluate(must_parse("log(x)", vars), none, m, vars);
    ASSERT_FALSE(domain);
    EXPECT_EQ(domain.error().kind, EvalErrorKind::domain);

    Matrix big(1, 1, 1000.0);
    auto overflow = evaluate(must_parse("exp(x)", vars), none, big, vars);
    ASSERT_FALSE(overflow);
    EXPECT_EQ(overflow.error().kind, EvalErrorKind::overflow);

    Matrix nan_in(1, 1, std::nan(""));
    auto non_finite = evaluate(must_parse("x + 1", vars), none, nan_in, vars);
    ASSERT_FALSE(non_finite);
    EXPECT_EQ(non_finite.error().kind, EvalErrorKind::non_finite);

    Matrix zero(1, 1, 0.0);
    auto div = evaluate(must_parse("1 / x", vars), none, zero, vars);
    ASSERT_FALSE(div);
    EXPECT_EQ(div.error().kind, EvalErrorKind::domain);
    EXPECT_EQ(div.error().operation, "div");
}

TEST(ExprEval, ReportsFirstFailingRow) {
    const std::vector<std::string> vars = {"x"};
    Matrix m(4, 1, std::vector<double>{1.0, 2.0, -1.0, -2.0});
    auto r = evaluate(must_parse("sqrt(x)", vars), {}, m, vars);
    ASSERT_FALSE(r);
    EXPECT_EQ(r.error().row, 2u);
}

TEST(ExprEval, OscillatorExample) {
    auto e = must_parse("0.8*sin(x) - 0.5*v^3 - 0.2*x^3 - 0.5*x*v - x*cos(x)");
    const double row[] = {0.5, 0.5};
    auto r = evaluate_row(e, {}, row, kVars);
    ASSERT_TRUE(r);
    EXPECT_NEAR(*r, -0.2677, 1e-4);
}

TEST(ExprTree, FromTreeValidates) {
    EXPECT_THROW((void)Expression::from_tree(lit(-1.0)), std::invalid_argument);
    EXPECT_THROW((void)Expression::from_tree(lit(INFINITY)), std::invalid_argument);
    EXPECT_THROW((void)Expression::from_tree(nullptr), std::invalid_argument);
    auto e = Expression::from_tree(unary(UnaryOp::neg, lit(2.0)));
    EXPECT_EQ(render(e), render(must_parse(render(e))));
}

TEST(ExprTree, Complexity) {
    auto e = must_parse("params[0] * x + sin(v)");
    EXPECT_EQ(complexity(e), 6u);
    EXPECT_EQ(e.variables_used(), (std::vector<std::string>{"v", "x"}));
}
