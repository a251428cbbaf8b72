#pragma once

// Equation-skeleton grammar: parsing, rendering and batch evaluation.
//
// An expression is built from named variables, unsigned numeric literals,
// learnable parameters written `params[i]`, and a closed operator set:
//   unary:  neg sin cos tan tanh exp log sqrt abs
//   binary: + - * / ^   (`**` is accepted as a synonym of `^`)
// Anything else is rejected at parse time.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "drsr/expected.hpp"
#include "drsr/matrix.hpp"

namespace drsr::expr {

enum class UnaryOp : std::uint8_t { neg, sin, cos, tan, tanh, exp, log, sqrt, abs };
enum class BinaryOp : std::uint8_t { add, sub, mul, div, pow };

[[nodiscard]] std::string_view to_string(UnaryOp op) noexcept;
[[nodiscard]] std::string_view to_string(BinaryOp op) noexcept;

struct AstNode;
using NodePtr = std::shared_ptr<const AstNode>;

struct Variable {
    std::string name;
};
struct Constant {
    double value;
};
struct Param {
    std::size_t index;
};
struct Unary {
    UnaryOp op;
    NodePtr child;
};
struct Binary {
    BinaryOp op;
    NodePtr lhs;
    NodePtr rhs;
};

struct AstNode {
    std::variant<Variable, Constant, Param, Unary, Binary> kind;
};

// Node constructors.
[[nodiscard]] NodePtr var(std::string name);
[[nodiscard]] NodePtr lit(double value);
[[nodiscard]] NodePtr param(std::size_t index);
[[nodiscard]] NodePtr unary(UnaryOp op, NodePtr child);
[[nodiscard]] NodePtr binary(BinaryOp op, NodePtr lhs, NodePtr rhs);

/// Structural equality. Literals compare by value.
[[nodiscard]] bool structurally_equal(const AstNode& a, const AstNode& b);

struct Limits {
    std::size_t max_depth = 20;
    std::size_t max_nodes = 200;
    std::size_t max_params = 10;
};

enum class ParseErrorKind : std::uint8_t { syntax, unknown_symbol, arity, depth_exceeded };

[[nodiscard]] std::string_view to_string(ParseErrorKind kind) noexcept;

struct ParseError {
    std::size_t position = 0;
    ParseErrorKind kind = ParseErrorKind::syntax;
    std::string message;

    [[nodiscard]] std::string describe() const;
};

enum class EvalErrorKind : std::uint8_t { domain, overflow, non_finite };

[[nodiscard]] std::string_view to_string(EvalErrorKind kind) noexcept;

struct EvalError {
    EvalErrorKind kind = EvalErrorKind::domain;
    std::size_t row = 0;
    std::string operation;
    std::string message;

    [[nodiscard]] std::string describe() const;
};

namespace detail {
struct Program;
}

struct ExpressionBuilder;

/// Immutable, validated expression tree. Construct through `parse` or
/// `Expression::from_tree`.
class Expression {
public:
    /// Validates a hand-built tree against `limits`. Throws
    /// std::invalid_argument on a size violation, a negative or non-finite
    /// literal, or a null child.
    static Expression from_tree(NodePtr root, const Limits& limits = {});

    [[nodiscard]] const AstNode& root() const noexcept { return *root_; }
    [[nodiscard]] const NodePtr& root_ptr() const noexcept { return root_; }
    [[nodiscard]] std::size_t param_count() const noexcept { return param_count_; }
    /// Sorted, de-duplicated variable names referenced by the tree.
    [[nodiscard]] const std::vector<std::string>& variables_used() const noexcept { return variables_; }
    [[nodiscard]] std::size_t depth() const noexcept { return depth_; }
    [[nodiscard]] std::size_t node_count() const noexcept { return node_count_; }

    friend bool operator==(const Expression& a, const Expression& b) {
        return structurally_equal(*a.root_, *b.root_);
    }

    [[nodiscard]] const detail::Program& program() const noexcept { return *program_; }

private:
    friend struct ExpressionBuilder;
    Expression() = default;

    NodePtr root_;
    std::size_t param_count_ = 0;
    std::vector<std::string> variables_;
    std::size_t depth_ = 0;
    std::size_t node_count_ = 0;
    std::shared_ptr<const detail::Program> program_;
};

/// Parses `source` against the closed grammar. Identifiers must appear in
/// `allowed_variables`. Throws std::invalid_argument when the precondition on
/// `allowed_variables` (non-empty, distinct) is violated.
[[nodiscard]] Expected<Expression, ParseError> parse(std::string_view source,
                                                     std::span<const std::string> allowed_variables,
                                                     const Limits& limits = {});

/// Canonical fully parenthesised text; `parse(render(e))` reproduces `e`.
[[nodiscard]] std::string render(const Expression& e);
[[nodiscard]] std::string render(const AstNode& node);

/// Total AST node count.
[[nodiscard]] std::size_t complexity(const Expression& e) noexcept;

/// Evaluates `e` on every row of `inputs`. Columns of `inputs` are named by
/// `variable_order`. The first failing row (in row order) is reported.
[[nodiscard]] Expected<std::vector<double>, EvalError> evaluate(const Expression& e,
                                                                std::span<const double> params,
                                                                const Matrix& inputs,
                                                                std::span<const std::string> variable_order);

/// Single-row evaluation. `row` is ordered like `variable_order`.
[[nodiscard]] Expected<double, EvalError> evaluate_row(const Expression& e, std::span<const double> params,
                                                       std::span<const double> row,
                                                       std::span<const std::string> variable_order);

/// Column index of each variable used by `e` inside `variable_order`, in the
/// order of `e.variables_used()`. Throws std::invalid_argument if one is
/// missing.
[[nodiscard]] std::vector<std::size_t> bind_columns(const Expression& e,
                                                    std::span<const std::string> variable_order);

/// Evaluates with pre-bound columns and writes into `out` (size = rows).
/// Returns the error of the first failing row, if any. Used by the fitter's
/// inner loop.
[[nodiscard]] std::optional<EvalError> evaluate_bound(const Expression& e, std::span<const double> params,
                                                      const Matrix& inputs, std::span<const std::size_t> columns,
                                                      std::span<double> out);

/// EBNF reference of the accepted grammar, as shipped in docs/grammar.ebnf.
[[nodiscard]] std::string_view grammar_reference() noexcept;

/// True for names usable as variables: identifier syntax, not a function
/// name and not the reserved word `params`.
[[nodiscard]] bool is_valid_variable_name(std::string_view name) noexcept;

/// Division denominators below this magnitude raise a domain error.
inline constexpr double kDivisionTolerance = 1e-12;

}  // namespace drsr::expr
