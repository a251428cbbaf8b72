#include "drsr/expr.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>
#include <utility>

#include "resources.hpp"

namespace drsr::expr {

namespace detail {

enum class OpCode : std::uint8_t { load_var, load_const, load_param, unary, binary };

struct Instr {
    OpCode code;
    std::uint8_t op = 0;
    std::size_t index = 0;
    double value = 0.0;
};

struct Program {
    std::vector<Instr> code;
    std::size_t max_stack = 0;
};

}  // namespace detail

namespace {

constexpr std::array<std::pair<std::string_view, UnaryOp>, 8> kFunctions{{
    {"sin", UnaryOp::sin},
    {"cos", UnaryOp::cos},
    {"tan", UnaryOp::tan},
    {"tanh", UnaryOp::tanh},
    {"exp", UnaryOp::exp},
    {"log", UnaryOp::log},
    {"sqrt", UnaryOp::sqrt},
    {"abs", UnaryOp::abs},
}};

std::optional<UnaryOp> lookup_function(std::string_view name) {
    for (const auto& [fname, op] : kFunctions) {
        if (fname == name) return op;
    }
    return std::nullopt;
}

bool is_identifier(std::string_view s) {
    if (s.empty()) return false;
    auto first = static_cast<unsigned char>(s.front());
    if (!(std::isalpha(first) || first == '_')) return false;
    return std::all_of(s.begin() + 1, s.end(), [](char c) {
        auto u = static_cast<unsigned char>(c);
        return std::isalnum(u) || u == '_';
    });
}

// ---------------------------------------------------------------------------
// Validation and compilation

struct TreeStats {
    std::size_t depth = 0;
    std::size_t nodes = 0;
    std::optional<std::size_t> max_param;
    std::set<std::string> variables;
};

std::string validate_node(const NodePtr& node, TreeStats& stats, std::size_t depth) {
    if (!node) return "null child in expression tree";
    stats.depth = std::max(stats.depth, depth);
    ++stats.nodes;
    return std::visit(
        [&](const auto& n) -> std::string {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, Variable>) {
                if (!is_valid_variable_name(n.name)) return "invalid variable name '" + n.name + "'";
                stats.variables.insert(n.name);
                return {};
            } else if constexpr (std::is_same_v<T, Constant>) {
                if (!std::isfinite(n.value) || std::signbit(n.value))
                    return "literals must be finite and non-negative (use neg for negation)";
                return {};
            } else if constexpr (std::is_same_v<T, Param>) {
                stats.max_param = std::max(stats.max_param.value_or(0), n.index);
                return {};
            } else if constexpr (std::is_same_v<T, Unary>) {
                return validate_node(n.child, stats, depth + 1);
            } else {
                auto err = validate_node(n.lhs, stats, depth + 1);
                if (!err.empty()) return err;
                return validate_node(n.rhs, stats, depth + 1);
            }
        },
        node->kind);
}

void compile_node(const AstNode& node, const std::vector<std::string>& vars, detail::Program& prog,
                  std::size_t& stack) {
    std::visit(
        [&](const auto& n) {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, Variable>) {
                auto it = std::lower_bound(vars.begin(), vars.end(), n.name);
                prog.code.push_back({detail::OpCode::load_var, 0, static_cast<std::size_t>(it - vars.begin()), 0.0});
                prog.max_stack = std::max(prog.max_stack, ++stack);
            } else if constexpr (std::is_same_v<T, Constant>) {
                prog.code.push_back({detail::OpCode::load_const, 0, 0, n.value});
                prog.max_stack = std::max(prog.max_stack, ++stack);
            } else if constexpr (std::is_same_v<T, Param>) {
                prog.code.push_back({detail::OpCode::load_param, 0, n.index, 0.0});
                prog.max_stack = std::max(prog.max_stack, ++stack);
            } else if constexpr (std::is_same_v<T, Unary>) {
                compile_node(*n.child, vars, prog, stack);
                prog.code.push_back({detail::OpCode::unary, static_cast<std::uint8_t>(n.op), 0, 0.0});
            } else {
                compile_node(*n.lhs, vars, prog, stack);
                compile_node(*n.rhs, vars, prog, stack);
                prog.code.push_back({detail::OpCode::binary, static_cast<std::uint8_t>(n.op), 0, 0.0});
                --stack;
            }
        },
        node.kind);
}

}  // namespace

// Private-access helper so the parser can build an Expression without
// throwing.
struct ExpressionBuilder {
    static Expected<Expression, std::string> build(NodePtr root, const Limits& limits) {
        TreeStats stats;
        if (auto err = validate_node(root, stats, 1); !err.empty()) return err;
        if (stats.depth > limits.max_depth) {
            return "expression depth " + std::to_string(stats.depth) + " exceeds limit " +
                   std::to_string(limits.max_depth);
        }
        if (stats.nodes > limits.max_nodes) {
            return "expression has " + std::to_string(stats.nodes) + " nodes, limit is " +
                   std::to_string(limits.max_nodes);
        }
        const std::size_t param_count = stats.max_param ? *stats.max_param + 1 : 0;
        if (param_count > limits.max_params) {
            return "expression uses " + std::to_string(param_count) + " parameters, limit is " +
                   std::to_string(limits.max_params);
        }
        Expression e;
        e.root_ = std::move(root);
        e.param_count_ = param_count;
        e.variables_.assign(stats.variables.begin(), stats.variables.end());
        e.depth_ = stats.depth;
        e.node_count_ = stats.nodes;
        auto prog = std::make_shared<detail::Program>();
        std::size_t stack = 0;
        compile_node(*e.root_, e.variables_, *prog, stack);
        e.program_ = std::move(prog);
        return e;
    }

    static Expression make(NodePtr root, const Limits& limits) {
        auto built = build(std::move(root), limits);
        if (!built) throw std::invalid_argument(built.error());
        return std::move(built).value();
    }
};

Expression Expression::from_tree(NodePtr root, const Limits& limits) {
    return ExpressionBuilder::make(std::move(root), limits);
}

std::string_view to_string(UnaryOp op) noexcept {
    switch (op) {
        case UnaryOp::neg: return "neg";
        case UnaryOp::sin: return "sin";
        case UnaryOp::cos: return "cos";
        case UnaryOp::tan: return "tan";
        case UnaryOp::tanh: return "tanh";
        case UnaryOp::exp: return "exp";
        case UnaryOp::log: return "log";
        case UnaryOp::sqrt: return "sqrt";
        case UnaryOp::abs: return "abs";
    }
    return "?";
}

std::string_view to_string(BinaryOp op) noexcept {
    switch (op) {
        case BinaryOp::add: return "add";
        case BinaryOp::sub: return "sub";
        case BinaryOp::mul: return "mul";
        case BinaryOp::div: return "div";
        case BinaryOp::pow: return "pow";
    }
    return "?";
}

std::string_view to_string(ParseErrorKind kind) noexcept {
    switch (kind) {
        case ParseErrorKind::syntax: return "syntax";
        case ParseErrorKind::unknown_symbol: return "unknown_symbol";
        case ParseErrorKind::arity: return "arity";
        case ParseErrorKind::depth_exceeded: return "depth_exceeded";
    }
    return "?";
}

std::string_view to_string(EvalErrorKind kind) noexcept {
    switch (kind) {
        case EvalErrorKind::domain: return "domain";
        case EvalErrorKind::overflow: return "overflow";
        case EvalErrorKind::non_finite: return "non_finite";
    }
    return "?";
}

std::string ParseError::describe() const {
    std::ostringstream os;
    os << "parse error (" << to_string(kind) << ") at offset " << position << ": " << message;
    return os.str();
}

std::string EvalError::describe() const {
    std::ostringstream os;
    os << "evaluation error (" << to_string(kind) << ") in " << operation << " at row " << row << ": " << message;
    return os.str();
}

NodePtr var(std::string name) { return std::make_shared<AstNode>(AstNode{Variable{std::move(name)}}); }
NodePtr lit(double value) { return std::make_shared<AstNode>(AstNode{Constant{value}}); }
NodePtr param(std::size_t index) { return std::make_shared<AstNode>(AstNode{Param{index}}); }
NodePtr unary(UnaryOp op, NodePtr child) {
    return std::make_shared<AstNode>(AstNode{Unary{op, std::move(child)}});
}
NodePtr binary(BinaryOp op, NodePtr lhs, NodePtr rhs) {
    return std::make_shared<AstNode>(AstNode{Binary{op, std::move(lhs), std::move(rhs)}});
}

bool structurally_equal(const AstNode& a, const AstNode& b) {
    if (a.kind.index() != b.kind.index()) return false;
    return std::visit(
        [&](const auto& na) -> bool {
            using T = std::decay_t<decltype(na)>;
            const auto& nb = std::get<T>(b.kind);
            if constexpr (std::is_same_v<T, Variable>) {
                return na.name == nb.name;
            } else if constexpr (std::is_same_v<T, Constant>) {
                return na.value == nb.value;
            } else if constexpr (std::is_same_v<T, Param>) {
                return na.index == nb.index;
            } else if constexpr (std::is_same_v<T, Unary>) {
                return na.op == nb.op && structurally_equal(*na.child, *nb.child);
            } else {
                return na.op == nb.op && structurally_equal(*na.lhs, *nb.lhs) && structurally_equal(*na.rhs, *nb.rhs);
            }
        },
        a.kind);
}

bool is_valid_variable_name(std::string_view name) noexcept {
    return is_identifier(name) && name != "params" && name != "pow" && !lookup_function(name).has_value();
}

// ---------------------------------------------------------------------------
// Lexer / parser

namespace {

enum class Tok : std::uint8_t { number, ident, lparen, rparen, lbracket, rbracket, comma, plus, minus, star, slash, caret, end };

struct Token {
    Tok type;
    std::size_t pos;
    std::string_view text;
};

class Parser {
public:
    Parser(std::string_view src, std::span<const std::string> allowed, const Limits& limits)
        : src_(src), allowed_(allowed), limits_(limits) {}

    Expected<NodePtr, ParseError> run() {
        if (auto err = tokenize()) return *err;
        auto root = parse_expr();
        if (error_) return *error_;
        if (peek().type != Tok::end) return fail(peek().pos, ParseErrorKind::syntax, "unexpected trailing input");
        return root;
    }

private:
    std::optional<ParseError> tokenize() {
        std::size_t i = 0;
        while (i < src_.size()) {
            const char c = src_[i];
            if (std::isspace(static_cast<unsigned char>(c))) {
                ++i;
                continue;
            }
            const std::size_t start = i;
            if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
                while (i < src_.size() && std::isdigit(static_cast<unsigned char>(src_[i]))) ++i;
                if (i < src_.size() && src_[i] == '.') {
                    ++i;
                    while (i < src_.size() && std::isdigit(static_cast<unsigned char>(src_[i]))) ++i;
                }
                if (i < src_.size() && (src_[i] == 'e' || src_[i] == 'E')) {
                    std::size_t j = i + 1;
                    if (j < src_.size() && (src_[j] == '+' || src_[j] == '-')) ++j;
                    if (j < src_.size() && std::isdigit(static_cast<unsigned char>(src_[j]))) {
                        i = j;
                        while (i < src_.size() && std::isdigit(static_cast<unsigned char>(src_[i]))) ++i;
                    }
                }
                tokens_.push_back({Tok::number, start, src_.substr(start, i - start)});
                continue;
            }
            if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
                while (i < src_.size() &&
                       (std::isalnum(static_cast<unsigned char>(src_[i])) || src_[i] == '_'))
                    ++i;
                auto word = src_.substr(start, i - start);
                // Module-qualified calls (np.sin, math.exp) are common in LLM output.
                if ((word == "np" || word == "numpy" || word == "math") && i < src_.size() && src_[i] == '.') {
                    const std::size_t name_start = i + 1;
                    std::size_t j = name_start;
                    while (j < src_.size() && (std::isalnum(static_cast<unsigned char>(src_[j])) || src_[j] == '_'))
                        ++j;
                    if (j > name_start) {
                        tokens_.push_back({Tok::ident, name_start, src_.substr(name_start, j - name_start)});
                        i = j;
                        continue;
                    }
                }
                tokens_.push_back({Tok::ident, start, word});
                continue;
            }
            Tok t;
            switch (c) {
                case '(': t = Tok::lparen; break;
                case ')': t = Tok::rparen; break;
                case '[': t = Tok::lbracket; break;
                case ']': t = Tok::rbracket; break;
                case ',': t = Tok::comma; break;
                case '+': t = Tok::plus; break;
                case '-': t = Tok::minus; break;
                case '/': t = Tok::slash; break;
                case '^': t = Tok::caret; break;
                case '*':
                    if (i + 1 < src_.size() && src_[i + 1] == '*') {
                        tokens_.push_back({Tok::caret, start, src_.substr(start, 2)});
                        i += 2;
                        continue;
                    }
                    t = Tok::star;
                    break;
                default:
                    return ParseError{start, ParseErrorKind::syntax,
                                      std::string("unexpected character '") + c + "'"};
            }
            tokens_.push_back({t, start, src_.substr(start, 1)});
            ++i;
        }
        const std::size_t end_pos = src_.empty() ? 0 : src_.size() - 1;
        tokens_.push_back({Tok::end, end_pos, {}});
        return std::nullopt;
    }

    const Token& peek() const { return tokens_[cursor_]; }
    const Token& advance() { return tokens_[cursor_ < tokens_.size() - 1 ? cursor_++ : cursor_]; }

    NodePtr fail(std::size_t pos, ParseErrorKind kind, std::string message) {
        if (!error_) error_ = ParseError{std::min(pos, src_.empty() ? 0 : src_.size() - 1), kind, std::move(message)};
        return nullptr;
    }

    bool expect(Tok t, std::string_view what) {
        if (peek().type != t) {
            fail(peek().pos, ParseErrorKind::syntax, "expected " + std::string(what));
            return false;
        }
        advance();
        return true;
    }

    // Nesting guard; the real depth check runs on the finished tree.
    bool enter() {
        if (++nesting_ > 4 * limits_.max_depth + 16) {
            fail(peek().pos, ParseErrorKind::depth_exceeded, "expression nesting too deep");
            return false;
        }
        return true;
    }

    NodePtr parse_expr() {
        if (!enter()) return nullptr;
        auto lhs = parse_term();
        while (!error_ && (peek().type == Tok::plus || peek().type == Tok::minus)) {
            const auto op = advance().type == Tok::plus ? BinaryOp::add : BinaryOp::sub;
            auto rhs = parse_term();
            if (error_) break;
            lhs = binary(op, lhs, rhs);
        }
        --nesting_;
        return error_ ? nullptr : lhs;
    }

    NodePtr parse_term() {
        auto lhs = parse_factor();
        while (!error_ && (peek().type == Tok::star || peek().type == Tok::slash)) {
            const auto op = advance().type == Tok::star ? BinaryOp::mul : BinaryOp::div;
            auto rhs = parse_factor();
            if (error_) break;
            lhs = binary(op, lhs, rhs);
        }
        return error_ ? nullptr : lhs;
    }

    NodePtr parse_factor() {
        if (!enter()) return nullptr;
        NodePtr result;
        if (peek().type == Tok::minus) {
            advance();
            auto child = parse_factor();
            if (!error_) result = unary(UnaryOp::neg, child);
        } else if (peek().type == Tok::plus) {
            advance();
            result = parse_factor();
        } else {
            result = parse_power();
        }
        --nesting_;
        return error_ ? nullptr : result;
    }

    NodePtr parse_power() {
        auto base = parse_primary();
        if (error_) return nullptr;
        if (peek().type == Tok::caret) {
            advance();
            auto exponent = parse_factor();
            if (error_) return nullptr;
            return binary(BinaryOp::pow, base, exponent);
        }
        return base;
    }

    NodePtr parse_primary() {
        const Token tok = peek();
        switch (tok.type) {
            case Tok::number: {
                advance();
                double value = 0.0;
                auto [ptr, ec] = std::from_chars(tok.text.data(), tok.text.data() + tok.text.size(), value);
                if (ec != std::errc{} || ptr != tok.text.data() + tok.text.size() || !std::isfinite(value))
                    return fail(tok.pos, ParseErrorKind::syntax, "malformed number '" + std::string(tok.text) + "'");
                return lit(value);
            }
            case Tok::lparen: {
                advance();
                auto inner = parse_expr();
                if (error_) return nullptr;
                if (!expect(Tok::rparen, "')'")) return nullptr;
                return inner;
            }
            case Tok::ident: return parse_identifier();
            case Tok::end: return fail(tok.pos, ParseErrorKind::syntax, "unexpected end of input");
            default:
                return fail(tok.pos, ParseErrorKind::syntax, "unexpected token '" + std::string(tok.text) + "'");
        }
    }

    NodePtr parse_identifier() {
        const Token tok = advance();
        const std::string name(tok.text);
        if (name == "params") {
            if (!expect(Tok::lbracket, "'[' after params")) return nullptr;
            const Token idx = peek();
            if (idx.type != Tok::number ||
                !std::all_of(idx.text.begin(), idx.text.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
                return fail(idx.pos, ParseErrorKind::syntax, "parameter index must be a non-negative integer");
            advance();
            std::size_t index = 0;
            auto [ptr, ec] = std::from_chars(idx.text.data(), idx.text.data() + idx.text.size(), index);
            if (ec != std::errc{} || index >= limits_.max_params)
                return fail(idx.pos, ParseErrorKind::depth_exceeded,
                            "parameter index exceeds limit of " + std::to_string(limits_.max_params) + " parameters");
            if (!expect(Tok::rbracket, "']'")) return nullptr;
            return param(index);
        }
        const bool is_call = peek().type == Tok::lparen;
        const auto fn = lookup_function(name);
        if (fn || name == "pow") {
            if (!is_call) return fail(tok.pos, ParseErrorKind::syntax, "function '" + name + "' requires '('");
            advance();
            std::vector<NodePtr> args;
            if (peek().type != Tok::rparen) {
                while (true) {
                    auto a = parse_expr();
                    if (error_) return nullptr;
                    args.push_back(std::move(a));
                    if (peek().type != Tok::comma) break;
                    advance();
                }
            }
            if (!expect(Tok::rparen, "')'")) return nullptr;
            const std::size_t want = fn ? 1 : 2;
            if (args.size() != want)
                return fail(tok.pos, ParseErrorKind::arity,
                            "function '" + name + "' takes " + std::to_string(want) + " argument(s), got " +
                                std::to_string(args.size()));
            if (fn) return unary(*fn, args[0]);
            return binary(BinaryOp::pow, args[0], args[1]);
        }
        if (is_call) return fail(tok.pos, ParseErrorKind::unknown_symbol, "unknown function '" + name + "'");
        if (std::find(allowed_.begin(), allowed_.end(), name) == allowed_.end())
            return fail(tok.pos, ParseErrorKind::unknown_symbol, "unknown variable '" + name + "'");
        return var(name);
    }

    std::string_view src_;
    std::span<const std::string> allowed_;
    const Limits& limits_;
    std::vector<Token> tokens_;
    std::size_t cursor_ = 0;
    std::size_t nesting_ = 0;
    std::optional<ParseError> error_;
};

}  // namespace

Expected<Expression, ParseError> parse(std::string_view source, std::span<const std::string> allowed_variables,
                                       const Limits& limits) {
    if (allowed_variables.empty()) throw std::invalid_argument("parse: allowed_variables must be non-empty");
    std::set<std::string_view> seen;
    for (const auto& v : allowed_variables) {
        if (!seen.insert(v).second) throw std::invalid_argument("parse: duplicate allowed variable '" + v + "'");
    }
    if (source.find_first_not_of(" \t\r\n") == std::string_view::npos)
        return ParseError{0, ParseErrorKind::syntax, "empty expression"};

    Parser parser(source, allowed_variables, limits);
    auto root = parser.run();
    if (!root) return root.error();
    auto built = ExpressionBuilder::build(std::move(root).value(), limits);
    if (!built) return ParseError{0, ParseErrorKind::depth_exceeded, built.error()};
    return std::move(built).value();
}

// ---------------------------------------------------------------------------
// Rendering

namespace {

void render_into(const AstNode& node, std::string& out) {
    std::visit(
        [&](const auto& n) {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, Variable>) {
                out += n.name;
            } else if constexpr (std::is_same_v<T, Constant>) {
                std::array<char, 64> buf{};
                auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), n.value);
                out.append(buf.data(), ptr);
            } else if constexpr (std::is_same_v<T, Param>) {
                out += "params[";
                out += std::to_string(n.index);
                out += ']';
            } else if constexpr (std::is_same_v<T, Unary>) {
                if (n.op == UnaryOp::neg) {
                    out += "(-";
                    render_into(*n.child, out);
                    out += ')';
                } else {
                    out += to_string(n.op);
                    out += '(';
                    render_into(*n.child, out);
                    out += ')';
                }
            } else {
                static constexpr std::array<std::string_view, 5> kSymbols{" + ", " - ", " * ", " / ", " ^ "};
                out += '(';
                render_into(*n.lhs, out);
                out += kSymbols[static_cast<std::size_t>(n.op)];
                render_into(*n.rhs, out);
                out += ')';
            }
        },
        node.kind);
}

}  // namespace

std::string render(const AstNode& node) {
    std::string out;
    render_into(node, out);
    return out;
}

std::string render(const Expression& e) { return render(e.root()); }

std::size_t complexity(const Expression& e) noexcept { return e.node_count(); }

// ---------------------------------------------------------------------------
// Evaluation

namespace {

struct OpFailure {
    EvalErrorKind kind;
    std::string_view op;
    std::string message;
};

inline bool finite(double v) { return std::isfinite(v); }

std::optional<OpFailure> classify_result(double result, std::string_view op, bool inputs_finite) {
    if (finite(result)) return std::nullopt;
    if (std::isnan(result)) return OpFailure{EvalErrorKind::non_finite, op, "result is NaN"};
    if (inputs_finite) return OpFailure{EvalErrorKind::overflow, op, "result overflowed to infinity"};
    return OpFailure{EvalErrorKind::non_finite, op, "non-finite result"};
}

std::optional<OpFailure> apply_unary(UnaryOp op, double& x) {
    const double in = x;
    switch (op) {
        case UnaryOp::neg: x = -in; return std::nullopt;
        case UnaryOp::abs: x = std::fabs(in); return std::nullopt;
        case UnaryOp::sin: x = std::sin(in); break;
        case UnaryOp::cos: x = std::cos(in); break;
        case UnaryOp::tan: x = std::tan(in); break;
        case UnaryOp::tanh: x = std::tanh(in); break;
        case UnaryOp::exp: x = std::exp(in); break;
        case UnaryOp::log:
            if (!(in > 0.0)) return OpFailure{EvalErrorKind::domain, "log", "log of non-positive value"};
            x = std::log(in);
            break;
        case UnaryOp::sqrt:
            if (in < 0.0) return OpFailure{EvalErrorKind::domain, "sqrt", "sqrt of negative value"};
            x = std::sqrt(in);
            break;
    }
    return classify_result(x, to_string(op), finite(in));
}

std::optional<OpFailure> apply_binary(BinaryOp op, double a, double b, double& out) {
    switch (op) {
        case BinaryOp::add: out = a + b; break;
        case BinaryOp::sub: out = a - b; break;
        case BinaryOp::mul: out = a * b; break;
        case BinaryOp::div:
            if (std::fabs(b) < kDivisionTolerance)
                return OpFailure{EvalErrorKind::domain, "div", "division by (near) zero"};
            out = a / b;
            break;
        case BinaryOp::pow:
            if (a < 0.0 && std::trunc(b) != b)
                return OpFailure{EvalErrorKind::domain, "pow", "negative base with non-integer exponent"};
            if (a == 0.0 && b < 0.0) return OpFailure{EvalErrorKind::domain, "pow", "zero raised to a negative power"};
            out = std::pow(a, b);
            break;
    }
    return classify_result(out, to_string(op), finite(a) && finite(b));
}

// Evaluates one row; `stack` must hold at least program.max_stack slots.
std::optional<OpFailure> eval_one(const detail::Program& prog, std::span<const double> params,
                                  std::span<const double> row, std::span<const std::size_t> columns,
                                  std::span<double> stack, double& result) {
    std::size_t sp = 0;
    for (const auto& ins : prog.code) {
        switch (ins.code) {
            case detail::OpCode::load_var: {
                const double v = row[columns[ins.index]];
                if (!finite(v)) return OpFailure{EvalErrorKind::non_finite, "input", "non-finite input value"};
                stack[sp++] = v;
                break;
            }
            case detail::OpCode::load_const: stack[sp++] = ins.value; break;
            case detail::OpCode::load_param: {
                const double v = params[ins.index];
                if (!finite(v)) return OpFailure{EvalErrorKind::non_finite, "params", "non-finite parameter value"};
                stack[sp++] = v;
                break;
            }
            case detail::OpCode::unary:
                if (auto f = apply_unary(static_cast<UnaryOp>(ins.op), stack[sp - 1])) return f;
                break;
            case detail::OpCode::binary: {
                double out = 0.0;
                if (auto f = apply_binary(static_cast<BinaryOp>(ins.op), stack[sp - 2], stack[sp - 1], out)) return f;
                stack[sp - 2] = out;
                --sp;
                break;
            }
        }
    }
    result = stack[0];
    return std::nullopt;
}

EvalError to_eval_error(OpFailure f, std::size_t row) {
    return EvalError{f.kind, row, std::string(f.op), std::move(f.message)};
}

void check_params(const Expression& e, std::span<const double> params) {
    if (params.size() != e.param_count())
        throw std::invalid_argument("evaluate: expected " + std::to_string(e.param_count()) + " parameters, got " +
                                    std::to_string(params.size()));
}

}  // namespace

std::vector<std::size_t> bind_columns(const Expression& e, std::span<const std::string> variable_order) {
    std::vector<std::size_t> cols;
    cols.reserve(e.variables_used().size());
    for (const auto& name : e.variables_used()) {
        auto it = std::find(variable_order.begin(), variable_order.end(), name);
        if (it == variable_order.end())
            throw std::invalid_argument("evaluate: variable '" + name + "' missing from variable order");
        cols.push_back(static_cast<std::size_t>(it - variable_order.begin()));
    }
    return cols;
}

std::optional<EvalError> evaluate_bound(const Expression& e, std::span<const double> params, const Matrix& inputs,
                                        std::span<const std::size_t> columns, std::span<double> out) {
    const auto& prog = e.program();
    std::vector<double> stack(std::max<std::size_t>(prog.max_stack, 1));
    for (std::size_t r = 0; r < inputs.rows(); ++r) {
        double value = 0.0;
        if (auto f = eval_one(prog, params, inputs.row(r), columns, stack, value)) return to_eval_error(std::move(*f), r);
        out[r] = value;
    }
    return std::nullopt;
}

Expected<std::vector<double>, EvalError> evaluate(const Expression& e, std::span<const double> params,
                                                  const Matrix& inputs, std::span<const std::string> variable_order) {
    check_params(e, params);
    if (inputs.cols() != variable_order.size() && inputs.rows() > 0)
        throw std::invalid_argument("evaluate: input column count does not match variable order");
    const auto columns = bind_columns(e, variable_order);
    std::vector<double> out(inputs.rows());
    if (auto err = evaluate_bound(e, params, inputs, columns, out)) return std::move(*err);
    return out;
}

Expected<double, EvalError> evaluate_row(const Expression& e, std::span<const double> params,
                                         std::span<const double> row, std::span<const std::string> variable_order) {
    check_params(e, params);
    if (row.size() != variable_order.size())
        throw std::invalid_argument("evaluate_row: row width does not match variable order");
    const auto columns = bind_columns(e, variable_order);
    std::vector<double> stack(std::max<std::size_t>(e.program().max_stack, 1));
    double value = 0.0;
    if (auto f = eval_one(e.program(), params, row, columns, stack, value)) return to_eval_error(std::move(*f), 0);
    return value;
}

std::string_view grammar_reference() noexcept { return resources::grammar_ebnf(); }

}  // namespace drsr::expr
