#ifndef GRBSDE_EXPR_HPP
#define GRBSDE_EXPR_HPP

#include <cstddef>
#include <memory>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace grbsde {

enum class TokenKind {
    Number,
    Identifier,
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
    End
};

struct Token {
    TokenKind kind = TokenKind::End;
    std::size_t offset = 0;  // 0-based byte offset into the source string
    std::string text;
    double value = 0.0;  // meaningful for Number tokens
};

/**
 * Error raised while tokenizing, parsing or evaluating an expression.
 * Carries a stable machine-readable code and the byte offset of the
 * offending location in the original source string.
 */
class ExprError : public std::runtime_error {
public:
    enum class Code {
        MalformedNumber,
        UnexpectedChar,
        UnexpectedToken,
        UnknownFunction,
        UnknownVariable,
        BadArity,
        DomainError,
        NonFinite
    };

    ExprError(Code code, std::size_t offset, const std::string& message)
        : std::runtime_error(message), code_(code), offset_(offset) {}

    Code code() const { return code_; }
    std::size_t offset() const { return offset_; }

private:
    Code code_;
    std::size_t offset_;
};

enum class ExprOp { Const, Var, Add, Sub, Mul, Div, Pow, Neg, Call };

struct ExprNode;
using ExprPtr = std::shared_ptr<const ExprNode>;

struct ExprNode {
    ExprOp op = ExprOp::Const;
    std::size_t offset = 0;  // byte offset of the node in the source
    double value = 0.0;      // Const
    char var = 'x';          // Var: one of t, x, y, z
    std::string func;        // Call: abs, min, max, exp, log, sqrt, pos, neg
    std::vector<ExprPtr> args;
};

/** Values bound to the expression variables during evaluation. */
struct EvalEnv {
    double t = 0.0;
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
};

/** A parsed, immutable expression over the variables {t, x, y, z}. */
class ExprAst {
public:
    ExprAst() = default;
    ExprAst(ExprPtr root, std::string source)
        : root_(std::move(root)), source_(std::move(source)) {}

    bool empty() const { return root_ == nullptr; }
    const ExprPtr& root() const { return root_; }
    const std::string& source() const { return source_; }

private:
    ExprPtr root_;
    std::string source_;
};

/** Splits a source string into tokens. Throws ExprError on lexical errors. */
std::vector<Token> tokenize(const std::string& source);

/** Parses a source string into an AST. Throws ExprError on syntax errors. */
ExprAst parse_expression(const std::string& source);

/**
 * Evaluates the expression under the given variable binding.
 * Throws ExprError with code DomainError (e.g. negative base raised to a
 * non-integer power, log of a non-positive value) or NonFinite (overflow,
 * division by zero) when the result is not a finite real.
 */
double evaluate(const ExprAst& ast, const EvalEnv& env);

/** The set of variables that actually occur in the expression. */
std::set<char> free_vars(const ExprAst& ast);

/**
 * Renders the AST back to a parseable string. parse_expression(to_string(a))
 * reproduces the tree structurally.
 */
std::string to_string(const ExprAst& ast);

/** Structural equality of two ASTs, ignoring source offsets. */
bool structurally_equal(const ExprAst& a, const ExprAst& b);

}  // namespace grbsde

#endif
