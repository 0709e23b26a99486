#include "grbsde/expr.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <map>

namespace grbsde {

namespace {

bool is_ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool is_ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }
bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)); }

// arity of the supported functions; every other identifier used as a
// function name is an unknown-function error
const std::map<std::string, int>& function_table() {
    static const std::map<std::string, int> table = {
        {"abs", 1}, {"min", 2}, {"max", 2}, {"exp", 1},
        {"log", 1}, {"sqrt", 1}, {"pos", 1}, {"neg", 1},
    };
    return table;
}

}  // namespace

std::vector<Token> tokenize(const std::string& source) {
    std::vector<Token> tokens;
    std::size_t i = 0;
    const std::size_t n = source.size();
    while (i < n) {
        const char c = source[i];
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
            ++i;
            continue;
        }
        Token tok;
        tok.offset = i;
        if (is_digit(c) || (c == '.' && i + 1 < n && is_digit(source[i + 1]))) {
            std::size_t j = i;
            while (j < n && is_digit(source[j])) ++j;
            if (j < n && source[j] == '.') {
                ++j;
                while (j < n && is_digit(source[j])) ++j;
            }
            if (j < n && (source[j] == 'e' || source[j] == 'E')) {
                const std::size_t exp_start = j + 1;
                ++j;
                if (j < n && (source[j] == '+' || source[j] == '-')) ++j;
                if (j >= n || !is_digit(source[j]))
                    throw ExprError(ExprError::Code::MalformedNumber, exp_start,
                                    "malformed number: exponent digits expected at offset " +
                                        std::to_string(exp_start));
                while (j < n && is_digit(source[j])) ++j;
            }
            tok.kind = TokenKind::Number;
            tok.text = source.substr(i, j - i);
            tok.value = std::strtod(tok.text.c_str(), nullptr);
            i = j;
        } else if (is_ident_start(c)) {
            std::size_t j = i;
            while (j < n && is_ident_char(source[j])) ++j;
            tok.kind = TokenKind::Identifier;
            tok.text = source.substr(i, j - i);
            i = j;
        } else {
            switch (c) {
                case '+': tok.kind = TokenKind::Plus; break;
                case '-': tok.kind = TokenKind::Minus; break;
                case '*': tok.kind = TokenKind::Star; break;
                case '/': tok.kind = TokenKind::Slash; break;
                case '^': tok.kind = TokenKind::Caret; break;
                case '(': tok.kind = TokenKind::LParen; break;
                case ')': tok.kind = TokenKind::RParen; break;
                case ',': tok.kind = TokenKind::Comma; break;
                case '.':
                    throw ExprError(ExprError::Code::MalformedNumber, i,
                                    "malformed number at offset " + std::to_string(i));
                default:
                    throw ExprError(ExprError::Code::UnexpectedChar, i,
                                    std::string("unexpected character '") + c + "' at offset " +
                                        std::to_string(i));
            }
            tok.text = std::string(1, c);
            ++i;
        }
        tokens.push_back(std::move(tok));
    }
    Token end;
    end.kind = TokenKind::End;
    end.offset = n;
    tokens.push_back(end);
    return tokens;
}

namespace {

// Recursive-descent parser. Precedence, loosest first:
//   + -  |  * /  |  unary -  |  ^ (right associative)
// so "-x^2" reads as -(x^2) while "x^-2" still accepts a negated exponent.
class Parser {
public:
    explicit Parser(std::vector<Token> tokens) : tokens_(std::move(tokens)) {}

    ExprPtr parse() {
        ExprPtr e = additive();
        expect(TokenKind::End, "end of input");
        return e;
    }

private:
    const Token& peek() const { return tokens_[pos_]; }
    Token advance() { return tokens_[pos_++]; }

    bool accept(TokenKind kind) {
        if (peek().kind == kind) {
            ++pos_;
            return true;
        }
        return false;
    }

    void expect(TokenKind kind, const std::string& what) {
        if (!accept(kind))
            throw ExprError(ExprError::Code::UnexpectedToken, peek().offset,
                            "expected " + what + " at offset " + std::to_string(peek().offset));
    }

    ExprPtr additive() {
        ExprPtr left = multiplicative();
        for (;;) {
            const Token& tok = peek();
            if (tok.kind == TokenKind::Plus || tok.kind == TokenKind::Minus) {
                advance();
                ExprPtr right = multiplicative();
                auto node = std::make_shared<ExprNode>();
                node->op = tok.kind == TokenKind::Plus ? ExprOp::Add : ExprOp::Sub;
                node->offset = tok.offset;
                node->args = {left, right};
                left = node;
            } else {
                return left;
            }
        }
    }

    ExprPtr multiplicative() {
        ExprPtr left = unary();
        for (;;) {
            const Token& tok = peek();
            if (tok.kind == TokenKind::Star || tok.kind == TokenKind::Slash) {
                advance();
                ExprPtr right = unary();
                auto node = std::make_shared<ExprNode>();
                node->op = tok.kind == TokenKind::Star ? ExprOp::Mul : ExprOp::Div;
                node->offset = tok.offset;
                node->args = {left, right};
                left = node;
            } else {
                return left;
            }
        }
    }

    ExprPtr unary() {
        if (peek().kind == TokenKind::Minus) {
            const Token tok = advance();
            ExprPtr operand = unary();
            auto node = std::make_shared<ExprNode>();
            node->op = ExprOp::Neg;
            node->offset = tok.offset;
            node->args = {operand};
            return node;
        }
        return power();
    }

    ExprPtr power() {
        ExprPtr base = primary();
        if (peek().kind == TokenKind::Caret) {
            const Token tok = advance();
            ExprPtr exponent = unary();  // right associative, exponent may be negated
            auto node = std::make_shared<ExprNode>();
            node->op = ExprOp::Pow;
            node->offset = tok.offset;
            node->args = {base, exponent};
            return node;
        }
        return base;
    }

    ExprPtr primary() {
        const Token tok = peek();
        switch (tok.kind) {
            case TokenKind::Number: {
                advance();
                auto node = std::make_shared<ExprNode>();
                node->op = ExprOp::Const;
                node->offset = tok.offset;
                node->value = tok.value;
                return node;
            }
            case TokenKind::Identifier: {
                advance();
                if (accept(TokenKind::LParen)) {
                    const auto& table = function_table();
                    auto it = table.find(tok.text);
                    if (it == table.end())
                        throw ExprError(ExprError::Code::UnknownFunction, tok.offset,
                                        "unknown function '" + tok.text + "' at offset " +
                                            std::to_string(tok.offset));
                    std::vector<ExprPtr> args;
                    if (peek().kind != TokenKind::RParen) {
                        args.push_back(additive());
                        while (accept(TokenKind::Comma)) args.push_back(additive());
                    }
                    expect(TokenKind::RParen, "')'");
                    if (static_cast<int>(args.size()) != it->second)
                        throw ExprError(ExprError::Code::BadArity, tok.offset,
                                        "function '" + tok.text + "' expects " +
                                            std::to_string(it->second) + " argument(s), got " +
                                            std::to_string(args.size()) + " at offset " +
                                            std::to_string(tok.offset));
                    auto node = std::make_shared<ExprNode>();
                    node->op = ExprOp::Call;
                    node->offset = tok.offset;
                    node->func = tok.text;
                    node->args = std::move(args);
                    return node;
                }
                if (tok.text.size() == 1 && (tok.text[0] == 't' || tok.text[0] == 'x' ||
                                             tok.text[0] == 'y' || tok.text[0] == 'z')) {
                    auto node = std::make_shared<ExprNode>();
                    node->op = ExprOp::Var;
                    node->offset = tok.offset;
                    node->var = tok.text[0];
                    return node;
                }
                throw ExprError(ExprError::Code::UnknownVariable, tok.offset,
                                "unknown variable '" + tok.text + "' at offset " +
                                    std::to_string(tok.offset));
            }
            case TokenKind::LParen: {
                advance();
                ExprPtr inner = additive();
                expect(TokenKind::RParen, "')'");
                return inner;
            }
            default:
                throw ExprError(ExprError::Code::UnexpectedToken, tok.offset,
                                "unexpected token at offset " + std::to_string(tok.offset));
        }
    }

    std::vector<Token> tokens_;
    std::size_t pos_ = 0;
};

double checked(double v, std::size_t offset) {
    if (!std::isfinite(v))
        throw ExprError(ExprError::Code::NonFinite, offset,
                        "non-finite result at offset " + std::to_string(offset));
    return v;
}

// integer exponents are expanded by repeated multiplication so that squares
// and fourth powers stay exactly reproducible
double eval_pow(double base, double exponent, std::size_t offset) {
    const double rounded = std::nearbyint(exponent);
    if (exponent == rounded && std::fabs(exponent) <= 64.0) {
        long e = static_cast<long>(rounded);
        const bool invert = e < 0;
        if (invert) e = -e;
        double acc = 1.0;
        double b = base;
        while (e > 0) {
            if (e & 1) acc *= b;
            b *= b;
            e >>= 1;
        }
        return checked(invert ? 1.0 / acc : acc, offset);
    }
    if (base < 0.0)
        throw ExprError(ExprError::Code::DomainError, offset,
                        "negative base with non-integer exponent at offset " +
                            std::to_string(offset));
    return checked(std::pow(base, exponent), offset);
}

double eval_node(const ExprNode& node, const EvalEnv& env) {
    switch (node.op) {
        case ExprOp::Const: return node.value;
        case ExprOp::Var:
            switch (node.var) {
                case 't': return env.t;
                case 'x': return env.x;
                case 'y': return env.y;
                default: return env.z;
            }
        case ExprOp::Add:
            return checked(eval_node(*node.args[0], env) + eval_node(*node.args[1], env), node.offset);
        case ExprOp::Sub:
            return checked(eval_node(*node.args[0], env) - eval_node(*node.args[1], env), node.offset);
        case ExprOp::Mul:
            return checked(eval_node(*node.args[0], env) * eval_node(*node.args[1], env), node.offset);
        case ExprOp::Div:
            return checked(eval_node(*node.args[0], env) / eval_node(*node.args[1], env), node.offset);
        case ExprOp::Pow:
            return eval_pow(eval_node(*node.args[0], env), eval_node(*node.args[1], env), node.offset);
        case ExprOp::Neg: return -eval_node(*node.args[0], env);
        case ExprOp::Call: {
            const double a = eval_node(*node.args[0], env);
            if (node.func == "abs") return std::fabs(a);
            if (node.func == "exp") return checked(std::exp(a), node.offset);
            if (node.func == "log") {
                if (a <= 0.0)
                    throw ExprError(ExprError::Code::DomainError, node.offset,
                                    "log of non-positive value at offset " +
                                        std::to_string(node.offset));
                return checked(std::log(a), node.offset);
            }
            if (node.func == "sqrt") {
                if (a < 0.0)
                    throw ExprError(ExprError::Code::DomainError, node.offset,
                                    "sqrt of negative value at offset " +
                                        std::to_string(node.offset));
                return std::sqrt(a);
            }
            if (node.func == "pos") return a > 0.0 ? a : 0.0;
            if (node.func == "neg") return a < 0.0 ? -a : 0.0;
            const double b = eval_node(*node.args[1], env);
            if (node.func == "min") return std::fmin(a, b);
            return std::fmax(a, b);  // max
        }
    }
    return 0.0;  // unreachable
}

}  // namespace

ExprAst parse_expression(const std::string& source) {
    Parser parser(tokenize(source));
    return ExprAst(parser.parse(), source);
}

double evaluate(const ExprAst& ast, const EvalEnv& env) {
    return eval_node(*ast.root(), env);
}

namespace {

void collect_vars(const ExprNode& node, std::set<char>& out) {
    if (node.op == ExprOp::Var) out.insert(node.var);
    for (const auto& arg : node.args) collect_vars(*arg, out);
}

int precedence_of(ExprOp op) {
    switch (op) {
        case ExprOp::Add:
        case ExprOp::Sub: return 1;
        case ExprOp::Mul:
        case ExprOp::Div: return 2;
        case ExprOp::Neg: return 3;
        case ExprOp::Pow: return 4;
        default: return 5;
    }
}

std::string format_number(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void print_node(const ExprNode& node, std::string& out) {
    const int prec = precedence_of(node.op);
    auto child = [&](const ExprNode& c, bool needs_paren) {
        if (needs_paren) out += '(';
        print_node(c, out);
        if (needs_paren) out += ')';
    };
    switch (node.op) {
        case ExprOp::Const:
            if (node.value < 0.0 || std::signbit(node.value)) {
                out += '(';
                out += format_number(node.value);
                out += ')';
            } else {
                out += format_number(node.value);
            }
            break;
        case ExprOp::Var: out += node.var; break;
        case ExprOp::Add:
        case ExprOp::Sub:
            child(*node.args[0], precedence_of(node.args[0]->op) < prec);
            out += node.op == ExprOp::Add ? " + " : " - ";
            child(*node.args[1], precedence_of(node.args[1]->op) <= prec);
            break;
        case ExprOp::Mul:
        case ExprOp::Div:
            child(*node.args[0], precedence_of(node.args[0]->op) < prec);
            out += node.op == ExprOp::Mul ? "*" : "/";
            child(*node.args[1], precedence_of(node.args[1]->op) <= prec);
            break;
        case ExprOp::Neg:
            out += '-';
            child(*node.args[0], precedence_of(node.args[0]->op) < prec);
            break;
        case ExprOp::Pow:
            // '^' binds tighter than unary minus, so any non-primary child
            // gets parentheses; the exponent keeps bare negation legal
            child(*node.args[0], precedence_of(node.args[0]->op) <= prec);
            out += '^';
            child(*node.args[1], precedence_of(node.args[1]->op) < prec &&
                                     node.args[1]->op != ExprOp::Neg);
            break;
        case ExprOp::Call:
            out += node.func;
            out += '(';
            for (std::size_t i = 0; i < node.args.size(); ++i) {
                if (i > 0) out += ", ";
                print_node(*node.args[i], out);
            }
            out += ')';
            break;
    }
}

bool nodes_equal(const ExprNode& a, const ExprNode& b) {
    if (a.op != b.op || a.args.size() != b.args.size()) return false;
    switch (a.op) {
        case ExprOp::Const:
            if (!(a.value == b.value || (std::isnan(a.value) && std::isnan(b.value)))) return false;
            break;
        case ExprOp::Var:
            if (a.var != b.var) return false;
            break;
        case ExprOp::Call:
            if (a.func != b.func) return false;
            break;
        default: break;
    }
    for (std::size_t i = 0; i < a.args.size(); ++i)
        if (!nodes_equal(*a.args[i], *b.args[i])) return false;
    return true;
}

}  // namespace

std::set<char> free_vars(const ExprAst& ast) {
    std::set<char> out;
    if (!ast.empty()) collect_vars(*ast.root(), out);
    return out;
}

std::string to_string(const ExprAst& ast) {
    std::string out;
    if (!ast.empty()) print_node(*ast.root(), out);
    return out;
}

bool structurally_equal(const ExprAst& a, const ExprAst& b) {
    if (a.empty() || b.empty()) return a.empty() == b.empty();
    return nodes_equal(*a.root(), *b.root());
}

}  // namespace grbsde
