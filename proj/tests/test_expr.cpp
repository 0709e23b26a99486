#include <cmath>
#include <set>
#include <string>

#include "doctest.h"
#include "grbsde/expr.hpp"

using namespace grbsde;

namespace {

double eval_at(const std::string& source, double t = 0, double x = 0, double y = 0, double z = 0) {
    return evaluate(parse_expression(source), EvalEnv{t, x, y, z});
}

ExprError capture(const std::string& source, double x = 0) {
    try {
        evaluate(parse_expression(source), EvalEnv{0, x, 0, 0});
    } catch (const ExprError& e) {
        return e;
    }
    FAIL("expected ExprError from ", source);
    return ExprError(ExprError::Code::UnexpectedChar, 0, "unreachable");
}

}  // namespace

TEST_CASE("arithmetic follows the documented precedence") {
    CHECK(eval_at("1 + 2*3") == 7.0);
    CHECK(eval_at("(1 + 2)*3") == 9.0);
    CHECK(eval_at("1 - 2 - 3") == -4.0);
    CHECK(eval_at("7/2") == 3.5);
    CHECK(eval_at("2^3^2") == 512.0);
    CHECK(eval_at("2*x^2", 0, 3) == 18.0);
}

TEST_CASE("unary minus binds looser than the power operator") {
    CHECK(eval_at("-x^2", 0, 3) == -9.0);
    CHECK(eval_at("-(x^2)", 0, 3) == -9.0);
    CHECK(eval_at("(-x)^2", 0, 3) == 9.0);
    CHECK(eval_at("x^-2", 0, 2) == 0.25);
}

TEST_CASE("integer powers are computed by repeated multiplication") {
    CHECK(eval_at("x^4", 0, 3) == 81.0);
    CHECK(eval_at("x^0", 0, 5) == 1.0);
    CHECK(eval_at("x^1", 0, -2.5) == -2.5);
    CHECK(eval_at("x^2", 0, -4) == 16.0);  // negative base, integer exponent
    CHECK(eval_at("x^0.5", 0, 4) == doctest::Approx(2.0));
}

TEST_CASE("function library") {
    CHECK(eval_at("abs(x)", 0, -3) == 3.0);
    CHECK(eval_at("min(2, x)", 0, 5) == 2.0);
    CHECK(eval_at("max(2, x)", 0, 5) == 5.0);
    CHECK(eval_at("exp(0)") == 1.0);
    CHECK(eval_at("log(exp(1))") == doctest::Approx(1.0));
    CHECK(eval_at("sqrt(x)", 0, 9) == 3.0);
    CHECK(eval_at("pos(x)", 0, -3) == 0.0);
    CHECK(eval_at("pos(x)", 0, 3) == 3.0);
    CHECK(eval_at("neg(x)", 0, -3) == 3.0);
    CHECK(eval_at("neg(x)", 0, 3) == 0.0);
}

TEST_CASE("all four variables are visible") {
    CHECK(eval_at("t + 2*x + 4*y + 8*z", 1, 1, 1, 1) == 15.0);
    std::set<char> vars = free_vars(parse_expression("x*y + t"));
    CHECK(vars == std::set<char>{'t', 'x', 'y'});
    CHECK(free_vars(parse_expression("1 + 2")).empty());
}

TEST_CASE("printer output reparses to an identical tree") {
    for (const char* source : {"-x^2", "min(-19 - 0.02*x, -19.5 + 0.03*x)", "x^-3 + abs(t*z)",
                               "max(x, -0.5) - 0.1", "0.2*exp(-t) + 0.05*x"}) {
        ExprAst ast = parse_expression(source);
        ExprAst reparsed = parse_expression(to_string(ast));
        CHECK(structurally_equal(ast, reparsed));
    }
    CHECK_FALSE(structurally_equal(parse_expression("x + 1"), parse_expression("1 + x")));
}

TEST_CASE("evaluation is pure") {
    ExprAst ast = parse_expression("exp(-t)*x^2 - y/4 + z");
    EvalEnv env{0.3, -1.2, 0.7, 2.0};
    CHECK(evaluate(ast, env) == evaluate(ast, env));
}

TEST_CASE("lexer and parser errors carry byte offsets") {
    ExprError malformed = capture("1e--3");
    CHECK(malformed.code() == ExprError::Code::MalformedNumber);
    CHECK(malformed.offset() == 2);

    ExprError trailing = capture("2*");
    CHECK(trailing.code() == ExprError::Code::UnexpectedToken);

    ExprError unknown_fn = capture("foo(1)");
    CHECK(unknown_fn.code() == ExprError::Code::UnknownFunction);
    CHECK(unknown_fn.offset() == 0);

    ExprError arity = capture("min(1)");
    CHECK(arity.code() == ExprError::Code::BadArity);

    ExprError unknown_var = capture("x + q");
    CHECK(unknown_var.code() == ExprError::Code::UnknownVariable);
    CHECK(unknown_var.offset() == 4);

    ExprError stray = capture("x $ 2");
    CHECK(stray.code() == ExprError::Code::UnexpectedChar);
    CHECK(stray.offset() == 2);
}

TEST_CASE("evaluation errors distinguish domain problems from overflow") {
    CHECK(capture("log(x)", -1.0).code() == ExprError::Code::DomainError);
    CHECK(capture("sqrt(x)", -1.0).code() == ExprError::Code::DomainError);
    CHECK(capture("x^1.5", -2.0).code() == ExprError::Code::DomainError);
    CHECK(capture("1/x", 0.0).code() == ExprError::Code::NonFinite);
    CHECK(capture("exp(x)^8", 200.0).code() == ExprError::Code::NonFinite);
}
