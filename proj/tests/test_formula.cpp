#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <map>
#include <set>
#include <string>

#include "simplexfit/errors.hpp"
#include "simplexfit/formula.hpp"

using namespace simplexfit;
using formula::ExpressionTree;
using formula::Node;

namespace {

using Map = std::map<std::string, double>;

double eval(const ExpressionTree& t, const Map& params, const Map& row) {
  return t.eval(params, row);
}

// Central finite difference of a parsed formula in one symbol.
double fd(const ExpressionTree& t, Map params, Map row, const std::string& name,
          Node::Kind kind, double h = 1e-6) {
  Map& table = (kind == Node::Kind::Parameter) ? params : row;
  const double x0 = table.at(name);
  table[name] = x0 + h;
  const double up = eval(t, params, row);
  table[name] = x0 - h;
  const double dn = eval(t, params, row);
  return (up - dn) / (2.0 * h);
}

}  // namespace

TEST_CASE("parse evaluates arithmetic with standard precedence") {
  std::set<std::string> ps = {"b1", "b2"};
  Map params = {{"b1", 2.0}, {"b2", 3.0}};
  Map row = {{"x", 5.0}};
  CHECK(eval(ExpressionTree::parse("b1 + b2 * x", ps), params, row) == 17.0);
  CHECK(eval(ExpressionTree::parse("(b1 + b2) * x", ps), params, row) == 25.0);
  CHECK(eval(ExpressionTree::parse("b1 - b2 - x", ps), params, row) == -6.0);
  CHECK(eval(ExpressionTree::parse("x / b1 / b2", ps), params, row) ==
        doctest::Approx(5.0 / 6.0).epsilon(1e-15));
  // '^' is right-associative: 2^3^2 = 2^9.
  CHECK(eval(ExpressionTree::parse("b1 ^ b2 ^ b1", ps), params, row) == 512.0);
  // Unary minus binds tighter than '^'; negative bases are rejected, not
  // silently coerced.
  CHECK_THROWS_AS(eval(ExpressionTree::parse("-b1 ^ b2", ps), params, row), DomainError);
  CHECK(eval(ExpressionTree::parse("-(b1 ^ b2)", ps), params, row) == -8.0);
  CHECK(eval(ExpressionTree::parse("exp(log(x)) + sqrt(b2 * 12)", ps), params, row) ==
        doctest::Approx(11.0).epsilon(1e-14));
}

TEST_CASE("identifier classification follows the declared parameter set") {
  auto t = ExpressionTree::parse("b1 + b2 * x2 + extra", {"b1", "b2"});
  CHECK(t.parameters() == std::set<std::string>{"b1", "b2"});
  CHECK(t.covariates() == std::set<std::string>{"x2", "extra"});
  auto u = ExpressionTree::parse_with_prefix("g1 + g2 * z2", "g");
  CHECK(u.parameters() == std::set<std::string>{"g1", "g2"});
  CHECK(u.covariates() == std::set<std::string>{"z2"});
}

TEST_CASE("print / reparse round trip preserves structure") {
  std::set<std::string> ps = {"b1", "b2", "b3"};
  for (const char* src : {"b1 + b2*x + b3*x^2",
                          "b1 + x^b2",
                          "-(b1 + b2)*x",
                          "b1^(-b2)",
                          "exp(b1 + b2*log(x))",
                          "sqrt(b1*x) / (1 + b3*x)",
                          "b1 - (b2 - b3)",
                          "x^(-2) + b1^2"}) {
    CAPTURE(src);
    auto t = ExpressionTree::parse(src, ps);
    auto t2 = ExpressionTree::parse(t.str(), ps);
    CHECK(formula::structurally_equal(t.root(), t2.root()));
    // And the printed form evaluates identically.
    Map params = {{"b1", 0.7}, {"b2", 1.3}, {"b3", 0.4}};
    Map row = {{"x", 2.5}};
    CHECK(eval(t, params, row) == doctest::Approx(eval(t2, params, row)).epsilon(1e-15));
  }
}

TEST_CASE("derivatives match finite differences for parameters and covariates") {
  std::set<std::string> ps = {"b1", "b2", "b3"};
  Map params = {{"b1", 0.8}, {"b2", 1.7}, {"b3", -0.6}};
  Map row = {{"x", 1.9}, {"z", 0.4}};
  for (const char* src : {"b1 + x^b2 + b3*z",
                          "exp(b1*x) / (1 + b2*z)",
                          "sqrt(b2 + x^2) * log(1 + z^2) + b1^3",
                          "b1*b2*b3*x*z",
                          "(b1 + b2*x)^(b3 + 2)"}) {
    auto t = ExpressionTree::parse(src, ps);
    formula::Bindings bind{&params, &row};
    for (const std::string& p : {"b1", "b2", "b3"}) {
      auto d = formula::derivative(t.root(), p, Node::Kind::Parameter);
      CAPTURE(src);
      CAPTURE(p);
      CHECK(formula::evaluate(d, bind) ==
            doctest::Approx(fd(t, params, row, p, Node::Kind::Parameter)).epsilon(1e-7));
    }
    for (const std::string& c : {"x", "z"}) {
      auto d = formula::derivative(t.root(), c, Node::Kind::Covariate);
      CAPTURE(src);
      CAPTURE(c);
      CHECK(formula::evaluate(d, bind) ==
            doctest::Approx(fd(t, params, row, c, Node::Kind::Covariate)).epsilon(1e-7));
    }
  }
}

TEST_CASE("CompiledFormula bundle: gradient, symmetric Hessian, mixed derivative") {
  std::set<std::string> ps = {"b1", "b2", "b3"};
  auto t = ExpressionTree::parse("b1 + x^b2 + exp(b3*x)", ps);
  formula::CompiledFormula cf(t, {"b1", "b2", "b3"}, std::string("x"));
  Map params = {{"b1", 0.4}, {"b2", 1.6}, {"b3", -0.9}};
  Map row = {{"x", 1.3}};
  auto b = cf.eval(params, row);
  CHECK(b.value == doctest::Approx(eval(t, params, row)).epsilon(1e-15));
  const char* names[] = {"b1", "b2", "b3"};
  const double h = 1e-5;
  for (int i = 0; i < 3; ++i) {
    CHECK(b.grad_params(i) ==
          doctest::Approx(fd(t, params, row, names[i], Node::Kind::Parameter)).epsilon(1e-7));
    for (int j = 0; j < 3; ++j) {
      CHECK(b.hess_params(i, j) == b.hess_params(j, i));
      // FD of the symbolic first derivative.
      auto di = formula::derivative(t.root(), names[i], Node::Kind::Parameter);
      Map pp = params;
      pp[names[j]] += h;
      formula::Bindings up{&pp, &row};
      const double fu = formula::evaluate(di, up);
      pp[names[j]] -= 2.0 * h;
      const double fdn = formula::evaluate(di, up);
      CHECK(b.hess_params(i, j) == doctest::Approx((fu - fdn) / (2.0 * h)).epsilon(1e-6));
    }
    // Mixed d2 / (dbeta dx).
    auto di = formula::derivative(t.root(), names[i], Node::Kind::Parameter);
    Map rr = row;
    rr["x"] += h;
    formula::Bindings up{&params, &rr};
    const double fu = formula::evaluate(di, up);
    rr["x"] -= 2.0 * h;
    const double fdn = formula::evaluate(di, up);
    CHECK(b.mixed_param_covariate(i) == doctest::Approx((fu - fdn) / (2.0 * h)).epsilon(1e-6));
  }
  CHECK(b.d_covariate ==
        doctest::Approx(fd(t, params, row, "x", Node::Kind::Covariate)).epsilon(1e-7));
}

TEST_CASE("substitute_parameters pins values and removes the symbols") {
  auto t = ExpressionTree::parse("b1 + x^b2 + b3*x", {"b1", "b2", "b3"});
  auto pinned = t.with_pinned({{"b2", 2.0}});
  CHECK(pinned.parameters() == std::set<std::string>{"b1", "b3"});
  Map params = {{"b1", 0.5}, {"b3", 1.5}};
  Map row = {{"x", 3.0}};
  CHECK(eval(pinned, params, row) == doctest::Approx(0.5 + 9.0 + 4.5).epsilon(1e-14));
}

TEST_CASE("references_any sees only the requested symbol kind") {
  auto t = ExpressionTree::parse("b1 + x^b2", {"b1", "b2"});
  CHECK(formula::references_any(t.root(), {"b2"}, Node::Kind::Parameter));
  CHECK_FALSE(formula::references_any(t.root(), {"b3"}, Node::Kind::Parameter));
  CHECK(formula::references_any(t.root(), {"x"}, Node::Kind::Covariate));
  CHECK_FALSE(formula::references_any(t.root(), {"b1"}, Node::Kind::Covariate));
}

TEST_CASE("pow edge cases: x^0 and 0^0 follow the 1 convention") {
  std::set<std::string> ps = {"b1"};
  Map params = {{"b1", 0.0}};
  Map row = {{"x", 0.0}};
  CHECK(eval(ExpressionTree::parse("x^0", ps), params, row) == 1.0);
  CHECK(eval(ExpressionTree::parse("x^b1", ps), params, row) == 1.0);
  CHECK(eval(ExpressionTree::parse("2^0", ps), params, row) == 1.0);
}

TEST_CASE("parse errors carry the offending position") {
  std::set<std::string> ps = {"b1"};
  CHECK_THROWS_AS(ExpressionTree::parse("b1 + ", ps), ParseError);
  CHECK_THROWS_AS(ExpressionTree::parse("b1 + * x", ps), ParseError);
  CHECK_THROWS_AS(ExpressionTree::parse("sin(x)", ps), ParseError);
  CHECK_THROWS_AS(ExpressionTree::parse("(b1 + x", ps), ParseError);
  CHECK_THROWS_AS(ExpressionTree::parse("", ps), ParseError);
  try {
    ExpressionTree::parse("b1 + * x", ps);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.position == 5);
    CHECK(std::string(e.what()).find("position 5") != std::string::npos);
  }
}

TEST_CASE("simplifying constructors fold constants") {
  using namespace formula;
  auto zero = make_constant(0.0);
  auto x = make_covariate("x");
  CHECK(structurally_equal(make_binary(BinaryOp::Mul, x, zero), zero));
  CHECK(structurally_equal(make_binary(BinaryOp::Add, x, zero), x));
  CHECK(structurally_equal(make_binary(BinaryOp::Pow, x, zero), make_constant(1.0)));
  auto folded = make_binary(BinaryOp::Mul, make_constant(3.0), make_constant(4.0));
  CHECK(folded->kind == Node::Kind::Constant);
  CHECK(folded->value == 12.0);
}
