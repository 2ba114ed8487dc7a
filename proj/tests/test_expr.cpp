#include <doctest.h>

#include <cmath>
#include <vector>

#include "heatlab/expr.hpp"
#include "heatlab/rng.hpp"

using namespace heatlab;

TEST_CASE("parse builds the documented tree for x1 + 2*x2") {
  const Expr e = parse("x1 + 2*x2", 2);
  const ExprNode& n = e.node();
  REQUIRE(n.kind == ExprNode::Kind::Binary);
  CHECK(n.bop == BinaryOp::Add);
  CHECK(n.a->kind == ExprNode::Kind::Variable);
  CHECK(n.a->var_index == 1);
  REQUIRE(n.b->kind == ExprNode::Kind::Binary);
  CHECK(n.b->bop == BinaryOp::Mul);
  CHECK(n.b->a->value == 2.0);
  CHECK(n.b->b->var_index == 2);
}

TEST_CASE("power binds tighter than unary minus") {
  const Expr e = parse("-x1^2", 1);
  const ExprNode& n = e.node();
  REQUIRE(n.kind == ExprNode::Kind::Unary);
  CHECK(n.uop == UnaryOp::Neg);
  CHECK(n.a->kind == ExprNode::Kind::Power);
  CHECK(n.a->exponent == 2);
}

TEST_CASE("eval matches hand values") {
  const Expr e = parse("x1^3 - 2/x2", 2);
  CHECK(e.eval({2.0, 4.0}) == doctest::Approx(7.5).epsilon(1e-15));
  CHECK(parse("sin(x1)^2 + cos(x1)^2", 1).eval({0.37}) ==
        doctest::Approx(1.0).epsilon(1e-14));
  CHECK(parse("tanh(x1)", 1).eval({0.5}) == doctest::Approx(std::tanh(0.5)));
  CHECK(parse("x1^-2", 1).eval({2.0}) == doctest::Approx(0.25));
}

TEST_CASE("parse errors carry byte offsets") {
  CHECK_THROWS_AS(parse("x3 + 1", 2), ParseError);
  try {
    parse("x1 + foo(x2)", 2);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.offset == 5);
  }
  try {
    parse("x1 ^ x2", 2);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.offset >= 4);
  }
  CHECK_THROWS_AS(parse("x1 +", 2), ParseError);
  CHECK_THROWS_AS(parse("(x1", 2), ParseError);
  CHECK_THROWS_AS(parse("x1^2.5", 2), ParseError);
  CHECK_THROWS_AS(parse("x1 x2", 2), ParseError);
  CHECK_THROWS_AS(parse("x0", 2), ParseError);
}

TEST_CASE("domain violations are reported as errors, not NaN") {
  CHECK_THROWS_AS(parse("log(x1)", 1).eval({-1.0}), EvalError);
  CHECK_THROWS_AS(parse("log(x1)", 1).eval({0.0}), EvalError);
  CHECK_THROWS_AS(parse("sqrt(x1)", 1).eval({-0.5}), EvalError);
  CHECK_THROWS_AS(parse("1/x1", 1).eval({0.0}), EvalError);
  CHECK_THROWS_AS(parse("x1^-1", 1).eval({0.0}), EvalError);
  try {
    parse("2 + log(x1 - 1)", 1).eval({0.5});
    FAIL("expected EvalError");
  } catch (const EvalError& e) {
    CHECK(e.subexpr.find("log") != std::string::npos);
  }
}

TEST_CASE("differentiate produces exact trees with constant folding") {
  const Expr e = parse("x1*x2 + sin(x1)", 2);
  const Expr d1 = e.differentiate(1);
  CHECK(d1.eval({1.0, 2.0}) == doctest::Approx(2.0 + std::cos(1.0)).epsilon(1e-15));
  // Folding keeps derivative trees small: d/dx1(2*x1) is the constant 2.
  CHECK(parse("2*x1", 1).differentiate(1).str() == "2");
  CHECK(parse("x2", 2).differentiate(1).str() == "0");
  // Chain rule through nested unaries.
  const Expr g = parse("exp(sin(x1^2))", 1);
  const double x = 0.7;
  const double expected =
      std::exp(std::sin(x * x)) * std::cos(x * x) * 2.0 * x;
  CHECK(g.differentiate(1).eval({x}) == doctest::Approx(expected).epsilon(1e-14));
  // Quotient rule.
  const Expr q = parse("x1/(1 + x1^2)", 1);
  const double qx = 0.3;
  const double qd = (1.0 - qx * qx) / ((1.0 + qx * qx) * (1.0 + qx * qx));
  CHECK(q.differentiate(1).eval({qx}) == doctest::Approx(qd).epsilon(1e-14));
}

namespace {

// Random tree generator for the round-trip and derivative properties. Trees
// use raw constructors; constants are positive and negation is never applied
// directly to a literal (the lexer folds "-2" into a negative literal, which
// is the one place printing cannot reproduce a Neg node).
Expr random_tree(Xoshiro256& rng, int dim, int depth) {
  const double pick = rng.uniform();
  if (depth <= 0 || pick < 0.3) {
    if (rng.uniform() < 0.5)
      return Expr::constant(0.25 + 3.0 * rng.uniform());
    return Expr::variable(1 + static_cast<int>(rng.uniform() * dim));
  }
  if (pick < 0.45) {
    static const UnaryOp ops[4] = {UnaryOp::Sin, UnaryOp::Cos, UnaryOp::Exp,
                                   UnaryOp::Tanh};
    return Expr::unary(ops[rng.next() % 4], random_tree(rng, dim, depth - 1));
  }
  if (pick < 0.55) {
    Expr child = random_tree(rng, dim, depth - 1);
    if (child.node().kind == ExprNode::Kind::Constant)
      child = Expr::variable(1 + static_cast<int>(rng.uniform() * dim));
    return Expr::unary(UnaryOp::Neg, std::move(child));
  }
  if (pick < 0.65) {
    Expr base = random_tree(rng, dim, depth - 1);
    return Expr::power(std::move(base), 2 + static_cast<int>(rng.next() % 3));
  }
  static const BinaryOp ops[3] = {BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul};
  return Expr::binary(ops[rng.next() % 3], random_tree(rng, dim, depth - 1),
                      random_tree(rng, dim, depth - 1));
}

}  // namespace

TEST_CASE("print-parse round trip is structural on 1000 random trees") {
  Xoshiro256 rng(20260819u);
  for (int i = 0; i < 1000; ++i) {
    const int dim = 1 + static_cast<int>(rng.next() % 3);
    const Expr e = random_tree(rng, dim, 8);
    const Expr back = parse(e.str(), dim);
    if (!structurally_equal(e, back)) {
      CAPTURE(e.str());
      CHECK(structurally_equal(e, back));
      return;
    }
  }
  CHECK(true);
}

TEST_CASE("symbolic derivative agrees with central differences") {
  Xoshiro256 rng(7u);
  int checked = 0;
  for (int i = 0; checked < 100 && i < 400; ++i) {
    const int dim = 1 + static_cast<int>(rng.next() % 3);
    const Expr e = random_tree(rng, dim, 5);
    const int v = 1 + static_cast<int>(rng.next() % dim);
    const Expr de = e.differentiate(v);
    std::vector<double> x(dim);
    for (double& c : x) c = -1.0 + 2.0 * rng.uniform();
    const double h = 1e-6;
    std::vector<double> xp = x, xm = x;
    xp[v - 1] += h;
    xm[v - 1] -= h;
    double fd, sym;
    try {
      fd = (e.eval(xp) - e.eval(xm)) / (2.0 * h);
      sym = de.eval(x);
    } catch (const EvalError&) {
      continue;
    }
    if (!std::isfinite(fd) || std::abs(fd) > 1e6) continue;  // fd unreliable
    const double scale = std::max({1.0, std::abs(fd), std::abs(sym)});
    CHECK(std::abs(fd - sym) / scale <= 2e-6);
    ++checked;
  }
  CHECK(checked == 100);
}

TEST_CASE("differentiation is linear to 1e-12") {
  Xoshiro256 rng(99u);
  for (int i = 0; i < 50; ++i) {
    const int dim = 2;
    const Expr f = random_tree(rng, dim, 4);
    const Expr g = random_tree(rng, dim, 4);
    const double a = -2.0 + 4.0 * rng.uniform();
    const double b = -2.0 + 4.0 * rng.uniform();
    const Expr comb = Expr::binary(
        BinaryOp::Add,
        Expr::binary(BinaryOp::Mul, Expr::constant(a), f),
        Expr::binary(BinaryOp::Mul, Expr::constant(b), g));
    const Expr dcomb = comb.differentiate(1);
    const Expr df = f.differentiate(1);
    const Expr dg = g.differentiate(1);
    std::vector<double> x = {0.3 + 0.4 * rng.uniform(), -0.2 + 0.4 * rng.uniform()};
    try {
      const double lhs = dcomb.eval(x);
      const double rhs = a * df.eval(x) + b * dg.eval(x);
      const double scale = std::max(1.0, std::abs(rhs));
      CHECK(std::abs(lhs - rhs) / scale <= 1e-12);
    } catch (const EvalError&) {
      continue;
    }
  }
}

TEST_CASE("compiled tape matches tree evaluation") {
  Xoshiro256 rng(1234u);
  for (int i = 0; i < 200; ++i) {
    const int dim = 1 + static_cast<int>(rng.next() % 3);
    const Expr e = random_tree(rng, dim, 6);
    const CompiledExpr c = CompiledExpr::compile(e);
    std::vector<double> x(dim);
    for (double& v : x) v = -1.5 + 3.0 * rng.uniform();
    double tree;
    try {
      tree = e.eval(x);
    } catch (const EvalError&) {
      continue;
    }
    const double tape = c.eval(x.data());
    CHECK(tape == doctest::Approx(tree).epsilon(1e-15));
  }
}
