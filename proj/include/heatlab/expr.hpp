#pragma once

#include <cstddef>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace heatlab {

enum class UnaryOp { Neg, Sin, Cos, Exp, Log, Sqrt, Tanh };
enum class BinaryOp { Add, Sub, Mul, Div };

struct ExprNode;
using ExprPtr = std::shared_ptr<const ExprNode>;

// Immutable expression tree over variables x1..xd. Nodes are shared and
// never mutated after construction, so Expr values are thread-safe.
struct ExprNode {
  enum class Kind { Constant, Variable, Unary, Binary, Power };
  Kind kind;
  double value = 0.0;   // Constant
  int var_index = 0;    // Variable, 1-based
  UnaryOp uop = UnaryOp::Neg;
  BinaryOp bop = BinaryOp::Add;
  int exponent = 0;     // Power
  ExprPtr a;
  ExprPtr b;
};

struct ParseError : std::runtime_error {
  ParseError(const std::string& msg, std::size_t byte_offset)
      : std::runtime_error(msg), offset(byte_offset) {}
  std::size_t offset;
};

struct EvalError : std::runtime_error {
  EvalError(const std::string& msg, std::string subexpression)
      : std::runtime_error(msg + " in `" + subexpression + "`"),
        subexpr(std::move(subexpression)) {}
  std::string subexpr;
};

class Expr {
 public:
  Expr() : Expr(constant(0.0)) {}
  explicit Expr(ExprPtr node) : node_(std::move(node)) {}

  static Expr constant(double v);
  static Expr variable(int index_1based);

  // Raw constructors: build exactly the requested node, no simplification.
  // The parser uses these so that printing round-trips structurally.
  static Expr unary(UnaryOp op, Expr a);
  static Expr binary(BinaryOp op, Expr a, Expr b);
  static Expr power(Expr base, int exponent);

  // Folding constructors: constant folding plus neutral-element rules
  // (x+0, x*1, x*0, x^1). Only differentiate() builds trees through these.
  static Expr add(Expr a, Expr b);
  static Expr sub(Expr a, Expr b);
  static Expr mul(Expr a, Expr b);
  static Expr div(Expr a, Expr b);
  static Expr pow(Expr base, int exponent);
  static Expr neg(Expr a);
  static Expr apply(UnaryOp op, Expr a);

  // Evaluation is strict about domains: log of a non-positive value, sqrt of
  // a negative value, division by zero, and 0 raised to a negative power all
  // throw EvalError naming the offending subexpression.
  double eval(const std::vector<double>& x) const;
  double eval(const double* x, std::size_t n) const;

  Expr differentiate(int var_index_1based) const;

  std::string str() const;
  int max_var_index() const;
  const ExprNode& node() const { return *node_; }
  const ExprPtr& ptr() const { return node_; }

 private:
  ExprPtr node_;
};

// Parses an expression over x1..xdim. Reports syntax errors, unknown
// identifiers, and variable indices above dim, all with byte offsets.
Expr parse(std::string_view source, int dim);

bool structurally_equal(const Expr& a, const Expr& b);

// Flat postfix tape for hot loops (integrators, grid scans). Evaluation is
// plain IEEE arithmetic with no domain checks; callers validate domains via
// Expr::eval on sample points beforehand.
class CompiledExpr {
 public:
  CompiledExpr() = default;
  static CompiledExpr compile(const Expr& e);
  double eval(const double* x) const;

 private:
  enum class Code : unsigned char {
    PushConst, PushVar, Add, Sub, Mul, Div, Neg,
    Sin, Cos, Exp, Log, Sqrt, Tanh, PowInt
  };
  struct Op {
    Code code;
    int arg = 0;
    double value = 0.0;
  };
  std::vector<Op> tape_;
  int max_depth_ = 0;
};

}  // namespace heatlab
