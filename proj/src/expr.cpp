#include "heatlab/expr.hpp"

#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>

namespace heatlab {

namespace {

ExprPtr make_node(ExprNode n) { return std::make_shared<const ExprNode>(std::move(n)); }

bool is_const(const Expr& e, double v) {
  return e.node().kind == ExprNode::Kind::Constant && e.node().value == v;
}

double pow_int(double base, int n) {
  if (n == 0) return 1.0;
  const bool invert = n < 0;
  unsigned long long k = invert ? -static_cast<long long>(n) : n;
  double acc = 1.0, b = base;
  while (k != 0) {
    if (k & 1ULL) acc *= b;
    b *= b;
    k >>= 1;
  }
  return invert ? 1.0 / acc : acc;
}

}  // namespace

Expr Expr::constant(double v) {
  ExprNode n;
  n.kind = ExprNode::Kind::Constant;
  n.value = v;
  return Expr(make_node(std::move(n)));
}

Expr Expr::variable(int index_1based) {
  if (index_1based < 1) throw std::invalid_argument("variable index must be >= 1");
  ExprNode n;
  n.kind = ExprNode::Kind::Variable;
  n.var_index = index_1based;
  return Expr(make_node(std::move(n)));
}

Expr Expr::unary(UnaryOp op, Expr a) {
  ExprNode n;
  n.kind = ExprNode::Kind::Unary;
  n.uop = op;
  n.a = a.ptr();
  return Expr(make_node(std::move(n)));
}

Expr Expr::binary(BinaryOp op, Expr a, Expr b) {
  ExprNode n;
  n.kind = ExprNode::Kind::Binary;
  n.bop = op;
  n.a = a.ptr();
  n.b = b.ptr();
  return Expr(make_node(std::move(n)));
}

Expr Expr::power(Expr base, int exponent) {
  ExprNode n;
  n.kind = ExprNode::Kind::Power;
  n.exponent = exponent;
  n.a = base.ptr();
  return Expr(make_node(std::move(n)));
}

Expr Expr::add(Expr a, Expr b) {
  const auto& na = a.node();
  const auto& nb = b.node();
  if (na.kind == ExprNode::Kind::Constant && nb.kind == ExprNode::Kind::Constant)
    return constant(na.value + nb.value);
  if (is_const(a, 0.0)) return b;
  if (is_const(b, 0.0)) return a;
  return binary(BinaryOp::Add, std::move(a), std::move(b));
}

Expr Expr::sub(Expr a, Expr b) {
  const auto& na = a.node();
  const auto& nb = b.node();
  if (na.kind == ExprNode::Kind::Constant && nb.kind == ExprNode::Kind::Constant)
    return constant(na.value - nb.value);
  if (is_const(b, 0.0)) return a;
  if (is_const(a, 0.0)) return neg(std::move(b));
  return binary(BinaryOp::Sub, std::move(a), std::move(b));
}

Expr Expr::mul(Expr a, Expr b) {
  const auto& na = a.node();
  const auto& nb = b.node();
  if (na.kind == ExprNode::Kind::Constant && nb.kind == ExprNode::Kind::Constant)
    return constant(na.value * nb.value);
  if (is_const(a, 0.0) || is_const(b, 0.0)) return constant(0.0);
  if (is_const(a, 1.0)) return b;
  if (is_const(b, 1.0)) return a;
  return binary(BinaryOp::Mul, std::move(a), std::move(b));
}

Expr Expr::div(Expr a, Expr b) {
  const auto& na = a.node();
  const auto& nb = b.node();
  if (na.kind == ExprNode::Kind::Constant && nb.kind == ExprNode::Kind::Constant &&
      nb.value != 0.0)
    return constant(na.value / nb.value);
  if (is_const(a, 0.0)) return constant(0.0);
  if (is_const(b, 1.0)) return a;
  return binary(BinaryOp::Div, std::move(a), std::move(b));
}

Expr Expr::pow(Expr base, int exponent) {
  if (exponent == 0) return constant(1.0);
  if (exponent == 1) return base;
  if (base.node().kind == ExprNode::Kind::Constant)
    return constant(pow_int(base.node().value, exponent));
  return power(std::move(base), exponent);
}

Expr Expr::neg(Expr a) {
  if (a.node().kind == ExprNode::Kind::Constant) return constant(-a.node().value);
  if (a.node().kind == ExprNode::Kind::Unary && a.node().uop == UnaryOp::Neg)
    return Expr(a.node().a);
  return unary(UnaryOp::Neg, std::move(a));
}

Expr Expr::apply(UnaryOp op, Expr a) {
  if (op == UnaryOp::Neg) return neg(std::move(a));
  if (a.node().kind == ExprNode::Kind::Constant) {
    const double v = a.node().value;
    switch (op) {
      case UnaryOp::Sin: return constant(std::sin(v));
      case UnaryOp::Cos: return constant(std::cos(v));
      case UnaryOp::Exp: return constant(std::exp(v));
      case UnaryOp::Tanh: return constant(std::tanh(v));
      case UnaryOp::Log:
        if (v > 0.0) return constant(std::log(v));
        break;  // leave the domain violation for eval to report
      case UnaryOp::Sqrt:
        if (v >= 0.0) return constant(std::sqrt(v));
        break;
      default: break;
    }
  }
  return unary(op, std::move(a));
}

namespace {

double eval_node(const ExprNode& n, const double* x, std::size_t dim);

std::string node_str(const ExprNode& n);

double eval_unary(const ExprNode& n, const double* x, std::size_t dim) {
  const double a = eval_node(*n.a, x, dim);
  switch (n.uop) {
    case UnaryOp::Neg: return -a;
    case UnaryOp::Sin: return std::sin(a);
    case UnaryOp::Cos: return std::cos(a);
    case UnaryOp::Exp: return std::exp(a);
    case UnaryOp::Tanh: return std::tanh(a);
    case UnaryOp::Log:
      if (a <= 0.0) throw EvalError("log of non-positive value", node_str(n));
      return std::log(a);
    case UnaryOp::Sqrt:
      if (a < 0.0) throw EvalError("sqrt of negative value", node_str(n));
      return std::sqrt(a);
  }
  throw std::logic_error("unreachable unary op");
}

double eval_node(const ExprNode& n, const double* x, std::size_t dim) {
  switch (n.kind) {
    case ExprNode::Kind::Constant:
      return n.value;
    case ExprNode::Kind::Variable:
      if (static_cast<std::size_t>(n.var_index) > dim)
        throw EvalError("variable index exceeds point dimension", node_str(n));
      return x[n.var_index - 1];
    case ExprNode::Kind::Unary:
      return eval_unary(n, x, dim);
    case ExprNode::Kind::Binary: {
      const double a = eval_node(*n.a, x, dim);
      const double b = eval_node(*n.b, x, dim);
      switch (n.bop) {
        case BinaryOp::Add: return a + b;
        case BinaryOp::Sub: return a - b;
        case BinaryOp::Mul: return a * b;
        case BinaryOp::Div:
          if (b == 0.0) throw EvalError("division by zero", node_str(n));
          return a / b;
      }
      throw std::logic_error("unreachable binary op");
    }
    case ExprNode::Kind::Power: {
      const double a = eval_node(*n.a, x, dim);
      if (a == 0.0 && n.exponent < 0)
        throw EvalError("zero raised to a negative power", node_str(n));
      return pow_int(a, n.exponent);
    }
  }
  throw std::logic_error("unreachable node kind");
}

}  // namespace

double Expr::eval(const std::vector<double>& x) const {
  return eval_node(*node_, x.data(), x.size());
}

double Expr::eval(const double* x, std::size_t n) const {
  return eval_node(*node_, x, n);
}

Expr Expr::differentiate(int v) const {
  const ExprNode& n = *node_;
  switch (n.kind) {
    case ExprNode::Kind::Constant:
      return constant(0.0);
    case ExprNode::Kind::Variable:
      return constant(n.var_index == v ? 1.0 : 0.0);
    case ExprNode::Kind::Unary: {
      const Expr a(n.a);
      const Expr da = a.differentiate(v);
      switch (n.uop) {
        case UnaryOp::Neg: return neg(da);
        case UnaryOp::Sin: return mul(apply(UnaryOp::Cos, a), da);
        case UnaryOp::Cos: return neg(mul(apply(UnaryOp::Sin, a), da));
        case UnaryOp::Exp: return mul(Expr(node_), da);
        case UnaryOp::Log: return div(da, a);
        case UnaryOp::Sqrt: return div(da, mul(constant(2.0), Expr(node_)));
        case UnaryOp::Tanh:
          return mul(sub(constant(1.0), pow(Expr(node_), 2)), da);
      }
      throw std::logic_error("unreachable unary op");
    }
    case ExprNode::Kind::Binary: {
      const Expr a(n.a), b(n.b);
      const Expr da = a.differentiate(v), db = b.differentiate(v);
      switch (n.bop) {
        case BinaryOp::Add: return add(da, db);
        case BinaryOp::Sub: return sub(da, db);
        case BinaryOp::Mul: return add(mul(da, b), mul(a, db));
        case BinaryOp::Div:
          return div(sub(mul(da, b), mul(a, db)), pow(b, 2));
      }
      throw std::logic_error("unreachable binary op");
    }
    case ExprNode::Kind::Power: {
      const Expr a(n.a);
      const Expr da = a.differentiate(v);
      return mul(mul(constant(static_cast<double>(n.exponent)), pow(a, n.exponent - 1)), da);
    }
  }
  throw std::logic_error("unreachable node kind");
}

namespace {

// Precedence: Add/Sub 1, Mul/Div 2, Neg 3, Power 4, atoms 5. Printing is
// structure-faithful: the right child of a binary node at equal precedence
// is parenthesized, and power bases must be atoms, so that parse(str())
// rebuilds exactly the same tree.
int precedence(const ExprNode& n) {
  switch (n.kind) {
    case ExprNode::Kind::Binary:
      return (n.bop == BinaryOp::Add || n.bop == BinaryOp::Sub) ? 1 : 2;
    case ExprNode::Kind::Unary:
      return n.uop == UnaryOp::Neg ? 3 : 5;
    case ExprNode::Kind::Power:
      return 4;
    case ExprNode::Kind::Constant:
      // Negative literals print with a leading '-', which the parser reads
      // as a unary sign; give them sign precedence so power bases get parens.
      return n.value < 0.0 ? 3 : 5;
    default:
      return 5;
  }
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

const char* unary_name(UnaryOp op) {
  switch (op) {
    case UnaryOp::Sin: return "sin";
    case UnaryOp::Cos: return "cos";
    case UnaryOp::Exp: return "exp";
    case UnaryOp::Log: return "log";
    case UnaryOp::Sqrt: return "sqrt";
    case UnaryOp::Tanh: return "tanh";
    case UnaryOp::Neg: return "-";
  }
  return "?";
}

std::string wrap(const ExprNode& child, int min_prec) {
  const std::string s = node_str(child);
  if (precedence(child) < min_prec) return "(" + s + ")";
  return s;
}

std::string node_str(const ExprNode& n) {
  switch (n.kind) {
    case ExprNode::Kind::Constant:
      return format_double(n.value);
    case ExprNode::Kind::Variable:
      return "x" + std::to_string(n.var_index);
    case ExprNode::Kind::Unary:
      if (n.uop == UnaryOp::Neg) return "-" + wrap(*n.a, 3);
      return std::string(unary_name(n.uop)) + "(" + node_str(*n.a) + ")";
    case ExprNode::Kind::Binary: {
      const int p = precedence(n);
      const char* op = n.bop == BinaryOp::Add ? " + "
                     : n.bop == BinaryOp::Sub ? " - "
                     : n.bop == BinaryOp::Mul ? "*" : "/";
      return wrap(*n.a, p) + op + wrap(*n.b, p + 1);
    }
    case ExprNode::Kind::Power:
      return wrap(*n.a, 5) + "^" + std::to_string(n.exponent);
  }
  return "?";
}

}  // namespace

std::string Expr::str() const { return node_str(*node_); }

int Expr::max_var_index() const {
  const ExprNode& n = *node_;
  switch (n.kind) {
    case ExprNode::Kind::Constant: return 0;
    case ExprNode::Kind::Variable: return n.var_index;
    case ExprNode::Kind::Unary: return Expr(n.a).max_var_index();
    case ExprNode::Kind::Power: return Expr(n.a).max_var_index();
    case ExprNode::Kind::Binary:
      return std::max(Expr(n.a).max_var_index(), Expr(n.b).max_var_index());
  }
  return 0;
}

bool structurally_equal(const Expr& ea, const Expr& eb) {
  const ExprNode& a = ea.node();
  const ExprNode& b = eb.node();
  if (a.kind != b.kind) return false;
  switch (a.kind) {
    case ExprNode::Kind::Constant: return a.value == b.value;
    case ExprNode::Kind::Variable: return a.var_index == b.var_index;
    case ExprNode::Kind::Unary:
      return a.uop == b.uop && structurally_equal(Expr(a.a), Expr(b.a));
    case ExprNode::Kind::Binary:
      return a.bop == b.bop && structurally_equal(Expr(a.a), Expr(b.a)) &&
             structurally_equal(Expr(a.b), Expr(b.b));
    case ExprNode::Kind::Power:
      return a.exponent == b.exponent && structurally_equal(Expr(a.a), Expr(b.a));
  }
  return false;
}

// ---------------------------------------------------------------------------
// Parser: recursive descent.
//   expr   := term (('+'|'-') term)*
//   term   := factor (('*'|'/') factor)*
//   factor := '-' factor | primary ('^' int)?
//   primary := number | name '(' expr ')' | 'x'<digits> | '(' expr ')'
// A '-' directly in front of a numeric literal folds into the literal.

namespace {

struct Parser {
  std::string_view src;
  std::size_t pos = 0;
  int dim;

  [[noreturn]] void fail(const std::string& msg, std::size_t at) const {
    throw ParseError(msg + " at byte " + std::to_string(at), at);
  }

  void skip_ws() {
    while (pos < src.size() && std::isspace(static_cast<unsigned char>(src[pos]))) ++pos;
  }

  bool eat(char c) {
    skip_ws();
    if (pos < src.size() && src[pos] == c) { ++pos; return true; }
    return false;
  }

  char peek() {
    skip_ws();
    return pos < src.size() ? src[pos] : '\0';
  }

  Expr parse_expr() {
    Expr lhs = parse_term();
    for (;;) {
      if (eat('+')) lhs = Expr::binary(BinaryOp::Add, lhs, parse_term());
      else if (eat('-')) lhs = Expr::binary(BinaryOp::Sub, lhs, parse_term());
      else return lhs;
    }
  }

  Expr parse_term() {
    Expr lhs = parse_factor();
    for (;;) {
      if (eat('*')) lhs = Expr::binary(BinaryOp::Mul, lhs, parse_factor());
      else if (eat('/')) lhs = Expr::binary(BinaryOp::Div, lhs, parse_factor());
      else return lhs;
    }
  }

  Expr parse_factor() {
    skip_ws();
    if (pos < src.size() && src[pos] == '-') {
      ++pos;
      skip_ws();
      if (pos < src.size() && (std::isdigit(static_cast<unsigned char>(src[pos])) || src[pos] == '.')) {
        Expr lit = parse_number();
        skip_ws();
        if (pos < src.size() && src[pos] == '^') {
          // -2^3 means -(2^3): the power binds tighter than the sign.
          ++pos;
          return Expr::unary(UnaryOp::Neg,
                             Expr::power(std::move(lit), parse_exponent()));
        }
        return Expr::constant(-lit.node().value);
      }
      return Expr::unary(UnaryOp::Neg, parse_factor());
    }
    return finish_power(parse_primary());
  }

  Expr finish_power(Expr base) {
    skip_ws();
    if (pos < src.size() && src[pos] == '^') {
      ++pos;
      return Expr::power(std::move(base), parse_exponent());
    }
    return base;
  }

  int parse_exponent() {
    skip_ws();
    const bool parens = eat('(');
    skip_ws();
    const std::size_t start = pos;
    bool negative = false;
    if (pos < src.size() && src[pos] == '-') { negative = true; ++pos; }
    std::size_t digits_begin = pos;
    while (pos < src.size() && std::isdigit(static_cast<unsigned char>(src[pos]))) ++pos;
    if (pos == digits_begin) fail("exponent must be a constant integer", start);
    if (pos < src.size() && (src[pos] == '.' || src[pos] == 'e' || src[pos] == 'E'))
      fail("exponent must be a constant integer", start);
    int value = 0;
    const auto res = std::from_chars(src.data() + digits_begin, src.data() + pos, value);
    if (res.ec != std::errc()) fail("exponent out of range", start);
    if (parens && !eat(')')) fail("expected ')' after exponent", pos);
    return negative ? -value : value;
  }

  Expr parse_number() {
    skip_ws();
    const std::size_t start = pos;
    double value = 0.0;
    const auto res = std::from_chars(src.data() + pos, src.data() + src.size(), value);
    if (res.ec != std::errc() || res.ptr == src.data() + pos)
      fail("expected a number", start);
    pos = static_cast<std::size_t>(res.ptr - src.data());
    return Expr::constant(value);
  }

  Expr parse_primary() {
    skip_ws();
    if (pos >= src.size()) fail("unexpected end of input", pos);
    const char c = src[pos];
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
    if (c == '(') {
      ++pos;
      Expr inner = parse_expr();
      if (!eat(')')) fail("expected ')'", pos);
      return inner;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      const std::size_t start = pos;
      while (pos < src.size() &&
             (std::isalnum(static_cast<unsigned char>(src[pos])) || src[pos] == '_'))
        ++pos;
      const std::string_view name = src.substr(start, pos - start);
      if (name.size() >= 2 && name[0] == 'x' &&
          std::isdigit(static_cast<unsigned char>(name[1]))) {
        int index = 0;
        const auto res = std::from_chars(name.data() + 1, name.data() + name.size(), index);
        if (res.ec != std::errc() || res.ptr != name.data() + name.size())
          fail("malformed variable name", start);
        if (index < 1 || index > dim)
          fail("variable index out of range for dimension " + std::to_string(dim), start);
        return Expr::variable(index);
      }
      UnaryOp op;
      if (name == "sin") op = UnaryOp::Sin;
      else if (name == "cos") op = UnaryOp::Cos;
      else if (name == "exp") op = UnaryOp::Exp;
      else if (name == "log") op = UnaryOp::Log;
      else if (name == "sqrt") op = UnaryOp::Sqrt;
      else if (name == "tanh") op = UnaryOp::Tanh;
      else fail("unknown identifier `" + std::string(name) + "`", start);
      if (!eat('(')) fail("expected '(' after function name", pos);
      Expr arg = parse_expr();
      if (!eat(')')) fail("expected ')'", pos);
      return Expr::unary(op, std::move(arg));
    }
    fail(std::string("unexpected character `") + c + "`", pos);
  }
};

}  // namespace

Expr parse(std::string_view source, int dim) {
  if (dim < 0) throw std::invalid_argument("dimension must be non-negative");
  Parser p{source, 0, dim};
  Expr result = p.parse_expr();
  p.skip_ws();
  if (p.pos != source.size())
    p.fail("trailing input", p.pos);
  return result;
}

// ---------------------------------------------------------------------------
// Compiled tape.

CompiledExpr CompiledExpr::compile(const Expr& e) {
  CompiledExpr c;
  int depth = 0;
  int max_depth = 0;
  // Explicit post-order walk; the lambda recursion mirrors eval_node without
  // domain checks.
  const auto walk = [&](auto&& rec, const ExprNode& n) -> void {
    switch (n.kind) {
      case ExprNode::Kind::Constant:
        c.tape_.push_back({Code::PushConst, 0, n.value});
        max_depth = std::max(max_depth, ++depth);
        return;
      case ExprNode::Kind::Variable:
        c.tape_.push_back({Code::PushVar, n.var_index - 1, 0.0});
        max_depth = std::max(max_depth, ++depth);
        return;
      case ExprNode::Kind::Unary:
        rec(rec, *n.a);
        switch (n.uop) {
          case UnaryOp::Neg: c.tape_.push_back({Code::Neg, 0, 0.0}); break;
          case UnaryOp::Sin: c.tape_.push_back({Code::Sin, 0, 0.0}); break;
          case UnaryOp::Cos: c.tape_.push_back({Code::Cos, 0, 0.0}); break;
          case UnaryOp::Exp: c.tape_.push_back({Code::Exp, 0, 0.0}); break;
          case UnaryOp::Log: c.tape_.push_back({Code::Log, 0, 0.0}); break;
          case UnaryOp::Sqrt: c.tape_.push_back({Code::Sqrt, 0, 0.0}); break;
          case UnaryOp::Tanh: c.tape_.push_back({Code::Tanh, 0, 0.0}); break;
        }
        return;
      case ExprNode::Kind::Binary:
        rec(rec, *n.a);
        rec(rec, *n.b);
        switch (n.bop) {
          case BinaryOp::Add: c.tape_.push_back({Code::Add, 0, 0.0}); break;
          case BinaryOp::Sub: c.tape_.push_back({Code::Sub, 0, 0.0}); break;
          case BinaryOp::Mul: c.tape_.push_back({Code::Mul, 0, 0.0}); break;
          case BinaryOp::Div: c.tape_.push_back({Code::Div, 0, 0.0}); break;
        }
        --depth;
        return;
      case ExprNode::Kind::Power:
        rec(rec, *n.a);
        c.tape_.push_back({Code::PowInt, n.exponent, 0.0});
        return;
    }
  };
  walk(walk, e.node());
  c.max_depth_ = max_depth;
  if (max_depth > 256)
    throw std::invalid_argument("expression too deep to compile");
  return c;
}

double CompiledExpr::eval(const double* x) const {
  double st[256];
  int top = -1;
  for (const Op& op : tape_) {
    switch (op.code) {
      case Code::PushConst: st[++top] = op.value; break;
      case Code::PushVar: st[++top] = x[op.arg]; break;
      case Code::Add: --top; st[top] = st[top] + st[top + 1]; break;
      case Code::Sub: --top; st[top] = st[top] - st[top + 1]; break;
      case Code::Mul: --top; st[top] = st[top] * st[top + 1]; break;
      case Code::Div: --top; st[top] = st[top] / st[top + 1]; break;
      case Code::Neg: st[top] = -st[top]; break;
      case Code::Sin: st[top] = std::sin(st[top]); break;
      case Code::Cos: st[top] = std::cos(st[top]); break;
      case Code::Exp: st[top] = std::exp(st[top]); break;
      case Code::Log: st[top] = std::log(st[top]); break;
      case Code::Sqrt: st[top] = std::sqrt(st[top]); break;
      case Code::Tanh: st[top] = std::tanh(st[top]); break;
      case Code::PowInt: st[top] = pow_int(st[top], op.arg); break;
    }
  }
  return top >= 0 ? st[top] : 0.0;
}

}  // namespace heatlab
