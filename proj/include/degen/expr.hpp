#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "degen/errors.hpp"

namespace degen {

/// Immutable scalar expression over variables x1..xd.
///
/// Construction applies constant folding plus the fixed identity set
/// (0*e -> 0, e+0 -> e, e^1 -> e and their mirror/unit forms) and nothing
/// deeper, so trees built the same way compare structurally equal.
/// Evaluation follows IEEE semantics: pow(0, q) = +inf for q < 0,
/// exp(-inf) = 0, sign(0) = 0.
class Expr {
 public:
  enum class Kind : std::uint8_t { Constant, Variable, Unary, Binary, Call };
  enum class UnaryOp : std::uint8_t { Neg };
  enum class BinaryOp : std::uint8_t { Add, Sub, Mul, Div, Pow };
  enum class Fn : std::uint8_t { Exp, Log, Sin, Cos, Sqrt, Abs, Sign, Min, Max };

  /// Default-constructed expression is the constant 0.
  Expr() : node_(constant(0.0).node_) {}

  static Expr constant(double v) {
    auto n = std::make_shared<Node>();
    n->kind = Kind::Constant;
    n->value = v;
    return Expr(std::move(n));
  }

  /// 1-based variable index.
  static Expr variable(int index) {
    if (index < 1) throw Error("variable index must be >= 1");
    auto n = std::make_shared<Node>();
    n->kind = Kind::Variable;
    n->var = index;
    n->max_var = index;
    return Expr(std::move(n));
  }

  static Expr neg(const Expr& a) {
    if (a.is_constant()) return constant(-a.constant_value());
    return make(Kind::Unary, UnaryOp::Neg, {}, {}, {a});
  }

  static Expr add(const Expr& a, const Expr& b) {
    if (a.is_constant() && b.is_constant()) return constant(a.constant_value() + b.constant_value());
    if (a.is_constant_zero()) return b;
    if (b.is_constant_zero()) return a;
    return make(Kind::Binary, {}, BinaryOp::Add, {}, {a, b});
  }

  static Expr sub(const Expr& a, const Expr& b) {
    if (a.is_constant() && b.is_constant()) return constant(a.constant_value() - b.constant_value());
    if (b.is_constant_zero()) return a;
    return make(Kind::Binary, {}, BinaryOp::Sub, {}, {a, b});
  }

  static Expr mul(const Expr& a, const Expr& b) {
    if (a.is_constant() && b.is_constant()) return constant(a.constant_value() * b.constant_value());
    if (a.is_constant_zero()) return a;
    if (b.is_constant_zero()) return b;
    if (a.is_constant(1.0)) return b;
    if (b.is_constant(1.0)) return a;
    return make(Kind::Binary, {}, BinaryOp::Mul, {}, {a, b});
  }

  static Expr div(const Expr& a, const Expr& b) {
    if (a.is_constant() && b.is_constant()) return constant(a.constant_value() / b.constant_value());
    if (b.is_constant(1.0)) return a;
    return make(Kind::Binary, {}, BinaryOp::Div, {}, {a, b});
  }

  static Expr pow(const Expr& a, const Expr& b) {
    if (a.is_constant() && b.is_constant())
      return constant(std::pow(a.constant_value(), b.constant_value()));
    if (b.is_constant(1.0)) return a;
    return make(Kind::Binary, {}, BinaryOp::Pow, {}, {a, b});
  }

  static Expr call(Fn fn, std::vector<Expr> args) {
    std::size_t want = (fn == Fn::Min || fn == Fn::Max) ? 2 : 1;
    if (args.size() != want)
      throw Error(std::string(fn_name(fn)) + " expects " + std::to_string(want) + " argument(s)");
    bool all_const = true;
    for (const auto& a : args) all_const = all_const && a.is_constant();
    if (all_const) {
      double x = args[0].constant_value();
      double y = want == 2 ? args[1].constant_value() : 0.0;
      return constant(eval_fn(fn, x, y));
    }
    return make(Kind::Call, {}, {}, fn, std::move(args));
  }

  Kind kind() const { return node_->kind; }
  bool is_constant() const { return node_->kind == Kind::Constant; }
  bool is_constant(double v) const { return is_constant() && node_->value == v; }
  bool is_constant_zero() const { return is_constant(0.0); }  // matches -0.0 too
  double constant_value() const { return node_->value; }
  int variable_index() const { return node_->var; }
  UnaryOp unary_op() const { return node_->uop; }
  BinaryOp binary_op() const { return node_->bop; }
  Fn fn() const { return node_->fn; }
  const std::vector<Expr>& args() const { return node_->kids; }
  /// Largest 1-based variable index present (0 for constants).
  int max_variable() const { return node_->max_var; }

  double eval(std::span<const double> point) const {
    const Node& n = *node_;
    switch (n.kind) {
      case Kind::Constant: return n.value;
      case Kind::Variable: return point[static_cast<std::size_t>(n.var - 1)];
      case Kind::Unary: return -n.kids[0].eval(point);
      case Kind::Binary: {
        double a = n.kids[0].eval(point);
        double b = n.kids[1].eval(point);
        switch (n.bop) {
          case BinaryOp::Add: return a + b;
          case BinaryOp::Sub: return a - b;
          case BinaryOp::Mul: return a * b;
          case BinaryOp::Div: return a / b;
          case BinaryOp::Pow: return std::pow(a, b);
        }
        return 0.0;
      }
      case Kind::Call: {
        double a = n.kids[0].eval(point);
        double b = n.kids.size() > 1 ? n.kids[1].eval(point) : 0.0;
        return eval_fn(n.fn, a, b);
      }
    }
    return 0.0;
  }

  /// Symbolic partial derivative with respect to x<var> (1-based).
  Expr diff(int var) const {
    const Node& n = *node_;
    switch (n.kind) {
      case Kind::Constant: return constant(0.0);
      case Kind::Variable: return constant(n.var == var ? 1.0 : 0.0);
      case Kind::Unary: return neg(n.kids[0].diff(var));
      case Kind::Binary: {
        const Expr& u = n.kids[0];
        const Expr& v = n.kids[1];
        switch (n.bop) {
          case BinaryOp::Add: return add(u.diff(var), v.diff(var));
          case BinaryOp::Sub: return sub(u.diff(var), v.diff(var));
          case BinaryOp::Mul: return add(mul(u.diff(var), v), mul(u, v.diff(var)));
          case BinaryOp::Div:
            return div(sub(mul(u.diff(var), v), mul(u, v.diff(var))), mul(v, v));
          case BinaryOp::Pow:
            if (v.is_constant()) {
              double c = v.constant_value();
              return mul(mul(constant(c), pow(u, constant(c - 1.0))), u.diff(var));
            }
            // u^v = exp(v log u)
            return mul(*this, add(mul(v.diff(var), call(Fn::Log, {u})),
                                  div(mul(v, u.diff(var)), u)));
        }
        return constant(0.0);
      }
      case Kind::Call: {
        const Expr& u = n.kids[0];
        Expr du = u.diff(var);
        switch (n.fn) {
          case Fn::Exp: return mul(*this, du);
          case Fn::Log: return div(du, u);
          case Fn::Sin: return mul(call(Fn::Cos, {u}), du);
          case Fn::Cos: return neg(mul(call(Fn::Sin, {u}), du));
          case Fn::Sqrt: return div(du, mul(constant(2.0), *this));
          case Fn::Abs: return mul(call(Fn::Sign, {u}), du);
          case Fn::Sign: return constant(0.0);
          case Fn::Min:
          case Fn::Max: {
            // Subgradient expressed with sign; ties average the branches.
            const Expr& v = n.kids[1];
            Expr dv = v.diff(var);
            Expr s = call(Fn::Sign, {n.fn == Fn::Min ? sub(v, u) : sub(u, v)});
            Expr half = constant(0.5);
            Expr wu = mul(half, add(constant(1.0), s));
            Expr wv = mul(half, sub(constant(1.0), s));
            return add(mul(wu, du), mul(wv, dv));
          }
        }
        return constant(0.0);
      }
    }
    return constant(0.0);
  }

  std::string str() const {
    std::string out;
    print(out, 0);
    return out;
  }

  friend bool structurally_equal(const Expr& a, const Expr& b) {
    if (a.node_ == b.node_) return true;
    const Node& x = *a.node_;
    const Node& y = *b.node_;
    if (x.kind != y.kind) return false;
    switch (x.kind) {
      case Kind::Constant:
        // Value equality, so -0 == +0; NaN payloads compare equal to NaN.
        return x.value == y.value || (std::isnan(x.value) && std::isnan(y.value));
      case Kind::Variable: return x.var == y.var;
      case Kind::Unary:
        return x.uop == y.uop && structurally_equal(x.kids[0], y.kids[0]);
      case Kind::Binary:
        return x.bop == y.bop && structurally_equal(x.kids[0], y.kids[0]) &&
               structurally_equal(x.kids[1], y.kids[1]);
      case Kind::Call:
        if (x.fn != y.fn || x.kids.size() != y.kids.size()) return false;
        for (std::size_t i = 0; i < x.kids.size(); ++i)
          if (!structurally_equal(x.kids[i], y.kids[i])) return false;
        return true;
    }
    return false;
  }

  friend Expr operator+(const Expr& a, const Expr& b) { return add(a, b); }
  friend Expr operator-(const Expr& a, const Expr& b) { return sub(a, b); }
  friend Expr operator*(const Expr& a, const Expr& b) { return mul(a, b); }
  friend Expr operator/(const Expr& a, const Expr& b) { return div(a, b); }
  friend Expr operator-(const Expr& a) { return neg(a); }

  static const char* fn_name(Fn f) {
    switch (f) {
      case Fn::Exp: return "exp";
      case Fn::Log: return "log";
      case Fn::Sin: return "sin";
      case Fn::Cos: return "cos";
      case Fn::Sqrt: return "sqrt";
      case Fn::Abs: return "abs";
      case Fn::Sign: return "sign";
      case Fn::Min: return "min";
      case Fn::Max: return "max";
    }
    return "?";
  }

  static double eval_fn(Fn f, double a, double b) {
    switch (f) {
      case Fn::Exp: return std::exp(a);
      case Fn::Log: return std::log(a);
      case Fn::Sin: return std::sin(a);
      case Fn::Cos: return std::cos(a);
      case Fn::Sqrt: return std::sqrt(a);
      case Fn::Abs: return std::fabs(a);
      case Fn::Sign: return static_cast<double>(a > 0.0) - static_cast<double>(a < 0.0);
      case Fn::Min: return std::fmin(a, b);
      case Fn::Max: return std::fmax(a, b);
    }
    return 0.0;
  }

 private:
  struct Node {
    Kind kind = Kind::Constant;
    double value = 0.0;
    int var = 0;
    UnaryOp uop = UnaryOp::Neg;
    BinaryOp bop = BinaryOp::Add;
    Fn fn = Fn::Exp;
    std::vector<Expr> kids;
    int max_var = 0;
  };

  explicit Expr(std::shared_ptr<const Node> n) : node_(std::move(n)) {}

  static Expr make(Kind kind, UnaryOp uop, BinaryOp bop, Fn fn, std::vector<Expr> kids) {
    auto n = std::make_shared<Node>();
    n->kind = kind;
    n->uop = uop;
    n->bop = bop;
    n->fn = fn;
    for (const auto& k : kids) n->max_var = std::max(n->max_var, k.max_variable());
    n->kids = std::move(kids);
    return Expr(std::move(n));
  }

  // Precedence levels for printing: + - (1), * / (2), unary - (3), ^ (4), atom (5).
  int prec() const {
    switch (node_->kind) {
      case Kind::Constant:
        // Negative constants print with a leading '-', bind like unary minus.
        return node_->value < 0.0 || std::signbit(node_->value) ? 3 : 5;
      case Kind::Variable: return 5;
      case Kind::Call: return 5;
      case Kind::Unary: return 3;
      case Kind::Binary:
        switch (node_->bop) {
          case BinaryOp::Add:
          case BinaryOp::Sub: return 1;
          case BinaryOp::Mul:
          case BinaryOp::Div: return 2;
          case BinaryOp::Pow: return 4;
        }
    }
    return 5;
  }

  void print(std::string& out, int parent_min) const {
    const Node& n = *node_;
    int p = prec();
    bool paren = p < parent_min;
    if (paren) out += '(';
    switch (n.kind) {
      case Kind::Constant: {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", n.value);
        out += buf;
        break;
      }
      case Kind::Variable:
        out += 'x';
        out += std::to_string(n.var);
        break;
      case Kind::Unary:
        out += '-';
        n.kids[0].print(out, 3);
        break;
      case Kind::Binary: {
        const char* op = "";
        int lp = 0, rp = 0;
        switch (n.bop) {
          case BinaryOp::Add: op = " + "; lp = 1; rp = 2; break;
          case BinaryOp::Sub: op = " - "; lp = 1; rp = 2; break;
          case BinaryOp::Mul: op = "*"; lp = 2; rp = 3; break;
          case BinaryOp::Div: op = "/"; lp = 2; rp = 3; break;
          case BinaryOp::Pow: op = "^"; lp = 5; rp = 3; break;
        }
        n.kids[0].print(out, lp);
        out += op;
        n.kids[1].print(out, rp);
        break;
      }
      case Kind::Call:
        out += fn_name(n.fn);
        out += '(';
        for (std::size_t i = 0; i < n.kids.size(); ++i) {
          if (i) out += ", ";
          n.kids[i].print(out, 0);
        }
        out += ')';
        break;
    }
    if (paren) out += ')';
  }

  std::shared_ptr<const Node> node_;
};

namespace detail {

/// Recursive-descent parser over the fixed grammar:
///   expr   := term (('+'|'-') term)*
///   term   := factor (('*'|'/') factor)*
///   factor := atom ('^' factor)? | '-' factor
///   atom   := number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'
class Parser {
 public:
  Parser(std::string_view src, int dim) : src_(src), dim_(dim) {
    if (dim < 1) throw Error("dimension must be >= 1");
  }

  Expr run() {
    Expr e = expr();
    skip_ws();
    if (pos_ != src_.size()) throw ParseError("unexpected trailing input", pos_);
    return e;
  }

 private:
  Expr expr() {
    Expr e = term();
    for (;;) {
      skip_ws();
      if (accept('+')) e = Expr::add(e, term());
      else if (accept('-')) e = Expr::sub(e, term());
      else return e;
    }
  }

  Expr term() {
    Expr e = factor();
    for (;;) {
      skip_ws();
      if (accept('*')) e = Expr::mul(e, factor());
      else if (accept('/')) e = Expr::div(e, factor());
      else return e;
    }
  }

  Expr factor() {
    skip_ws();
    if (accept('-')) return Expr::neg(factor());
    Expr base = atom();
    skip_ws();
    if (accept('^')) return Expr::pow(base, factor());
    return base;
  }

  Expr atom() {
    skip_ws();
    if (pos_ >= src_.size()) throw ParseError("expected expression", pos_);
    char c = src_[pos_];
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return identifier();
    if (accept('(')) {
      Expr e = expr();
      expect(')');
      return e;
    }
    throw ParseError(std::string("unexpected character '") + c + "'", pos_);
  }

  Expr number() {
    std::size_t start = pos_;
    while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) ++pos_;
    if (pos_ < src_.size() && src_[pos_] == '.') {
      ++pos_;
      while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) ++pos_;
    }
    if (pos_ == start || (pos_ == start + 1 && src_[start] == '.'))
      throw ParseError("malformed number", start);
    if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
      std::size_t mark = pos_++;
      if (pos_ < src_.size() && (src_[pos_] == '+' || src_[pos_] == '-')) ++pos_;
      if (pos_ >= src_.size() || !std::isdigit(static_cast<unsigned char>(src_[pos_]))) {
        pos_ = mark;  // 'e' was not an exponent; leave it for the identifier error path
      } else {
        while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) ++pos_;
      }
    }
    double v = 0.0;
    auto r = std::from_chars(src_.data() + start, src_.data() + pos_, v);
    if (r.ec != std::errc{} || r.ptr != src_.data() + pos_)
      throw ParseError("malformed number", start);
    return Expr::constant(v);
  }

  Expr identifier() {
    std::size_t start = pos_;
    while (pos_ < src_.size() &&
           (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_'))
      ++pos_;
    std::string_view name = src_.substr(start, pos_ - start);
    skip_ws();
    if (pos_ < src_.size() && src_[pos_] == '(') {
      ++pos_;
      std::vector<Expr> args;
      args.push_back(expr());
      skip_ws();
      while (accept(',')) args.push_back(expr());
      expect(')');
      if (name == "pow") {
        if (args.size() != 2) throw ParseError("pow expects 2 arguments", start);
        return Expr::pow(args[0], args[1]);
      }
      Expr::Fn fn;
      if (!lookup_fn(name, fn)) throw ParseError("unknown function '" + std::string(name) + "'", start);
      std::size_t want = (fn == Expr::Fn::Min || fn == Expr::Fn::Max) ? 2 : 1;
      if (args.size() != want)
        throw ParseError(std::string(name) + " expects " + std::to_string(want) + " argument(s)", start);
      return Expr::call(fn, std::move(args));
    }
    int index = variable_index(name, start);
    return Expr::variable(index);
  }

  int variable_index(std::string_view name, std::size_t at) const {
    int index = 0;
    if (name.size() >= 2 && name[0] == 'x' &&
        std::all_of(name.begin() + 1, name.end(),
                    [](char ch) { return std::isdigit(static_cast<unsigned char>(ch)); })) {
      index = 0;
      for (char ch : name.substr(1)) index = index * 10 + (ch - '0');
      if (index < 1) throw ParseError("bad variable '" + std::string(name) + "'", at);
    } else if (dim_ <= 3 && name == "x") {
      index = 1;
    } else if (dim_ <= 3 && name == "y") {
      index = 2;
    } else if (dim_ <= 3 && name == "z") {
      index = 3;
    } else {
      throw ParseError("unknown identifier '" + std::string(name) + "'", at);
    }
    if (index > dim_)
      throw ParseError("variable index " + std::to_string(index) + " exceeds dimension " +
                           std::to_string(dim_),
                       at);
    return index;
  }

  static bool lookup_fn(std::string_view name, Expr::Fn& out) {
    if (name == "exp") out = Expr::Fn::Exp;
    else if (name == "log") out = Expr::Fn::Log;
    else if (name == "sin") out = Expr::Fn::Sin;
    else if (name == "cos") out = Expr::Fn::Cos;
    else if (name == "sqrt") out = Expr::Fn::Sqrt;
    else if (name == "abs") out = Expr::Fn::Abs;
    else if (name == "sign") out = Expr::Fn::Sign;
    else if (name == "min") out = Expr::Fn::Min;
    else if (name == "max") out = Expr::Fn::Max;
    else return false;
    return true;
  }

  void skip_ws() {
    while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
  }

  bool accept(char c) {
    if (pos_ < src_.size() && src_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  void expect(char c) {
    skip_ws();
    if (!accept(c)) throw ParseError(std::string("expected '") + c + "'", pos_);
  }

  std::string_view src_;
  int dim_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Parse an expression in dimension `dim`; variables are x1..x<dim>
/// with aliases x, y, z available when dim <= 3.
inline Expr parse_expression(std::string_view text, int dim) {
  return detail::Parser(text, dim).run();
}

}  // namespace degen
