#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "degen/expr.hpp"

namespace degen {

/// Flat postfix program compiled from an Expr. Evaluates on a caller-supplied
/// stack with no allocation or dispatch through the tree, bit-identical to
/// Expr::eval (same operations in the same order).
class CompiledExpr {
 public:
  CompiledExpr() { *this = CompiledExpr(Expr::constant(0.0)); }

  explicit CompiledExpr(const Expr& e) {
    int depth = 0;
    emit(e, depth);
  }

  /// `stack` must provide at least stack_need() doubles.
  double eval(const double* point, double* stack) const {
    double* sp = stack;
    for (const Op& op : ops_) {
      switch (op.code) {
        case Code::Const: *sp++ = op.value; break;
        case Code::Var: *sp++ = point[op.index]; break;
        case Code::Neg: sp[-1] = -sp[-1]; break;
        case Code::Add: --sp; sp[-1] = sp[-1] + sp[0]; break;
        case Code::Sub: --sp; sp[-1] = sp[-1] - sp[0]; break;
        case Code::Mul: --sp; sp[-1] = sp[-1] * sp[0]; break;
        case Code::Div: --sp; sp[-1] = sp[-1] / sp[0]; break;
        case Code::Pow: --sp; sp[-1] = std::pow(sp[-1], sp[0]); break;
        case Code::Exp: sp[-1] = std::exp(sp[-1]); break;
        case Code::Log: sp[-1] = std::log(sp[-1]); break;
        case Code::Sin: sp[-1] = std::sin(sp[-1]); break;
        case Code::Cos: sp[-1] = std::cos(sp[-1]); break;
        case Code::Sqrt: sp[-1] = std::sqrt(sp[-1]); break;
        case Code::Abs: sp[-1] = std::fabs(sp[-1]); break;
        case Code::Sign:
          sp[-1] = static_cast<double>(sp[-1] > 0.0) - static_cast<double>(sp[-1] < 0.0);
          break;
        case Code::Min: --sp; sp[-1] = std::fmin(sp[-1], sp[0]); break;
        case Code::Max: --sp; sp[-1] = std::fmax(sp[-1], sp[0]); break;
      }
    }
    return sp[-1];
  }

  double operator()(std::span<const double> point) const {
    double buf[kInlineStack];
    std::vector<double> heap;
    double* stack = buf;
    if (stack_need_ > kInlineStack) {
      heap.resize(static_cast<std::size_t>(stack_need_));
      stack = heap.data();
    }
    return eval(point.data(), stack);
  }

  int stack_need() const { return stack_need_; }
  std::size_t size() const { return ops_.size(); }

  /// Set when the whole program is a single constant push.
  std::optional<double> constant_value() const {
    if (ops_.size() == 1 && ops_[0].code == Code::Const) return ops_[0].value;
    return std::nullopt;
  }

 private:
  enum class Code : std::uint8_t {
    Const, Var, Neg, Add, Sub, Mul, Div, Pow,
    Exp, Log, Sin, Cos, Sqrt, Abs, Sign, Min, Max
  };

  struct Op {
    Code code;
    std::int32_t index = 0;
    double value = 0.0;
  };

  static constexpr int kInlineStack = 64;

  void push(Code c, int depth, std::int32_t index = 0, double value = 0.0) {
    ops_.push_back(Op{c, index, value});
    stack_need_ = std::max(stack_need_, depth);
  }

  void emit(const Expr& e, int& depth) {
    switch (e.kind()) {
      case Expr::Kind::Constant:
        push(Code::Const, ++depth, 0, e.constant_value());
        break;
      case Expr::Kind::Variable:
        push(Code::Var, ++depth, e.variable_index() - 1);
        break;
      case Expr::Kind::Unary:
        emit(e.args()[0], depth);
        push(Code::Neg, depth);
        break;
      case Expr::Kind::Binary: {
        emit(e.args()[0], depth);
        emit(e.args()[1], depth);
        Code c = Code::Add;
        switch (e.binary_op()) {
          case Expr::BinaryOp::Add: c = Code::Add; break;
          case Expr::BinaryOp::Sub: c = Code::Sub; break;
          case Expr::BinaryOp::Mul: c = Code::Mul; break;
          case Expr::BinaryOp::Div: c = Code::Div; break;
          case Expr::BinaryOp::Pow: c = Code::Pow; break;
        }
        push(c, --depth);
        break;
      }
      case Expr::Kind::Call: {
        for (const Expr& a : e.args()) emit(a, depth);
        Code c = Code::Exp;
        switch (e.fn()) {
          case Expr::Fn::Exp: c = Code::Exp; break;
          case Expr::Fn::Log: c = Code::Log; break;
          case Expr::Fn::Sin: c = Code::Sin; break;
          case Expr::Fn::Cos: c = Code::Cos; break;
          case Expr::Fn::Sqrt: c = Code::Sqrt; break;
          case Expr::Fn::Abs: c = Code::Abs; break;
          case Expr::Fn::Sign: c = Code::Sign; break;
          case Expr::Fn::Min: c = Code::Min; break;
          case Expr::Fn::Max: c = Code::Max; break;
        }
        if (e.args().size() == 2) --depth;
        push(c, depth);
        break;
      }
    }
  }

  std::vector<Op> ops_;
  int stack_need_ = 0;
};

}  // namespace degen
