#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "degen/expr.hpp"
#include "degen/tape.hpp"

namespace degen {

/// Symbolic vector field: d expression components plus a bracket pedigree.
/// `order` counts nested bracket applications (0 for the given fields) and
/// `word` is the human-readable bracket word, e.g. "[X1,[X0,X2]]".
struct VectorField {
  std::vector<Expr> components;
  int order = 0;
  std::string word;

  VectorField() = default;
  VectorField(std::vector<Expr> comps, int ord = 0, std::string w = {})
      : components(std::move(comps)), order(ord), word(std::move(w)) {}

  int dim() const { return static_cast<int>(components.size()); }

  bool is_structurally_zero() const {
    for (const Expr& c : components)
      if (!(c.is_constant() && c.constant_value() == 0.0)) return false;
    return true;
  }

  void eval(std::span<const double> x, std::span<double> out) const {
    for (std::size_t i = 0; i < components.size(); ++i) out[i] = components[i].eval(x);
  }
};

/// [X, Y]_i = sum_j X_j dY_i/dx_j - Y_j dX_i/dx_j.
inline VectorField lie_bracket(const VectorField& x, const VectorField& y) {
  if (x.dim() != y.dim()) throw Error("lie_bracket: dimension mismatch");
  const int d = x.dim();
  std::vector<Expr> comps;
  comps.reserve(static_cast<std::size_t>(d));
  for (int i = 0; i < d; ++i) {
    Expr acc = Expr::constant(0.0);
    for (int j = 0; j < d; ++j) {
      acc = acc + x.components[static_cast<std::size_t>(j)] *
                      y.components[static_cast<std::size_t>(i)].diff(j + 1);
      acc = acc - y.components[static_cast<std::size_t>(j)] *
                      x.components[static_cast<std::size_t>(i)].diff(j + 1);
    }
    comps.push_back(acc);
  }
  std::string word = "[" + x.word + "," + y.word + "]";
  return VectorField(std::move(comps), x.order + y.order + 1, std::move(word));
}

/// All left-nested bracket words [X_i1,[X_i2,[...,X_ij]]] over the given
/// fields with at most k bracket applications, ordered by bracket order.
/// Structurally zero columns are kept so column indexing stays word-stable.
inline std::vector<VectorField> enumerate_brackets(std::span<const VectorField> base, int k) {
  if (k < 0) throw Error("enumerate_brackets: k must be >= 0");
  if (k > 6) throw Error("enumerate_brackets: k > 6 rejected (column count explodes)");
  if (base.empty()) throw Error("enumerate_brackets: no fields");
  std::vector<VectorField> out(base.begin(), base.end());
  std::size_t level_begin = 0;
  std::size_t level_end = out.size();
  for (int depth = 1; depth <= k; ++depth) {
    for (std::size_t b = 0; b < base.size(); ++b) {
      for (std::size_t w = level_begin; w < level_end; ++w) {
        out.push_back(lie_bracket(base[b], out[w]));
      }
    }
    level_begin = level_end;
    level_end = out.size();
  }
  return out;
}

/// Tape-compiled field for grid-heavy evaluation.
struct CompiledField {
  std::vector<CompiledExpr> comps;
  int stack_need = 0;

  CompiledField() = default;
  explicit CompiledField(const VectorField& f) {
    comps.reserve(f.components.size());
    for (const Expr& c : f.components) {
      comps.emplace_back(c);
      stack_need = std::max(stack_need, comps.back().stack_need());
    }
  }

  void eval(const double* x, double* out, double* stack) const {
    for (std::size_t i = 0; i < comps.size(); ++i) out[i] = comps[i].eval(x, stack);
  }
};

}  // namespace degen
