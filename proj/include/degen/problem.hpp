#pragma once

#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "degen/errors.hpp"
#include "degen/expr.hpp"
#include "degen/vector_field.hpp"

namespace degen {

/// A Dirichlet problem for L = sum_i X_i^2 + X_0 + c on D = {phi > 0}:
/// find u with Lu = f in D, u = g on the boundary.
///
/// File format (one `key = value` per line, `#` comments, expressions quoted):
///
///   dim = 2
///   meta.name = poisson_disk
///   fields.X0 = "0", "0"
///   fields.X1 = "1", "0"
///   fields.X2 = "0", "1"
///   coeff.c = "0"
///   data.f = "1"
///   data.g = "0"
///   domain.phi = "1 - x^2 - y^2"
///   domain.box = -1, 1, -1, 1        # optional: lo1, hi1, lo2, hi2, ...
///   surface.psi = "x"                # optional degeneracy surface
struct Problem {
  int dim = 0;
  int n = 0;                        // number of diffusion fields X1..Xn
  std::vector<VectorField> fields;  // X0..Xn
  Expr c, f, g, phi;
  std::optional<Expr> psi;
  std::string name;
  std::string notes;
  std::vector<double> box;  // empty or 2*dim entries lo1,hi1,...

  const VectorField& x0() const { return fields.front(); }
  std::span<const VectorField> diffusion_fields() const {
    return std::span<const VectorField>(fields).subspan(1);
  }

  void validate() const {
    if (dim < 1) throw ProblemFormatError("dim must be >= 1");
    if (n < 1) throw ProblemFormatError("need at least one diffusion field X1");
    if (fields.size() != static_cast<std::size_t>(n) + 1)
      throw ProblemFormatError("fields X0..Xn must be consecutive");
    for (const VectorField& X : fields)
      if (X.dim() != dim)
        throw ProblemFormatError("field " + X.word + " has " + std::to_string(X.dim()) +
                                 " components, expected " + std::to_string(dim));
    if (phi.max_variable() == 0) throw ProblemFormatError("domain.phi must not be constant");
    if (!box.empty()) {
      if (box.size() != 2 * static_cast<std::size_t>(dim))
        throw ProblemFormatError("domain.box needs 2*dim entries");
      for (int i = 0; i < dim; ++i)
        if (!(box[2 * static_cast<std::size_t>(i)] < box[2 * static_cast<std::size_t>(i) + 1]))
          throw ProblemFormatError("domain.box has an empty interval");
    }
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string_view::npos) return {};
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(a, b - a + 1));
}

/// Strips a trailing comment, honoring double quotes.
inline std::string strip_comment(std::string_view line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    else if (line[i] == '#' && !quoted) return std::string(line.substr(0, i));
  }
  return std::string(line);
}

/// Splits on top-level commas (outside quotes), trimming each piece.
inline std::vector<std::string> split_list(std::string_view value) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (char ch : value) {
    if (ch == '"') {
      quoted = !quoted;
      cur += ch;
    } else if (ch == ',' && !quoted) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(trim(cur));
  return out;
}

inline std::string unquote(const std::string& s, std::size_t line_no) {
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return s.substr(1, s.size() - 2);
  if (!s.empty() && (s.front() == '"' || s.back() == '"'))
    throw ProblemFormatError("unbalanced quotes", line_no);
  return s;
}

inline Expr parse_value_expr(const std::string& raw, int dim, std::size_t line_no) {
  try {
    return parse_expression(unquote(raw, line_no), dim);
  } catch (const ParseError& e) {
    throw ProblemFormatError(std::string("bad expression: ") + e.what(), line_no);
  }
}

}  // namespace detail

inline Problem load_problem_text(std::string_view text, std::string_view origin = "<string>") {
  struct Entry {
    std::string value;
    std::size_t line;
  };
  std::vector<std::pair<std::string, Entry>> entries;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t eol = text.find('\n', pos);
    std::string_view raw = text.substr(pos, eol == std::string_view::npos ? eol : eol - pos);
    pos = eol == std::string_view::npos ? text.size() + 1 : eol + 1;
    ++line_no;
    std::string line = detail::trim(detail::strip_comment(raw));
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw ProblemFormatError("expected key = value", line_no);
    std::string key = detail::trim(std::string_view(line).substr(0, eq));
    std::string value = detail::trim(std::string_view(line).substr(eq + 1));
    if (key.empty()) throw ProblemFormatError("empty key", line_no);
    entries.emplace_back(std::move(key), Entry{std::move(value), line_no});
  }

  auto find = [&](std::string_view key) -> const Entry* {
    for (const auto& [k, e] : entries)
      if (k == key) return &e;
    return nullptr;
  };

  const Entry* dim_e = find("dim");
  if (!dim_e) throw ProblemFormatError("missing required key 'dim'");
  Problem p;
  try {
    p.dim = std::stoi(dim_e->value);
  } catch (...) {
    throw ProblemFormatError("dim must be an integer", dim_e->line);
  }
  if (p.dim < 1) throw ProblemFormatError("dim must be >= 1", dim_e->line);

  // Fields X0..Xn, consecutive.
  for (int i = 0;; ++i) {
    const Entry* e = find("fields.X" + std::to_string(i));
    if (!e) {
      if (i == 0) throw ProblemFormatError("missing required key 'fields.X0'");
      p.n = i - 1;
      break;
    }
    auto parts = detail::split_list(e->value);
    if (parts.size() != static_cast<std::size_t>(p.dim))
      throw ProblemFormatError("fields.X" + std::to_string(i) + " has " +
                                   std::to_string(parts.size()) + " components, expected " +
                                   std::to_string(p.dim),
                               e->line);
    std::vector<Expr> comps;
    for (const auto& part : parts) comps.push_back(detail::parse_value_expr(part, p.dim, e->line));
    p.fields.emplace_back(std::move(comps), 0, "X" + std::to_string(i));
  }
  if (p.n < 1) throw ProblemFormatError("need at least fields.X0 and fields.X1");

  auto required_expr = [&](std::string_view key) {
    const Entry* e = find(key);
    if (!e) throw ProblemFormatError("missing required key '" + std::string(key) + "'");
    return detail::parse_value_expr(e->value, p.dim, e->line);
  };
  p.c = required_expr("coeff.c");
  p.f = required_expr("data.f");
  p.g = required_expr("data.g");
  p.phi = required_expr("domain.phi");
  if (const Entry* e = find("surface.psi")) p.psi = detail::parse_value_expr(e->value, p.dim, e->line);
  if (const Entry* e = find("meta.name")) p.name = detail::unquote(e->value, e->line);
  if (const Entry* e = find("meta.notes")) p.notes = detail::unquote(e->value, e->line);
  if (const Entry* e = find("domain.box")) {
    for (const auto& part : detail::split_list(e->value)) {
      try {
        p.box.push_back(std::stod(part));
      } catch (...) {
        throw ProblemFormatError("domain.box entries must be numbers", e->line);
      }
    }
  }
  if (p.name.empty()) p.name = std::string(origin);

  // Reject unknown keys: catches typos early.
  for (const auto& [k, e] : entries) {
    bool known = k == "dim" || k == "coeff.c" || k == "data.f" || k == "data.g" ||
                 k == "domain.phi" || k == "domain.box" || k == "surface.psi" ||
                 k == "meta.name" || k == "meta.notes" || k.rfind("fields.X", 0) == 0;
    if (k.rfind("fields.X", 0) == 0) {
      int idx = -1;
      try {
        idx = std::stoi(k.substr(8));
      } catch (...) {
      }
      if (idx < 0 || idx > p.n)
        throw ProblemFormatError("field key '" + k + "' out of range (fields must be consecutive)",
                                 e.line);
    }
    if (!known) throw ProblemFormatError("unknown key '" + k + "'", e.line);
  }

  p.validate();
  return p;
}

inline Problem load_problem(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ProblemFormatError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  std::string base = path;
  if (auto slash = base.find_last_of('/'); slash != std::string::npos) base = base.substr(slash + 1);
  if (auto dot = base.find_last_of('.'); dot != std::string::npos) base = base.substr(0, dot);
  try {
    return load_problem_text(ss.str(), base);
  } catch (const ProblemFormatError& e) {
    throw ProblemFormatError(path + ": " + e.what());
  }
}

}  // namespace degen
