#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "degen/errors.hpp"
#include "degen/vector_field.hpp"

namespace degen {

/// Columns of the bracket-extended field matrix X^(k) evaluated at a point.
struct FieldMatrix {
  std::vector<double> base_point;
  std::vector<std::string> column_words;
  Eigen::MatrixXd matrix;  // d x m
  int bracket_order = 0;
};

/// lambda = sigma_min(M)^2, the smallest eigenvalue of M M^t. Computed from
/// the singular values of M rather than the Gram matrix: squaring after the
/// decomposition doubles the usable dynamic range before underflow.
inline double lambda_from_matrix(const Eigen::MatrixXd& m) {
  if (m.cols() < m.rows()) return 0.0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  double sigma = svd.singularValues()(m.rows() - 1);
  return sigma * sigma;
}

/// Bracket columns up to order k, compiled once for repeated evaluation.
class BracketBasis {
 public:
  BracketBasis(std::span<const VectorField> base, int k) : max_order_(k) {
    columns_ = enumerate_brackets(base, k);
    dim_ = columns_.front().dim();
    prefix_.assign(static_cast<std::size_t>(k) + 1, 0);
    compiled_.reserve(columns_.size());
    for (const VectorField& c : columns_) {
      compiled_.emplace_back(c);
      stack_need_ = std::max(stack_need_, compiled_.back().stack_need);
      for (int kk = c.order; kk <= k; ++kk) ++prefix_[static_cast<std::size_t>(kk)];
    }
  }

  int dim() const { return dim_; }
  int max_order() const { return max_order_; }
  int stack_need() const { return stack_need_; }
  const std::vector<VectorField>& columns() const { return columns_; }

  /// Number of columns of order <= k.
  int columns_up_to(int k) const { return prefix_[static_cast<std::size_t>(k)]; }

  /// Evaluates all columns at x into a d x m matrix. Returns false if any
  /// entry came out non-finite (the matrix still holds the raw values).
  bool eval_matrix(std::span<const double> x, Eigen::MatrixXd& out,
                   std::vector<double>& stack) const {
    out.resize(dim_, static_cast<Eigen::Index>(columns_.size()));
    stack.resize(static_cast<std::size_t>(std::max(stack_need_, 1)));
    bool finite = true;
    for (std::size_t c = 0; c < compiled_.size(); ++c) {
      for (int i = 0; i < dim_; ++i) {
        double v = compiled_[c].comps[static_cast<std::size_t>(i)].eval(x.data(), stack.data());
        out(i, static_cast<Eigen::Index>(c)) = v;
        finite = finite && std::isfinite(v);
      }
    }
    return finite;
  }

 private:
  std::vector<VectorField> columns_;
  std::vector<CompiledField> compiled_;
  std::vector<int> prefix_;
  int dim_ = 0;
  int max_order_ = 0;
  int stack_need_ = 0;
};

/// lambda^(k)(x) with the evaluated matrix. Throws on non-finite entries.
inline std::pair<double, FieldMatrix> lambda_k(std::span<const VectorField> base, int k,
                                               std::span<const double> x) {
  BracketBasis basis(base, k);
  Eigen::MatrixXd m;
  std::vector<double> stack;
  if (!basis.eval_matrix(x, m, stack))
    throw Error("lambda_k: non-finite field evaluation at sample point");
  FieldMatrix fm;
  fm.base_point.assign(x.begin(), x.end());
  fm.bracket_order = k;
  for (const VectorField& c : basis.columns()) fm.column_words.push_back(c.word);
  fm.matrix = m;
  return {lambda_from_matrix(m), std::move(fm)};
}

/// The ladder lambda^(0..k_max)(x) from one column evaluation, using the
/// order-sorted prefix structure. Non-finite columns are zeroed (the
/// conservative direction for degeneracy detection); *nonfinite reports it.
inline std::vector<double> lambda_ladder(const BracketBasis& basis, std::span<const double> x,
                                         Eigen::MatrixXd& scratch, std::vector<double>& stack,
                                         bool* nonfinite = nullptr) {
  bool finite = basis.eval_matrix(x, scratch, stack);
  if (!finite) {
    for (Eigen::Index c = 0; c < scratch.cols(); ++c)
      if (!scratch.col(c).array().isFinite().all()) scratch.col(c).setZero();
  }
  if (nonfinite) *nonfinite = !finite;
  std::vector<double> ladder;
  ladder.reserve(static_cast<std::size_t>(basis.max_order()) + 1);
  for (int k = 0; k <= basis.max_order(); ++k)
    ladder.push_back(lambda_from_matrix(scratch.leftCols(basis.columns_up_to(k))));
  return ladder;
}

/// Hoermander scan over a grid: a point lands in K iff lambda^(k_max) < tol.
struct DegeneracyReport {
  struct Row {
    std::vector<double> point;
    std::vector<double> lambda;  // lambda^(0..k_max)
    bool hormander_pass = true;
    bool nonfinite_columns = false;
  };
  std::vector<Row> rows;
  std::vector<std::size_t> failing;  // indices into rows: the sampled K
  double tol = 1e-12;
  int k_max = 3;
};

inline DegeneracyReport classify_K(std::span<const VectorField> base,
                                   std::span<const std::vector<double>> grid, int k_max,
                                   double tol = 1e-12) {
  BracketBasis basis(base, k_max);
  DegeneracyReport rep;
  rep.tol = tol;
  rep.k_max = k_max;
  Eigen::MatrixXd scratch;
  std::vector<double> stack;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    DegeneracyReport::Row row;
    row.point = grid[g];
    row.lambda = lambda_ladder(basis, grid[g], scratch, stack, &row.nonfinite_columns);
    row.hormander_pass = row.lambda.back() >= tol;
    if (!row.hormander_pass) rep.failing.push_back(rep.rows.size());
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

/// Level-set hypersurface S = {psi = 0} with symbolic gradient.
class Hypersurface {
 public:
  Hypersurface(Expr psi, int dim) : psi_(std::move(psi)), dim_(dim), cpsi_(psi_) {
    if (psi_.max_variable() > dim) throw Error("hypersurface: variable index exceeds dimension");
    grad_.reserve(static_cast<std::size_t>(dim));
    cgrad_.reserve(static_cast<std::size_t>(dim));
    for (int j = 1; j <= dim; ++j) {
      grad_.push_back(psi_.diff(j));
      cgrad_.emplace_back(grad_.back());
      stack_need_ = std::max({stack_need_, cgrad_.back().stack_need(), cpsi_.stack_need()});
    }
  }

  int dim() const { return dim_; }
  const Expr& psi() const { return psi_; }
  const std::vector<Expr>& grad() const { return grad_; }

  double value(std::span<const double> x) const { return cpsi_(x); }

  Eigen::VectorXd gradient(std::span<const double> x) const {
    Eigen::VectorXd g(dim_);
    for (int j = 0; j < dim_; ++j) g(j) = cgrad_[static_cast<std::size_t>(j)](x);
    return g;
  }

  /// Unit normal grad(psi)/|grad(psi)|; error when the gradient degenerates.
  Eigen::VectorXd unit_normal(std::span<const double> x) const {
    Eigen::VectorXd g = gradient(x);
    double n = g.norm();
    if (!(n >= 1e-8)) throw GeometryError("hypersurface normal degenerate (|grad psi| < 1e-8)");
    return g / n;
  }

  /// Newton projection along grad(psi) onto {psi = 0}.
  std::vector<double> project(std::span<const double> x, int iters = 8, double tol = 1e-12) const {
    std::vector<double> y(x.begin(), x.end());
    for (int it = 0; it < iters; ++it) {
      double v = value(y);
      if (std::fabs(v) <= tol) break;
      Eigen::VectorXd g = gradient(y);
      double gg = g.squaredNorm();
      if (!(gg > 1e-16)) throw GeometryError("projection stalled: gradient vanished");
      for (int j = 0; j < dim_; ++j) y[static_cast<std::size_t>(j)] -= v * g(j) / gg;
    }
    return y;
  }

 private:
  Expr psi_;
  std::vector<Expr> grad_;
  int dim_;
  CompiledExpr cpsi_;
  std::vector<CompiledExpr> cgrad_;
  int stack_need_ = 0;
};

enum class FitStatus { TrivialPass, Pass, Fail, Inconclusive };

inline const char* to_string(FitStatus s) {
  switch (s) {
    case FitStatus::TrivialPass: return "trivial_pass";
    case FitStatus::Pass: return "pass";
    case FitStatus::Fail: return "fail";
    case FitStatus::Inconclusive: return "inconclusive";
  }
  return "?";
}

/// Outcome of the subcriticality regression. `p_hat` estimates the exponent
/// in lambda ~ exp(-rho^p); subcritical needs p in (-1, 0) with margin.
struct SubcriticalFit {
  enum class SampleUse : std::uint8_t { Used, Nondegenerate, Underflow, Curvature, Outside };
  struct Sample {
    double rho = 0.0;
    double lambda = 0.0;
    SampleUse use = SampleUse::Used;
  };
  std::vector<Sample> samples;
  double p_hat = std::numeric_limits<double>::quiet_NaN();
  double p_stderr = std::numeric_limits<double>::quiet_NaN();
  FitStatus status = FitStatus::Inconclusive;
  bool pass = false;
  int k = 0;
  std::size_t used = 0;
  std::size_t underflowed = 0;
  double margin = 0.05;
  double floor = 0.5;
};

inline constexpr double kLambdaUnderflow = 1e-300;

/// Regression core shared by the symbolic and chart (numeric) paths.
/// Samples with lambda >= floor are nondegenerate; below 1e-300 they are
/// dropped as underflow. Fewer than 4 usable degenerate samples (with at
/// least one degenerate present) is inconclusive.
inline SubcriticalFit fit_exponent(std::vector<SubcriticalFit::Sample> samples, int k,
                                   double margin = 0.05, double floor_ = 0.5) {
  SubcriticalFit fit;
  fit.k = k;
  fit.margin = margin;
  fit.floor = floor_;
  bool any_degenerate = false;
  std::vector<std::pair<double, double>> pts;  // (log rho, log(-log lambda))
  for (auto& s : samples) {
    if (s.use != SubcriticalFit::SampleUse::Used) continue;  // pre-tagged drops stay
    if (s.lambda >= floor_) {
      s.use = SubcriticalFit::SampleUse::Nondegenerate;
      continue;
    }
    any_degenerate = true;
    if (!(s.lambda >= kLambdaUnderflow)) {
      s.use = SubcriticalFit::SampleUse::Underflow;
      ++fit.underflowed;
      continue;
    }
    pts.emplace_back(std::log(s.rho), std::log(-std::log(s.lambda)));
  }
  fit.samples = std::move(samples);
  fit.used = pts.size();
  if (!any_degenerate) {
    fit.status = FitStatus::TrivialPass;
    fit.pass = true;
    return fit;
  }
  if (pts.size() < 4) {
    fit.status = FitStatus::Inconclusive;
    return fit;
  }
  double n = static_cast<double>(pts.size());
  double sw = 0.0, sz = 0.0;
  for (auto [w, z] : pts) {
    sw += w;
    sz += z;
  }
  double wbar = sw / n, zbar = sz / n;
  double sww = 0.0, swz = 0.0;
  for (auto [w, z] : pts) {
    sww += (w - wbar) * (w - wbar);
    swz += (w - wbar) * (z - zbar);
  }
  if (!(sww > 0.0)) {
    fit.status = FitStatus::Inconclusive;
    return fit;
  }
  fit.p_hat = swz / sww;
  double ss = 0.0;
  for (auto [w, z] : pts) {
    double r = z - zbar - fit.p_hat * (w - wbar);
    ss += r * r;
  }
  fit.p_stderr = std::sqrt(ss / (n - 2.0) / sww);
  bool ok = (fit.p_hat + margin < 0.0) && (fit.p_hat - margin > -1.0);
  fit.status = ok ? FitStatus::Pass : FitStatus::Fail;
  fit.pass = ok;
  return fit;
}

struct SubcriticalOptions {
  double rho_min = 1e-4;
  double rho_max = 1e-1;
  int rho_count = 16;  // per base point per side
  double margin = 0.05;
  double floor = 0.5;
  double curvature_rel_tol = 0.05;  // |psi(y)|/|grad psi(y)| must match rho this well
  bool both_sides = true;
};

/// Samples lambda^(k) at distances rho from S along its unit normal and fits
/// the subcriticality exponent. `in_closure` (optional) rejects samples that
/// leave the problem's closure.
inline SubcriticalFit subcritical_fit(std::span<const VectorField> base, const Hypersurface& surf,
                                      int k, std::span<const std::vector<double>> base_points,
                                      const SubcriticalOptions& opt = {},
                                      const std::function<bool(std::span<const double>)>& in_closure = {}) {
  if (opt.rho_min < 1e-4) throw Error("subcritical_fit: rho_min below 1e-4");
  if (opt.rho_max <= opt.rho_min) throw Error("subcritical_fit: empty rho range");
  if (opt.rho_count < 2) throw Error("subcritical_fit: need at least 2 distances");
  if (base_points.empty()) throw Error("subcritical_fit: no base points");
  BracketBasis basis(base, k);
  Eigen::MatrixXd scratch;
  std::vector<double> stack;
  std::vector<SubcriticalFit::Sample> samples;
  const double lstep = (std::log(opt.rho_max) - std::log(opt.rho_min)) / (opt.rho_count - 1);
  for (const auto& bp : base_points) {
    Eigen::VectorXd nu = surf.unit_normal(bp);
    for (int side = 0; side < (opt.both_sides ? 2 : 1); ++side) {
      double sgn = side == 0 ? 1.0 : -1.0;
      for (int j = 0; j < opt.rho_count; ++j) {
        double rho = std::exp(std::log(opt.rho_min) + lstep * j);
        std::vector<double> y(bp.begin(), bp.end());
        for (int i = 0; i < surf.dim(); ++i) y[static_cast<std::size_t>(i)] += sgn * rho * nu(i);
        SubcriticalFit::Sample s;
        s.rho = rho;
        if (in_closure && !in_closure(y)) {
          s.use = SubcriticalFit::SampleUse::Outside;
          samples.push_back(s);
          continue;
        }
        // Curvature guard: the projected distance must reproduce rho.
        double pv = surf.value(y);
        double gn = surf.gradient(y).norm();
        double rho_proj = gn > 0.0 ? std::fabs(pv) / gn : 0.0;
        if (std::fabs(rho_proj - rho) > opt.curvature_rel_tol * rho) {
          s.use = SubcriticalFit::SampleUse::Curvature;
          samples.push_back(s);
          continue;
        }
        bool nf = false;
        auto ladder = lambda_ladder(basis, y, scratch, stack, &nf);
        s.lambda = ladder.back();
        samples.push_back(s);
      }
    }
  }
  return fit_exponent(std::move(samples), k, opt.margin, opt.floor);
}

/// Transversality of the diffusion fields X_1..X_n to S at the given points.
struct NonCharacteristicResult {
  std::vector<double> point;
  double max_inner = 0.0;
  int best_field = 0;  // 1-based among the diffusion fields
  bool pass = false;
};

inline std::vector<NonCharacteristicResult> noncharacteristic_check(
    std::span<const VectorField> diffusion_fields, const Hypersurface& s,
    std::span<const std::vector<double>> points, double theta = 1e-8) {
  std::vector<NonCharacteristicResult> out;
  out.reserve(points.size());
  std::vector<double> val;
  for (const auto& p : points) {
    if (std::fabs(s.value(p)) > 1e-10)
      throw Error("noncharacteristic_check: point off the surface (|psi| > 1e-10)");
    Eigen::VectorXd nu = s.unit_normal(p);
    NonCharacteristicResult r;
    r.point = p;
    val.resize(static_cast<std::size_t>(s.dim()));
    for (std::size_t f = 0; f < diffusion_fields.size(); ++f) {
      diffusion_fields[f].eval(p, val);
      double inner = 0.0;
      for (int i = 0; i < s.dim(); ++i) inner += val[static_cast<std::size_t>(i)] * nu(i);
      if (std::fabs(inner) > std::fabs(r.max_inner)) {
        r.max_inner = inner;
        r.best_field = static_cast<int>(f) + 1;
      }
    }
    r.pass = std::fabs(r.max_inner) >= theta;
    out.push_back(std::move(r));
  }
  return out;
}

/// Hypotheses of the probabilistic attainability theorem: (a) c <= 0 on the
/// grid, (b) some coordinate k with sum_i <X_i, e_k>^2 bounded away from 0.
struct Thm2Report {
  bool c_nonpositive = true;
  double c_max = 0.0;
  std::vector<double> c_worst_point;
  std::vector<double> a_by_coordinate;  // min over grid per coordinate
  int best_coordinate = 1;              // 1-based
  double a_best = 0.0;
  bool coordinate_pass = false;
};

inline Thm2Report thm2_checks(std::span<const VectorField> fields, const Expr& c,
                              std::span<const std::vector<double>> grid) {
  if (fields.size() < 2) throw Error("thm2_checks: need X0 and at least one diffusion field");
  if (grid.empty()) throw Error("thm2_checks: empty grid");
  const int d = fields.front().dim();
  CompiledExpr cc(c);
  std::vector<CompiledField> cf;
  for (std::size_t f = 1; f < fields.size(); ++f) cf.emplace_back(fields[f]);
  int stack_need = cc.stack_need();
  for (const auto& f : cf) stack_need = std::max(stack_need, f.stack_need);
  std::vector<double> stack(static_cast<std::size_t>(std::max(stack_need, 1)));
  std::vector<double> val(static_cast<std::size_t>(d));

  Thm2Report rep;
  rep.a_by_coordinate.assign(static_cast<std::size_t>(d),
                             std::numeric_limits<double>::infinity());
  rep.c_max = -std::numeric_limits<double>::infinity();
  for (const auto& p : grid) {
    double cv = cc.eval(p.data(), stack.data());
    if (cv > rep.c_max) {
      rep.c_max = cv;
      rep.c_worst_point = p;
    }
    std::vector<double> coord_sum(static_cast<std::size_t>(d), 0.0);
    for (const auto& f : cf) {
      f.eval(p.data(), val.data(), stack.data());
      for (int i = 0; i < d; ++i)
        coord_sum[static_cast<std::size_t>(i)] +=
            val[static_cast<std::size_t>(i)] * val[static_cast<std::size_t>(i)];
    }
    for (int i = 0; i < d; ++i)
      rep.a_by_coordinate[static_cast<std::size_t>(i)] =
          std::min(rep.a_by_coordinate[static_cast<std::size_t>(i)],
                   coord_sum[static_cast<std::size_t>(i)]);
  }
  rep.c_nonpositive = rep.c_max <= 0.0;
  for (int i = 0; i < d; ++i) {
    if (rep.a_by_coordinate[static_cast<std::size_t>(i)] >
        rep.a_by_coordinate[static_cast<std::size_t>(rep.best_coordinate - 1)])
      rep.best_coordinate = i + 1;
  }
  rep.a_best = rep.a_by_coordinate[static_cast<std::size_t>(rep.best_coordinate - 1)];
  rep.coordinate_pass = rep.a_best > 1e-10;
  return rep;
}

/// Pointwise vector fields for chart verification: fields known only through
/// evaluation, brackets by central differences.
using NumericField = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

inline NumericField fd_bracket(NumericField a, NumericField b, double h = 1e-5) {
  return [a = std::move(a), b = std::move(b), h](const Eigen::VectorXd& x) {
    const auto d = x.size();
    Eigen::VectorXd ax = a(x), bx = b(x);
    Eigen::VectorXd out = Eigen::VectorXd::Zero(d);
    for (Eigen::Index j = 0; j < d; ++j) {
      Eigen::VectorXd xp = x, xm = x;
      xp(j) += h;
      xm(j) -= h;
      Eigen::VectorXd dbj = (b(xp) - b(xm)) / (2.0 * h);  // dB/dx_j
      Eigen::VectorXd daj = (a(xp) - a(xm)) / (2.0 * h);
      out += ax(j) * dbj - bx(j) * daj;
    }
    return out;
  };
}

/// Left-nested numeric bracket columns up to order k (k <= 2: evaluation cost
/// grows geometrically with nesting).
inline std::vector<NumericField> enumerate_numeric_brackets(std::vector<NumericField> base,
                                                            int k, double h = 1e-5) {
  if (k < 0 || k > 2) throw Error("enumerate_numeric_brackets: k must be in [0, 2]");
  std::vector<NumericField> out = base;
  std::size_t level_begin = 0;
  std::size_t level_end = out.size();
  for (int depth = 1; depth <= k; ++depth) {
    for (const auto& b : base)
      for (std::size_t w = level_begin; w < level_end; ++w)
        out.push_back(fd_bracket(b, out[w], h));
    level_begin = level_end;
    level_end = out.size();
  }
  return out;
}

inline double lambda_min_numeric(std::span<const NumericField> columns, const Eigen::VectorXd& x) {
  if (columns.empty()) throw Error("lambda_min_numeric: no columns");
  Eigen::MatrixXd m(x.size(), static_cast<Eigen::Index>(columns.size()));
  for (std::size_t c = 0; c < columns.size(); ++c) m.col(static_cast<Eigen::Index>(c)) = columns[c](x);
  if (!m.array().isFinite().all()) m = m.array().isFinite().select(m, 0.0);
  return lambda_from_matrix(m);
}

}  // namespace degen
