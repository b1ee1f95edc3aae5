#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "degen/errors.hpp"
#include "degen/expr.hpp"
#include "degen/problem.hpp"
#include "degen/tape.hpp"
#include "degen/vector_field.hpp"
#include "degen/vf_algebra.hpp"

namespace degen {

struct ChartConfig {
  double radius_init = 0.5;
  double roundtrip_tol = 1e-8;
  double fd_h = 1e-6;        // central-difference step for DF and the Newton Jacobian
  double newton_tol = 1e-13;
  int newton_max_iters = 50;
  int flow_substeps = 256;
  int proj_iters = 5;
  double proj_tol = 1e-12;
  double theta_nc = 1e-8;
};

/// Transversal diffusion field at a boundary point: argmax |<X_i, nu>|.
/// Returns a 1-based index into X1..Xn.
inline int select_transversal(std::span<const VectorField> diffusion,
                              std::span<const double> x0, const Eigen::VectorXd& normal,
                              double theta_nc = 1e-8) {
  if (diffusion.empty()) throw Error("select_transversal: no diffusion fields");
  const int d = static_cast<int>(x0.size());
  std::vector<double> val(static_cast<std::size_t>(d));
  int best = 0;
  double best_dot = -1.0;
  for (std::size_t i = 0; i < diffusion.size(); ++i) {
    diffusion[i].eval(x0, val);
    double dot = 0.0;
    for (int j = 0; j < d; ++j) dot += val[static_cast<std::size_t>(j)] * normal[j];
    if (std::fabs(dot) > best_dot) {
      best_dot = std::fabs(dot);
      best = static_cast<int>(i) + 1;
    }
  }
  if (!(best_dot >= theta_nc))
    throw GeometryError("characteristic boundary point: no transversal diffusion field");
  return best;
}

/// Boundary-flattening chart at x0 on {phi = 0}. The inverse map is
/// F^{-1}(t, s) = flow of the transversal field for time t from sigma(s),
/// where sigma graphs the boundary over the tangent plane at x0; the forward
/// map inverts it by Newton iteration. F(x0) = 0, the boundary maps into
/// {z1 = 0}, and z1 > 0 on the D side.
class BoundaryChart {
 public:
  BoundaryChart(const Problem& prob, std::span<const double> x0, int transversal,
                ChartConfig cfg = {})
      : cfg_(cfg), dim_(prob.dim), tindex_(transversal) {
    if (transversal < 1 || transversal > prob.n) throw Error("chart: bad transversal index");
    phi_ = CompiledExpr(prob.phi);
    std::vector<Expr> grad;
    for (int j = 1; j <= dim_; ++j) grad.push_back(prob.phi.diff(j));
    gphi_ = CompiledField(VectorField(std::move(grad)));
    flow_ = CompiledField(prob.fields[static_cast<std::size_t>(transversal)]);
    stack_need_ = std::max({phi_.stack_need(), gphi_.stack_need, flow_.stack_need, 1});

    x0_.assign(x0.begin(), x0.end());
    std::vector<double> stack(static_cast<std::size_t>(stack_need_));
    std::vector<double> g(static_cast<std::size_t>(dim_));
    if (!project(x0_.data(), 20, 1e-13, stack.data(), g.data()) &&
        std::fabs(phi_.eval(x0_.data(), stack.data())) > 1e-10)
      throw GeometryError("chart: base point does not reach the boundary");

    gphi_.eval(x0_.data(), g.data(), stack.data());
    Eigen::VectorXd nu = Eigen::Map<Eigen::VectorXd>(g.data(), dim_);
    double nn = nu.norm();
    if (!(nn >= 1e-8)) throw GeometryError("chart: boundary gradient degenerate at base point");
    nu /= nn;
    nu_ = nu;

    // Tangent basis from the Householder reflection taking e1 to -s*nu.
    Eigen::VectorXd v = nu;
    double s = v[0] >= 0.0 ? 1.0 : -1.0;
    v[0] += s;
    double vv = v.squaredNorm();
    tangent_.resize(static_cast<std::size_t>(dim_ - 1));
    for (int k = 1; k < dim_; ++k) {
      Eigen::VectorXd e = Eigen::VectorXd::Zero(dim_);
      e[k] = 1.0;
      tangent_[static_cast<std::size_t>(k - 1)] = e - (2.0 * v[k] / vv) * v;
    }

    std::vector<double> w(static_cast<std::size_t>(dim_));
    flow_.eval(x0_.data(), w.data(), stack.data());
    double dot = 0.0;
    for (int j = 0; j < dim_; ++j) dot += w[static_cast<std::size_t>(j)] * nu_[j];
    if (!(std::fabs(dot) >= cfg_.theta_nc))
      throw GeometryError("chart: selected field is not transversal at the base point");
    sign_ = dot > 0.0 ? 1.0 : -1.0;

    fit_radius();
  }

  int dim() const { return dim_; }
  int transversal_index() const { return tindex_; }
  double flow_sign() const { return sign_; }
  double radius() const { return radius_; }
  const std::vector<double>& base_point() const { return x0_; }

  /// Boundary point over tangent coordinates s (size dim-1).
  std::vector<double> sigma(std::span<const double> s) const {
    std::vector<double> p = x0_;
    for (int k = 0; k < dim_ - 1; ++k)
      for (int j = 0; j < dim_; ++j) p[static_cast<std::size_t>(j)] += s[static_cast<std::size_t>(k)] * tangent_[static_cast<std::size_t>(k)][j];
    std::vector<double> stack(static_cast<std::size_t>(stack_need_));
    std::vector<double> g(static_cast<std::size_t>(dim_));
    project(p.data(), cfg_.proj_iters, cfg_.proj_tol, stack.data(), g.data());
    return p;
  }

  /// F^{-1}(z): flow for time z1 from sigma(z2..zd).
  std::vector<double> inverse(std::span<const double> z) const {
    std::vector<double> p = sigma(z.subspan(1));
    flow_time(p.data(), z[0]);
    return p;
  }

  std::vector<double> forward(std::span<const double> x) const {
    return forward_from(x, Eigen::VectorXd::Zero(dim_));
  }

  /// Newton inversion of F^{-1} from a caller-supplied starting guess.
  std::vector<double> forward_from(std::span<const double> x, Eigen::VectorXd z) const {
    const double h = cfg_.fd_h;
    Eigen::MatrixXd jac(dim_, dim_);
    Eigen::VectorXd zp(dim_), r(dim_);
    for (int it = 0; it < cfg_.newton_max_iters; ++it) {
      std::vector<double> fx = inverse(std::span<const double>(z.data(), static_cast<std::size_t>(dim_)));
      double rmax = 0.0;
      for (int j = 0; j < dim_; ++j) {
        r[j] = fx[static_cast<std::size_t>(j)] - x[static_cast<std::size_t>(j)];
        // std::max drops NaN operands, so a diverged flow must be caught explicitly.
        if (!std::isfinite(r[j])) rmax = std::numeric_limits<double>::infinity();
        rmax = std::max(rmax, std::fabs(r[j]));
      }
      if (!std::isfinite(rmax)) break;
      if (rmax <= cfg_.newton_tol) return std::vector<double>(z.data(), z.data() + dim_);
      for (int k = 0; k < dim_; ++k) {
        zp = z;
        zp[k] += h;
        auto fp = inverse(std::span<const double>(zp.data(), static_cast<std::size_t>(dim_)));
        zp[k] -= 2.0 * h;
        auto fm = inverse(std::span<const double>(zp.data(), static_cast<std::size_t>(dim_)));
        for (int j = 0; j < dim_; ++j)
          jac(j, k) = (fp[static_cast<std::size_t>(j)] - fm[static_cast<std::size_t>(j)]) / (2.0 * h);
      }
      z -= jac.partialPivLu().solve(r);
      if (!z.allFinite()) break;
    }
    throw GeometryError("chart: Newton inversion did not converge (point outside validity)");
  }

  /// DF(x) by central differences, columns warm-started from F(x).
  Eigen::MatrixXd forward_jacobian(std::span<const double> x) const {
    std::vector<double> z0 = forward(x);
    return forward_jacobian_at(x, Eigen::Map<const Eigen::VectorXd>(z0.data(), dim_));
  }

  /// F^*(X)(F(x)) = DF(x) X(x).
  Eigen::VectorXd pushforward(const VectorField& field, std::span<const double> x) const {
    Eigen::MatrixXd jac = forward_jacobian(x);
    std::vector<double> val(static_cast<std::size_t>(dim_));
    field.eval(x, val);
    return jac * Eigen::Map<const Eigen::VectorXd>(val.data(), dim_);
  }

  /// Pushforward matrix [F^*(X_1) ... F^*(X_n)] evaluated at z-coordinates;
  /// shares one Jacobian across all fields.
  Eigen::MatrixXd pushforward_at(const Eigen::VectorXd& z,
                                 std::span<const CompiledField> fields) const {
    std::vector<double> x = inverse(std::span<const double>(z.data(), static_cast<std::size_t>(dim_)));
    Eigen::MatrixXd jac = forward_jacobian_at(x, z);
    Eigen::MatrixXd out(dim_, static_cast<int>(fields.size()));
    std::vector<double> stack(static_cast<std::size_t>(std::max(stack_need_, max_stack(fields))));
    std::vector<double> val(static_cast<std::size_t>(dim_));
    for (std::size_t i = 0; i < fields.size(); ++i) {
      fields[i].eval(x.data(), val.data(), stack.data());
      out.col(static_cast<int>(i)) = jac * Eigen::Map<const Eigen::VectorXd>(val.data(), dim_);
    }
    return out;
  }

 private:
  static int max_stack(std::span<const CompiledField> fields) {
    int m = 1;
    for (const CompiledField& f : fields) m = std::max(m, f.stack_need);
    return m;
  }

  bool project(double* p, int iters, double tol, double* stack, double* g) const {
    for (int it = 0; it < iters; ++it) {
      double v = phi_.eval(p, stack);
      if (!std::isfinite(v)) return false;
      if (std::fabs(v) <= tol) return true;
      gphi_.eval(p, g, stack);
      double gg = 0.0;
      for (int j = 0; j < dim_; ++j) gg += g[j] * g[j];
      if (!(gg > 1e-16)) return false;
      for (int j = 0; j < dim_; ++j) p[j] -= v * g[j] / gg;
    }
    return std::fabs(phi_.eval(p, stack)) <= tol;
  }

  /// Classic fixed-step RK4 on p' = sign*X(p); always 256 substeps of t/256
  /// so the map is smooth in t.
  void flow_time(double* p, double t) const {
    if (t == 0.0) return;
    const int m = cfg_.flow_substeps;
    const double h = sign_ * t / m;
    std::vector<double> stack(static_cast<std::size_t>(stack_need_));
    std::vector<double> k1(static_cast<std::size_t>(dim_)), k2(k1), k3(k1), k4(k1), tmp(k1);
    for (int step = 0; step < m; ++step) {
      flow_.eval(p, k1.data(), stack.data());
      for (int j = 0; j < dim_; ++j) tmp[static_cast<std::size_t>(j)] = p[j] + 0.5 * h * k1[static_cast<std::size_t>(j)];
      flow_.eval(tmp.data(), k2.data(), stack.data());
      for (int j = 0; j < dim_; ++j) tmp[static_cast<std::size_t>(j)] = p[j] + 0.5 * h * k2[static_cast<std::size_t>(j)];
      flow_.eval(tmp.data(), k3.data(), stack.data());
      for (int j = 0; j < dim_; ++j) tmp[static_cast<std::size_t>(j)] = p[j] + h * k3[static_cast<std::size_t>(j)];
      flow_.eval(tmp.data(), k4.data(), stack.data());
      for (int j = 0; j < dim_; ++j)
        p[j] += h / 6.0 * (k1[static_cast<std::size_t>(j)] + 2.0 * k2[static_cast<std::size_t>(j)] +
                           2.0 * k3[static_cast<std::size_t>(j)] + k4[static_cast<std::size_t>(j)]);
    }
  }

  Eigen::MatrixXd forward_jacobian_at(std::span<const double> x, const Eigen::VectorXd& z) const {
    const double h = cfg_.fd_h;
    Eigen::MatrixXd jac(dim_, dim_);
    std::vector<double> xp(x.begin(), x.end());
    for (int k = 0; k < dim_; ++k) {
      xp[static_cast<std::size_t>(k)] = x[static_cast<std::size_t>(k)] + h;
      auto zp = forward_from(xp, z);
      xp[static_cast<std::size_t>(k)] = x[static_cast<std::size_t>(k)] - h;
      auto zm = forward_from(xp, z);
      xp[static_cast<std::size_t>(k)] = x[static_cast<std::size_t>(k)];
      for (int j = 0; j < dim_; ++j)
        jac(j, k) = (zp[static_cast<std::size_t>(j)] - zm[static_cast<std::size_t>(j)]) / (2.0 * h);
    }
    return jac;
  }

  bool roundtrip_ok(double r) const {
    std::vector<double> z(static_cast<std::size_t>(dim_), 0.0);
    const double levels[3] = {0.0, 0.5, 1.0};
    std::vector<int> idx(static_cast<std::size_t>(dim_), 0);
    for (;;) {
      z[0] = levels[idx[0]] * r;
      for (int k = 1; k < dim_; ++k) z[static_cast<std::size_t>(k)] = (levels[idx[static_cast<std::size_t>(k)]] - 0.5) * 2.0 * r;
      try {
        std::vector<double> x = inverse(z);
        std::vector<double> back = forward_from(
            x, Eigen::Map<const Eigen::VectorXd>(z.data(), dim_));
        for (int j = 0; j < dim_; ++j)
          if (std::fabs(back[static_cast<std::size_t>(j)] - z[static_cast<std::size_t>(j)]) > cfg_.roundtrip_tol)
            return false;
      } catch (const GeometryError&) {
        return false;
      }
      int k = 0;
      while (k < dim_ && ++idx[static_cast<std::size_t>(k)] == 3) {
        idx[static_cast<std::size_t>(k)] = 0;
        ++k;
      }
      if (k == dim_) break;
    }
    return true;
  }

  void fit_radius() {
    double r = cfg_.radius_init;
    if (roundtrip_ok(r)) {
      radius_ = r;
      return;
    }
    double lo = 0.0, hi = r;
    for (int it = 0; it < 12; ++it) {
      double m = 0.5 * (lo + hi);
      (roundtrip_ok(m) ? lo : hi) = m;
    }
    if (!(lo > 0.0)) throw GeometryError("chart: no valid neighborhood at this point");
    radius_ = lo;
  }

  ChartConfig cfg_;
  int dim_ = 0;
  int tindex_ = 0;
  double sign_ = 1.0;
  double radius_ = 0.0;
  std::vector<double> x0_;
  Eigen::VectorXd nu_;
  std::vector<Eigen::VectorXd> tangent_;
  CompiledExpr phi_;
  CompiledField gphi_, flow_;
  int stack_need_ = 1;
};

struct ChartVerifyReport {
  std::size_t samples_used = 0;
  std::size_t samples_failed = 0;
  double boundary_residual_max = 0.0;     // (i)  max |F1| over boundary samples
  double transversal_residual_max = 0.0;  // (ii) max ||F*(X_i) - e1||_inf
  double tangential_first_max = 0.0;      // (iii) max |(F*(X_j))_1|, j != i
  SubcriticalFit fit;                     // (iv) against S' = {z1 = 0}
};

/// Verifies the chart against the problem's diffusion fields at boundary
/// samples. Item (iii) is diagnostic only; item (iv) refits the degeneracy
/// exponent on the numerically pushed-forward fields, with brackets taken by
/// finite differences (k capped at 2 by the numeric bracket ladder).
inline ChartVerifyReport verify_chart(const BoundaryChart& chart, const Problem& prob,
                                      const std::vector<std::vector<double>>& samples, int k,
                                      SubcriticalOptions opts = {}) {
  ChartVerifyReport rep;
  const int d = prob.dim;
  std::vector<Eigen::VectorXd> s_parts;
  for (const auto& p : samples) {
    Eigen::MatrixXd jac;
    std::vector<double> z;
    try {
      z = chart.forward(p);
      jac = chart.forward_jacobian(p);
    } catch (const GeometryError&) {
      ++rep.samples_failed;
      continue;
    }
    ++rep.samples_used;
    rep.boundary_residual_max = std::max(rep.boundary_residual_max, std::fabs(z[0]));
    std::vector<double> val(static_cast<std::size_t>(d));
    for (int i = 1; i <= prob.n; ++i) {
      prob.fields[static_cast<std::size_t>(i)].eval(p, val);
      Eigen::VectorXd push = jac * Eigen::Map<const Eigen::VectorXd>(val.data(), d);
      if (i == chart.transversal_index()) {
        push[0] -= 1.0;
        rep.transversal_residual_max =
            std::max(rep.transversal_residual_max, push.cwiseAbs().maxCoeff());
      } else {
        rep.tangential_first_max = std::max(rep.tangential_first_max, std::fabs(push[0]));
      }
    }
    if (s_parts.size() < 6)
      s_parts.push_back(Eigen::Map<const Eigen::VectorXd>(z.data(), d).tail(d - 1));
  }

  std::vector<CompiledField> compiled;
  for (int i = 1; i <= prob.n; ++i)
    compiled.emplace_back(prob.fields[static_cast<std::size_t>(i)]);
  std::vector<NumericField> base;
  for (int i = 0; i < prob.n; ++i)
    base.push_back([&chart, &compiled, i](const Eigen::VectorXd& z) -> Eigen::VectorXd {
      std::span<const CompiledField> one(&compiled[static_cast<std::size_t>(i)], 1);
      return chart.pushforward_at(z, one).col(0);
    });
  int k_eff = std::min(k, 2);
  auto columns = enumerate_numeric_brackets(base, k_eff);

  double rho_max = std::min(opts.rho_max, chart.radius() / 2.0);
  double rho_min = std::max(opts.rho_min, 1e-6);
  std::vector<SubcriticalFit::Sample> fit_samples;
  if (rho_max > rho_min && !s_parts.empty()) {
    for (const Eigen::VectorXd& s : s_parts) {
      for (int j = 0; j < opts.rho_count; ++j) {
        double frac = opts.rho_count == 1
                          ? 0.0
                          : static_cast<double>(j) / static_cast<double>(opts.rho_count - 1);
        double rho = rho_min * std::pow(rho_max / rho_min, frac);
        Eigen::VectorXd z(d);
        z[0] = rho;
        z.tail(d - 1) = s;
        SubcriticalFit::Sample sm;
        sm.rho = rho;
        try {
          sm.lambda = lambda_min_numeric(columns, z);
        } catch (const Error&) {
          sm.use = SubcriticalFit::SampleUse::Outside;
        }
        fit_samples.push_back(sm);
      }
    }
  }
  rep.fit = fit_exponent(std::move(fit_samples), k_eff, opts.margin, opts.floor);
  return rep;
}

}  // namespace degen
