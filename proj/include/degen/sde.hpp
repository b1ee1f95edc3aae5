#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <mutex>
#include <numbers>
#include <optional>
#include <span>
#include <thread>
#include <utility>
#include <vector>

#include "degen/errors.hpp"
#include "degen/expr.hpp"
#include "degen/problem.hpp"
#include "degen/rng.hpp"
#include "degen/sampling.hpp"
#include "degen/tape.hpp"
#include "degen/vector_field.hpp"

namespace degen {

struct PathConfig {
  double dt = 1e-4;
  double t_max = 0.0;  // <= 0: auto, 50 * diameter(domain box)^2
  std::uint64_t seed = 0;
  bool brownian_bridge = false;
  double boundary_tol = 1e-9;
  int workers = 0;  // 0: hardware concurrency
};

struct ExitRecord {
  bool exited = false;
  bool valid = true;
  double tau = 0.0;
  std::vector<double> exit_point;
  double weight = 1.0;      // W(tau) = exp(int_0^tau c)
  double f_integral = 0.0;  // int_0^tau f(xi(t)) W(t) dt
  bool weight_monotone = true;
};

struct Estimate {
  double value = 0.0;
  double std_error = 0.0;
  std::uint64_t n_paths = 0;
  std::uint64_t used = 0;
  std::uint64_t unexited = 0;
  std::uint64_t invalid = 0;
  double unexited_frac = 0.0;
  double tau_mean = 0.0;
  double tau_std_error = 0.0;
  bool weight_monotone_all = true;
  double dt = 0.0;
  double t_max = 0.0;
  std::uint64_t seed = 0;
  bool brownian_bridge = false;
};

/// Ito drift of the simulated diffusion. The paths are driven by sqrt(2)*X_i
/// so the generator's second-order part is sum X_i^2 rather than (1/2) sum;
/// the Stratonovich correction (1/2)(D(sqrt2 X_i))(sqrt2 X_i) then collapses
/// to (DX_i)X_i.
inline VectorField ito_drift(std::span<const VectorField> fields) {
  if (fields.empty()) throw Error("ito_drift: need X0");
  const int d = fields[0].dim();
  std::vector<Expr> comps;
  comps.reserve(static_cast<std::size_t>(d));
  for (int j = 0; j < d; ++j) {
    Expr acc = fields[0].components[static_cast<std::size_t>(j)];
    for (std::size_t i = 1; i < fields.size(); ++i) {
      const VectorField& xi = fields[i];
      for (int l = 0; l < d; ++l)
        acc = acc + xi.components[static_cast<std::size_t>(l)] *
                        xi.components[static_cast<std::size_t>(j)].diff(l + 1);
    }
    comps.push_back(acc);
  }
  return VectorField(std::move(comps), 0, "b");
}

struct ConvergenceRow {
  double dt = 0.0;
  double value = 0.0;
  double std_error = 0.0;
  std::optional<double> abs_error;
};

/// Euler-Maruyama simulation of the diffusion with first-exit detection and
/// Feynman-Kac accumulation. Immutable after construction; all methods are
/// const and safe to call concurrently.
class Simulator {
 public:
  explicit Simulator(const Problem& prob) : dim_(prob.dim), n_(prob.n) {
    drift_ = CompiledField(ito_drift(prob.fields));
    const Expr s2 = Expr::constant(std::numbers::sqrt2);
    for (const VectorField& f : prob.diffusion_fields()) {
      std::vector<Expr> comps;
      comps.reserve(f.components.size());
      for (const Expr& c : f.components) comps.push_back(s2 * c);
      sigma_.emplace_back(VectorField(std::move(comps)));
    }
    c_ = CompiledExpr(prob.c);
    f_ = CompiledExpr(prob.f);
    g_ = CompiledExpr(prob.g);
    phi_ = CompiledExpr(prob.phi);
    std::vector<Expr> grad;
    for (int j = 1; j <= dim_; ++j) grad.push_back(prob.phi.diff(j));
    gphi_ = CompiledField(VectorField(std::move(grad)));
    c_zero_ = c_.constant_value() == 0.0;
    f_zero_ = f_.constant_value() == 0.0;
    stack_need_ = std::max({drift_.stack_need, gphi_.stack_need, c_.stack_need(),
                            f_.stack_need(), g_.stack_need(), phi_.stack_need()});
    for (const CompiledField& s : sigma_) stack_need_ = std::max(stack_need_, s.stack_need);
    Box box = prob.box.empty() ? auto_bounding_box(phi_, dim_) : Box::from_flat(prob.box);
    double diam = box.diameter();
    auto_t_max_ = 50.0 * diam * diam;
  }

  int dim() const { return dim_; }

  ExitRecord simulate_to_exit(std::span<const double> x, const PathConfig& cfg,
                              std::uint64_t path_index) const {
    Resolved rc = resolve(cfg);
    Workspace ws(dim_, n_, stack_need_);
    if (!(phi_.eval(x.data(), ws.stack.data()) > 0.0))
      throw Error("simulate_to_exit: start point not inside D");
    ExitRecord rec;
    rec.exit_point.assign(static_cast<std::size_t>(dim_), 0.0);
    run_path(x.data(), rc, path_index, ws, rec);
    return rec;
  }

  Estimate estimate_point(std::span<const double> x, std::uint64_t n_paths,
                          const PathConfig& cfg) const {
    if (static_cast<int>(x.size()) != dim_) throw Error("estimate_point: dimension mismatch");
    if (n_paths == 0) throw Error("estimate_point: need at least one path");
    if (n_paths > (std::uint64_t{1} << 32)) throw Error("estimate_point: too many paths");
    Resolved rc = resolve(cfg);
    {
      std::vector<double> stack(static_cast<std::size_t>(stack_need_));
      if (!(phi_.eval(x.data(), stack.data()) > 0.0))
        throw Error("estimate_point: start point not inside D (phi <= 0)");
    }

    const std::uint64_t n = n_paths;
    std::vector<double> sample(n, 0.0), tau(n, 0.0);
    std::vector<unsigned char> status(n, 0);  // 0 used, 1 unexited, 2 invalid
    std::vector<unsigned char> monotone(n, 1);

    auto run_range = [&](std::uint64_t lo, std::uint64_t hi) {
      Workspace ws(dim_, n_, stack_need_);
      ExitRecord rec;
      rec.exit_point.assign(static_cast<std::size_t>(dim_), 0.0);
      for (std::uint64_t j = lo; j < hi; ++j) {
        run_path(x.data(), rc, j, ws, rec);
        if (!rec.weight_monotone) monotone[j] = 0;
        if (!rec.valid) {
          status[j] = 2;
          continue;
        }
        if (!rec.exited) {
          status[j] = 1;
          continue;
        }
        double y = g_.eval(rec.exit_point.data(), ws.stack.data()) * rec.weight - rec.f_integral;
        if (!std::isfinite(y)) {
          status[j] = 2;
          continue;
        }
        sample[j] = y;
        tau[j] = rec.tau;
      }
    };

    unsigned workers = cfg.workers > 0 ? static_cast<unsigned>(cfg.workers)
                                       : std::thread::hardware_concurrency();
    if (workers == 0) workers = 1;
    if (static_cast<std::uint64_t>(workers) > n) workers = static_cast<unsigned>(n);
    if (workers <= 1) {
      run_range(0, n);
    } else {
      std::vector<std::thread> pool;
      std::exception_ptr first_error;
      std::mutex err_mu;
      std::uint64_t chunk = (n + workers - 1) / workers;
      for (unsigned w = 0; w < workers; ++w) {
        std::uint64_t lo = w * chunk, hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&, lo, hi] {
          try {
            run_range(lo, hi);
          } catch (...) {
            std::lock_guard<std::mutex> lk(err_mu);
            if (!first_error) first_error = std::current_exception();
          }
        });
      }
      for (std::thread& t : pool) t.join();
      if (first_error) std::rethrow_exception(first_error);
    }

    Estimate est;
    est.n_paths = n;
    est.dt = rc.dt;
    est.t_max = rc.t_max;
    est.seed = rc.seed;
    est.brownian_bridge = rc.bridge;
    for (std::uint64_t j = 0; j < n; ++j) {
      if (status[j] == 1) ++est.unexited;
      if (status[j] == 2) ++est.invalid;
      if (status[j] != 2 && !monotone[j]) est.weight_monotone_all = false;
    }
    est.used = n - est.unexited - est.invalid;
    est.unexited_frac = static_cast<double>(est.unexited) / static_cast<double>(n);
    if (est.unexited_frac > 1e-2)
      throw EstimateRejected("unexited fraction " + std::to_string(est.unexited_frac) +
                             " exceeds 1e-2; increase t_max or revisit the exit-time "
                             "hypotheses of the operator");
    if (static_cast<double>(est.invalid) / static_cast<double>(n) > 1e-2)
      throw EstimateRejected("more than 1% of paths hit non-finite state (field blow-up)");
    if (est.used == 0) throw EstimateRejected("no usable paths");

    double sum = 0.0, tsum = 0.0;
    for (std::uint64_t j = 0; j < n; ++j)
      if (status[j] == 0) {
        sum += sample[j];
        tsum += tau[j];
      }
    double used = static_cast<double>(est.used);
    est.value = sum / used;
    est.tau_mean = tsum / used;
    if (est.used > 1) {
      double ss = 0.0, ts = 0.0;
      for (std::uint64_t j = 0; j < n; ++j)
        if (status[j] == 0) {
          double r = sample[j] - est.value;
          ss += r * r;
          double tr = tau[j] - est.tau_mean;
          ts += tr * tr;
        }
      est.std_error = std::sqrt(ss / (used - 1.0) / used);
      est.tau_std_error = std::sqrt(ts / (used - 1.0) / used);
    }
    return est;
  }

  /// Per-point seeds are derived from the master seed and the grid index, so
  /// a grid run is deterministic and each point's paths are independent.
  std::vector<Estimate> estimate_grid(const std::vector<std::vector<double>>& points,
                                      std::uint64_t n_paths, const PathConfig& cfg) const {
    std::vector<Estimate> out;
    out.reserve(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
      PathConfig pc = cfg;
      pc.seed = rng::derive_seed(cfg.seed, i);
      out.push_back(estimate_point(points[i], n_paths, pc));
    }
    return out;
  }

  std::vector<ConvergenceRow> convergence_study(std::span<const double> x,
                                                std::span<const double> dt_list,
                                                std::uint64_t n_paths, const PathConfig& cfg,
                                                std::optional<double> reference = {}) const {
    for (std::size_t i = 1; i < dt_list.size(); ++i)
      if (!(dt_list[i] < dt_list[i - 1])) throw Error("convergence_study: dt list must decrease");
    std::vector<ConvergenceRow> rows;
    for (double dt : dt_list) {
      PathConfig pc = cfg;
      pc.dt = dt;
      Estimate e = estimate_point(x, n_paths, pc);
      ConvergenceRow row;
      row.dt = dt;
      row.value = e.value;
      row.std_error = e.std_error;
      if (reference) row.abs_error = std::fabs(e.value - *reference);
      rows.push_back(row);
    }
    return rows;
  }

 private:
  struct Resolved {
    double dt, t_max, tol_b, sqrt_dt;
    std::uint64_t seed, max_steps;
    bool bridge;
  };

  struct Workspace {
    std::vector<double> x, y, mid, z, b, s, grad, stack;
    Workspace(int dim, int n, int stack_need)
        : x(static_cast<std::size_t>(dim)),
          y(static_cast<std::size_t>(dim)),
          mid(static_cast<std::size_t>(dim)),
          z(static_cast<std::size_t>(n)),
          b(static_cast<std::size_t>(dim)),
          s(static_cast<std::size_t>(dim)),
          grad(static_cast<std::size_t>(dim)),
          stack(static_cast<std::size_t>(std::max(stack_need, 1))) {}
  };

  Resolved resolve(const PathConfig& cfg) const {
    if (!(cfg.dt > 0.0)) throw Error("path config: dt must be positive");
    if (!(cfg.boundary_tol > 0.0)) throw Error("path config: boundary_tol must be positive");
    Resolved rc;
    rc.dt = cfg.dt;
    rc.t_max = cfg.t_max > 0.0 ? cfg.t_max : auto_t_max_;
    if (rc.t_max < 100.0 * rc.dt) throw Error("path config: t_max must be at least 100*dt");
    rc.tol_b = cfg.boundary_tol;
    rc.sqrt_dt = std::sqrt(cfg.dt);
    rc.seed = cfg.seed;
    rc.max_steps = static_cast<std::uint64_t>(std::ceil(rc.t_max / rc.dt));
    rc.bridge = cfg.brownian_bridge;
    return rc;
  }

  bool project_to_boundary(double* p, double tol_b, Workspace& ws) const {
    double* st = ws.stack.data();
    for (int it = 0; it < 50; ++it) {
      double v = phi_.eval(p, st);
      if (!std::isfinite(v)) return false;
      if (std::fabs(v) <= tol_b) return true;
      gphi_.eval(p, ws.grad.data(), st);
      double gg = 0.0;
      for (int j = 0; j < dim_; ++j) gg += ws.grad[j] * ws.grad[j];
      if (!(gg > 1e-16)) return false;
      for (int j = 0; j < dim_; ++j) p[j] -= v * ws.grad[j] / gg;
    }
    return false;
  }

  void run_path(const double* start, const Resolved& rc, std::uint64_t path_index, Workspace& ws,
                ExitRecord& rec) const {
    rec.exited = false;
    rec.valid = true;
    rec.weight_monotone = true;
    rec.tau = 0.0;
    rec.weight = 1.0;
    rec.f_integral = 0.0;

    double* x = ws.x.data();
    double* y = ws.y.data();
    double* st = ws.stack.data();
    for (int j = 0; j < dim_; ++j) x[j] = start[j];
    double phi_x = phi_.eval(x, st);

    double t = 0.0, ic = 0.0, w = 1.0, fint = 0.0;
    double c_prev = c_zero_ ? 0.0 : c_.eval(x, st);
    double fw_prev = f_zero_ ? 0.0 : f_.eval(x, st);
    rng::NormalStream gen(rc.seed, path_index);
    const auto bridge_block = static_cast<std::uint32_t>((n_ + 1) / 2);

    for (std::uint64_t k = 0; k < rc.max_steps; ++k) {
      gen.normals(k, std::span<double>(ws.z.data(), static_cast<std::size_t>(n_)));
      drift_.eval(x, ws.b.data(), st);
      for (int j = 0; j < dim_; ++j) y[j] = x[j] + rc.dt * ws.b[j];
      for (int i = 0; i < n_; ++i) {
        sigma_[static_cast<std::size_t>(i)].eval(x, ws.s.data(), st);
        double zi = rc.sqrt_dt * ws.z[static_cast<std::size_t>(i)];
        for (int j = 0; j < dim_; ++j) y[j] += zi * ws.s[j];
      }
      bool finite = true;
      for (int j = 0; j < dim_; ++j) finite = finite && std::isfinite(y[j]);
      double phi_y = finite ? phi_.eval(y, st) : 0.0;
      if (!finite || !std::isfinite(phi_y)) {
        rec.valid = false;
        rec.tau = t;
        return;
      }

      if (phi_y <= 0.0) {
        double lo = 0.0, hi = 1.0;
        for (int it = 0; it < 12; ++it) {
          double m = 0.5 * (lo + hi);
          for (int j = 0; j < dim_; ++j) ws.mid[j] = x[j] + m * (y[j] - x[j]);
          (phi_.eval(ws.mid.data(), st) > 0.0 ? lo : hi) = m;
        }
        for (int j = 0; j < dim_; ++j) ws.mid[j] = x[j] + hi * (y[j] - x[j]);
        if (!project_to_boundary(ws.mid.data(), rc.tol_b, ws)) {
          rec.valid = false;
          rec.tau = t;
          return;
        }
        double h = hi * rc.dt;
        if (!c_zero_) {
          double c_exit = c_.eval(ws.mid.data(), st);
          ic += h * (c_prev + c_exit) / 2.0;
          double w_new = std::exp(ic);
          if (!(w_new <= w) || !(w_new > 0.0)) rec.weight_monotone = false;
          w = w_new;
        }
        if (!f_zero_) {
          double fw_exit = f_.eval(ws.mid.data(), st) * w;
          fint += h * (fw_prev + fw_exit) / 2.0;
        }
        rec.exited = true;
        rec.tau = t + h;
        rec.weight = w;
        rec.f_integral = fint;
        for (int j = 0; j < dim_; ++j) rec.exit_point[static_cast<std::size_t>(j)] = ws.mid[j];
        return;
      }

      bool bridge_exit = false;
      if (rc.bridge) {
        gphi_.eval(x, ws.grad.data(), st);
        double gx2 = 0.0;
        for (int j = 0; j < dim_; ++j) gx2 += ws.grad[j] * ws.grad[j];
        if (gx2 > 1e-16) {
          double gx = std::sqrt(gx2);
          double sn2 = 0.0;
          for (int i = 0; i < n_; ++i) {
            sigma_[static_cast<std::size_t>(i)].eval(x, ws.s.data(), st);
            double dot = 0.0;
            for (int j = 0; j < dim_; ++j) dot += ws.s[j] * ws.grad[j];
            sn2 += (dot / gx) * (dot / gx);
          }
          gphi_.eval(y, ws.s.data(), st);
          double gy2 = 0.0;
          for (int j = 0; j < dim_; ++j) gy2 += ws.s[j] * ws.s[j];
          if (sn2 > 0.0 && gy2 > 1e-16) {
            double d0 = phi_x / gx;
            double d1 = phi_y / std::sqrt(gy2);
            double p_cross = std::exp(-2.0 * d0 * d1 / (sn2 * rc.dt));
            if (gen.uniform(k, bridge_block) < p_cross) bridge_exit = true;
          }
        }
      }

      if (!c_zero_) {
        double c_new = c_.eval(y, st);
        ic += rc.dt * (c_prev + c_new) / 2.0;
        double w_new = std::exp(ic);
        if (!(w_new <= w) || !(w_new > 0.0)) rec.weight_monotone = false;
        w = w_new;
        c_prev = c_new;
      }
      if (!f_zero_) {
        double fw_new = f_.eval(y, st) * w;
        fint += rc.dt * (fw_prev + fw_new) / 2.0;
        fw_prev = fw_new;
      }
      t += rc.dt;

      if (bridge_exit) {
        for (int j = 0; j < dim_; ++j) ws.mid[j] = y[j];
        if (!project_to_boundary(ws.mid.data(), rc.tol_b, ws)) {
          rec.valid = false;
          rec.tau = t;
          return;
        }
        rec.exited = true;
        rec.tau = t;
        rec.weight = w;
        rec.f_integral = fint;
        for (int j = 0; j < dim_; ++j) rec.exit_point[static_cast<std::size_t>(j)] = ws.mid[j];
        return;
      }

      std::swap(x, y);
      phi_x = phi_y;
    }

    rec.tau = t;
    rec.weight = w;
    rec.f_integral = fint;
  }

  int dim_ = 0;
  int n_ = 0;
  CompiledField drift_;
  std::vector<CompiledField> sigma_;
  CompiledExpr c_, f_, g_, phi_;
  CompiledField gphi_;
  bool c_zero_ = false;
  bool f_zero_ = false;
  int stack_need_ = 0;
  double auto_t_max_ = 0.0;
};

}  // namespace degen
