#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "degen/degen.hpp"

namespace {

using namespace degen;

std::string join_doubles(std::span<const double> v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += format_double(v[i]);
  }
  return out;
}

void emit(const Report& rep, const std::string& out_path) {
  std::string text = rep.to_text();
  std::fputs(text.c_str(), stdout);
  if (!out_path.empty()) {
    atomic_write_file(out_path, text);
    atomic_write_file(sibling_report_path(out_path), text);
  }
}

Box problem_box(const Problem& prob, const std::vector<double>& override_box) {
  if (!override_box.empty()) {
    if (override_box.size() != static_cast<std::size_t>(2 * prob.dim))
      throw Error("--box needs 2*dim values");
    return Box::from_flat(override_box);
  }
  if (!prob.box.empty()) return Box::from_flat(prob.box);
  return auto_bounding_box(CompiledExpr(prob.phi), prob.dim);
}

int status_exit(const std::string& status) {
  if (status == "pass") return 0;
  if (status == "inconclusive") return 3;
  return 2;
}

struct CheckOpts {
  std::string file, out;
  int k_max = 3;
  int fit_k = 0;
  int res = 32;
  double tol_k = 1e-12;
  double theta_nc = 1e-8;
  double margin = 0.05;
  double floor_ = 0.5;
  double rho_min = 1e-4;
  double rho_max = 1e-1;
  int rho_count = 16;
  std::vector<double> box;
};

int run_check(const CheckOpts& o) {
  Problem prob = load_problem(o.file);
  Box box = problem_box(prob, o.box);
  CompiledExpr phi(prob.phi);
  auto in_closure = [&phi](std::span<const double> x) { return phi(x) >= 0.0; };

  auto pts = lattice(box, o.res);
  std::vector<std::vector<double>> closure_pts;
  for (auto& p : pts)
    if (in_closure(p)) closure_pts.push_back(std::move(p));
  if (closure_pts.empty()) throw Error("no grid points inside the closure of D");

  DegeneracyReport deg = classify_K(prob.diffusion_fields(), closure_pts, o.k_max, o.tol_k);
  double lambda_min = std::numeric_limits<double>::infinity();
  std::size_t nonfinite = 0;
  for (const auto& row : deg.rows) {
    lambda_min = std::min(lambda_min, row.lambda.back());
    if (row.nonfinite_columns) ++nonfinite;
  }

  Thm2Report t2 = thm2_checks(prob.fields, prob.c, closure_pts);

  Hypersurface bd(prob.phi, prob.dim);
  auto bd_samples = level_crossing_samples(bd, box, o.res, nullptr);
  auto bd_nc = noncharacteristic_check(prob.diffusion_fields(), bd, bd_samples, o.theta_nc);
  std::size_t bd_char = 0;
  double bd_min_inner = std::numeric_limits<double>::infinity();
  for (const auto& r : bd_nc) {
    if (!r.pass) ++bd_char;
    bd_min_inner = std::min(bd_min_inner, std::fabs(r.max_inner));
  }
  if (bd_nc.empty()) bd_min_inner = 0.0;
  bool bd_pass = bd_char == 0 && !bd_nc.empty();

  Report rep;
  rep.set("problem", prob.name);
  rep.set("dim", prob.dim);
  rep.set("fields", prob.n);
  rep.set("k_max", o.k_max);
  rep.set("fit_k", o.fit_k);
  rep.set("grid_res", o.res);
  rep.set("tol_k", o.tol_k);
  rep.set("theta_nc", o.theta_nc);
  rep.set("box", join_doubles(box.flat()));
  rep.set("closure_points", closure_pts.size());
  rep.set("k_count", deg.failing.size());
  rep.set("hormander_all_pass", deg.failing.empty());
  rep.set("lambda_min", lambda_min);
  rep.set("nonfinite_points", nonfinite);
  rep.set("thm2_c_max", t2.c_max);
  rep.set("thm2_c_worst_point", join_doubles(t2.c_worst_point));
  rep.set("thm2_c_pass", t2.c_nonpositive);
  rep.set("thm2_a_best", t2.a_best);
  rep.set("thm2_a_coordinate", t2.best_coordinate);
  rep.set("thm2_a_pass", t2.coordinate_pass);
  rep.set("boundary_samples", bd_samples.size());
  rep.set("boundary_characteristic", bd_char);
  rep.set("boundary_min_transversality", bd_min_inner);
  rep.set("boundary_nc_pass", bd_pass);

  bool inconclusive = false;
  bool fail = !t2.c_nonpositive || !t2.coordinate_pass || !bd_pass;

  rep.set("surface", prob.psi.has_value());
  if (prob.psi) {
    Hypersurface s(*prob.psi, prob.dim);
    auto s_samples = level_crossing_samples(s, box, o.res, in_closure, 48);
    std::vector<std::vector<double>> fit_base;
    std::size_t k_proj_failures = 0, k_char = 0;
    for (std::size_t idx : deg.failing) {
      try {
        fit_base.push_back(s.project(deg.rows[idx].point));
      } catch (const GeometryError&) {
        ++k_proj_failures;
      }
    }
    std::size_t k_on_s = fit_base.size();
    if (k_on_s > 0) {
      auto k_nc = noncharacteristic_check(prob.diffusion_fields(), s, fit_base, o.theta_nc);
      for (const auto& r : k_nc)
        if (!r.pass) ++k_char;
    }
    for (auto& p : s_samples) fit_base.push_back(std::move(p));
    rep.set("surface_samples", s_samples.size());
    rep.set("k_projected", k_on_s);
    rep.set("k_projection_failures", k_proj_failures);
    rep.set("k_characteristic", k_char);
    bool k_nc_pass = k_char == 0 && k_proj_failures == 0;
    rep.set("k_nc_pass", k_nc_pass);
    fail = fail || !k_nc_pass;

    SubcriticalOptions fo;
    fo.rho_min = o.rho_min;
    fo.rho_max = o.rho_max;
    fo.rho_count = o.rho_count;
    fo.margin = o.margin;
    fo.floor = o.floor_;
    if (fit_base.empty()) {
      rep.set("subcritical_status", "inconclusive");
      inconclusive = true;
    } else {
      SubcriticalFit fit = subcritical_fit(prob.diffusion_fields(), s, o.fit_k, fit_base, fo,
                                           in_closure);
      rep.set("subcritical_status", to_string(fit.status));
      rep.set("subcritical_p_hat", fit.p_hat);
      rep.set("subcritical_p_stderr", fit.p_stderr);
      rep.set("subcritical_used", fit.used);
      rep.set("subcritical_underflowed", fit.underflowed);
      if (fit.status == FitStatus::Fail) fail = true;
      if (fit.status == FitStatus::Inconclusive) inconclusive = true;
    }
  } else if (!deg.failing.empty()) {
    rep.set("subcritical_status", "inconclusive");
    rep.set("note", "degenerate points found but no surface.psi given");
    inconclusive = true;
  } else {
    rep.set("subcritical_status", "trivial_pass");
  }

  std::string status = fail ? "fail" : (inconclusive ? "inconclusive" : "pass");
  rep.set("status", status);
  emit(rep, o.out);
  return status_exit(status);
}

struct SolveOpts {
  std::string file, out;
  std::vector<double> point;
  std::uint64_t paths = 20000;
  double dt = 1e-4;
  std::uint64_t seed = 0;
  double t_max = 0.0;
  double tol_b = 1e-9;
  bool bridge = false;
  int threads = 0;
};

PathConfig to_config(const SolveOpts& o) {
  PathConfig cfg;
  cfg.dt = o.dt;
  cfg.t_max = o.t_max;
  cfg.seed = o.seed;
  cfg.brownian_bridge = o.bridge;
  cfg.boundary_tol = o.tol_b;
  cfg.workers = o.threads;
  return cfg;
}

int run_solve(const SolveOpts& o) {
  Problem prob = load_problem(o.file);
  if (o.point.size() != static_cast<std::size_t>(prob.dim))
    throw Error("--point needs " + std::to_string(prob.dim) + " coordinates");
  Simulator sim(prob);
  Estimate est = sim.estimate_point(o.point, o.paths, to_config(o));

  Report rep;
  rep.set("problem", prob.name);
  rep.set("point", join_doubles(o.point));
  rep.set("u_hat", est.value);
  rep.set("std_error", est.std_error);
  rep.set("n_paths", est.n_paths);
  rep.set("used", est.used);
  rep.set("unexited", est.unexited);
  rep.set("invalid", est.invalid);
  rep.set("unexited_frac", est.unexited_frac);
  rep.set("tau_mean", est.tau_mean);
  rep.set("tau_std_error", est.tau_std_error);
  rep.set("weight_monotone", est.weight_monotone_all);
  rep.set("dt", est.dt);
  rep.set("t_max", est.t_max);
  rep.set("seed", est.seed);
  rep.set("bridge", est.brownian_bridge);
  emit(rep, o.out);
  return 0;
}

struct GridOpts {
  SolveOpts solve;
  int res = 32;
  std::vector<double> box;
};

int run_grid(const GridOpts& o) {
  Problem prob = load_problem(o.solve.file);
  Box box = problem_box(prob, o.box);
  CompiledExpr phi(prob.phi);
  std::vector<std::vector<double>> points;
  for (auto& p : lattice(box, o.res))
    if (phi(p) > 0.0) points.push_back(std::move(p));

  Simulator sim(prob);
  auto estimates = sim.estimate_grid(points, o.solve.paths, to_config(o.solve));

  std::vector<std::string> header;
  for (int j = 1; j <= prob.dim; ++j) header.push_back("x" + std::to_string(j));
  header.insert(header.end(), {"u_hat", "stderr", "n_paths", "unexited_frac"});
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < points.size(); ++i) {
    std::vector<std::string> row;
    for (double v : points[i]) row.push_back(format_double(v));
    row.push_back(format_double(estimates[i].value));
    row.push_back(format_double(estimates[i].std_error));
    row.push_back(std::to_string(estimates[i].n_paths));
    row.push_back(format_double(estimates[i].unexited_frac));
    rows.push_back(std::move(row));
  }
  std::string csv = csv_text(header, rows);

  Report rep;
  rep.set("problem", prob.name);
  rep.set("grid_res", o.res);
  rep.set("box", join_doubles(box.flat()));
  rep.set("rows", rows.size());
  rep.set("n_paths", o.solve.paths);
  rep.set("dt", o.solve.dt);
  rep.set("seed", o.solve.seed);
  if (o.solve.out.empty()) {
    std::fputs(csv.c_str(), stdout);
  } else {
    atomic_write_file(o.solve.out, csv);
    atomic_write_file(sibling_report_path(o.solve.out), rep.to_text());
    std::fputs(rep.to_text().c_str(), stdout);
  }
  return 0;
}

struct ConvergenceOpts {
  SolveOpts solve;
  std::vector<double> dts{4e-4, 1e-4, 2.5e-5};
  std::optional<double> reference;
};

int run_convergence(const ConvergenceOpts& o) {
  Problem prob = load_problem(o.solve.file);
  if (o.solve.point.size() != static_cast<std::size_t>(prob.dim))
    throw Error("--point needs " + std::to_string(prob.dim) + " coordinates");
  Simulator sim(prob);
  auto rows = sim.convergence_study(o.solve.point, o.dts, o.solve.paths, to_config(o.solve),
                                    o.reference);

  std::vector<std::string> header{"dt", "u_hat", "stderr"};
  if (o.reference) header.push_back("abs_error");
  std::vector<std::vector<std::string>> text_rows;
  for (const auto& r : rows) {
    std::vector<std::string> row{format_double(r.dt), format_double(r.value),
                                 format_double(r.std_error)};
    if (r.abs_error) row.push_back(format_double(*r.abs_error));
    text_rows.push_back(std::move(row));
  }
  std::string csv = csv_text(header, text_rows);

  Report rep;
  rep.set("problem", prob.name);
  rep.set("point", join_doubles(o.solve.point));
  rep.set("rows", rows.size());
  rep.set("n_paths", o.solve.paths);
  rep.set("seed", o.solve.seed);
  if (o.reference) rep.set("reference", *o.reference);
  if (o.solve.out.empty()) {
    std::fputs(csv.c_str(), stdout);
  } else {
    atomic_write_file(o.solve.out, csv);
    atomic_write_file(sibling_report_path(o.solve.out), rep.to_text());
    std::fputs(rep.to_text().c_str(), stdout);
  }
  return 0;
}

struct ChartOpts {
  std::string file, out;
  std::vector<double> point;
  int field = 0;  // 0: auto-select
  int push_k = 0;
  int samples = 100;
  double radius = 0.5;
  double theta_nc = 1e-8;
  double margin = 0.05;
  double floor_ = 0.5;
  double rho_min = 1e-3;
  double rho_max = 1e-1;
  int rho_count = 12;
};

int run_chart(const ChartOpts& o) {
  Problem prob = load_problem(o.file);
  if (o.point.size() != static_cast<std::size_t>(prob.dim))
    throw Error("--point needs " + std::to_string(prob.dim) + " coordinates");
  ChartConfig cc;
  cc.radius_init = o.radius;
  cc.theta_nc = o.theta_nc;

  Hypersurface bd(prob.phi, prob.dim);
  std::vector<double> x0 = bd.project(o.point, 20, 1e-13);
  int field = o.field;
  if (field == 0)
    field = select_transversal(prob.diffusion_fields(), x0, bd.unit_normal(x0), o.theta_nc);
  BoundaryChart chart(prob, x0, field, cc);

  // Boundary samples from the chart's own parameterization, on a tangent
  // lattice of roughly `samples` points within half the validity radius.
  const int sdim = prob.dim - 1;
  int per_axis = o.samples;
  if (sdim > 1)
    per_axis = std::max(2, static_cast<int>(std::ceil(
                               std::pow(static_cast<double>(o.samples), 1.0 / sdim))));
  std::vector<std::vector<double>> samples;
  if (sdim == 0) {
    samples.push_back(chart.sigma({}));
  } else {
    Box sbox(std::vector<double>(static_cast<std::size_t>(sdim), -chart.radius() / 2.0),
             std::vector<double>(static_cast<std::size_t>(sdim), chart.radius() / 2.0));
    for (const auto& s : lattice(sbox, per_axis)) samples.push_back(chart.sigma(s));
  }

  SubcriticalOptions fo;
  fo.rho_min = o.rho_min;
  fo.rho_max = o.rho_max;
  fo.rho_count = o.rho_count;
  fo.margin = o.margin;
  fo.floor = o.floor_;
  ChartVerifyReport v = verify_chart(chart, prob, samples, o.push_k, fo);

  Report rep;
  rep.set("problem", prob.name);
  rep.set("point", join_doubles(o.point));
  rep.set("base_point", join_doubles(chart.base_point()));
  rep.set("transversal_field", chart.transversal_index());
  rep.set("flow_sign", chart.flow_sign());
  rep.set("radius", chart.radius());
  rep.set("samples", v.samples_used);
  rep.set("samples_failed", v.samples_failed);
  rep.set("residual_boundary", v.boundary_residual_max);
  rep.set("residual_transversal", v.transversal_residual_max);
  rep.set("residual_tangential_first", v.tangential_first_max);
  rep.set("fit_k", std::min(o.push_k, 2));
  rep.set("subcritical_status", to_string(v.fit.status));
  if (v.fit.status == FitStatus::Pass || v.fit.status == FitStatus::Fail) {
    rep.set("subcritical_p_hat", v.fit.p_hat);
    rep.set("subcritical_p_stderr", v.fit.p_stderr);
  }
  rep.set("subcritical_used", v.fit.used);

  bool fail = v.boundary_residual_max > 1e-8 || v.transversal_residual_max > 1e-6 ||
              v.samples_failed > 0 || v.fit.status == FitStatus::Fail;
  bool inconclusive = v.fit.status == FitStatus::Inconclusive;
  std::string status = fail ? "fail" : (inconclusive ? "inconclusive" : "pass");
  rep.set("status", status);
  emit(rep, o.out);
  return status_exit(status);
}

void add_mc_options(CLI::App* sub, SolveOpts& o) {
  sub->add_option("problem", o.file, "problem file")->required();
  sub->add_option("--paths", o.paths, "number of Monte Carlo paths");
  sub->add_option("--dt", o.dt, "Euler step");
  sub->add_option("--seed", o.seed, "master seed");
  sub->add_option("--tmax", o.t_max, "path time horizon (0 = auto)");
  sub->add_option("--tol-b", o.tol_b, "boundary projection tolerance");
  sub->add_flag("--bridge", o.bridge, "Brownian-bridge exit correction");
  sub->add_option("--threads", o.threads, "worker threads (0 = hardware)");
  sub->add_option("--out", o.out, "output file (plus .report sibling)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"degenerate second-order operators: hypothesis checks and a "
               "Feynman-Kac Monte Carlo Dirichlet solver"};
  app.require_subcommand(1);

  CheckOpts check;
  auto* c = app.add_subcommand("check", "verify operator hypotheses on a problem");
  c->add_option("problem", check.file, "problem file")->required();
  c->add_option("--kmax", check.k_max, "bracket depth for the degeneracy ladder");
  c->add_option("--fit-k", check.fit_k, "bracket depth for the subcriticality fit");
  c->add_option("--grid-res", check.res, "lattice resolution per axis");
  c->add_option("--tol-k", check.tol_k, "degeneracy threshold on lambda");
  c->add_option("--theta-nc", check.theta_nc, "non-characteristic threshold");
  c->add_option("--margin", check.margin, "exponent margin for the fit");
  c->add_option("--floor", check.floor_, "nondegeneracy floor for the fit");
  c->add_option("--rho-min", check.rho_min, "smallest fit distance");
  c->add_option("--rho-max", check.rho_max, "largest fit distance");
  c->add_option("--rho-count", check.rho_count, "fit distances per base point");
  c->add_option("--box", check.box, "sampling box lo1,hi1,...")->delimiter(',');
  c->add_option("--out", check.out, "output file (plus .report sibling)");

  SolveOpts solve;
  auto* s = app.add_subcommand("solve", "estimate u at a point");
  add_mc_options(s, solve);
  s->add_option("--point", solve.point, "evaluation point v1,v2,...")
      ->delimiter(',')
      ->required();

  GridOpts grid;
  auto* g = app.add_subcommand("grid", "estimate u on an interior lattice, CSV out");
  add_mc_options(g, grid.solve);
  g->add_option("--grid-res", grid.res, "lattice resolution per axis");
  g->add_option("--box", grid.box, "lattice box lo1,hi1,...")->delimiter(',');

  ConvergenceOpts conv;
  auto* v = app.add_subcommand("convergence", "estimate u at a point across dt values");
  add_mc_options(v, conv.solve);
  v->add_option("--point", conv.solve.point, "evaluation point v1,v2,...")
      ->delimiter(',')
      ->required();
  v->add_option("--dt-list", conv.dts, "decreasing dt values")->delimiter(',');
  double ref = 0.0;
  auto* ref_opt = v->add_option("--reference", ref, "exact value for the error column");

  ChartOpts chart;
  auto* h = app.add_subcommand("chart", "build and verify a boundary chart");
  h->add_option("problem", chart.file, "problem file")->required();
  h->add_option("--point", chart.point, "boundary point v1,v2,...")
      ->delimiter(',')
      ->required();
  h->add_option("--field", chart.field, "transversal field index (0 = auto)");
  h->add_option("--pushforward-k", chart.push_k, "bracket depth for the pushforward fit");
  h->add_option("--samples", chart.samples, "boundary sample count");
  h->add_option("--radius", chart.radius, "initial validity radius");
  h->add_option("--theta-nc", chart.theta_nc, "non-characteristic threshold");
  h->add_option("--margin", chart.margin, "exponent margin for the fit");
  h->add_option("--floor", chart.floor_, "nondegeneracy floor for the fit");
  h->add_option("--rho-min", chart.rho_min, "smallest fit distance");
  h->add_option("--rho-max", chart.rho_max, "largest fit distance");
  h->add_option("--rho-count", chart.rho_count, "fit distances per base point");
  h->add_option("--out", chart.out, "output file (plus .report sibling)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (app.got_subcommand(c)) return run_check(check);
    if (app.got_subcommand(s)) return run_solve(solve);
    if (app.got_subcommand(g)) return run_grid(grid);
    if (app.got_subcommand(v)) {
      if (ref_opt->count() > 0) conv.reference = ref;
      return run_convergence(conv);
    }
    if (app.got_subcommand(h)) return run_chart(chart);
  } catch (const degen::EstimateRejected& e) {
    std::fprintf(stderr, "estimate rejected: %s\n", e.what());
    return 2;
  } catch (const degen::GeometryError& e) {
    std::fprintf(stderr, "geometry: %s\n", e.what());
    return 2;
  } catch (const degen::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
