#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "degen/problem.hpp"
#include "degen/sampling.hpp"
#include "degen/vf_algebra.hpp"
#include "oracles.hpp"

using namespace degen;

namespace {

std::vector<VectorField> grushin_fields() {
  std::vector<VectorField> f;
  f.emplace_back(std::vector<Expr>{parse_expression("1", 2), parse_expression("0", 2)}, 0, "X1");
  f.emplace_back(std::vector<Expr>{parse_expression("0", 2), parse_expression("x", 2)}, 0, "X2");
  return f;
}

std::vector<VectorField> ks_fields(const std::string& p) {
  const std::string damp = "exp(-abs(x1)^(" + p + ")/2)";
  std::vector<VectorField> f;
  auto e = [](const std::string& s) { return parse_expression(s, 3); };
  f.emplace_back(std::vector<Expr>{e("1"), e("0"), e("0")}, 0, "X1");
  f.emplace_back(std::vector<Expr>{e("0"), e(damp), e("0")}, 0, "X2");
  f.emplace_back(std::vector<Expr>{e("0"), e("0"), e(damp)}, 0, "X3");
  return f;
}

std::vector<double> eval_at(const VectorField& f, const std::vector<double>& x) {
  std::vector<double> out(static_cast<std::size_t>(f.dim()));
  f.eval(x, out);
  return out;
}

}  // namespace

TEST_CASE("lie bracket of coordinate and linear fields") {
  auto g = grushin_fields();
  VectorField br = lie_bracket(g[0], g[1]);  // [d_x, x d_y] = d_y
  for (double xv : {-1.0, 0.0, 0.7}) {
    auto v = eval_at(br, {xv, 0.3});
    CHECK(v[0] == 0.0);
    CHECK(v[1] == 1.0);
  }
  CHECK(br.order == 1);
  CHECK(br.word == "[X1,X2]");
}

TEST_CASE("random polynomial brackets match the finite-difference oracle") {
  std::mt19937 rng(2001);
  std::uniform_real_distribution<double> u(-1.2, 1.2);
  for (int trial = 0; trial < 50; ++trial) {
    const int d = 2 + (trial % 2);
    VectorField a = oracle::random_poly_field(rng, d, "A");
    VectorField b = oracle::random_poly_field(rng, d, "B");
    VectorField ab = lie_bracket(a, b);
    for (int pt = 0; pt < 10; ++pt) {
      std::vector<double> x(static_cast<std::size_t>(d));
      for (auto& v : x) v = u(rng);
      auto sym = eval_at(ab, x);
      auto fd = oracle::fd_lie_bracket(a, b, x);
      for (int j = 0; j < d; ++j) {
        double scale = std::max(1.0, std::fabs(fd[static_cast<std::size_t>(j)]));
        CHECK(std::fabs(sym[static_cast<std::size_t>(j)] - fd[static_cast<std::size_t>(j)]) <=
              1e-6 * scale);
      }
    }
  }
}

TEST_CASE("bracket antisymmetry and Jacobi identity") {
  std::mt19937 rng(555);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    const int d = 2;
    VectorField a = oracle::random_poly_field(rng, d, "A", 2);
    VectorField b = oracle::random_poly_field(rng, d, "B", 2);
    VectorField c = oracle::random_poly_field(rng, d, "C", 2);
    VectorField ab = lie_bracket(a, b);
    VectorField ba = lie_bracket(b, a);
    VectorField jac1 = lie_bracket(a, lie_bracket(b, c));
    VectorField jac2 = lie_bracket(b, lie_bracket(c, a));
    VectorField jac3 = lie_bracket(c, lie_bracket(a, b));
    for (int pt = 0; pt < 10; ++pt) {
      std::vector<double> x{u(rng), u(rng)};
      auto v1 = eval_at(ab, x), v2 = eval_at(ba, x);
      auto j1 = eval_at(jac1, x), j2 = eval_at(jac2, x), j3 = eval_at(jac3, x);
      for (int j = 0; j < d; ++j) {
        auto idx = static_cast<std::size_t>(j);
        CHECK(std::fabs(v1[idx] + v2[idx]) <= 1e-8);
        CHECK(std::fabs(j1[idx] + j2[idx] + j3[idx]) <= 1e-8);
      }
    }
  }
}

TEST_CASE("bracket enumeration counts and ordering") {
  auto g = grushin_fields();
  auto cols = enumerate_brackets(g, 2);
  REQUIRE(cols.size() == 2 + 4 + 8);
  CHECK(cols[0].order == 0);
  CHECK(cols[2].order == 1);
  CHECK(cols[6].order == 2);
  for (std::size_t i = 1; i < cols.size(); ++i) CHECK(cols[i - 1].order <= cols[i].order);
}

TEST_CASE("lambda of rank-deficient matrices is zero") {
  Eigen::MatrixXd tall(2, 1);
  tall << 3.0, 4.0;
  CHECK(lambda_from_matrix(tall) == 0.0);
  Eigen::MatrixXd sq(2, 2);
  sq << 1.0, 0.0, 0.0, 2.0;
  CHECK(lambda_from_matrix(sq) == Catch::Approx(1.0));
  Eigen::MatrixXd wide(2, 3);
  wide << 1.0, 0.0, 0.0, 0.0, 0.5, 0.0;
  CHECK(lambda_from_matrix(wide) == Catch::Approx(0.25));
}

TEST_CASE("grushin ladder closes at the first bracket level") {
  auto g = grushin_fields();
  auto [l0, m0] = lambda_k(g, 0, std::vector<double>{0.0, 0.5});
  CHECK(l0 == 0.0);
  CHECK(m0.matrix.cols() == 2);
  auto [l1, m1] = lambda_k(g, 1, std::vector<double>{0.0, 0.5});
  CHECK(std::fabs(l1 - 1.0) <= 1e-10);

  // Against the closed-form smallest eigenvalue of the 2x2 Gram matrix.
  std::mt19937 rng(31);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int t = 0; t < 20; ++t) {
    std::vector<double> x{u(rng), u(rng)};
    auto [l, m] = lambda_k(g, 1, x);
    CHECK(l == Catch::Approx(oracle::min_eig_gram_2x2(m.matrix)).margin(1e-10));
  }
}

TEST_CASE("classification on a grid straddling the grushin line") {
  auto g = grushin_fields();
  Box box{{-1.0, -1.0}, {1.0, 1.0}};
  auto grid = lattice(box, 9);  // odd: puts lattice points on {x = 0}
  auto rep0 = classify_K(g, grid, 0);
  CHECK(rep0.failing.size() == 9);  // the x = 0 column
  for (auto idx : rep0.failing) CHECK(rep0.rows[idx].point[0] == 0.0);
  auto rep1 = classify_K(g, grid, 1);
  CHECK(rep1.failing.empty());
  for (const auto& row : rep1.rows) {
    CHECK(row.lambda.size() == 2);
    CHECK(row.lambda[1] >= row.lambda[0]);  // ladder is monotone in k
  }
}

TEST_CASE("superdegenerate coefficient reproduces its decay profile exactly") {
  for (const char* p : {"-0.5", "-0.9", "-1.5"}) {
    CAPTURE(p);
    auto f = ks_fields(p);
    const double pv = std::strtod(p, nullptr);
    for (int j = 0; j < 50; ++j) {
      const double t = std::exp(std::log(1e-4) + j * (std::log(0.5) - std::log(1e-4)) / 49.0);
      const double expect = std::exp(-std::pow(t, pv));
      auto [l, m] = lambda_k(f, 0, std::vector<double>{t, 0.2, 0.1});
      if (expect < 1e-290) {
        CHECK(l < 1e-290);  // both drowned: underflow region
      } else {
        CHECK(std::fabs(l - expect) <= 1e-12 * expect);
      }
    }
  }
}

TEST_CASE("nonfinite bracket columns are zeroed, not propagated") {
  auto f = ks_fields("-0.5");
  // Brackets differentiate the damping through |x1|^(p-1), which is +inf at
  // x1 = 0; the ladder must still return finite values there.
  auto grid = std::vector<std::vector<double>>{{0.0, 0.2, 0.1}};
  auto rep = classify_K(f, grid, 2);
  REQUIRE(rep.rows.size() == 1);
  CHECK(rep.rows[0].nonfinite_columns);
  for (double l : rep.rows[0].lambda) CHECK(std::isfinite(l));
  CHECK(rep.failing.size() == 1);
}

TEST_CASE("exponent regression on exact synthetic decay") {
  auto make_samples = [](double p) {
    std::vector<SubcriticalFit::Sample> s;
    for (int j = 0; j < 24; ++j) {
      double rho = std::exp(std::log(1e-4) + j * (std::log(0.1) - std::log(1e-4)) / 23.0);
      s.push_back({rho, std::exp(-std::pow(rho, p)), SubcriticalFit::SampleUse::Used});
    }
    return s;
  };
  auto f1 = fit_exponent(make_samples(-0.7), 0);
  CHECK(f1.status == FitStatus::Pass);
  CHECK(f1.p_hat == Catch::Approx(-0.7).margin(1e-9));
  CHECK(f1.p_stderr < 1e-9);

  auto f2 = fit_exponent(make_samples(-1.5), 0);
  CHECK(f2.status == FitStatus::Fail);
  CHECK(f2.p_hat == Catch::Approx(-1.5).margin(1e-3));
  CHECK(f2.underflowed > 0);

  // All samples above the floor: nothing degenerate to fit.
  std::vector<SubcriticalFit::Sample> flat(10, {0.01, 0.9, SubcriticalFit::SampleUse::Used});
  auto f3 = fit_exponent(std::move(flat), 0);
  CHECK(f3.status == FitStatus::TrivialPass);
  CHECK(f3.pass);

  // Degenerate but fully underflowed: no usable points.
  std::vector<SubcriticalFit::Sample> drowned(10, {0.01, 0.0, SubcriticalFit::SampleUse::Used});
  auto f4 = fit_exponent(std::move(drowned), 0);
  CHECK(f4.status == FitStatus::Inconclusive);
  CHECK_FALSE(f4.pass);
}

TEST_CASE("subcritical fit against the flat degeneracy surface") {
  Hypersurface s(parse_expression("x1", 3), 3);
  std::vector<std::vector<double>> base{{0.0, 0.1, -0.2}, {0.0, -0.3, 0.1}};
  struct Case {
    const char* p;
    double expect;
    FitStatus status;
  };
  for (const Case& c : {Case{"-0.5", -0.5, FitStatus::Pass},
                        Case{"-0.9", -0.9, FitStatus::Pass},
                        Case{"-1.5", -1.5, FitStatus::Fail}}) {
    CAPTURE(c.p);
    auto f = ks_fields(c.p);
    SubcriticalFit fit = subcritical_fit(f, s, 0, base);
    CHECK(fit.status == c.status);
    CHECK(fit.p_hat == Catch::Approx(c.expect).margin(0.05));
  }
}

TEST_CASE("subcritical fit option validation") {
  Hypersurface s(parse_expression("x1", 3), 3);
  std::vector<std::vector<double>> base{{0.0, 0.0, 0.0}};
  auto f = ks_fields("-0.5");
  SubcriticalOptions bad;
  bad.rho_min = 1e-5;
  CHECK_THROWS_AS(subcritical_fit(f, s, 0, base, bad), Error);
  bad = {};
  bad.rho_max = bad.rho_min;
  CHECK_THROWS_AS(subcritical_fit(f, s, 0, base, bad), Error);
  bad = {};
  bad.rho_count = 1;
  CHECK_THROWS_AS(subcritical_fit(f, s, 0, base, bad), Error);
  CHECK_THROWS_AS(subcritical_fit(f, s, 0, {}), Error);
}

TEST_CASE("closure predicate drops exterior samples") {
  Hypersurface s(parse_expression("x1", 3), 3);
  std::vector<std::vector<double>> base{{0.0, 0.0, 0.0}};
  auto f = ks_fields("-0.5");
  auto right_half = [](std::span<const double> y) { return y[0] >= 0.0; };
  SubcriticalFit fit = subcritical_fit(f, s, 0, base, {}, right_half);
  std::size_t outside = 0;
  for (const auto& smp : fit.samples)
    if (smp.use == SubcriticalFit::SampleUse::Outside) ++outside;
  CHECK(outside == 16);  // one full side rejected
  CHECK(fit.status == FitStatus::Pass);
}

TEST_CASE("hypersurface projection and normals on the circle") {
  Hypersurface s(parse_expression("1 - x^2 - y^2", 2), 2);
  auto p = s.project(std::vector<double>{2.0, 0.0});
  CHECK(p[0] == Catch::Approx(1.0).margin(1e-12));
  CHECK(std::fabs(s.value(p)) <= 1e-12);
  auto nu = s.unit_normal(std::vector<double>{1.0, 0.0});
  CHECK(nu(0) == Catch::Approx(-1.0));  // gradient of 1 - r^2 points inward
  CHECK(nu.norm() == Catch::Approx(1.0));
  Hypersurface flat(parse_expression("x1 - x2", 2), 2);
  CHECK_THROWS_AS(Hypersurface(parse_expression("x3", 2), 2), Error);
  Hypersurface cone(parse_expression("x^2 + y^2", 2), 2);
  CHECK_THROWS_AS(cone.unit_normal(std::vector<double>{0.0, 0.0}), GeometryError);
}

TEST_CASE("noncharacteristic check on boundary points") {
  auto g = grushin_fields();
  Hypersurface s(parse_expression("1 - x^2 - y^2", 2), 2);
  std::vector<std::vector<double>> pts{{1.0, 0.0}, {0.0, 1.0},
                                       {std::sqrt(0.5), std::sqrt(0.5)}};
  auto res = noncharacteristic_check(g, s, pts);
  REQUIRE(res.size() == 3);
  CHECK(res[0].pass);
  CHECK(res[0].best_field == 1);
  CHECK(std::fabs(res[0].max_inner) == Catch::Approx(1.0));
  CHECK_FALSE(res[1].pass);  // (0, 1): both fields tangent or zero
  CHECK(res[2].pass);

  std::vector<std::vector<double>> off{{0.5, 0.5}};
  CHECK_THROWS_AS(noncharacteristic_check(g, s, off), Error);
}

TEST_CASE("sign condition and coordinate ellipticity report") {
  auto g = grushin_fields();
  std::vector<VectorField> fields;
  fields.emplace_back(std::vector<Expr>{parse_expression("0", 2), parse_expression("0", 2)}, 0,
                      "X0");
  fields.push_back(g[0]);
  fields.push_back(g[1]);
  Box box{{-1.0, -1.0}, {1.0, 1.0}};
  auto grid = lattice(box, 7);

  Thm2Report ok = thm2_checks(fields, parse_expression("-1", 2), grid);
  CHECK(ok.c_nonpositive);
  CHECK(ok.c_max == -1.0);
  CHECK(ok.best_coordinate == 1);
  CHECK(ok.a_best == Catch::Approx(1.0));
  CHECK(ok.coordinate_pass);

  Thm2Report bad = thm2_checks(fields, parse_expression("x", 2), grid);
  CHECK_FALSE(bad.c_nonpositive);
  CHECK(bad.c_max == 1.0);
  CHECK(bad.c_worst_point[0] == 1.0);

  CHECK_THROWS_AS(thm2_checks(std::span<const VectorField>(fields).subspan(0, 1),
                              parse_expression("0", 2), grid),
                  Error);
}

TEST_CASE("level crossing sampler finds the circle") {
  Hypersurface s(parse_expression("1 - x^2 - y^2", 2), 2);
  Box box{{-1.0, -1.0}, {1.0, 1.0}};
  auto pts = level_crossing_samples(s, box, 16);
  CHECK(pts.size() > 20);
  for (const auto& p : pts) {
    CHECK(std::fabs(s.value(p)) <= 1e-10);
    CHECK(std::fabs(std::hypot(p[0], p[1]) - 1.0) <= 1e-9);
  }
  // Exact lattice zeros are picked up: x = 0 line meets the circle at y = +-1.
  auto flat_pts = level_crossing_samples(Hypersurface(parse_expression("x", 2), 2), box, 17);
  bool found_pole = false;
  for (const auto& p : flat_pts) found_pole = found_pole || (p[0] == 0.0 && p[1] == -1.0);
  CHECK(found_pole);
  // The keep filter applies to lattice zeros too.
  auto kept = level_crossing_samples(Hypersurface(parse_expression("x", 2), 2), box, 17,
                                     [](std::span<const double> q) { return q[1] > 0.0; });
  for (const auto& p : kept) CHECK(p[1] > 0.0);
}

TEST_CASE("auto bounding box covers the domain") {
  CompiledExpr phi(parse_expression("1 - x^2 - y^2", 2));
  Box b = auto_bounding_box(phi, 2);
  REQUIRE(b.dim() == 2);
  for (int i = 0; i < 2; ++i) {
    CHECK(b.lo[static_cast<std::size_t>(i)] <= -1.0);
    CHECK(b.hi[static_cast<std::size_t>(i)] >= 1.0);
  }
}
