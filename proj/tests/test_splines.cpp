#include "doctest.h"
#include "support.hpp"

#include "svcm/splines.hpp"

#include <cmath>

using namespace svcm;

TEST_SUITE("splines") {

TEST_CASE("K=4, degree 3 is the cubic Bernstein basis") {
  const auto b = build_basis(4, 3);
  CHECK(b.interior_knots().size() == 0);
  const VectorXd at0 = eval_basis(b, 0.0);
  CHECK(at0.isApprox((VectorXd(4) << 1, 0, 0, 0).finished()));
  const VectorXd at1 = eval_basis(b, 1.0);
  CHECK(at1.isApprox((VectorXd(4) << 0, 0, 0, 1).finished()));
  const VectorXd half = eval_basis(b, 0.5);
  const VectorXd expected = (VectorXd(4) << 0.125, 0.375, 0.375, 0.125).finished();
  CHECK((half - expected).cwiseAbs().maxCoeff() < 1e-15);

  const double choose[4] = {1, 3, 3, 1};
  for (double t = 0.0; t <= 1.0; t += 0.0123) {
    const VectorXd v = eval_basis(b, t);
    for (int k = 0; k < 4; ++k)
      CHECK(v(k) == doctest::Approx(choose[k] * std::pow(t, k) * std::pow(1 - t, 3 - k)).epsilon(1e-13));
  }
}

TEST_CASE("K=8, degree 3 has interior knots at 0.2, 0.4, 0.6, 0.8") {
  const auto b = build_basis(8, 3);
  const VectorXd inner = b.interior_knots();
  REQUIRE(inner.size() == 4);
  for (int k = 0; k < 4; ++k) CHECK(inner(k) == doctest::Approx(0.2 * (k + 1)).epsilon(1e-15));
  CHECK(b.knots().size() == 12);
  CHECK(b.knots()(0) == 0.0);
  CHECK(b.knots()(3) == 0.0);
  CHECK(b.knots()(8) == 1.0);
  CHECK(b.knots()(11) == 1.0);
}

TEST_CASE("evaluation matches the textbook recursion") {
  for (auto [kn, d] : {std::pair{8, 3}, {5, 1}, {7, 2}, {11, 3}, {6, 0}, {9, 4}}) {
    const auto b = build_basis(kn, d);
    const auto knots = testing::clamped_knots(kn, d);
    for (int r = 0; r <= 400; ++r) {
      const double t = r / 400.0;
      const VectorXd v = eval_basis(b, t);
      for (int k = 0; k < kn; ++k) REQUIRE(v(k) == doctest::Approx(testing::cox_de_boor(knots, k, d, t)).epsilon(1e-12));
    }
  }
}

TEST_CASE("dimension below degree + 1 is rejected") {
  CHECK_THROWS_AS(build_basis(3, 3), InputError);
  CHECK_NOTHROW(build_basis(1, 0));
}

TEST_CASE("evaluation outside [0,1] is rejected") {
  const auto b = build_basis(6, 3);
  CHECK_THROWS_AS(eval_basis(b, -1e-9), InputError);
  CHECK_THROWS_AS(eval_basis(b, 1.0 + 1e-9), InputError);
  CHECK_THROWS_AS(eval_basis(b, std::nan("")), InputError);
}

TEST_CASE("partition of unity, nonnegativity and local support on 10,001 points") {
  for (auto [kn, d] : {std::pair{4, 3}, {8, 3}, {13, 3}, {6, 2}, {5, 1}}) {
    const auto b = build_basis(kn, d);
    double worst = 0.0;
    bool nonneg = true, local = true;
    for (int r = 0; r <= 10000; ++r) {
      const VectorXd v = eval_basis(b, r / 10000.0);
      worst = std::max(worst, std::abs(v.sum() - 1.0));
      nonneg = nonneg && (v.array() >= 0.0).all();
      local = local && (v.array() != 0.0).count() <= d + 1;
    }
    CHECK(worst < 1e-12);
    CHECK(nonneg);
    CHECK(local);
  }
}

TEST_CASE("continuity at interior knots") {
  for (int d = 1; d <= 3; ++d) {
    const auto b = build_basis(9, d);
    const VectorXd inner = b.interior_knots();
    for (Index k = 0; k < inner.size(); ++k) {
      const double knot = inner(k);
      const VectorXd left = eval_basis(b, std::nextafter(knot, 0.0));
      const VectorXd right = eval_basis(b, knot);
      CHECK((left - right).cwiseAbs().maxCoeff() < 1e-10);
    }
  }
}

TEST_CASE("design_row is the z-blocked Kronecker product") {
  CHECK(design_row(VectorXd::Ones(1), (VectorXd(2) << 0.2, 0.8).finished()).isApprox((VectorXd(2) << 0.2, 0.8).finished()));
  CHECK(design_row((VectorXd(2) << 1, 2).finished(), (VectorXd(2) << 0.5, 0.5).finished())
            .isApprox((VectorXd(4) << 0.5, 0.5, 1.0, 1.0).finished()));
  CHECK(design_row(VectorXd::Zero(3), VectorXd::Constant(4, 0.25)).isZero(0.0));
}

TEST_CASE("spline_design stacks design rows") {
  const auto ds = testing::random_dataset(1, 7, 7, 1, 3, 9);
  const auto& s = ds.subjects[0];
  const auto b = build_basis(6, 3);
  const MatrixXd w = spline_design(b, s);
  REQUIRE(w.cols() == 18);
  for (Index j = 0; j < s.size(); ++j) {
    const VectorXd row = design_row(s.z.row(j).transpose(), eval_basis(b, s.times(j)));
    CHECK((w.row(j).transpose() - row).cwiseAbs().maxCoeff() < 1e-15);
  }
}

TEST_CASE("long double instantiation agrees with double") {
  const auto bd = build_basis(8, 3);
  const auto bl = build_basis<long double>(8, 3);
  for (double t : {0.0, 0.13, 0.5, 0.77, 1.0}) {
    const VectorXd vd = eval_basis(bd, t);
    const auto vl = eval_basis(bl, static_cast<long double>(t));
    for (int k = 0; k < 8; ++k) CHECK(std::abs(static_cast<double>(vl(k)) - vd(k)) < 1e-15);
  }
}

}  // TEST_SUITE
