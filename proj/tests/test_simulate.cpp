#include "doctest.h"
#include "support.hpp"

#include "svcm/simulate.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

using namespace svcm;

namespace {

std::string csv_of(const LongitudinalDataset& ds) {
  std::ostringstream os;
  write_csv(ds, os);
  return os.str();
}

}  // namespace

TEST_SUITE("simulate") {

TEST_CASE("true_g at the endpoints and a quarter") {
  const VectorXd g0 = true_g(0.0);
  CHECK(g0(0) == 0.0);
  CHECK(g0(1) == 5.0);
  CHECK(g0(2) == doctest::Approx(3.5 * (std::exp(-1.0) + std::exp(-9.0)) - 1.5).epsilon(1e-15));
  CHECK(g0(3) == 0.0);
  const VectorXd g1 = true_g(1.0);
  CHECK(std::abs(g1(0)) < 1e-14);
  CHECK(g1(1) == 0.0);
  CHECK(g1(2) == doctest::Approx(3.5 * (std::exp(-4.0) + std::exp(-1.0)) - 1.5).epsilon(1e-15));
  CHECK(g1(3) == 3.5);
  CHECK(true_g(0.25)(0) == doctest::Approx(3.5).epsilon(1e-15));
}

TEST_CASE("exponential covariance") {
  const VectorXd t = (VectorXd(2) << 0.1, 0.5).finished();
  const MatrixXd s = exponential_covariance(t, 4.95, 0.8);
  CHECK(s(0, 1) == doctest::Approx(4.95 * std::pow(0.8, 0.4)).epsilon(1e-14));
  CHECK(s(0, 1) == doctest::Approx(4.5273).epsilon(1e-4));
  CHECK(s(0, 0) == 4.95);
  // rho = 0 leaves only the diagonal, and a vanishing rho is negligible
  // between well-separated times.
  const VectorXd spread = (VectorXd(3) << 0.0, 0.45, 0.95).finished();
  const MatrixXd zero = exponential_covariance(spread, 4.95, 0.0);
  CHECK((zero - 4.95 * MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() == 0.0);
  const MatrixXd tiny = exponential_covariance(VectorXd::LinSpaced(2, 0.0, 1.0), 4.95, 1e-12);
  CHECK(std::abs(tiny(0, 1)) < 1e-10 * 4.95);
}

TEST_CASE("design of the bounded scenario") {
  SimConfig cfg;
  cfg.n = 200;
  cfg.seed = 61;
  const auto sim = simulate_dataset(cfg);
  const auto& ds = sim.dataset;
  CHECK(validate(ds).empty());
  CHECK(ds.n() == 200);
  CHECK(ds.p == 4);
  CHECK(ds.q == 4);
  double mean_m = 0.0;
  for (const auto& s : ds.subjects) {
    CHECK(s.size() >= 6);
    CHECK(s.size() <= 12);
    mean_m += static_cast<double>(s.size()) / 200.0;
    for (Index j = 0; j < s.size(); ++j) {
      // T_ij uniform on [(j-1)/12, j/12] with 1-based j.
      CHECK(s.times(j) >= j / 12.0);
      CHECK(s.times(j) <= (j + 1) / 12.0);
    }
    CHECK(s.x.cwiseAbs().maxCoeff() <= 2.5);
    CHECK((s.z.col(0).array() == 1.0).all());
  }
  CHECK(mean_m == doctest::Approx(6.0 + 6.0 * 0.65).epsilon(0.05));

  // Truth record: Sigma_i, g0(T_ij) and y = X beta + Z'g + eps.
  for (std::size_t i = 0; i < 5; ++i) {
    const auto& s = ds.subjects[i];
    CHECK((sim.truth.sigma[i] - exponential_covariance(s.times, 4.95, 0.4)).cwiseAbs().maxCoeff() == 0.0);
    for (Index j = 0; j < s.size(); ++j) CHECK((sim.truth.g_values[i].row(j).transpose() - true_g(s.times(j))).norm() == 0.0);
  }
}

TEST_CASE("mr = 0 gives constant cluster sizes") {
  SimConfig cfg;
  cfg.n = 30;
  cfg.m0 = 3;
  cfg.mr = 0;
  for (const auto& s : simulate_dataset(cfg).dataset.subjects) CHECK(s.size() == 3);
}

TEST_CASE("a fixed seed gives identical datasets") {
  SimConfig cfg;
  cfg.n = 25;
  cfg.seed = 62;
  const auto a = csv_of(simulate_dataset(cfg).dataset);
  CHECK(a == csv_of(simulate_dataset(cfg).dataset));
  cfg.seed = 63;
  CHECK(a != csv_of(simulate_dataset(cfg).dataset));
  // Subject i draws from its own stream, so a longer run shares its prefix.
  cfg.seed = 62;
  cfg.n = 40;
  const auto longer = csv_of(simulate_dataset(cfg).dataset);
  CHECK(longer.substr(0, a.size()) == a);
}

TEST_CASE("pooled error covariance matches omega rho^|s-t|") {
  // g0 = 0 and no X, so y is the error. With m = 2 the two times are uniform on
  // [0, 1/2] and [1/2, 1]; E[e1 e2] = omega E[rho^(T2 - T1)].
  SimConfig cfg;
  cfg.n = 100000;
  cfg.m0 = 2;
  cfg.mr = 0;
  cfg.rho = 0.8;
  cfg.beta0 = VectorXd(0);
  cfg.g0 = [](double) { return VectorXd::Zero(1); };
  cfg.seed = 64;
  const auto sim = simulate_dataset(cfg);
  double cross = 0.0, square = 0.0;
  for (const auto& s : sim.dataset.subjects) {
    cross += s.y(0) * s.y(1);
    square += s.y(0) * s.y(0);
  }
  cross /= cfg.n;
  square /= cfg.n;
  double expect = 0.0;
  const int k = 400;
  for (int a = 0; a < k; ++a)
    for (int b = 0; b < k; ++b) {
      const double t1 = 0.5 * (a + 0.5) / k, t2 = 0.5 + 0.5 * (b + 0.5) / k;
      expect += std::pow(0.8, t2 - t1);
    }
  expect *= 4.95 / (k * k);
  CHECK(cross == doctest::Approx(expect).epsilon(0.02));
  CHECK(square == doctest::Approx(4.95).epsilon(0.02));
}

TEST_CASE("diverging scenario") {
  SimConfig cfg;
  cfg.n = 100;
  cfg.scenario = Scenario::diverging;
  cfg.diverging_b = 1.5;
  cfg.diverging_c = 4.0;
  cfg.seed = 65;
  const auto sim = simulate_dataset(cfg);
  const Index n0 = static_cast<Index>(std::ceil(4.0 * std::pow(100.0, 3.0 / 8.0)));
  CHECK(diverging_count(cfg) == n0);
  Index dense = 0;
  for (std::size_t i = 0; i < sim.dataset.subjects.size(); ++i) {
    const auto& s = sim.dataset.subjects[i];
    if (!sim.truth.diverging[i]) continue;
    ++dense;
    CHECK(s.size() >= static_cast<Index>(std::ceil(1.5 * std::pow(100.0, 0.125) * 6)));
    CHECK(s.times(0) == 0.0);
    CHECK(s.times(s.size() - 1) == 1.0);
    CHECK(s.times(1) == doctest::Approx(1.0 / (s.size() - 1)));
  }
  CHECK(dense == n0);
  CHECK(validate(sim.dataset).empty());

  cfg.n = 10;
  CHECK(diverging_count(cfg) == 10);  // ceil(4 * 10^(3/8)) = 10, capped at n
}

TEST_CASE("invalid configurations") {
  SimConfig cfg;
  CHECK_NOTHROW(cfg.check());
  auto bad = [&](auto mutate) {
    SimConfig c;
    mutate(c);
    CHECK_THROWS_AS(simulate_dataset(c), InputError);
  };
  bad([](SimConfig& c) { c.m0 = 0; });
  bad([](SimConfig& c) { c.mr = -1; });
  bad([](SimConfig& c) { c.binom_p = 1.5; });
  bad([](SimConfig& c) { c.rho = 1.0; });
  bad([](SimConfig& c) { c.omega = 0.0; });
  bad([](SimConfig& c) { c.covariates.correlation = 1.0; });
}

TEST_CASE("random variates") {
  Rng rng(66);
  double sum = 0.0, sq = 0.0, bin = 0.0;
  const int draws = 200000;
  for (int k = 0; k < draws; ++k) {
    const double z = rng.normal();
    sum += z;
    sq += z * z;
    bin += rng.binomial(6, 0.65);
  }
  CHECK(std::abs(sum / draws) < 0.01);
  CHECK(sq / draws == doctest::Approx(1.0).epsilon(0.01));
  CHECK(bin / draws == doctest::Approx(3.9).epsilon(0.01));
  for (int k = 0; k < 1000; ++k) CHECK(rng.below(7) < 7);
  CHECK(mix_seed(1, 0) != mix_seed(1, 1));
  CHECK(mix_seed(1, 0) == mix_seed(1, 0));
}

}  // TEST_SUITE
