#ifndef SVCM_TESTS_SUPPORT_HPP
#define SVCM_TESTS_SUPPORT_HPP

// Test-side reference implementations. These deliberately avoid the library's
// own machinery (flattened tables, block elimination, de Boor triangle) so
// that agreement is evidence, not tautology.

#include "svcm/core.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

namespace svcm::testing {

inline double epan(double u) { return std::abs(u) <= 1.0 ? 0.75 * (1.0 - u * u) : 0.0; }

/// n subjects with m_i uniform in [m_lo, m_hi], uniform times, Gaussian
/// covariates, z(:,0) = 1 and y from the given mean plus N(0, noise^2).
inline LongitudinalDataset random_dataset(int n, int m_lo, int m_hi, Index p, Index q, std::uint64_t seed,
                                          double noise = 1.0,
                                          const std::function<double(const Eigen::VectorXd&, const Eigen::VectorXd&,
                                                                     double)>& mean = nullptr) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> norm(0.0, 1.0);
  std::uniform_int_distribution<int> size(m_lo, m_hi);
  LongitudinalDataset ds;
  ds.p = p;
  ds.q = q;
  for (int i = 0; i < n; ++i) {
    Subject s;
    s.id = "s" + std::to_string(i);
    const int m = size(gen);
    s.times.resize(m);
    s.y.resize(m);
    s.x.resize(m, p);
    s.z.resize(m, q);
    for (int j = 0; j < m; ++j) {
      s.times(j) = unif(gen);
      for (Index k = 0; k < p; ++k) s.x(j, k) = norm(gen);
      s.z(j, 0) = 1.0;
      for (Index l = 1; l < q; ++l) s.z(j, l) = norm(gen);
      const double mu = mean ? mean(s.x.row(j).transpose(), s.z.row(j).transpose(), s.times(j)) : 0.0;
      s.y(j) = mu + noise * norm(gen);
    }
    ds.subjects.push_back(std::move(s));
  }
  return ds;
}

/// Concatenation of a per-subject quantity in dataset order.
inline Eigen::VectorXd stack(const LongitudinalDataset& ds, const std::function<double(const Subject&, Index)>& f) {
  std::vector<double> v;
  for (const auto& s : ds.subjects)
    for (Index j = 0; j < s.size(); ++j) v.push_back(f(s, j));
  return Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Index>(v.size()));
}

/// Textbook Cox-de Boor recursion on an explicit knot vector, with the last
/// nonempty span closed on the right.
inline double cox_de_boor(const std::vector<double>& knots, int i, int d, double t) {
  if (d == 0) {
    const double a = knots[i], b = knots[i + 1];
    if (a == b) return 0.0;
    const bool last = b == knots.back();
    return (t >= a && (t < b || (last && t == b))) ? 1.0 : 0.0;
  }
  double out = 0.0;
  const double l = knots[i + d] - knots[i];
  const double r = knots[i + d + 1] - knots[i + 1];
  if (l > 0) out += (t - knots[i]) / l * cox_de_boor(knots, i, d - 1, t);
  if (r > 0) out += (knots[i + d + 1] - t) / r * cox_de_boor(knots, i + 1, d - 1, t);
  return out;
}

inline std::vector<double> clamped_knots(int kn, int d) {
  std::vector<double> k;
  const int spans = kn - d;
  for (int r = 0; r < d; ++r) k.push_back(0.0);
  for (int r = 0; r <= spans; ++r) k.push_back(static_cast<double>(r) / spans);
  for (int r = 0; r < d; ++r) k.push_back(1.0);
  return k;
}

/// Stacked design [X W] of one subject from the reference spline evaluation.
inline Eigen::MatrixXd reference_design(const Subject& s, int kn, int d) {
  const auto knots = clamped_knots(kn, d);
  const Index p = s.x.cols(), q = s.z.cols();
  Eigen::MatrixXd u(s.size(), p + q * kn);
  u.leftCols(p) = s.x;
  for (Index j = 0; j < s.size(); ++j)
    for (Index l = 0; l < q; ++l)
      for (int k = 0; k < kn; ++k) u(j, p + l * kn + k) = s.z(j, l) * cox_de_boor(knots, k, d, s.times(j));
  return u;
}

}  // namespace svcm::testing

#endif  // SVCM_TESTS_SUPPORT_HPP
