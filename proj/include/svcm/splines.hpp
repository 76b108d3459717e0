#ifndef SVCM_SPLINES_HPP
#define SVCM_SPLINES_HPP

#include "svcm/core.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace svcm {

/// Equispaced B-spline basis of dimension `dimension()` on [0,1] with clamped
/// (degree+1)-fold boundary knots.
///
/// Spans are half-open [k_j, k_{j+1}) except the last, which also owns t = 1,
/// so the basis has no zero row at the right endpoint.
template <typename Scalar = double>
class SplineBasis {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  SplineBasis(int dimension, int degree) : dimension_(dimension), degree_(degree) {
    if (degree < 0) throw InputError("spline degree must be >= 0");
    if (dimension < degree + 1)
      throw InputError("spline dimension " + std::to_string(dimension) +
                       " is below degree + 1 = " + std::to_string(degree + 1));
    const int spans = dimension - degree;
    knots_.resize(dimension + degree + 1);
    for (int k = 0; k < knots_.size(); ++k) {
      const int interior = std::clamp(k - degree, 0, spans);
      knots_(k) = Scalar(interior) / Scalar(spans);
    }
  }

  int dimension() const { return dimension_; }
  int degree() const { return degree_; }
  /// Full knot vector, boundary knots repeated degree+1 times.
  const Vector& knots() const { return knots_; }
  Vector interior_knots() const { return knots_.segment(degree_ + 1, dimension_ - degree_ - 1); }

  /// Index j of the knot span [knots(j), knots(j+1)) holding t.
  int span(Scalar t) const {
    const int spans = dimension_ - degree_;
    const int cell = std::min(static_cast<int>(std::floor(t * Scalar(spans))), spans - 1);
    return degree_ + std::max(cell, 0);
  }

  /// Writes the degree+1 nonzero values B_{j-d}(t) .. B_j(t) into `out` and
  /// returns j = span(t). Cox-de Boor triangular recursion.
  int nonzero(Scalar t, Scalar* out) const {
    const int j = span(t);
    const int d = degree_;
    Scalar left[32], right[32];
    out[0] = Scalar(1);
    for (int r = 1; r <= d; ++r) {
      left[r] = t - knots_(j + 1 - r);
      right[r] = knots_(j + r) - t;
      Scalar saved = Scalar(0);
      for (int s = 0; s < r; ++s) {
        const Scalar temp = out[s] / (right[s + 1] + left[r - s]);
        out[s] = saved + right[s + 1] * temp;
        saved = left[r - s] * temp;
      }
      out[r] = saved;
    }
    return j;
  }

  /// All basis functions at t in [0,1].
  Vector operator()(Scalar t) const {
    if (!(t >= Scalar(0) && t <= Scalar(1)))
      throw InputError("spline evaluation point outside [0,1]");
    Vector b = Vector::Zero(dimension_);
    Scalar vals[33];
    const int j = nonzero(t, vals);
    for (int r = 0; r <= degree_; ++r) b(j - degree_ + r) = vals[r];
    return b;
  }

  /// Row k holds B(points(k))'.
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> matrix(const Vector& points) const {
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> out(points.size(), dimension_);
    for (Eigen::Index k = 0; k < points.size(); ++k) out.row(k) = (*this)(points(k)).transpose();
    return out;
  }

 private:
  int dimension_;
  int degree_;
  Vector knots_;
};

template <typename Scalar = double>
SplineBasis<Scalar> build_basis(int kn, int degree) {
  if (degree > 30) throw InputError("spline degree above 30 is not supported");
  return SplineBasis<Scalar>(kn, degree);
}

template <typename Scalar>
typename SplineBasis<Scalar>::Vector eval_basis(const SplineBasis<Scalar>& basis, Scalar t) {
  return basis(t);
}

/// z (x) b blocked by z coordinate: entry l*K + k equals z_l * b_k.
template <typename DerivedZ, typename DerivedB>
Eigen::Matrix<typename DerivedZ::Scalar, Eigen::Dynamic, 1> design_row(
    const Eigen::MatrixBase<DerivedZ>& z, const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedZ::Scalar;
  const Eigen::Index kn = b.size();
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> out(z.size() * kn);
  for (Eigen::Index l = 0; l < z.size(); ++l) out.segment(l * kn, kn) = z(l) * b;
  return out;
}

/// Spline design rows W_ij = Z_ij (x) B(T_ij) for one subject, m x (q*K).
inline MatrixXd spline_design(const SplineBasis<double>& basis, const Subject& s) {
  const Index kn = basis.dimension();
  MatrixXd w = MatrixXd::Zero(s.size(), s.z.cols() * kn);
  double vals[33];
  for (Index j = 0; j < s.size(); ++j) {
    const int span = basis.nonzero(s.times(j), vals);
    const int first = span - basis.degree();
    for (Index l = 0; l < s.z.cols(); ++l)
      for (int r = 0; r <= basis.degree(); ++r) w(j, l * kn + first + r) = s.z(j, l) * vals[r];
  }
  return w;
}

}  // namespace svcm

#endif  // SVCM_SPLINES_HPP
