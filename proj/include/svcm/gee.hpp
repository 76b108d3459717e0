#ifndef SVCM_GEE_HPP
#define SVCM_GEE_HPP

#include "svcm/core.hpp"
#include "svcm/covariance.hpp"
#include "svcm/smoothers.hpp"
#include "svcm/splines.hpp"

#include <variant>
#include <vector>

namespace svcm {

/// V_i = I.
struct IdentityWeights {};

/// Caller-supplied symmetric positive definite V_i, one per subject.
struct ExplicitWeights {
  std::vector<MatrixXd> matrices;
};

/// V_i = Sigma_i materialized from a covariance model.
struct ModelWeights {
  const CovarianceModel* model = nullptr;
  double pd_floor = 1e-8;
};

using WeightSpec = std::variant<IdentityWeights, ExplicitWeights, ModelWeights>;

/// Identity-link GEE spline fit. theta = (beta, gamma) minimizes
/// sum_i (Y_i - X_i beta - W_i gamma)' V_i^{-1} (Y_i - X_i beta - W_i gamma)
/// with W_ij = Z_ij (x) B(T_ij).
struct GeeFit {
  VectorXd beta;
  VectorXd gamma;  // q blocks of length K
  MatrixXd h11, h12, h22;  // sum X'V^-1 X, X'V^-1 W, W'V^-1 W
  MatrixXd h11_dot2;       // h11 - h12 h22^-1 h21
  SplineBasis<double> basis{4, 3};
  VectorXd residuals;      // stacked Y - X beta - W gamma
  bool identity_weights = true;
  Index weight_repairs = 0;  // ModelWeights subjects needing the pd_floor shift
};

/// Block elimination: gamma from h22 given beta, beta from h11_dot2.
/// Throws NumericalError on rank deficiency (pivot < 1e-10 of the largest).
GeeFit gee_spline_fit(const LongitudinalDataset& dataset, const SplineBasis<double>& basis,
                      const WeightSpec& weights = IdentityWeights{});

/// Sigma_i^{-1/2}-whitened estimating equations at the fit:
/// (sum X'V^-1 r, sum W'V^-1 r), stacked.
VectorXd estimating_equations(const LongitudinalDataset& dataset, const GeeFit& fit,
                              const WeightSpec& weights);

enum class SeMode {
  model,     // (sum U' Sigma^-1 U)^-1
  sandwich,  // (sum U'U)^-1 (sum U' Sigma U) (sum U'U)^-1
};

/// Square roots of the first p diagonal entries of the chosen covariance
/// matrix, U_i = (X_i, W_i). Throws NumericalError when the inner matrix is
/// not positive definite.
VectorXd beta_se(const GeeFit& fit, const LongitudinalDataset& dataset,
                 const std::vector<MatrixXd>& sigma, SeMode mode);

/// Curve l at t is gamma block l dotted with B(t).
CurveEstimate gamma_to_curves(const GeeFit& fit, const VectorXd& eval_points);
CurveEstimate gamma_to_curves(const SplineBasis<double>& basis, const VectorXd& gamma, Index q,
                              const VectorXd& eval_points);

/// gamma solving h22 gamma = sum W' V^-1 (Y - X beta) with beta held fixed.
VectorXd gamma_given_beta(const LongitudinalDataset& dataset, const SplineBasis<double>& basis,
                          const VectorXd& beta, const WeightSpec& weights);

}  // namespace svcm

#endif  // SVCM_GEE_HPP
