#ifndef SVCM_PIPELINE_HPP
#define SVCM_PIPELINE_HPP

#include "svcm/config.hpp"
#include "svcm/core.hpp"
#include "svcm/covariance.hpp"
#include "svcm/gee.hpp"
#include "svcm/smoothers.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace svcm {

struct PipelineDiagnostics {
  Index sigma_repairs = 0;       // subjects whose Sigma_i needed the pd_floor shift (last pass)
  Index smoother_fallbacks = 0;  // local-constant fallbacks across all smoothers
  Index empty_windows = 0;       // grid points filled from a neighbour
  Index variance_floored = 0;
  Index nugget_guarded = 0;      // subjects with a diagonal raised by the nugget guard (last pass)
  std::vector<std::string> notes;
};

/// Pointwise confidence bands for varying-coefficient curves.
struct CurveBands {
  VectorXd grid;
  MatrixXd estimate;
  MatrixXd half_width;
  MatrixXd lower;
  MatrixXd upper;
  double level = 0.95;
  Index singular_points = 0;  // NaN rows where Lambda_1(t) was singular
};

struct EfficientFitResult {
  Index p = 0;
  Index q = 0;
  int spline_dimension = 0;

  VectorXd beta_init;  // working independence
  VectorXd se_init;    // sandwich
  VectorXd beta_eff;   // Sigma-hat weights
  VectorXd se_eff;     // model-based

  GeeFit fit_init;
  GeeFit fit_eff;

  CurveEstimate g_ll_init;         // local linear with beta_init
  CurveEstimate g_ll_updated;      // local linear with beta_eff
  CurveEstimate g_spline_init;     // spline part of the independence fit
  CurveEstimate g_spline_updated;  // spline refit with beta_eff and Sigma-hat
  CurveBands bands;                // around g_ll_updated

  CovarianceModel covariance_model;
  std::vector<MatrixXd> sigma_hats;
  VectorXd residuals;  // residuals fed to the last covariance estimate

  double h1 = 0.0;
  double h2 = 0.0;
  double h3 = 0.0;
  std::optional<CvResult> cv_h1;
  std::optional<CvResult> cv_h2;
  int iterations = 0;
  PipelineDiagnostics diagnostics;
};

/// Working-independence fit, local-linear curve, residuals, variance and
/// covariance smoothing, Sigma-hat weighted refit, and updated curves.
/// Errors are rethrown with the failing step number prefixed.
EfficientFitResult efficient_fit(const LongitudinalDataset& dataset, const PipelineConfig& config);

struct OracleFit {
  GeeFit fit;
  VectorXd beta;
  VectorXd se;
};

/// GEE spline fit weighted by externally supplied (true) covariances, with
/// model-based SEs under those covariances. For simulations.
OracleFit oracle_fit(const LongitudinalDataset& dataset, const PipelineConfig& config,
                     const std::vector<MatrixXd>& true_sigma);

/// Local-linear curves from pseudo-responses Y - X beta.
CurveEstimate update_g_local(const LongitudinalDataset& dataset, const VectorXd& beta, double h1,
                             const VectorXd& grid, const SmootherOptions& opt = {});

/// Spline curves from the gamma-only normal equations with beta fixed and
/// V_i = sigma_hats[i].
CurveEstimate spline_g_refit(const LongitudinalDataset& dataset, const SplineBasis<double>& basis,
                             const VectorXd& beta, const std::vector<MatrixXd>& sigma_hats,
                             const VectorXd& grid);

/// Plug-in pointwise bands: half-width z * sqrt(nu0 [L1^-1 L2 L1^-1]_ll / (N1 h1))
/// with L1 = kernel-weighted mean of Z Z' and L2 the same weighted by
/// variance(T_ij). No bias correction. With `strict`, a singular L1 at any
/// grid point throws; otherwise that row is NaN and counted.
CurveBands pointwise_ci_g(const LongitudinalDataset& dataset, const CurveEstimate& curve,
                          const std::function<double(double)>& variance, double h1, double level,
                          const Kernel& kernel = Kernel::epanechnikov(), bool strict = true);

/// Standard normal quantile.
double normal_quantile(double p);

}  // namespace svcm

#endif  // SVCM_PIPELINE_HPP
