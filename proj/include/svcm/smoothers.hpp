#ifndef SVCM_SMOOTHERS_HPP
#define SVCM_SMOOTHERS_HPP

#include "svcm/core.hpp"

#include <functional>
#include <limits>
#include <vector>

namespace svcm {

/// Symmetric compactly supported kernel density.
struct Kernel {
  double (*density)(double) = nullptr;
  double radius = 1.0;
  double nu0 = 0.0;  // integral of K^2
  double mu2 = 0.0;  // integral of u^2 K

  double operator()(double u) const { return density(u); }

  /// K(u) = 0.75 (1 - u^2) on |u| <= 1.
  static Kernel epanechnikov();
};

/// A vector of curves on a grid, plus an evaluator valid anywhere in [0,1].
struct CurveEstimate {
  VectorXd grid;
  MatrixXd values;  // |grid| x q
  std::function<VectorXd(double)> evaluator;
  /// Grid points where the local-linear system was singular and the
  /// local-constant fit was used instead.
  Index fallbacks = 0;
  /// Grid points whose kernel window was empty; filled from the nearest
  /// estimable grid point.
  Index empty_windows = 0;

  VectorXd operator()(double t) const { return evaluator(t); }
};

/// Equispaced grid of `size` points on [0,1].
VectorXd unit_grid(Index size);

struct SmootherOptions {
  Kernel kernel = Kernel::epanechnikov();
  double ridge_eps = 1e-10;
  /// Ridge-regularized systems with a larger condition estimate fall back to
  /// the local-constant fit.
  double max_condition = 1e12;
};

enum class LocalStatus { ok, fallback, empty };

/// Result of one local fit. `value` is empty when status == empty.
struct LocalFit {
  VectorXd value;
  LocalStatus status = LocalStatus::ok;
};

// Point fits on a flattened table. `exclude_subject` drops one subject's
// observations (leave-one-subject-out). They never throw.

/// Local-linear varying-coefficient fit at t: level part of the 2q x 2q
/// kernel-weighted system with regressors Z (x) (1, (T - t)/h).
LocalFit vc_fit_at(const ObservationTable& obs, const VectorXd& pseudo, double h, double t,
                   const SmootherOptions& opt = {}, Index exclude_subject = -1);

/// Local-linear fit of per-observation `target` against time at t.
LocalFit scalar_fit_at(const ObservationTable& obs, const VectorXd& target, double h, double t,
                       const SmootherOptions& opt = {}, Index exclude_subject = -1);

/// Local-plane fit of within-subject products e_ij e_ij' (j != j') at (s, t).
/// Evaluated with s <= t canonical ordering, so the result is exactly
/// symmetric in (s, t).
LocalFit cov_fit_at(const ObservationTable& obs, const VectorXd& residuals, double h, double s,
                    double t, const SmootherOptions& opt = {});

// Operations on datasets. These throw NumericalError on an empty kernel window.

CurveEstimate local_linear_vc(const LongitudinalDataset& dataset, const VectorXd& pseudo, double h,
                              const VectorXd& eval_points, const SmootherOptions& opt = {});

double local_linear_variance(const VectorXd& residuals, const LongitudinalDataset& dataset, double h,
                             double t, const SmootherOptions& opt = {});

double local_linear_cov2d(const VectorXd& residuals, const LongitudinalDataset& dataset, double h,
                          double s, double t, const SmootherOptions& opt = {});

/// Varying-coefficient curves on `grid`. Unlike local_linear_vc, empty
/// windows are filled from the nearest estimable grid point and counted.
/// The evaluator recomputes the smoother at arbitrary t.
CurveEstimate vc_curve(const ObservationTable& obs, const VectorXd& pseudo, double h,
                       const VectorXd& grid, const SmootherOptions& opt = {});

/// Z_ij' g(T_ij) for every observation, fitting the smoother at each T_ij.
VectorXd vc_fitted(const ObservationTable& obs, const VectorXd& pseudo, double h,
                   const SmootherOptions& opt = {}, Index* fallbacks = nullptr);

/// Local-linear fit of `target` on `grid` with the same nearest-fill policy.
VectorXd scalar_curve(const ObservationTable& obs, const VectorXd& target, double h,
                      const VectorXd& grid, const SmootherOptions& opt = {},
                      Index* fallbacks = nullptr, Index* empty = nullptr);

/// Covariance surface on grid x grid via pair scatter; exactly symmetric.
/// Empty cells are filled from the nearest estimable cell and counted.
MatrixXd cov_surface(const ObservationTable& obs, const VectorXd& residuals, double h,
                     const VectorXd& grid, const SmootherOptions& opt = {},
                     Index* fallbacks = nullptr, Index* empty = nullptr);

enum class SmootherKind { varying_coefficient, variance };

struct CvResult {
  double bandwidth = 0.0;
  std::vector<double> candidates;
  std::vector<double> scores;  // +inf where some held-out fit was impossible
};

/// Leave-one-subject-out CV. For varying_coefficient the target is `pseudo`
/// and the held-out prediction Z_ij' g^(-i)(T_ij); for variance the target is
/// `pseudo` itself (pass squared residuals). Ties go to the smaller bandwidth.
CvResult loso_cv(const ObservationTable& obs, const VectorXd& pseudo,
                 const std::vector<double>& candidates, SmootherKind kind,
                 const SmootherOptions& opt = {});

CvResult loso_cv(const LongitudinalDataset& dataset, const VectorXd& pseudo,
                 const std::vector<double>& candidates, SmootherKind kind,
                 const SmootherOptions& opt = {});

/// `count` geometric values spanning [0.5, 3] times 1.06 sd(T) N1^(-1/5).
std::vector<double> default_bandwidth_grid(const ObservationTable& obs, int count = 10);

}  // namespace svcm

#endif  // SVCM_SMOOTHERS_HPP
