#ifndef SVCM_COVARIANCE_HPP
#define SVCM_COVARIANCE_HPP

#include "svcm/core.hpp"
#include "svcm/smoothers.hpp"

#include <filesystem>
#include <vector>

namespace svcm {

struct EigenReport {
  Index retained = 0;
  Index zeroed = 0;
  /// Smallest and largest operator eigenvalue before truncation.
  double lambda_min = 0.0;
  double lambda_max = 0.0;
};

/// Nonparametric within-subject covariance: a variance curve and a
/// spectrally truncated covariance surface on a shared equispaced grid.
struct CovarianceModel {
  VectorXd grid;
  VectorXd variance;      // sigma^2(grid), floored to stay positive
  MatrixXd raw_surface;   // smoothed sigma(s,t) before truncation
  MatrixXd surface;       // after truncation
  double lambda_l = 0.0;
  EigenReport eigen_report;
  Index variance_floored = 0;
  Index smoother_fallbacks = 0;
  Index empty_windows = 0;
  /// Mean of sigma^2(t) - sigma(t,t) over the middle half of the grid,
  /// floored at 0. With nugget_guard, Sigma-hat diagonals are kept at least
  /// this far above the surface diagonal.
  double nugget = 0.0;
  bool nugget_guard = true;

  /// Linear interpolation of the variance curve.
  double variance_at(double t) const;
  /// Bilinear interpolation of the truncated surface.
  double surface_at(double s, double t) const;
};

/// Eigen-truncation of a gridded covariance surface on [0,1]^2. Eigenvalues
/// are measured on the integral-operator scale (matrix eigenvalue times the
/// grid spacing 1/(G-1)) so the threshold does not depend on G. Components
/// with eigenvalue <= lambda_l are removed.
MatrixXd truncate_surface(const MatrixXd& surface, double lambda_l, EigenReport* report = nullptr);

struct CovarianceInputs {
  double h2 = 0.0;
  double h3 = 0.0;
  double lambda_l = 0.0;
  int grid_size = 101;
  bool nugget_guard = true;
};

/// Smooths squared residuals (bandwidth h2) and within-subject residual
/// products (bandwidth h3) on a grid, symmetrizes, and truncates.
CovarianceModel build_covariance_model(const ObservationTable& obs, const VectorXd& residuals,
                                       const CovarianceInputs& in, const SmootherOptions& opt = {});

CovarianceModel build_covariance_model(const LongitudinalDataset& dataset, const VectorXd& residuals,
                                       double h2, double h3, double lambda_l, int grid_size,
                                       const SmootherOptions& opt = {});

/// Same raw estimate, different threshold.
CovarianceModel retruncate(const CovarianceModel& model, double lambda_l);

struct SigmaMatrix {
  MatrixXd matrix;
  bool repaired = false;
  bool guarded = false;     // some diagonal entry raised to sigma(t,t) + nugget
  double lambda_min = 0.0;  // before repair
};

/// Sigma(j,j') = sigma(T_j, T_j') off the diagonal and sigma^2(T_j) on it
/// (raised to sigma(T_j,T_j) + nugget where the variance curve dips below the
/// surface, if the model's guard is on), shifted by a multiple of I when its
/// smallest eigenvalue is below pd_floor.
SigmaMatrix sigma_matrix(const CovarianceModel& model, const VectorXd& times, double pd_floor = 1e-8);

/// sigma_matrix for every subject; counts ridge repairs and guarded subjects.
std::vector<MatrixXd> materialize(const CovarianceModel& model, const LongitudinalDataset& dataset,
                                  double pd_floor, Index* repairs = nullptr, Index* guarded = nullptr);

/// variance.csv (t, sigma2) and surface.csv (G x G, first row/column are the
/// grid).
void write_covariance_csv(const CovarianceModel& model, const std::filesystem::path& dir);

}  // namespace svcm

#endif  // SVCM_COVARIANCE_HPP
