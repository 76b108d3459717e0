#include "svcm/covariance.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace svcm {

namespace {

// Cell index and fractional offset of t on an equispaced grid over [0,1].
std::pair<Index, double> locate(const VectorXd& grid, double t) {
  const Index cells = grid.size() - 1;
  const double x = std::clamp(t, 0.0, 1.0) * static_cast<double>(cells);
  const Index k = std::min<Index>(static_cast<Index>(std::floor(x)), cells - 1);
  return {k, x - static_cast<double>(k)};
}

double interior_nugget(const CovarianceModel& m) {
  double sum = 0.0;
  Index count = 0;
  for (Index k = 0; k < m.grid.size(); ++k) {
    if (m.grid(k) < 0.25 || m.grid(k) > 0.75) continue;
    sum += m.variance(k) - m.surface(k, k);
    ++count;
  }
  return count > 0 ? std::max(sum / static_cast<double>(count), 0.0) : 0.0;
}

}  // namespace

double CovarianceModel::variance_at(double t) const {
  const auto [k, f] = locate(grid, t);
  return (1.0 - f) * variance(k) + f * variance(k + 1);
}

double CovarianceModel::surface_at(double s, double t) const {
  const auto [k, a] = locate(grid, s);
  const auto [l, b] = locate(grid, t);
  return (1.0 - a) * (1.0 - b) * surface(k, l) + a * (1.0 - b) * surface(k + 1, l) +
         (1.0 - a) * b * surface(k, l + 1) + a * b * surface(k + 1, l + 1);
}

MatrixXd truncate_surface(const MatrixXd& surface, double lambda_l, EigenReport* report) {
  const Index g = surface.rows();
  const double spacing = g > 1 ? 1.0 / static_cast<double>(g - 1) : 1.0;
  const MatrixXd sym = 0.5 * (surface + surface.transpose());
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(sym);
  if (es.info() != Eigen::Success) throw NumericalError("covariance surface eigendecomposition failed");
  const VectorXd op_values = es.eigenvalues() * spacing;
  VectorXd kept = es.eigenvalues();
  Index zeroed = 0;
  for (Index k = 0; k < kept.size(); ++k) {
    if (op_values(k) <= lambda_l) {
      kept(k) = 0.0;
      ++zeroed;
    }
  }
  if (report) {
    report->retained = kept.size() - zeroed;
    report->zeroed = zeroed;
    report->lambda_min = op_values.minCoeff();
    report->lambda_max = op_values.maxCoeff();
  }
  MatrixXd out = es.eigenvectors() * kept.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (out + out.transpose());
}

CovarianceModel build_covariance_model(const ObservationTable& obs, const VectorXd& residuals,
                                       const CovarianceInputs& in, const SmootherOptions& opt) {
  if (residuals.size() != obs.n1()) throw InputError("residuals must have length N1");
  if (!(in.h2 > 0) || !(in.h3 > 0)) throw InputError("covariance bandwidths must be > 0");
  if (in.grid_size < 11) throw InputError("covariance grid needs at least 11 points");
  if (!(in.lambda_l >= 0)) throw InputError("lambda_L must be >= 0");

  CovarianceModel model;
  model.grid = unit_grid(in.grid_size);
  model.lambda_l = in.lambda_l;

  const VectorXd squared = residuals.array().square();
  model.variance = scalar_curve(obs, squared, in.h2, model.grid, opt, &model.smoother_fallbacks,
                                &model.empty_windows);
  std::vector<double> positive;
  for (Index k = 0; k < model.variance.size(); ++k)
    if (model.variance(k) > 0) positive.push_back(model.variance(k));
  double floor_value = 1e-12;
  if (!positive.empty()) {
    auto mid = positive.begin() + static_cast<std::ptrdiff_t>(positive.size() / 2);
    std::nth_element(positive.begin(), mid, positive.end());
    floor_value = std::max(floor_value, 0.05 * *mid);
  }
  for (Index k = 0; k < model.variance.size(); ++k) {
    if (model.variance(k) < floor_value) {
      model.variance(k) = floor_value;
      ++model.variance_floored;
    }
  }

  model.raw_surface = cov_surface(obs, residuals, in.h3, model.grid, opt, &model.smoother_fallbacks,
                                  &model.empty_windows);
  model.surface = truncate_surface(model.raw_surface, in.lambda_l, &model.eigen_report);
  model.nugget_guard = in.nugget_guard;
  model.nugget = interior_nugget(model);
  return model;
}

CovarianceModel build_covariance_model(const LongitudinalDataset& dataset, const VectorXd& residuals,
                                       double h2, double h3, double lambda_l, int grid_size,
                                       const SmootherOptions& opt) {
  if (dataset.n2() < 1) throw InputError("covariance estimation needs at least one within-subject pair");
  return build_covariance_model(flatten(dataset), residuals, CovarianceInputs{h2, h3, lambda_l, grid_size},
                                opt);
}

CovarianceModel retruncate(const CovarianceModel& model, double lambda_l) {
  if (!(lambda_l >= 0)) throw InputError("lambda_L must be >= 0");
  CovarianceModel out = model;
  out.lambda_l = lambda_l;
  out.surface = truncate_surface(model.raw_surface, lambda_l, &out.eigen_report);
  out.nugget = interior_nugget(out);
  return out;
}

SigmaMatrix sigma_matrix(const CovarianceModel& model, const VectorXd& times, double pd_floor) {
  const Index m = times.size();
  SigmaMatrix out;
  out.matrix.resize(m, m);
  for (Index j = 0; j < m; ++j) {
    out.matrix(j, j) = model.variance_at(times(j));
    if (model.nugget_guard) {
      const double lift = model.surface_at(times(j), times(j)) + model.nugget;
      if (lift > out.matrix(j, j)) {
        out.matrix(j, j) = lift;
        out.guarded = true;
      }
    }
    for (Index k = j + 1; k < m; ++k) out.matrix(j, k) = out.matrix(k, j) = model.surface_at(times(j), times(k));
  }
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(out.matrix, Eigen::EigenvaluesOnly);
  out.lambda_min = es.eigenvalues().minCoeff();
  if (out.lambda_min < pd_floor) {
    out.matrix.diagonal().array() += pd_floor - out.lambda_min;
    out.repaired = true;
  }
  return out;
}

std::vector<MatrixXd> materialize(const CovarianceModel& model, const LongitudinalDataset& dataset,
                                  double pd_floor, Index* repairs, Index* guarded) {
  std::vector<MatrixXd> out;
  out.reserve(dataset.subjects.size());
  for (const auto& s : dataset.subjects) {
    auto sm = sigma_matrix(model, s.times, pd_floor);
    if (sm.repaired && repairs) ++*repairs;
    if (sm.guarded && guarded) ++*guarded;
    out.push_back(std::move(sm.matrix));
  }
  return out;
}

void write_covariance_csv(const CovarianceModel& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "variance.csv");
    out.precision(17);
    out << "t,sigma2\n";
    for (Index k = 0; k < model.grid.size(); ++k) out << model.grid(k) << ',' << model.variance(k) << '\n';
  }
  std::ofstream out(dir / "surface.csv");
  out.precision(17);
  out << "s\\t";
  for (Index l = 0; l < model.grid.size(); ++l) out << ',' << model.grid(l);
  out << '\n';
  for (Index k = 0; k < model.grid.size(); ++k) {
    out << model.grid(k);
    for (Index l = 0; l < model.grid.size(); ++l) out << ',' << model.surface(k, l);
    out << '\n';
  }
}

}  // namespace svcm
