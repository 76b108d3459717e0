#include "svcm/pipeline.hpp"

#include <boost/math/distributions/normal.hpp>

#include <cmath>
#include <limits>

namespace svcm {

namespace {

template <typename F>
auto run_step(int step, F&& body) {
  try {
    return body();
  } catch (const NumericalError& e) {
    throw NumericalError("step " + std::to_string(step) + ": " + e.what());
  } catch (const InputError& e) {
    throw InputError("step " + std::to_string(step) + ": " + e.what());
  }
}

double choose_bandwidth(const BandwidthChoice& choice, const ObservationTable& obs, const VectorXd& target,
                        SmootherKind kind, int grid_size, const SmootherOptions& opt,
                        std::optional<CvResult>& record) {
  if (choice.fixed) return *choice.fixed;
  const auto candidates =
      choice.candidates.empty() ? default_bandwidth_grid(obs, grid_size) : choice.candidates;
  record = loso_cv(obs, target, candidates, kind, opt);
  return record->bandwidth;
}

VectorXd pseudo_responses(const ObservationTable& obs, const VectorXd& beta) { return obs.y - obs.x * beta; }

}  // namespace

double normal_quantile(double p) {
  return boost::math::quantile(boost::math::normal_distribution<double>(0.0, 1.0), p);
}

EfficientFitResult efficient_fit(const LongitudinalDataset& dataset, const PipelineConfig& config) {
  config.check();
  run_step(0, [&] {
    require_valid(dataset);
    if (dataset.n() < 2) throw InputError("efficient fit needs at least two subjects");
    if (dataset.n2() < 1) throw InputError("efficient fit needs at least one subject with m_i >= 2");
    return 0;
  });

  const ObservationTable obs = flatten(dataset);
  SmootherOptions opt;
  opt.ridge_eps = config.ridge_eps;
  const VectorXd curve_grid = unit_grid(config.curve_grid_size);

  EfficientFitResult res;
  res.p = dataset.p;
  res.q = dataset.q;
  res.spline_dimension = config.spline_dimension(static_cast<long>(dataset.n()));
  const auto basis = build_basis(res.spline_dimension, config.spline_degree);

  // Step 1: working independence.
  res.fit_init = run_step(1, [&] { return gee_spline_fit(dataset, basis, IdentityWeights{}); });
  res.beta_init = res.fit_init.beta;
  res.g_spline_init = gamma_to_curves(res.fit_init, curve_grid);

  // Step 2: local-linear curves from Y - X beta_I.
  const VectorXd pseudo_init = pseudo_responses(obs, res.beta_init);
  res.h1 = run_step(2, [&] {
    return choose_bandwidth(config.h1, obs, pseudo_init, SmootherKind::varying_coefficient, config.cv_grid_size,
                            opt, res.cv_h1);
  });
  res.g_ll_init = run_step(2, [&] { return vc_curve(obs, pseudo_init, res.h1, curve_grid, opt); });
  res.h3 = config.h3 ? *config.h3 : config.h3_multiplier * res.h1;

  // Step 3: residuals.
  VectorXd residuals = run_step(3, [&]() -> VectorXd {
    if (config.residual_source == ResidualSource::spline) return res.fit_init.residuals;
    return pseudo_init - vc_fitted(obs, pseudo_init, res.h1, opt, &res.diagnostics.smoother_fallbacks);
  });

  const VectorXd squared = residuals.array().square();
  res.h2 = run_step(4, [&] {
    return choose_bandwidth(config.h2, obs, squared, SmootherKind::variance, config.cv_grid_size, opt, res.cv_h2);
  });

  VectorXd beta_prev;
  for (int pass = 1; pass <= config.max_iter; ++pass) {
    if (pass > 1) {
      // Steps 3-6 again from the latest beta and local-linear curve.
      residuals = run_step(3, [&]() -> VectorXd {
        const VectorXd pseudo = pseudo_responses(obs, res.beta_eff);
        return pseudo - vc_fitted(obs, pseudo, res.h1, opt, &res.diagnostics.smoother_fallbacks);
      });
    }
    // Steps 4-5.
    res.covariance_model = run_step(5, [&] {
      return build_covariance_model(obs, residuals, CovarianceInputs{res.h2, res.h3, config.lambda_l,
                                                                    config.cov_grid_size, config.nugget_guard},
                                    opt);
    });
    res.residuals = residuals;

    // Step 6.
    res.diagnostics.sigma_repairs = 0;
    res.diagnostics.nugget_guarded = 0;
    res.sigma_hats = materialize(res.covariance_model, dataset, config.pd_floor, &res.diagnostics.sigma_repairs,
                                 &res.diagnostics.nugget_guarded);
    res.fit_eff = run_step(6, [&] { return gee_spline_fit(dataset, basis, ExplicitWeights{res.sigma_hats}); });
    beta_prev = pass > 1 ? res.beta_eff : res.beta_init;
    res.beta_eff = res.fit_eff.beta;
    res.iterations = pass;
    if (pass == 1) {
      res.se_eff = run_step(6, [&] { return beta_se(res.fit_eff, dataset, res.sigma_hats, SeMode::model); });
      res.se_init = run_step(6, [&] { return beta_se(res.fit_init, dataset, res.sigma_hats, SeMode::sandwich); });
    } else {
      res.se_eff = run_step(6, [&] { return beta_se(res.fit_eff, dataset, res.sigma_hats, SeMode::model); });
      const double change = (res.beta_eff - beta_prev).norm() / std::max(beta_prev.norm(), 1e-300);
      if (change < config.iter_tol) break;
    }
  }
  res.diagnostics.smoother_fallbacks += res.covariance_model.smoother_fallbacks;
  res.diagnostics.empty_windows += res.covariance_model.empty_windows;
  res.diagnostics.variance_floored = res.covariance_model.variance_floored;
  if (res.diagnostics.sigma_repairs > 0)
    res.diagnostics.notes.push_back(std::to_string(res.diagnostics.sigma_repairs) +
                                    " subject covariance matrices needed the pd_floor ridge repair");
  if (res.covariance_model.eigen_report.retained == 0)
    res.diagnostics.notes.push_back("covariance surface truncated to zero (degenerate residuals)");

  // Step 7.
  const VectorXd pseudo_eff = pseudo_responses(obs, res.beta_eff);
  res.g_ll_updated = run_step(7, [&] { return vc_curve(obs, pseudo_eff, res.h1, curve_grid, opt); });
  res.diagnostics.smoother_fallbacks += res.g_ll_init.fallbacks + res.g_ll_updated.fallbacks;
  res.diagnostics.empty_windows += res.g_ll_init.empty_windows + res.g_ll_updated.empty_windows;
  res.g_spline_updated =
      run_step(7, [&] { return spline_g_refit(dataset, basis, res.beta_eff, res.sigma_hats, curve_grid); });
  const auto& model = res.covariance_model;
  res.bands = run_step(7, [&] {
    return pointwise_ci_g(dataset, res.g_ll_updated, [&model](double t) { return model.variance_at(t); }, res.h1,
                          config.ci_level, opt.kernel, false);
  });
  return res;
}

OracleFit oracle_fit(const LongitudinalDataset& dataset, const PipelineConfig& config,
                     const std::vector<MatrixXd>& true_sigma) {
  config.check();
  const auto basis = build_basis(config.spline_dimension(static_cast<long>(dataset.n())), config.spline_degree);
  OracleFit out;
  out.fit = gee_spline_fit(dataset, basis, ExplicitWeights{true_sigma});
  out.beta = out.fit.beta;
  out.se = beta_se(out.fit, dataset, true_sigma, SeMode::model);
  return out;
}

CurveEstimate update_g_local(const LongitudinalDataset& dataset, const VectorXd& beta, double h1,
                             const VectorXd& grid, const SmootherOptions& opt) {
  if (beta.size() != dataset.p) throw InputError("update_g_local: beta length must be p");
  const auto obs = flatten(dataset);
  return local_linear_vc(dataset, pseudo_responses(obs, beta), h1, grid, opt);
}

CurveEstimate spline_g_refit(const LongitudinalDataset& dataset, const SplineBasis<double>& basis,
                             const VectorXd& beta, const std::vector<MatrixXd>& sigma_hats, const VectorXd& grid) {
  const VectorXd gamma = gamma_given_beta(dataset, basis, beta, ExplicitWeights{sigma_hats});
  return gamma_to_curves(basis, gamma, dataset.q, grid);
}

CurveBands pointwise_ci_g(const LongitudinalDataset& dataset, const CurveEstimate& curve,
                          const std::function<double(double)>& variance, double h1, double level,
                          const Kernel& kernel, bool strict) {
  if (!(level > 0 && level < 1)) throw InputError("confidence level must lie in (0,1)");
  if (!(h1 > 0)) throw InputError("bandwidth must be > 0");
  const auto obs = flatten(dataset);
  const Index q = obs.q();
  const double n1h = static_cast<double>(obs.n1()) * h1;
  const double z = normal_quantile(0.5 * (1.0 + level));

  VectorXd sigma2(obs.n1());
  for (Index o = 0; o < obs.n1(); ++o) sigma2(o) = variance(obs.t(o));

  CurveBands out;
  out.level = level;
  out.grid = curve.grid;
  out.estimate = curve.values;
  out.half_width.resize(curve.grid.size(), q);
  for (Index k = 0; k < curve.grid.size(); ++k) {
    const double t = curve.grid(k);
    MatrixXd l1 = MatrixXd::Zero(q, q), l2 = MatrixXd::Zero(q, q);
    const auto [first, last] = obs.window(t - h1 * kernel.radius, t + h1 * kernel.radius);
    for (Index w = first; w < last; ++w) {
      const Index o = obs.by_time[static_cast<std::size_t>(w)];
      const double kw = kernel((obs.t(o) - t) / h1);
      if (kw == 0.0) continue;
      const VectorXd zo = obs.z.row(o).transpose();
      l1.noalias() += kw * zo * zo.transpose();
      l2.noalias() += (kw * sigma2(o)) * zo * zo.transpose();
    }
    l1 /= n1h;
    l2 /= n1h;
    Eigen::LDLT<MatrixXd> ldlt(l1);
    const VectorXd d = ldlt.vectorD();
    const bool singular = ldlt.info() != Eigen::Success || d.size() == 0 || !(d.minCoeff() > 1e-12 * d.cwiseAbs().maxCoeff());
    if (singular) {
      if (strict)
        throw NumericalError("pointwise_ci_g: Lambda_1 singular at t = " + std::to_string(t));
      out.half_width.row(k).setConstant(std::numeric_limits<double>::quiet_NaN());
      ++out.singular_points;
      continue;
    }
    const MatrixXd l1_inv_l2 = ldlt.solve(l2);
    const MatrixXd psi = ldlt.solve(l1_inv_l2.transpose());
    for (Index l = 0; l < q; ++l) out.half_width(k, l) = z * std::sqrt(kernel.nu0 * std::max(psi(l, l), 0.0) / n1h);
  }
  out.lower = out.estimate - out.half_width;
  out.upper = out.estimate + out.half_width;
  return out;
}

}  // namespace svcm
