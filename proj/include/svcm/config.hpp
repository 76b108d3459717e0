#ifndef SVCM_CONFIG_HPP
#define SVCM_CONFIG_HPP

#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace svcm {

/// Either a fixed bandwidth or leave-one-subject-out CV over `candidates`.
/// An empty candidate list means the default rule-of-thumb grid.
struct BandwidthChoice {
  std::optional<double> fixed;
  std::vector<double> candidates;

  static BandwidthChoice cv() { return {}; }
  static BandwidthChoice value(double h) { return {h, {}}; }
};

/// Source of the residuals fed to the variance and covariance smoothers.
enum class ResidualSource {
  local_linear,  // Y - X'beta_I - Z'g(T) with the local-linear g
  spline,        // Y - X'beta_I - W'gamma_I straight from the working-independence fit ("crude")
};

struct PipelineConfig {
  int spline_degree = 3;
  std::optional<int> kn;  // explicit spline dimension; otherwise floor(c_k * n^(1/5))
  double c_k = 2.0;
  BandwidthChoice h1;
  BandwidthChoice h2;
  double h3_multiplier = 2.0;
  std::optional<double> h3;  // fixed h3 overrides the multiplier
  double lambda_l = 0.0;
  int cov_grid_size = 101;
  int curve_grid_size = 201;
  int cv_grid_size = 10;
  double ridge_eps = 1e-10;
  double pd_floor = 1e-8;
  /// Keep Sigma-hat diagonals at least `nugget` above the surface diagonal.
  bool nugget_guard = true;
  int max_iter = 1;
  double iter_tol = 1e-6;
  ResidualSource residual_source = ResidualSource::local_linear;
  double ci_level = 0.95;

  /// Spline dimension for n subjects, never below degree + 1.
  int spline_dimension(long n) const;

  /// Throws InputError on out-of-range values.
  void check() const;
};

/// Applies one `key=value` setting. Unknown keys and bad values throw
/// InputError.
void apply_setting(PipelineConfig& config, const std::string& key, const std::string& value);

/// Reads a flat key=value file; `#` starts a comment.
std::vector<std::pair<std::string, std::string>> read_key_values(std::istream& in);

PipelineConfig parse_config(std::istream& in, PipelineConfig base = {});

/// Every field as key=value, in a fixed order; feeding the result back through
/// apply_setting reproduces the config.
std::vector<std::pair<std::string, std::string>> to_key_values(const PipelineConfig& config);

}  // namespace svcm

#endif  // SVCM_CONFIG_HPP
