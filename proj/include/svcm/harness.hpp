#ifndef SVCM_HARNESS_HPP
#define SVCM_HARNESS_HPP

#include "svcm/config.hpp"
#include "svcm/simulate.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace svcm {

enum class Variant {
  independent,   // V_i = I, sandwich SEs
  efficient,     // V_i = Sigma-hat
  oracle,        // V_i = true Sigma_i
  crude,         // Sigma-hat from the Step-1 spline residuals
  positive,      // Sigma-hat truncated at a positive eigenvalue threshold
  iterative,     // Steps 3-6 repeated to convergence
  different_h3,  // h3 = 1.5 h1
};

std::string to_string(Variant v);
std::optional<Variant> parse_variant(std::string_view name);
/// Comma-separated list; throws InputError on an unknown name.
std::vector<Variant> parse_variants(std::string_view list);

struct HarnessOptions {
  double positive_lambda = 0.05;
  double different_h3_multiplier = 1.5;
  int iterative_max_iter = 10;
  double iterative_tol = 1e-6;
  int workers = 1;
  double coverage_level = 0.95;
  double max_failure_rate = 0.2;
};

struct CoefficientSummary {
  double bias = 0.0;
  double mean_se = 0.0;
  double empirical_sd = 0.0;
  double coverage = 0.0;
};

struct VariantSummary {
  Variant variant = Variant::efficient;
  std::vector<CoefficientSummary> coefficients;
};

/// Mean over reps of the q-averaged integrated squared error.
struct MiseSummary {
  double ll_initial = 0.0;
  double ll_refined = 0.0;
  double spline_initial = 0.0;
  double spline_refined = 0.0;
};

struct VariantEstimate {
  Variant variant = Variant::efficient;
  VectorXd beta;
  VectorXd se;
};

struct RepRecord {
  Index rep = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  std::vector<VariantEstimate> estimates;
  std::optional<MiseSummary> mise;
  double h1 = 0.0, h2 = 0.0, h3 = 0.0;
  Index sigma_repairs = 0;
  Index subjects = 0;
};

struct McSummary {
  int n = 0;
  double rho = 0.0;
  Index reps = 0;
  Index failed = 0;
  std::vector<VariantSummary> variants;
  std::optional<MiseSummary> mise;
  std::vector<RepRecord> raw;  // one per rep, in rep order
  double runtime_seconds = 0.0;

  const VariantSummary* find(Variant v) const;
  const VariantEstimate* estimate(const RepRecord& r, Variant v) const;
};

/// Replication r simulates with seed mix_seed(sim.seed, r) and fits every
/// requested variant; failed reps are excluded and counted. Aggregation is in
/// rep order, so the summary does not depend on `workers`.
McSummary mc_study(const SimConfig& sim, int reps, const std::vector<Variant>& variants,
                   const PipelineConfig& config, const HarnessOptions& options = {});

/// Trapezoid-rule integral over `grid` of the squared error, averaged over
/// the q curves.
double integrated_squared_error(const VectorXd& grid, const MatrixXd& estimate, const MatrixXd& truth);

enum class ReportFormat { csv, markdown };

/// Bias/SE table, one row per coefficient, variant columns in request order.
/// 6 significant digits.
std::string report(const McSummary& summary, ReportFormat format);
std::string report_mise(const McSummary& summary, ReportFormat format);
/// Per-rep estimates at full precision.
std::string raw_csv(const McSummary& summary);

}  // namespace svcm

#endif  // SVCM_HARNESS_HPP
