#ifndef SVCM_SIMULATE_HPP
#define SVCM_SIMULATE_HPP

#include "svcm/core.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <vector>

namespace svcm {

/// splitmix64 finalizer applied to (seed, stream); used to derive independent
/// per-subject and per-replication seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

/// mt19937_64 with hand-rolled variate transforms, so a seed yields the same
/// draws under any standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on [0,1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Box-Muller; the second variate of each pair is kept for the next call.
  double normal();
  /// Inversion of the binomial CDF.
  int binomial(int trials, double prob);
  /// Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// g0(t) = (3.5 sin(2 pi t), 5 (1-t)^2, 3.5 (exp(-(3t-1)^2) + exp(-(4t-3)^2)) - 1.5, 3.5 sqrt(t)).
VectorXd true_g(double t);

enum class Scenario { bounded, diverging };

struct CovariateSpec {
  /// Truncate each covariate to [-bound, bound] by rejection.
  bool truncate = true;
  double bound = 2.5;
  /// Exchangeable correlation among the p + q - 1 Gaussian covariates.
  double correlation = 0.0;
};

struct SimConfig {
  int n = 100;
  int m0 = 6;
  int mr = 6;
  double binom_p = 0.65;
  double rho = 0.4;
  double omega = 4.95;
  VectorXd beta0 = (VectorXd(4) << 5.0, 5.0, -5.0, -5.0).finished();
  std::function<VectorXd(double)> g0 = true_g;
  CovariateSpec covariates;
  Scenario scenario = Scenario::bounded;
  double diverging_b = 1.5;
  double diverging_c = 4.0;
  std::uint64_t seed = 1;

  /// Throws InputError on out-of-range parameters.
  void check() const;
  Index q() const { return g0(0.0).size(); }
};

struct SimTruth {
  VectorXd beta0;
  std::vector<MatrixXd> sigma;     // omega rho^|s-t| at each subject's times
  std::vector<MatrixXd> g_values;  // m_i x q, g0(T_ij)
  std::vector<bool> diverging;     // subjects given dense grids
};

struct SimulatedData {
  LongitudinalDataset dataset;
  SimTruth truth;
};

/// omega rho^|T_j - T_k| for the given times.
MatrixXd exponential_covariance(const VectorXd& times, double omega, double rho);

/// Draws one dataset. Subject i uses its own stream mix_seed(seed, i + 1), so
/// the output does not depend on generation order.
SimulatedData simulate_dataset(const SimConfig& config);

/// Number of subjects given dense grids in the diverging scenario,
/// ceil(C n^(3/8)) capped at n.
Index diverging_count(const SimConfig& config);

/// truth.csv (subject, t, g1..gq) and sigma_digest.csv (subject, m, trace,
/// log determinant of Sigma_i).
void write_truth_csv(const SimulatedData& data, const std::filesystem::path& dir);

}  // namespace svcm

#endif  // SVCM_SIMULATE_HPP
