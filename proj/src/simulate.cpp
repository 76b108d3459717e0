#include "svcm/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

namespace svcm {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

int Rng::binomial(int trials, double prob) {
  if (trials <= 0 || prob <= 0.0) return 0;
  if (prob >= 1.0) return trials;
  const double u = uniform();
  double pmf = std::pow(1.0 - prob, trials);
  double cdf = pmf;
  const double odds = prob / (1.0 - prob);
  int k = 0;
  while (u >= cdf && k < trials) {
    pmf *= odds * static_cast<double>(trials - k) / static_cast<double>(k + 1);
    ++k;
    cdf += pmf;
  }
  return k;
}

std::uint64_t Rng::below(std::uint64_t bound) {
  // Rejection to avoid modulo bias.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x;
  do x = engine_();
  while (x >= limit);
  return x % bound;
}

VectorXd true_g(double t) {
  VectorXd g(4);
  g(0) = 3.5 * std::sin(2.0 * std::numbers::pi * t);
  g(1) = 5.0 * (1.0 - t) * (1.0 - t);
  g(2) = 3.5 * (std::exp(-(3.0 * t - 1.0) * (3.0 * t - 1.0)) + std::exp(-(4.0 * t - 3.0) * (4.0 * t - 3.0))) - 1.5;
  g(3) = 3.5 * std::sqrt(t);
  return g;
}

void SimConfig::check() const {
  auto fail = [](const std::string& msg) { throw InputError("simulation config: " + msg); };
  if (n < 1) fail("n must be >= 1");
  if (m0 < 1) fail("m0 must be >= 1");
  if (mr < 0) fail("mr must be >= 0");
  if (!(binom_p >= 0 && binom_p <= 1)) fail("binom_p must lie in [0,1]");
  if (!(rho >= 0 && rho < 1)) fail("rho must lie in [0,1)");
  if (!(omega > 0)) fail("omega must be > 0");
  if (!g0) fail("g0 is not set");
  if (q() < 1) fail("g0 must return at least one coefficient");
  if (covariates.truncate && !(covariates.bound > 0)) fail("covariate bound must be > 0");
  const double k = static_cast<double>(beta0.size() + q() - 1);
  if (k > 1 && !(covariates.correlation > -1.0 / (k - 1.0) && covariates.correlation < 1.0))
    fail("covariate correlation outside the positive definite range");
  if (scenario == Scenario::diverging && (!(diverging_b > 0) || !(diverging_c > 0)))
    fail("diverging B and C must be > 0");
}

MatrixXd exponential_covariance(const VectorXd& times, double omega, double rho) {
  const Index m = times.size();
  MatrixXd sigma(m, m);
  for (Index j = 0; j < m; ++j)
    for (Index k = 0; k < m; ++k) sigma(j, k) = omega * std::pow(rho, std::abs(times(j) - times(k)));
  return sigma;
}

Index diverging_count(const SimConfig& config) {
  const double n0 = std::ceil(config.diverging_c * std::pow(static_cast<double>(config.n), 3.0 / 8.0));
  return std::min<Index>(static_cast<Index>(n0), config.n);
}

namespace {

// Symmetric square root factor F with F F' = sigma.
MatrixXd covariance_factor(const MatrixXd& sigma) {
  Eigen::LLT<MatrixXd> llt(sigma);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(sigma);
  const VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal();
}

double covariate_draw(Rng& rng, const CovariateSpec& spec) {
  for (;;) {
    const double v = rng.normal();
    if (!spec.truncate || std::abs(v) <= spec.bound) return v;
  }
}

VectorXd covariate_vector(Rng& rng, const CovariateSpec& spec, const MatrixXd& corr_factor) {
  const Index k = corr_factor.rows();
  if (spec.correlation == 0.0) {
    VectorXd v(k);
    for (Index a = 0; a < k; ++a) v(a) = covariate_draw(rng, spec);
    return v;
  }
  for (;;) {
    VectorXd e(k);
    for (Index a = 0; a < k; ++a) e(a) = rng.normal();
    VectorXd v = corr_factor * e;
    if (!spec.truncate || v.cwiseAbs().maxCoeff() <= spec.bound) return v;
  }
}

}  // namespace

SimulatedData simulate_dataset(const SimConfig& config) {
  config.check();
  const Index p = config.beta0.size();
  const Index q = config.q();
  const Index k_cov = p + q - 1;
  MatrixXd corr = MatrixXd::Constant(k_cov, k_cov, config.covariates.correlation);
  corr.diagonal().setOnes();
  const MatrixXd corr_factor = k_cov > 0 ? covariance_factor(corr) : MatrixXd(0, 0);

  std::vector<bool> dense(static_cast<std::size_t>(config.n), false);
  if (config.scenario == Scenario::diverging) {
    Rng pick(mix_seed(config.seed, 0));
    std::vector<Index> ids(static_cast<std::size_t>(config.n));
    std::iota(ids.begin(), ids.end(), Index{0});
    const Index n0 = diverging_count(config);
    for (Index k = 0; k < n0; ++k) {
      const auto j = static_cast<std::size_t>(k) + pick.below(static_cast<std::uint64_t>(config.n - k));
      std::swap(ids[static_cast<std::size_t>(k)], ids[j]);
      dense[static_cast<std::size_t>(ids[static_cast<std::size_t>(k)])] = true;
    }
  }

  SimulatedData out;
  auto& ds = out.dataset;
  ds.p = p;
  ds.q = q;
  out.truth.beta0 = config.beta0;
  out.truth.diverging = dense;
  const double slots = static_cast<double>(config.m0 + config.mr);

  for (Index i = 0; i < config.n; ++i) {
    Rng rng(mix_seed(config.seed, static_cast<std::uint64_t>(i) + 1));
    Index m = config.m0 + rng.binomial(config.mr, config.binom_p);
    Subject s;
    s.id = std::to_string(i + 1);
    if (dense[static_cast<std::size_t>(i)]) {
      m = static_cast<Index>(std::ceil(config.diverging_b * std::pow(static_cast<double>(config.n), 1.0 / 8.0) *
                                       static_cast<double>(m)));
      s.times = m > 1 ? VectorXd(VectorXd::LinSpaced(m, 0.0, 1.0)) : VectorXd(VectorXd::Constant(1, 0.5));
    } else {
      s.times.resize(m);
      for (Index j = 0; j < m; ++j) s.times(j) = rng.uniform(static_cast<double>(j) / slots,
                                                              static_cast<double>(j + 1) / slots);
    }
    s.x.resize(m, p);
    s.z.resize(m, q);
    for (Index j = 0; j < m; ++j) {
      const VectorXd v = covariate_vector(rng, config.covariates, corr_factor);
      s.x.row(j) = v.head(p).transpose();
      s.z(j, 0) = 1.0;
      s.z.row(j).tail(q - 1) = v.tail(q - 1).transpose();
    }
    MatrixXd sigma = exponential_covariance(s.times, config.omega, config.rho);
    VectorXd noise(m);
    for (Index j = 0; j < m; ++j) noise(j) = rng.normal();
    const VectorXd eps = covariance_factor(sigma) * noise;

    MatrixXd g(m, q);
    for (Index j = 0; j < m; ++j) g.row(j) = config.g0(s.times(j)).transpose();
    s.y = s.x * config.beta0 + (s.z.array() * g.array()).rowwise().sum().matrix() + eps;

    out.truth.sigma.push_back(std::move(sigma));
    out.truth.g_values.push_back(std::move(g));
    ds.subjects.push_back(std::move(s));
  }
  return out;
}

void write_truth_csv(const SimulatedData& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto& ds = data.dataset;
  {
    std::ofstream out(dir / "truth.csv");
    out.precision(17);
    out << "subject,t";
    for (Index l = 1; l <= ds.q; ++l) out << ",g" << l;
    out << '\n';
    for (std::size_t i = 0; i < ds.subjects.size(); ++i) {
      const auto& s = ds.subjects[i];
      for (Index j = 0; j < s.size(); ++j) {
        out << s.id << ',' << s.times(j);
        for (Index l = 0; l < ds.q; ++l) out << ',' << data.truth.g_values[i](j, l);
        out << '\n';
      }
    }
  }
  std::ofstream out(dir / "sigma_digest.csv");
  out.precision(17);
  out << "subject,m,trace,log_det\n";
  for (std::size_t i = 0; i < ds.subjects.size(); ++i) {
    const MatrixXd& sigma = data.truth.sigma[i];
    Eigen::LLT<MatrixXd> llt(sigma);
    const double log_det = llt.info() == Eigen::Success
                               ? 2.0 * llt.matrixLLT().diagonal().array().log().sum()
                               : -std::numeric_limits<double>::infinity();
    out << ds.subjects[i].id << ',' << sigma.rows() << ',' << sigma.trace() << ',' << log_det << '\n';
  }
}

}  // namespace svcm
