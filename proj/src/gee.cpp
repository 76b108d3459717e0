#include "svcm/gee.hpp"

#include <cmath>
#include <memory>
#include <sstream>

namespace svcm {

namespace {

constexpr double kRankTolerance = 1e-10;

// Cholesky factor of V_i for each subject, or nothing for identity weights.
class Whitener {
 public:
  Whitener(const LongitudinalDataset& dataset, const WeightSpec& weights) {
    if (std::holds_alternative<IdentityWeights>(weights)) return;
    identity_ = false;
    if (const auto* e = std::get_if<ExplicitWeights>(&weights)) {
      if (e->matrices.size() != dataset.subjects.size())
        throw InputError("explicit weights: one matrix per subject required");
      for (std::size_t i = 0; i < e->matrices.size(); ++i) add(dataset, i, e->matrices[i]);
    } else {
      const auto& mw = std::get<ModelWeights>(weights);
      if (!mw.model) throw InputError("model weights: no covariance model");
      for (std::size_t i = 0; i < dataset.subjects.size(); ++i) {
        auto sm = sigma_matrix(*mw.model, dataset.subjects[i].times, mw.pd_floor);
        if (sm.repaired) ++repairs_;
        add(dataset, i, sm.matrix);
      }
    }
  }

  bool identity() const { return identity_; }
  Index repairs() const { return repairs_; }

  /// L^{-1} a for subject i, where V_i = L L'.
  MatrixXd apply(std::size_t i, const MatrixXd& a) const {
    if (identity_) return a;
    return factors_[i].matrixL().solve(a);
  }

 private:
  void add(const LongitudinalDataset& dataset, std::size_t i, const MatrixXd& v) {
    const Index m = dataset.subjects[i].size();
    const auto& id = dataset.subjects[i].id;
    if (v.rows() != m || v.cols() != m)
      throw InputError("weight matrix for subject '" + id + "' has the wrong size");
    if ((v - v.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, v.cwiseAbs().maxCoeff()))
      throw InputError("weight matrix for subject '" + id + "' is not symmetric");
    Eigen::LLT<MatrixXd> llt(v);
    if (llt.info() != Eigen::Success)
      throw NumericalError("weight matrix for subject '" + id + "' is not positive definite");
    factors_.push_back(std::move(llt));
  }

  bool identity_ = true;
  Index repairs_ = 0;
  std::vector<Eigen::LLT<MatrixXd>> factors_;
};

// Pivoted LDL' that refuses to continue past a relative pivot below the rank
// tolerance.
Eigen::LDLT<MatrixXd> checked_factor(const MatrixXd& a, const char* block) {
  Eigen::LDLT<MatrixXd> ldlt(a);
  const VectorXd d = ldlt.vectorD();
  const double largest = d.cwiseAbs().maxCoeff();
  const double smallest = d.minCoeff();
  if (ldlt.info() != Eigen::Success || !(largest > 0) || smallest < kRankTolerance * largest) {
    std::ostringstream msg;
    msg << "rank deficiency in " << block << ": smallest pivot " << smallest << " vs largest " << largest
        << " (too many spline functions for the distinct observation times, or collinear covariates)";
    throw NumericalError(msg.str());
  }
  return ldlt;
}

void check_dims(const LongitudinalDataset& dataset) {
  if (dataset.n() < 1) throw InputError("GEE fit needs at least one subject");
}

}  // namespace

GeeFit gee_spline_fit(const LongitudinalDataset& dataset, const SplineBasis<double>& basis,
                      const WeightSpec& weights) {
  check_dims(dataset);
  const Whitener white(dataset, weights);
  const Index p = dataset.p;
  const Index d = dataset.q * basis.dimension();

  GeeFit fit;
  fit.basis = basis;
  fit.identity_weights = white.identity();
  fit.weight_repairs = white.repairs();
  fit.h11 = MatrixXd::Zero(p, p);
  fit.h12 = MatrixXd::Zero(p, d);
  fit.h22 = MatrixXd::Zero(d, d);
  VectorXd c1 = VectorXd::Zero(p), c2 = VectorXd::Zero(d);

  for (std::size_t i = 0; i < dataset.subjects.size(); ++i) {
    const auto& s = dataset.subjects[i];
    const MatrixXd x = white.apply(i, s.x);
    const MatrixXd w = white.apply(i, spline_design(basis, s));
    const VectorXd y = white.apply(i, s.y);
    fit.h11.noalias() += x.transpose() * x;
    fit.h12.noalias() += x.transpose() * w;
    fit.h22.noalias() += w.transpose() * w;
    c1.noalias() += x.transpose() * y;
    c2.noalias() += w.transpose() * y;
  }

  const auto h22_factor = checked_factor(fit.h22, "H22 (spline block)");
  const MatrixXd h22_inv_h21 = h22_factor.solve(fit.h12.transpose());
  const VectorXd h22_inv_c2 = h22_factor.solve(c2);
  fit.h11_dot2 = fit.h11 - fit.h12 * h22_inv_h21;
  fit.h11_dot2 = 0.5 * (fit.h11_dot2 + fit.h11_dot2.transpose());
  if (p > 0) {
    const auto schur = checked_factor(fit.h11_dot2, "H11.2 (parametric block)");
    fit.beta = schur.solve(c1 - fit.h12 * h22_inv_c2);
  } else {
    fit.beta = VectorXd(0);
  }
  fit.gamma = h22_inv_c2 - h22_inv_h21 * fit.beta;

  fit.residuals.resize(dataset.n1());
  Index row = 0;
  for (const auto& s : dataset.subjects) {
    fit.residuals.segment(row, s.size()) = s.y - s.x * fit.beta - spline_design(basis, s) * fit.gamma;
    row += s.size();
  }
  return fit;
}

VectorXd estimating_equations(const LongitudinalDataset& dataset, const GeeFit& fit,
                              const WeightSpec& weights) {
  const Whitener white(dataset, weights);
  const Index p = dataset.p;
  const Index d = fit.gamma.size();
  VectorXd out = VectorXd::Zero(p + d);
  Index row = 0;
  for (std::size_t i = 0; i < dataset.subjects.size(); ++i) {
    const auto& s = dataset.subjects[i];
    const MatrixXd r = white.apply(i, fit.residuals.segment(row, s.size()));
    out.head(p).noalias() += white.apply(i, s.x).transpose() * r;
    out.tail(d).noalias() += white.apply(i, spline_design(fit.basis, s)).transpose() * r;
    row += s.size();
  }
  return out;
}

VectorXd beta_se(const GeeFit& fit, const LongitudinalDataset& dataset, const std::vector<MatrixXd>& sigma,
                 SeMode mode) {
  if (sigma.size() != dataset.subjects.size()) throw InputError("beta_se: one Sigma_i per subject required");
  const Index p = dataset.p;
  const Index dim = p + fit.gamma.size();
  MatrixXd inner = MatrixXd::Zero(dim, dim);
  MatrixXd meat = MatrixXd::Zero(dim, dim);
  for (std::size_t i = 0; i < sigma.size(); ++i) {
    const auto& s = dataset.subjects[i];
    if (sigma[i].rows() != s.size() || sigma[i].cols() != s.size())
      throw InputError("beta_se: Sigma for subject '" + s.id + "' has the wrong size");
    MatrixXd u(s.size(), dim);
    u << s.x, spline_design(fit.basis, s);
    if (mode == SeMode::model) {
      Eigen::LLT<MatrixXd> llt(sigma[i]);
      if (llt.info() != Eigen::Success)
        throw NumericalError("beta_se: Sigma for subject '" + s.id + "' is not positive definite");
      const MatrixXd wu = llt.matrixL().solve(u);
      inner.noalias() += wu.transpose() * wu;
    } else {
      inner.noalias() += u.transpose() * u;
      meat.noalias() += u.transpose() * sigma[i] * u;
    }
  }
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(inner);
  const double lmin = es.eigenvalues().minCoeff();
  const double lmax = es.eigenvalues().maxCoeff();
  if (!(lmin > kRankTolerance * lmax)) {
    std::ostringstream msg;
    msg << "beta_se: inner matrix not positive definite (lambda_min = " << lmin << ")";
    throw NumericalError(msg.str());
  }
  const MatrixXd inv = es.eigenvectors() * es.eigenvalues().cwiseInverse().asDiagonal() *
                       es.eigenvectors().transpose();
  const MatrixXd cov = mode == SeMode::model ? inv : MatrixXd(inv * meat * inv);
  VectorXd se(p);
  for (Index k = 0; k < p; ++k) se(k) = std::sqrt(std::max(cov(k, k), 0.0));
  return se;
}

CurveEstimate gamma_to_curves(const SplineBasis<double>& basis, const VectorXd& gamma, Index q,
                              const VectorXd& eval_points) {
  const Index kn = basis.dimension();
  if (gamma.size() != q * kn) throw InputError("gamma_to_curves: gamma length must be q * K");
  const Eigen::Map<const MatrixXd> blocks(gamma.data(), kn, q);
  CurveEstimate out;
  out.grid = eval_points;
  out.values = basis.matrix(eval_points) * blocks;
  out.evaluator = [basis, coef = MatrixXd(blocks)](double t) -> VectorXd {
    return coef.transpose() * basis(t);
  };
  return out;
}

CurveEstimate gamma_to_curves(const GeeFit& fit, const VectorXd& eval_points) {
  const Index kn = fit.basis.dimension();
  return gamma_to_curves(fit.basis, fit.gamma, fit.gamma.size() / kn, eval_points);
}

VectorXd gamma_given_beta(const LongitudinalDataset& dataset, const SplineBasis<double>& basis,
                          const VectorXd& beta, const WeightSpec& weights) {
  check_dims(dataset);
  if (beta.size() != dataset.p) throw InputError("gamma_given_beta: beta length must be p");
  const Whitener white(dataset, weights);
  const Index d = dataset.q * basis.dimension();
  MatrixXd h22 = MatrixXd::Zero(d, d);
  VectorXd rhs = VectorXd::Zero(d);
  for (std::size_t i = 0; i < dataset.subjects.size(); ++i) {
    const auto& s = dataset.subjects[i];
    const MatrixXd w = white.apply(i, spline_design(basis, s));
    const VectorXd r = white.apply(i, s.y - s.x * beta);
    h22.noalias() += w.transpose() * w;
    rhs.noalias() += w.transpose() * r;
  }
  return checked_factor(h22, "H22 (spline block)").solve(rhs);
}

}  // namespace svcm
