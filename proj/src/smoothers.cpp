#include "svcm/smoothers.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>

namespace svcm {

namespace {

double epanechnikov_density(double u) { return std::abs(u) <= 1.0 ? 0.75 * (1.0 - u * u) : 0.0; }

// Ridge-regularized symmetric solve; nullopt when the pivots say the system is
// numerically singular.
template <typename Mat, typename Vec>
std::optional<Vec> ridge_solve(Mat a, const Vec& b, const SmootherOptions& opt) {
  a.diagonal().array() += opt.ridge_eps;
  Eigen::LDLT<Mat> ldlt(a);
  if (ldlt.info() != Eigen::Success) return std::nullopt;
  const auto d = ldlt.vectorD();
  const double dmin = d.minCoeff();
  const double dmax = d.cwiseAbs().maxCoeff();
  if (!(dmin > 0.0) || dmax > opt.max_condition * dmin) return std::nullopt;
  Vec x = ldlt.solve(b);
  if (!x.allFinite()) return std::nullopt;
  return x;
}

// Nearest-fill of rows flagged empty along a 1-d grid. Returns false when
// nothing was estimable.
bool fill_nearest(MatrixXd& values, const std::vector<bool>& empty) {
  const Index g = values.rows();
  std::vector<Index> valid;
  for (Index k = 0; k < g; ++k)
    if (!empty[static_cast<std::size_t>(k)]) valid.push_back(k);
  if (valid.empty()) return false;
  for (Index k = 0; k < g; ++k) {
    if (!empty[static_cast<std::size_t>(k)]) continue;
    const auto it = std::lower_bound(valid.begin(), valid.end(), k);
    Index src;
    if (it == valid.end()) src = valid.back();
    else if (it == valid.begin()) src = *it;
    else src = (k - *(it - 1) <= *it - k) ? *(it - 1) : *it;
    values.row(k) = values.row(src);
  }
  return true;
}

}  // namespace

Kernel Kernel::epanechnikov() { return Kernel{&epanechnikov_density, 1.0, 0.6, 0.2}; }

VectorXd unit_grid(Index size) {
  if (size < 2) return VectorXd::Constant(1, 0.5);
  return VectorXd::LinSpaced(size, 0.0, 1.0);
}

LocalFit vc_fit_at(const ObservationTable& obs, const VectorXd& pseudo, double h, double t,
                   const SmootherOptions& opt, Index exclude_subject) {
  const Index q = obs.q();
  MatrixXd m0 = MatrixXd::Zero(q, q), m1 = MatrixXd::Zero(q, q), m2 = MatrixXd::Zero(q, q);
  VectorXd r0 = VectorXd::Zero(q), r1 = VectorXd::Zero(q);
  double weight = 0.0;
  const double reach = h * opt.kernel.radius;
  const auto [first, last] = obs.window(t - reach, t + reach);
  const Index n1 = obs.n1();
  const double* zdata = obs.z.data();
  for (Index k = first; k < last; ++k) {
    const Index o = obs.by_time[static_cast<std::size_t>(k)];
    if (obs.subject[static_cast<std::size_t>(o)] == exclude_subject) continue;
    const double u = (obs.t(o) - t) / h;
    const double w = opt.kernel(u);
    if (w == 0.0) continue;
    weight += w;
    const double wu = w * u, wuu = wu * u;
    const double y = pseudo(o);
    for (Index l = 0; l < q; ++l) {
      const double zl = zdata[o + l * n1];
      r0(l) += w * zl * y;
      r1(l) += wu * zl * y;
      for (Index m = l; m < q; ++m) {
        const double zz = zl * zdata[o + m * n1];
        m0(l, m) += w * zz;
        m1(l, m) += wu * zz;
        m2(l, m) += wuu * zz;
      }
    }
  }
  if (weight == 0.0) return {VectorXd(), LocalStatus::empty};

  const double scale = 1.0 / (static_cast<double>(n1) * h);
  MatrixXd a(2 * q, 2 * q);
  VectorXd b(2 * q);
  for (Index l = 0; l < q; ++l) {
    b(2 * l) = r0(l) * scale;
    b(2 * l + 1) = r1(l) * scale;
    for (Index m = 0; m < q; ++m) {
      const Index lo = std::min(l, m), hi = std::max(l, m);
      a(2 * l, 2 * m) = m0(lo, hi) * scale;
      a(2 * l, 2 * m + 1) = m1(lo, hi) * scale;
      a(2 * l + 1, 2 * m) = m1(lo, hi) * scale;
      a(2 * l + 1, 2 * m + 1) = m2(lo, hi) * scale;
    }
  }
  if (auto theta = ridge_solve(a, b, opt)) {
    VectorXd level(q);
    for (Index l = 0; l < q; ++l) level(l) = (*theta)(2 * l);
    return {level, LocalStatus::ok};
  }
  MatrixXd c = m0.selfadjointView<Eigen::Upper>();
  c *= scale;
  if (auto g = ridge_solve(c, VectorXd(r0 * scale), opt)) return {*g, LocalStatus::fallback};
  return {VectorXd(), LocalStatus::empty};
}

LocalFit scalar_fit_at(const ObservationTable& obs, const VectorXd& target, double h, double t,
                       const SmootherOptions& opt, Index exclude_subject) {
  double s0 = 0, s1 = 0, s2 = 0, r0 = 0, r1 = 0;
  const double reach = h * opt.kernel.radius;
  const auto [first, last] = obs.window(t - reach, t + reach);
  for (Index k = first; k < last; ++k) {
    const Index o = obs.by_time[static_cast<std::size_t>(k)];
    if (obs.subject[static_cast<std::size_t>(o)] == exclude_subject) continue;
    const double u = (obs.t(o) - t) / h;
    const double w = opt.kernel(u);
    if (w == 0.0) continue;
    s0 += w;
    s1 += w * u;
    s2 += w * u * u;
    r0 += w * target(o);
    r1 += w * u * target(o);
  }
  if (s0 == 0.0) return {VectorXd(), LocalStatus::empty};
  const double scale = 1.0 / (static_cast<double>(obs.n1()) * h);
  Eigen::Matrix2d a;
  a << s0 * scale, s1 * scale, s1 * scale, s2 * scale;
  const Eigen::Vector2d b(r0 * scale, r1 * scale);
  if (auto theta = ridge_solve(a, b, opt)) return {VectorXd::Constant(1, (*theta)(0)), LocalStatus::ok};
  return {VectorXd::Constant(1, r0 / s0), LocalStatus::fallback};
}

namespace {

struct PlaneSums {
  double s00 = 0, sa = 0, sb = 0, saa = 0, sab = 0, sbb = 0, r0 = 0, ra = 0, rb = 0;

  void add(double w, double a, double b, double e) {
    const double wa = w * a, wb = w * b;
    s00 += w;
    sa += wa;
    sb += wb;
    saa += wa * a;
    sab += wa * b;
    sbb += wb * b;
    r0 += w * e;
    ra += wa * e;
    rb += wb * e;
  }
};

LocalFit solve_plane(const PlaneSums& s, double scale, const SmootherOptions& opt) {
  if (s.s00 == 0.0) return {VectorXd(), LocalStatus::empty};
  Eigen::Matrix3d a;
  a << s.s00, s.sa, s.sb, s.sa, s.saa, s.sab, s.sb, s.sab, s.sbb;
  a *= scale;
  const Eigen::Vector3d b = Eigen::Vector3d(s.r0, s.ra, s.rb) * scale;
  if (auto theta = ridge_solve(a, b, opt)) return {VectorXd::Constant(1, (*theta)(0)), LocalStatus::ok};
  return {VectorXd::Constant(1, s.r0 / s.s00), LocalStatus::fallback};
}

}  // namespace

LocalFit cov_fit_at(const ObservationTable& obs, const VectorXd& residuals, double h, double s,
                    double t, const SmootherOptions& opt) {
  const double lo = std::min(s, t), hi = std::max(s, t);
  PlaneSums sums;
  for (Index i = 0; i < obs.n(); ++i) {
    const Index begin = obs.offset[static_cast<std::size_t>(i)];
    const Index end = obs.offset[static_cast<std::size_t>(i) + 1];
    for (Index j = begin; j < end; ++j) {
      const double a = (obs.t(j) - lo) / h;
      const double wa = opt.kernel(a);
      if (wa == 0.0) continue;
      for (Index k = begin; k < end; ++k) {
        if (k == j) continue;
        const double b = (obs.t(k) - hi) / h;
        const double wb = opt.kernel(b);
        if (wb == 0.0) continue;
        sums.add(wa * wb, a, b, residuals(j) * residuals(k));
      }
    }
  }
  const double scale = 1.0 / (static_cast<double>(obs.n2) * h * h);
  return solve_plane(sums, scale, opt);
}

namespace {

[[noreturn]] void empty_window(const char* what, double h, double t) {
  throw NumericalError(std::string(what) + ": no observations in the kernel window at t = " +
                       std::to_string(t) + " (h = " + std::to_string(h) + ")");
}

void check_bandwidth(double h) {
  if (!(h > 0.0)) throw InputError("bandwidth must be > 0");
}

}  // namespace

CurveEstimate local_linear_vc(const LongitudinalDataset& dataset, const VectorXd& pseudo, double h,
                              const VectorXd& eval_points, const SmootherOptions& opt) {
  check_bandwidth(h);
  if (pseudo.size() != dataset.n1()) throw InputError("pseudo-responses must have length N1");
  auto obs = std::make_shared<const ObservationTable>(flatten(dataset));
  CurveEstimate out;
  out.grid = eval_points;
  out.values.resize(eval_points.size(), dataset.q);
  for (Index k = 0; k < eval_points.size(); ++k) {
    const auto fit = vc_fit_at(*obs, pseudo, h, eval_points(k), opt);
    if (fit.status == LocalStatus::empty) empty_window("local_linear_vc", h, eval_points(k));
    if (fit.status == LocalStatus::fallback) ++out.fallbacks;
    out.values.row(k) = fit.value.transpose();
  }
  out.evaluator = [obs, pseudo, h, opt](double t) {
    auto fit = vc_fit_at(*obs, pseudo, h, t, opt);
    if (fit.status == LocalStatus::empty) empty_window("local_linear_vc", h, t);
    return fit.value;
  };
  return out;
}

double local_linear_variance(const VectorXd& residuals, const LongitudinalDataset& dataset, double h,
                             double t, const SmootherOptions& opt) {
  check_bandwidth(h);
  if (residuals.size() != dataset.n1()) throw InputError("residuals must have length N1");
  const auto obs = flatten(dataset);
  const VectorXd squared = residuals.array().square();
  const auto fit = scalar_fit_at(obs, squared, h, t, opt);
  if (fit.status == LocalStatus::empty) empty_window("local_linear_variance", h, t);
  return fit.value(0);
}

double local_linear_cov2d(const VectorXd& residuals, const LongitudinalDataset& dataset, double h,
                          double s, double t, const SmootherOptions& opt) {
  check_bandwidth(h);
  if (residuals.size() != dataset.n1()) throw InputError("residuals must have length N1");
  if (dataset.n2() < 1) throw InputError("covariance smoothing needs at least one within-subject pair");
  const auto obs = flatten(dataset);
  const auto fit = cov_fit_at(obs, residuals, h, s, t, opt);
  if (fit.status == LocalStatus::empty)
    throw NumericalError("local_linear_cov2d: no observation pair in the kernel window at (" +
                         std::to_string(s) + ", " + std::to_string(t) + ")");
  return fit.value(0);
}

CurveEstimate vc_curve(const ObservationTable& obs, const VectorXd& pseudo, double h,
                       const VectorXd& grid, const SmootherOptions& opt) {
  check_bandwidth(h);
  CurveEstimate out;
  out.grid = grid;
  out.values = MatrixXd::Zero(grid.size(), obs.q());
  std::vector<bool> empty(static_cast<std::size_t>(grid.size()), false);
  for (Index k = 0; k < grid.size(); ++k) {
    const auto fit = vc_fit_at(obs, pseudo, h, grid(k), opt);
    if (fit.status == LocalStatus::empty) {
      empty[static_cast<std::size_t>(k)] = true;
      ++out.empty_windows;
      continue;
    }
    if (fit.status == LocalStatus::fallback) ++out.fallbacks;
    out.values.row(k) = fit.value.transpose();
  }
  if (!fill_nearest(out.values, empty))
    throw NumericalError("varying-coefficient smoother: every grid window is empty (h = " +
                         std::to_string(h) + ")");
  auto shared = std::make_shared<const ObservationTable>(obs);
  out.evaluator = [shared, pseudo, h, opt](double t) {
    auto fit = vc_fit_at(*shared, pseudo, h, t, opt);
    if (fit.status == LocalStatus::empty) empty_window("varying-coefficient smoother", h, t);
    return fit.value;
  };
  return out;
}

VectorXd vc_fitted(const ObservationTable& obs, const VectorXd& pseudo, double h,
                   const SmootherOptions& opt, Index* fallbacks) {
  check_bandwidth(h);
  VectorXd fitted(obs.n1());
  for (Index o = 0; o < obs.n1(); ++o) {
    const auto fit = vc_fit_at(obs, pseudo, h, obs.t(o), opt);
    if (fit.status == LocalStatus::empty) empty_window("varying-coefficient smoother", h, obs.t(o));
    if (fit.status == LocalStatus::fallback && fallbacks) ++*fallbacks;
    fitted(o) = obs.z.row(o).dot(fit.value);
  }
  return fitted;
}

VectorXd scalar_curve(const ObservationTable& obs, const VectorXd& target, double h,
                      const VectorXd& grid, const SmootherOptions& opt, Index* fallbacks,
                      Index* empty_count) {
  check_bandwidth(h);
  MatrixXd values = MatrixXd::Zero(grid.size(), 1);
  std::vector<bool> empty(static_cast<std::size_t>(grid.size()), false);
  for (Index k = 0; k < grid.size(); ++k) {
    const auto fit = scalar_fit_at(obs, target, h, grid(k), opt);
    if (fit.status == LocalStatus::empty) {
      empty[static_cast<std::size_t>(k)] = true;
      if (empty_count) ++*empty_count;
      continue;
    }
    if (fit.status == LocalStatus::fallback && fallbacks) ++*fallbacks;
    values(k, 0) = fit.value(0);
  }
  if (!fill_nearest(values, empty))
    throw NumericalError("variance smoother: every grid window is empty (h = " + std::to_string(h) + ")");
  return values.col(0);
}

MatrixXd cov_surface(const ObservationTable& obs, const VectorXd& residuals, double h,
                     const VectorXd& grid, const SmootherOptions& opt, Index* fallbacks,
                     Index* empty_count) {
  check_bandwidth(h);
  if (obs.n2 < 1) throw InputError("covariance smoothing needs at least one within-subject pair");
  const Index g = grid.size();
  const double reach = h * opt.kernel.radius;
  std::vector<double> grid_points(grid.data(), grid.data() + g);

  // Per observation: the grid cells inside its kernel window.
  struct Reach {
    Index first = 0, last = 0;
  };
  std::vector<Reach> reach_of(static_cast<std::size_t>(obs.n1()));
  for (Index o = 0; o < obs.n1(); ++o) {
    const auto lo = std::lower_bound(grid_points.begin(), grid_points.end(), obs.t(o) - reach);
    const auto hi = std::upper_bound(lo, grid_points.end(), obs.t(o) + reach);
    reach_of[static_cast<std::size_t>(o)] = {lo - grid_points.begin(), hi - grid_points.begin()};
  }

  // Only cells with row <= col are accumulated; the other half mirrors them.
  std::vector<PlaneSums> cells(static_cast<std::size_t>(g * g));
  std::vector<double> wa, ua;
  for (Index i = 0; i < obs.n(); ++i) {
    const Index begin = obs.offset[static_cast<std::size_t>(i)];
    const Index end = obs.offset[static_cast<std::size_t>(i) + 1];
    for (Index j = begin; j < end; ++j) {
      const auto rj = reach_of[static_cast<std::size_t>(j)];
      for (Index j2 = begin; j2 < end; ++j2) {
        if (j2 == j) continue;
        const auto rj2 = reach_of[static_cast<std::size_t>(j2)];
        const double e = residuals(j) * residuals(j2);
        for (Index k = rj.first; k < rj.last; ++k) {
          const double a = (obs.t(j) - grid(k)) / h;
          const double w1 = opt.kernel(a);
          if (w1 == 0.0) continue;
          for (Index l = std::max(k, rj2.first); l < rj2.last; ++l) {
            const double b = (obs.t(j2) - grid(l)) / h;
            const double w2 = opt.kernel(b);
            if (w2 == 0.0) continue;
            cells[static_cast<std::size_t>(k * g + l)].add(w1 * w2, a, b, e);
          }
        }
      }
    }
  }

  const double scale = 1.0 / (static_cast<double>(obs.n2) * h * h);
  MatrixXd surface = MatrixXd::Zero(g, g);
  std::vector<bool> empty(static_cast<std::size_t>(g * g), false);
  bool any = false;
  for (Index k = 0; k < g; ++k) {
    for (Index l = k; l < g; ++l) {
      const auto fit = solve_plane(cells[static_cast<std::size_t>(k * g + l)], scale, opt);
      if (fit.status == LocalStatus::empty) {
        empty[static_cast<std::size_t>(k * g + l)] = empty[static_cast<std::size_t>(l * g + k)] = true;
        if (empty_count) *empty_count += (k == l ? 1 : 2);
        continue;
      }
      if (fit.status == LocalStatus::fallback && fallbacks) *fallbacks += (k == l ? 1 : 2);
      surface(k, l) = surface(l, k) = fit.value(0);
      any = true;
    }
  }
  if (!any)
    throw NumericalError("covariance smoother: every grid cell window is empty (h = " +
                         std::to_string(h) + ")");
  if (std::find(empty.begin(), empty.end(), true) != empty.end()) {
    // Nearest estimable cell by expanding square rings; within a ring the
    // smallest Euclidean index distance wins, then the lower flat index.
    const MatrixXd source = surface;
    auto is_empty = [&](Index a, Index b) { return empty[static_cast<std::size_t>(a * g + b)]; };
    for (Index k = 0; k < g; ++k) {
      for (Index l = k; l < g; ++l) {
        if (!is_empty(k, l)) continue;
        Index best = -1, best_d = std::numeric_limits<Index>::max();
        for (Index ring = 1; ring < g && best < 0; ++ring) {
          for (Index a = std::max<Index>(0, k - ring); a <= std::min(g - 1, k + ring); ++a) {
            for (Index b = std::max<Index>(0, l - ring); b <= std::min(g - 1, l + ring); ++b) {
              if (std::max(std::abs(a - k), std::abs(b - l)) != ring || is_empty(a, b)) continue;
              const Index d = (a - k) * (a - k) + (b - l) * (b - l);
              if (d < best_d) best_d = d, best = a * g + b;
            }
          }
        }
        surface(k, l) = surface(l, k) = source(best / g, best % g);
      }
    }
  }
  return surface;
}

namespace {

double prediction(const ObservationTable& obs, SmootherKind kind, const LocalFit& fit, Index o) {
  return kind == SmootherKind::varying_coefficient ? obs.z.row(o).dot(fit.value) : fit.value(0);
}

}  // namespace

CvResult loso_cv(const ObservationTable& obs, const VectorXd& pseudo,
                 const std::vector<double>& candidates, SmootherKind kind, const SmootherOptions& opt) {
  if (candidates.empty()) throw InputError("loso_cv: empty candidate list");
  for (double h : candidates) check_bandwidth(h);
  if (obs.n() < 2) throw InputError("loso_cv: needs at least two subjects");

  CvResult out;
  out.candidates = candidates;
  std::sort(out.candidates.begin(), out.candidates.end());
  out.scores.assign(out.candidates.size(), std::numeric_limits<double>::infinity());
  const double target_scale = pseudo.squaredNorm();

  for (std::size_t c = 0; c < out.candidates.size(); ++c) {
    const double h = out.candidates[c];
    double score = 0.0;
    bool feasible = true;
    for (Index o = 0; o < obs.n1() && feasible; ++o) {
      const Index held_out = obs.subject[static_cast<std::size_t>(o)];
      const auto fit = kind == SmootherKind::varying_coefficient
                           ? vc_fit_at(obs, pseudo, h, obs.t(o), opt, held_out)
                           : scalar_fit_at(obs, pseudo, h, obs.t(o), opt, held_out);
      if (fit.status == LocalStatus::empty) {
        feasible = false;
        break;
      }
      const double r = pseudo(o) - prediction(obs, kind, fit, o);
      score += r * r;
    }
    if (feasible) out.scores[c] = score;
  }

  std::size_t best = out.scores.size();
  for (std::size_t c = 0; c < out.scores.size(); ++c) {
    if (!std::isfinite(out.scores[c])) continue;
    if (best == out.scores.size()) {
      best = c;
      continue;
    }
    const double a = out.scores[c], b = out.scores[best];
    const double tie = 1e-9 * std::max(a, b) + 1e-12 * target_scale;
    if (a < b - tie) best = c;
  }
  if (best == out.scores.size())
    throw NumericalError("loso_cv: every candidate bandwidth leaves some held-out subject "
                         "without observations in its kernel window");
  out.bandwidth = out.candidates[best];
  return out;
}

CvResult loso_cv(const LongitudinalDataset& dataset, const VectorXd& pseudo,
                 const std::vector<double>& candidates, SmootherKind kind, const SmootherOptions& opt) {
  if (pseudo.size() != dataset.n1()) throw InputError("loso_cv: targets must have length N1");
  return loso_cv(flatten(dataset), pseudo, candidates, kind, opt);
}

std::vector<double> default_bandwidth_grid(const ObservationTable& obs, int count) {
  const double n1 = static_cast<double>(obs.n1());
  const double mean = obs.t.mean();
  const double sd = n1 > 1 ? std::sqrt((obs.t.array() - mean).square().sum() / (n1 - 1.0)) : 0.0;
  const double rot = 1.06 * std::max(sd, 1e-3) * std::pow(n1, -0.2);
  if (count <= 1) return {rot};
  std::vector<double> out(static_cast<std::size_t>(count));
  const double lo = std::log(0.5 * rot), hi = std::log(3.0 * rot);
  for (int k = 0; k < count; ++k) out[static_cast<std::size_t>(k)] = std::exp(lo + (hi - lo) * k / (count - 1));
  return out;
}

}  // namespace svcm
