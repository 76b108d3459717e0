#include "svcm/output.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace svcm {

namespace {

std::string six(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

// Shortest representation that round-trips.
std::string full(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

std::string beta_table_csv(const EfficientFitResult& r) {
  std::ostringstream os;
  os << "estimator,coefficient,estimate,se,wald\n";
  auto rows = [&](const char* name, const VectorXd& beta, const VectorXd& se) {
    for (Index k = 0; k < beta.size(); ++k)
      os << name << ",beta" << k + 1 << ',' << six(beta(k)) << ',' << six(se(k)) << ',' << six(beta(k) / se(k))
         << '\n';
  };
  rows("independent", r.beta_init, r.se_init);
  rows("efficient", r.beta_eff, r.se_eff);
  return os.str();
}

std::string curves_csv(const EfficientFitResult& r) {
  std::ostringstream os;
  os << 't';
  for (Index l = 1; l <= r.q; ++l)
    os << ",g" << l << "_ll_init,g" << l << "_ll_updated,g" << l << "_lower,g" << l << "_upper,g" << l
       << "_spline_init,g" << l << "_spline_updated";
  os << '\n';
  for (Index k = 0; k < r.g_ll_updated.grid.size(); ++k) {
    os << full(r.g_ll_updated.grid(k));
    for (Index l = 0; l < r.q; ++l)
      os << ',' << full(r.g_ll_init.values(k, l)) << ',' << full(r.g_ll_updated.values(k, l)) << ','
         << full(r.bands.lower(k, l)) << ',' << full(r.bands.upper(k, l)) << ',' << full(r.g_spline_init.values(k, l))
         << ',' << full(r.g_spline_updated.values(k, l));
    os << '\n';
  }
  return os.str();
}

KeyValues fit_manifest(const EfficientFitResult& r) {
  const auto& d = r.diagnostics;
  const auto& e = r.covariance_model.eigen_report;
  KeyValues kv = {
      {"p", std::to_string(r.p)},
      {"q", std::to_string(r.q)},
      {"spline_dimension", std::to_string(r.spline_dimension)},
      {"h1", full(r.h1)},
      {"h2", full(r.h2)},
      {"h3", full(r.h3)},
      {"h1_selection", r.cv_h1 ? "loso_cv" : "fixed"},
      {"h2_selection", r.cv_h2 ? "loso_cv" : "fixed"},
      {"iterations", std::to_string(r.iterations)},
      {"sigma_repairs", std::to_string(d.sigma_repairs)},
      {"smoother_fallbacks", std::to_string(d.smoother_fallbacks)},
      {"empty_windows", std::to_string(d.empty_windows)},
      {"variance_floored", std::to_string(d.variance_floored)},
      {"nugget", full(r.covariance_model.nugget)},
      {"nugget_guarded", std::to_string(d.nugget_guarded)},
      {"eigen_retained", std::to_string(e.retained)},
      {"eigen_zeroed", std::to_string(e.zeroed)},
      {"eigen_lambda_min", full(e.lambda_min)},
      {"eigen_lambda_max", full(e.lambda_max)},
      {"band_singular_points", std::to_string(r.bands.singular_points)},
  };
  return kv;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  out << text;
}

void write_manifest(const std::filesystem::path& path, const KeyValues& entries) {
  std::ostringstream os;
  for (const auto& [k, v] : entries) os << k << '=' << v << '\n';
  write_text(path, os.str());
}

void write_fit_outputs(const EfficientFitResult& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_text(dir / "beta.csv", beta_table_csv(r));
  write_text(dir / "curves.csv", curves_csv(r));
  write_covariance_csv(r.covariance_model, dir / "covariance");
  std::ostringstream diag;
  for (const auto& note : r.diagnostics.notes) diag << note << '\n';
  if (r.cv_h1) {
    diag << "h1 cross-validation:\n";
    for (std::size_t k = 0; k < r.cv_h1->candidates.size(); ++k)
      diag << "  h=" << full(r.cv_h1->candidates[k]) << " score=" << full(r.cv_h1->scores[k]) << '\n';
  }
  if (r.cv_h2) {
    diag << "h2 cross-validation:\n";
    for (std::size_t k = 0; k < r.cv_h2->candidates.size(); ++k)
      diag << "  h=" << full(r.cv_h2->candidates[k]) << " score=" << full(r.cv_h2->scores[k]) << '\n';
  }
  write_text(dir / "diagnostics.txt", diag.str());
}

}  // namespace svcm
