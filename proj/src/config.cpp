#include "svcm/config.hpp"

#include "svcm/core.hpp"

#include <charconv>
#include <cmath>
#include <istream>
#include <sstream>

namespace svcm {

int PipelineConfig::spline_dimension(long n) const {
  if (kn) return *kn;
  const int rule = static_cast<int>(std::floor(c_k * std::pow(static_cast<double>(n), 0.2)));
  return std::max(rule, spline_degree + 1);
}

void PipelineConfig::check() const {
  auto fail = [](const std::string& msg) { throw InputError("config: " + msg); };
  if (spline_degree < 1) fail("spline_degree must be >= 1");
  if (kn && *kn < spline_degree + 1) fail("kn must be >= spline_degree + 1");
  if (!(c_k > 0)) fail("c_k must be > 0");
  for (const auto* h : {&h1, &h2}) {
    if (h->fixed && !(*h->fixed > 0)) fail("bandwidths must be > 0");
    for (double c : h->candidates)
      if (!(c > 0)) fail("bandwidth candidates must be > 0");
  }
  if (!(h3_multiplier > 0)) fail("h3_multiplier must be > 0");
  if (h3 && !(*h3 > 0)) fail("h3 must be > 0");
  if (!(lambda_l >= 0)) fail("lambda_L must be >= 0");
  if (cov_grid_size < 11) fail("cov_grid_size must be >= 11");
  if (curve_grid_size < 2) fail("curve_grid_size must be >= 2");
  if (cv_grid_size < 1) fail("cv_grid_size must be >= 1");
  if (!(ridge_eps > 0)) fail("ridge_eps must be > 0");
  if (!(pd_floor > 0)) fail("pd_floor must be > 0");
  if (max_iter < 1) fail("max_iter must be >= 1");
  if (!(iter_tol > 0)) fail("iter_tol must be > 0");
  if (!(ci_level > 0 && ci_level < 1)) fail("ci_level must lie in (0,1)");
}

namespace {

double to_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size() || v.empty())
    throw InputError("config: " + key + " expects a number, got '" + v + "'");
  return out;
}

int to_int(const std::string& key, const std::string& v) {
  int out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size() || v.empty())
    throw InputError("config: " + key + " expects an integer, got '" + v + "'");
  return out;
}

std::vector<double> to_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_double(key, item));
  return out;
}

// Shortest text that reads back to the same double.
std::string fmt(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string fmt_list(const std::vector<double>& v) {
  std::string out;
  for (std::size_t k = 0; k < v.size(); ++k) out += (k ? "," : "") + fmt(v[k]);
  return out;
}

void set_bandwidth(BandwidthChoice& h, const std::string& key, const std::string& v) {
  if (v == "cv") h.fixed.reset();
  else h.fixed = to_double(key, v);
}

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace

void apply_setting(PipelineConfig& c, const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  if (key == "spline_degree") c.spline_degree = to_int(key, v);
  else if (key == "kn") {
    if (v == "rule") c.kn.reset();
    else c.kn = to_int(key, v);
  } else if (key == "c_k") c.c_k = to_double(key, v);
  else if (key == "h1") set_bandwidth(c.h1, key, v);
  else if (key == "h2") set_bandwidth(c.h2, key, v);
  else if (key == "h1_candidates") c.h1.candidates = to_list(key, v);
  else if (key == "h2_candidates") c.h2.candidates = to_list(key, v);
  else if (key == "h3_multiplier") c.h3_multiplier = to_double(key, v);
  else if (key == "h3") {
    if (v == "rule") c.h3.reset();
    else c.h3 = to_double(key, v);
  } else if (key == "lambda_L") c.lambda_l = to_double(key, v);
  else if (key == "cov_grid_size") c.cov_grid_size = to_int(key, v);
  else if (key == "curve_grid_size") c.curve_grid_size = to_int(key, v);
  else if (key == "cv_grid_size") c.cv_grid_size = to_int(key, v);
  else if (key == "ridge_eps") c.ridge_eps = to_double(key, v);
  else if (key == "pd_floor") c.pd_floor = to_double(key, v);
  else if (key == "nugget_guard") {
    if (v == "true" || v == "1") c.nugget_guard = true;
    else if (v == "false" || v == "0") c.nugget_guard = false;
    else throw InputError("config: nugget_guard must be true or false");
  }
  else if (key == "max_iter") c.max_iter = to_int(key, v);
  else if (key == "iter_tol") c.iter_tol = to_double(key, v);
  else if (key == "ci_level") c.ci_level = to_double(key, v);
  else if (key == "residual_source") {
    if (v == "local_linear") c.residual_source = ResidualSource::local_linear;
    else if (v == "spline") c.residual_source = ResidualSource::spline;
    else throw InputError("config: residual_source must be local_linear or spline");
  } else {
    throw InputError("config: unknown key '" + key + "'");
  }
}

std::vector<std::pair<std::string, std::string>> read_key_values(std::istream& in) {
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw InputError("config line " + std::to_string(line_no) + ": expected key=value");
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

PipelineConfig parse_config(std::istream& in, PipelineConfig base) {
  for (const auto& [k, v] : read_key_values(in)) apply_setting(base, k, v);
  base.check();
  return base;
}

std::vector<std::pair<std::string, std::string>> to_key_values(const PipelineConfig& c) {
  auto bw = [](const BandwidthChoice& h) { return h.fixed ? fmt(*h.fixed) : std::string("cv"); };
  return {
      {"spline_degree", std::to_string(c.spline_degree)},
      {"kn", c.kn ? std::to_string(*c.kn) : "rule"},
      {"c_k", fmt(c.c_k)},
      {"h1", bw(c.h1)},
      {"h1_candidates", fmt_list(c.h1.candidates)},
      {"h2", bw(c.h2)},
      {"h2_candidates", fmt_list(c.h2.candidates)},
      {"h3_multiplier", fmt(c.h3_multiplier)},
      {"h3", c.h3 ? fmt(*c.h3) : "rule"},
      {"lambda_L", fmt(c.lambda_l)},
      {"cov_grid_size", std::to_string(c.cov_grid_size)},
      {"curve_grid_size", std::to_string(c.curve_grid_size)},
      {"cv_grid_size", std::to_string(c.cv_grid_size)},
      {"ridge_eps", fmt(c.ridge_eps)},
      {"pd_floor", fmt(c.pd_floor)},
      {"nugget_guard", c.nugget_guard ? "true" : "false"},
      {"max_iter", std::to_string(c.max_iter)},
      {"iter_tol", fmt(c.iter_tol)},
      {"residual_source", c.residual_source == ResidualSource::spline ? "spline" : "local_linear"},
      {"ci_level", fmt(c.ci_level)},
  };
}

}  // namespace svcm
