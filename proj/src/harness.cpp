#include "svcm/harness.hpp"

#include "svcm/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <sstream>
#include <thread>

namespace svcm {

namespace {

constexpr Variant kAllVariants[] = {Variant::independent, Variant::efficient, Variant::oracle,      Variant::crude,
                                    Variant::positive,    Variant::iterative, Variant::different_h3};

bool wants(const std::vector<Variant>& vs, Variant v) { return std::find(vs.begin(), vs.end(), v) != vs.end(); }

std::string six(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

}  // namespace

std::string to_string(Variant v) {
  switch (v) {
    case Variant::independent: return "independent";
    case Variant::efficient: return "efficient";
    case Variant::oracle: return "oracle";
    case Variant::crude: return "crude";
    case Variant::positive: return "positive";
    case Variant::iterative: return "iterative";
    case Variant::different_h3: return "different_h3";
  }
  return "unknown";
}

std::optional<Variant> parse_variant(std::string_view name) {
  for (Variant v : kAllVariants)
    if (to_string(v) == name) return v;
  return std::nullopt;
}

std::vector<Variant> parse_variants(std::string_view list) {
  std::vector<Variant> out;
  std::size_t start = 0;
  while (start <= list.size()) {
    const auto comma = list.find(',', start);
    const auto item = list.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
    if (!item.empty()) {
      const auto v = parse_variant(item);
      if (!v) throw InputError("unknown variant '" + std::string(item) + "'");
      if (!wants(out, *v)) out.push_back(*v);
    }
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  if (out.empty()) throw InputError("no variants requested");
  return out;
}

const VariantSummary* McSummary::find(Variant v) const {
  for (const auto& s : variants)
    if (s.variant == v) return &s;
  return nullptr;
}

const VariantEstimate* McSummary::estimate(const RepRecord& r, Variant v) const {
  for (const auto& e : r.estimates)
    if (e.variant == v) return &e;
  return nullptr;
}

double integrated_squared_error(const VectorXd& grid, const MatrixXd& estimate, const MatrixXd& truth) {
  const MatrixXd sq = (estimate - truth).array().square().matrix();
  double total = 0.0;
  for (Index l = 0; l < sq.cols(); ++l) {
    double integral = 0.0;
    for (Index k = 0; k + 1 < grid.size(); ++k)
      integral += 0.5 * (grid(k + 1) - grid(k)) * (sq(k, l) + sq(k + 1, l));
    total += integral;
  }
  return total / static_cast<double>(sq.cols());
}

namespace {

RepRecord run_rep(const SimConfig& sim, Index rep, const std::vector<Variant>& variants,
                  const PipelineConfig& config, const HarnessOptions& options, const MatrixXd& g_truth) {
  RepRecord rec;
  rec.rep = rep;
  rec.seed = mix_seed(sim.seed, static_cast<std::uint64_t>(rep));
  SimConfig rep_sim = sim;
  rep_sim.seed = rec.seed;
  try {
    const auto data = simulate_dataset(rep_sim);
    const auto& ds = data.dataset;
    rec.subjects = ds.n();

    const bool needs_pipeline = std::any_of(variants.begin(), variants.end(), [](Variant v) { return v != Variant::oracle; });
    if (needs_pipeline) {
      const auto res = efficient_fit(ds, config);
      rec.h1 = res.h1;
      rec.h2 = res.h2;
      rec.h3 = res.h3;
      rec.sigma_repairs = res.diagnostics.sigma_repairs;
      MiseSummary mise;
      mise.ll_initial = integrated_squared_error(res.g_ll_init.grid, res.g_ll_init.values, g_truth);
      mise.ll_refined = integrated_squared_error(res.g_ll_updated.grid, res.g_ll_updated.values, g_truth);
      mise.spline_initial = integrated_squared_error(res.g_spline_init.grid, res.g_spline_init.values, g_truth);
      mise.spline_refined = integrated_squared_error(res.g_spline_updated.grid, res.g_spline_updated.values, g_truth);
      rec.mise = mise;

      // Follow-up variants reuse the bandwidths chosen by the main fit.
      PipelineConfig fixed = config;
      fixed.h1 = BandwidthChoice::value(res.h1);
      fixed.h2 = BandwidthChoice::value(res.h2);

      for (Variant v : variants) {
        switch (v) {
          case Variant::independent: rec.estimates.push_back({v, res.beta_init, res.se_init}); break;
          case Variant::efficient: rec.estimates.push_back({v, res.beta_eff, res.se_eff}); break;
          case Variant::positive: {
            const auto model = retruncate(res.covariance_model, options.positive_lambda);
            const auto sigma = materialize(model, ds, config.pd_floor);
            const auto fit = gee_spline_fit(ds, res.fit_eff.basis, ExplicitWeights{sigma});
            rec.estimates.push_back({v, fit.beta, beta_se(fit, ds, sigma, SeMode::model)});
            break;
          }
          case Variant::different_h3: {
            PipelineConfig c = fixed;
            c.h3.reset();
            c.h3_multiplier = options.different_h3_multiplier;
            const auto r = efficient_fit(ds, c);
            rec.estimates.push_back({v, r.beta_eff, r.se_eff});
            break;
          }
          case Variant::iterative: {
            PipelineConfig c = fixed;
            c.max_iter = options.iterative_max_iter;
            c.iter_tol = options.iterative_tol;
            const auto r = efficient_fit(ds, c);
            rec.estimates.push_back({v, r.beta_eff, r.se_eff});
            break;
          }
          case Variant::crude: {
            PipelineConfig c = config;
            c.h1 = BandwidthChoice::value(res.h1);
            c.residual_source = ResidualSource::spline;
            const auto r = efficient_fit(ds, c);
            rec.estimates.push_back({v, r.beta_eff, r.se_eff});
            break;
          }
          case Variant::oracle: break;
        }
      }
    }
    if (wants(variants, Variant::oracle)) {
      const auto o = oracle_fit(ds, config, data.truth.sigma);
      rec.estimates.push_back({Variant::oracle, o.beta, o.se});
    }
    // Request order, independent of which code path produced each estimate.
    std::stable_sort(rec.estimates.begin(), rec.estimates.end(), [&](const auto& a, const auto& b) {
      return std::find(variants.begin(), variants.end(), a.variant) <
             std::find(variants.begin(), variants.end(), b.variant);
    });
    rec.ok = true;
  } catch (const std::exception& e) {
    rec.ok = false;
    rec.error = e.what();
    rec.estimates.clear();
    rec.mise.reset();
  }
  return rec;
}

}  // namespace

McSummary mc_study(const SimConfig& sim, int reps, const std::vector<Variant>& variants,
                   const PipelineConfig& config, const HarnessOptions& options) {
  if (reps < 2) throw InputError("mc_study: at least 2 reps required");
  if (variants.empty()) throw InputError("mc_study: no variants requested");
  sim.check();
  config.check();
  const auto start = std::chrono::steady_clock::now();

  const VectorXd grid = unit_grid(config.curve_grid_size);
  MatrixXd g_truth(grid.size(), sim.q());
  for (Index k = 0; k < grid.size(); ++k) g_truth.row(k) = sim.g0(grid(k)).transpose();

  McSummary summary;
  summary.n = sim.n;
  summary.rho = sim.rho;
  summary.reps = reps;
  summary.raw.resize(static_cast<std::size_t>(reps));

  const int workers = std::clamp(options.workers, 1, reps);
  std::atomic<int> next{0};
  auto work = [&] {
    for (int r = next.fetch_add(1); r < reps; r = next.fetch_add(1))
      summary.raw[static_cast<std::size_t>(r)] = run_rep(sim, r, variants, config, options, g_truth);
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
  }

  const Index p = sim.beta0.size();
  const double z = normal_quantile(0.5 * (1.0 + options.coverage_level));
  std::vector<const RepRecord*> good;
  for (const auto& r : summary.raw) {
    if (r.ok) good.push_back(&r);
    else ++summary.failed;
  }
  if (static_cast<double>(summary.failed) > options.max_failure_rate * static_cast<double>(reps)) {
    std::string first_error;
    for (const auto& r : summary.raw)
      if (!r.ok) {
        first_error = r.error;
        break;
      }
    throw NumericalError("mc_study: " + std::to_string(summary.failed) + " of " + std::to_string(reps) +
                         " reps failed; first error: " + first_error);
  }
  if (good.size() < 2) throw NumericalError("mc_study: fewer than two successful reps");
  const double count = static_cast<double>(good.size());

  for (Variant v : variants) {
    VariantSummary vs;
    vs.variant = v;
    for (Index k = 0; k < p; ++k) {
      double sum = 0, sum_se = 0, covered = 0;
      for (const auto* r : good) {
        const auto* e = summary.estimate(*r, v);
        sum += e->beta(k);
        sum_se += e->se(k);
        if (std::abs(e->beta(k) - sim.beta0(k)) <= z * e->se(k)) covered += 1;
      }
      const double mean = sum / count;
      double ss = 0;
      for (const auto* r : good) {
        const double d = summary.estimate(*r, v)->beta(k) - mean;
        ss += d * d;
      }
      vs.coefficients.push_back({mean - sim.beta0(k), sum_se / count, std::sqrt(ss / (count - 1.0)), covered / count});
    }
    summary.variants.push_back(std::move(vs));
  }

  if (good.front()->mise) {
    MiseSummary m;
    for (const auto* r : good) {
      m.ll_initial += r->mise->ll_initial;
      m.ll_refined += r->mise->ll_refined;
      m.spline_initial += r->mise->spline_initial;
      m.spline_refined += r->mise->spline_refined;
    }
    m.ll_initial /= count;
    m.ll_refined /= count;
    m.spline_initial /= count;
    m.spline_refined /= count;
    summary.mise = m;
  }
  summary.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return summary;
}

std::string report(const McSummary& summary, ReportFormat format) {
  std::ostringstream os;
  const Index p = summary.variants.empty() ? 0 : static_cast<Index>(summary.variants.front().coefficients.size());
  if (format == ReportFormat::csv) {
    os << "n,rho,coefficient";
    for (const auto& v : summary.variants) {
      const auto name = to_string(v.variant);
      os << ',' << name << "_bias," << name << "_se," << name << "_sd," << name << "_coverage";
    }
    os << '\n';
    for (Index k = 0; k < p; ++k) {
      os << summary.n << ',' << six(summary.rho) << ",beta" << k + 1;
      for (const auto& v : summary.variants) {
        const auto& c = v.coefficients[static_cast<std::size_t>(k)];
        os << ',' << six(c.bias) << ',' << six(c.mean_se) << ',' << six(c.empirical_sd) << ',' << six(c.coverage);
      }
      os << '\n';
    }
    return os.str();
  }
  os << "| n | rho | coefficient |";
  for (const auto& v : summary.variants) os << ' ' << to_string(v.variant) << " bias | " << to_string(v.variant) << " SE |";
  os << "\n|---|---|---|";
  for (std::size_t k = 0; k < summary.variants.size(); ++k) os << "---|---|";
  os << '\n';
  for (Index k = 0; k < p; ++k) {
    os << "| " << summary.n << " | " << six(summary.rho) << " | beta" << k + 1 << " |";
    for (const auto& v : summary.variants) {
      const auto& c = v.coefficients[static_cast<std::size_t>(k)];
      os << ' ' << six(c.bias) << " | " << six(c.mean_se) << " |";
    }
    os << '\n';
  }
  return os.str();
}

std::string report_mise(const McSummary& summary, ReportFormat format) {
  std::ostringstream os;
  if (!summary.mise) return {};
  const auto& m = *summary.mise;
  if (format == ReportFormat::csv) {
    os << "n,rho,ll_initial,ll_refined,spline_initial,spline_refined\n";
    os << summary.n << ',' << six(summary.rho) << ',' << six(m.ll_initial) << ',' << six(m.ll_refined) << ','
       << six(m.spline_initial) << ',' << six(m.spline_refined) << '\n';
    return os.str();
  }
  os << "| n | rho | local linear initial | local linear refined | spline initial | spline refined |\n"
     << "|---|---|---|---|---|---|\n"
     << "| " << summary.n << " | " << six(summary.rho) << " | " << six(m.ll_initial) << " | " << six(m.ll_refined)
     << " | " << six(m.spline_initial) << " | " << six(m.spline_refined) << " |\n";
  return os.str();
}

std::string raw_csv(const McSummary& summary) {
  std::ostringstream os;
  os.precision(17);
  os << "rep,seed,ok,variant,coefficient,estimate,se,h1,h2,h3,sigma_repairs,error\n";
  for (const auto& r : summary.raw) {
    if (!r.ok) {
      std::string err = r.error;
      std::replace(err.begin(), err.end(), ',', ';');
      std::replace(err.begin(), err.end(), '\n', ' ');
      os << r.rep << ',' << r.seed << ",0,,,,,,,,," << err << '\n';
      continue;
    }
    for (const auto& e : r.estimates)
      for (Index k = 0; k < e.beta.size(); ++k)
        os << r.rep << ',' << r.seed << ",1," << to_string(e.variant) << ",beta" << k + 1 << ',' << e.beta(k) << ','
           << e.se(k) << ',' << r.h1 << ',' << r.h2 << ',' << r.h3 << ',' << r.sigma_repairs << ",\n";
  }
  return os.str();
}

}  // namespace svcm
