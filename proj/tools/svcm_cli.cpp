// svcm: fit, simulate, mc, validate.
//
// Exit codes: 0 success, 1 invalid input or configuration, 2 numerical
// failure, 3 I/O or unexpected error.

#include "svcm/config.hpp"
#include "svcm/core.hpp"
#include "svcm/harness.hpp"
#include "svcm/output.hpp"
#include "svcm/pipeline.hpp"
#include "svcm/simulate.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <thread>

namespace {

using namespace svcm;

constexpr int kExitOk = 0;
constexpr int kExitInput = 1;
constexpr int kExitNumerical = 2;
constexpr int kExitOther = 3;

std::string full(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

struct ConfigFlags {
  std::string file;
  std::vector<std::string> settings;  // key=value
};

void add_config_flags(CLI::App* cmd, ConfigFlags& flags) {
  cmd->add_option("--config", flags.file, "key=value configuration file");
  cmd->add_option("--set", flags.settings, "override one setting, key=value (repeatable)");
}

// File first, then --set overrides in command-line order.
PipelineConfig resolve_config(const ConfigFlags& flags) {
  PipelineConfig config;
  if (!flags.file.empty()) {
    std::ifstream in(flags.file);
    if (!in) throw InputError("cannot read config file '" + flags.file + "'");
    config = parse_config(in);
  }
  for (const auto& kv : flags.settings) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw InputError("--set expects key=value, got '" + kv + "'");
    apply_setting(config, kv.substr(0, eq), kv.substr(eq + 1));
  }
  config.check();
  return config;
}

void append(KeyValues& to, const KeyValues& from, const std::string& prefix = "") {
  for (const auto& [k, v] : from) to.emplace_back(prefix + k, v);
}

int default_workers() { return static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }

// ---------------------------------------------------------------------------

struct FitArgs {
  std::string data;
  std::string out_dir;
  bool add_intercept = false;
  bool rescale_time = false;
  ConfigFlags config;
};

int run_fit(const FitArgs& a) {
  const PipelineConfig config = resolve_config(a.config);
  CsvReport csv_report;
  const auto dataset = load_csv(a.data, CsvSchema{a.add_intercept, a.rescale_time}, &csv_report);
  for (const auto& w : csv_report.warnings) std::cerr << "warning: " << w << '\n';
  const auto result = efficient_fit(dataset, config);
  write_fit_outputs(result, a.out_dir);

  KeyValues manifest = {{"command", "fit"},
                        {"version", kVersion},
                        {"data", a.data},
                        {"add_intercept", a.add_intercept ? "true" : "false"},
                        {"rescale_time", a.rescale_time ? "true" : "false"},
                        {"n", std::to_string(dataset.n())},
                        {"n1", std::to_string(dataset.n1())}};
  append(manifest, to_key_values(config), "config.");
  append(manifest, fit_manifest(result), "fit.");
  write_manifest(std::filesystem::path(a.out_dir) / "manifest.txt", manifest);

  std::cout << beta_table_csv(result);
  for (const auto& note : result.diagnostics.notes) std::cerr << "note: " << note << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct SimArgs {
  SimConfig sim;
  std::string scenario = "bounded";
  std::string out_dir;
  bool untruncated = false;
};

void add_sim_flags(CLI::App* cmd, SimArgs& a) {
  cmd->add_option("--n", a.sim.n, "number of subjects");
  cmd->add_option("--m0", a.sim.m0, "minimum cluster size");
  cmd->add_option("--mr", a.sim.mr, "binomial trials added to m0");
  cmd->add_option("--binom-p", a.sim.binom_p, "binomial success probability");
  cmd->add_option("--rho", a.sim.rho, "error correlation parameter in [0,1)");
  cmd->add_option("--omega", a.sim.omega, "error variance");
  cmd->add_option("--scenario", a.scenario, "bounded or diverging")->check(CLI::IsMember({"bounded", "diverging"}));
  cmd->add_option("--B", a.sim.diverging_b, "diverging scenario: dense grid multiplier");
  cmd->add_option("--C", a.sim.diverging_c, "diverging scenario: dense subject count multiplier");
  cmd->add_option("--covariate-correlation", a.sim.covariates.correlation, "exchangeable covariate correlation");
  cmd->add_flag("--untruncated", a.untruncated, "do not truncate covariates to [-2.5, 2.5]");
}

void finish_sim(SimArgs& a) {
  a.sim.scenario = a.scenario == "diverging" ? Scenario::diverging : Scenario::bounded;
  a.sim.covariates.truncate = !a.untruncated;
  a.sim.check();
}

KeyValues sim_manifest(const SimConfig& s) {
  return {{"n", std::to_string(s.n)},
          {"m0", std::to_string(s.m0)},
          {"mr", std::to_string(s.mr)},
          {"binom_p", full(s.binom_p)},
          {"rho", full(s.rho)},
          {"omega", full(s.omega)},
          {"scenario", s.scenario == Scenario::diverging ? "diverging" : "bounded"},
          {"B", full(s.diverging_b)},
          {"C", full(s.diverging_c)},
          {"covariate_truncate", s.covariates.truncate ? "true" : "false"},
          {"covariate_bound", full(s.covariates.bound)},
          {"covariate_correlation", full(s.covariates.correlation)},
          {"seed", std::to_string(s.seed)}};
}

int run_simulate(SimArgs& a) {
  finish_sim(a);
  const auto data = simulate_dataset(a.sim);
  const std::filesystem::path dir(a.out_dir);
  std::filesystem::create_directories(dir);
  save_csv(data.dataset, dir / "data.csv");
  write_truth_csv(data, dir);
  KeyValues manifest = {{"command", "simulate"}, {"version", kVersion}};
  append(manifest, sim_manifest(a.sim));
  Index dense = 0;
  for (bool d : data.truth.diverging) dense += d ? 1 : 0;
  manifest.emplace_back("dense_subjects", std::to_string(dense));
  manifest.emplace_back("n1", std::to_string(data.dataset.n1()));
  write_manifest(dir / "manifest.txt", manifest);
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct McArgs {
  SimArgs sim;
  int reps = 200;
  std::string variants = "independent,efficient,oracle";
  std::optional<std::uint64_t> seed;
  int workers = 0;
  HarnessOptions options;
  ConfigFlags config;
};

int run_mc(McArgs& a) {
  finish_sim(a.sim);
  const PipelineConfig config = resolve_config(a.config);
  const auto variants = parse_variants(a.variants);
  if (a.reps < 2) throw InputError("--reps must be >= 2");
  if (!a.seed) {
    a.seed = std::random_device{}() ^ (static_cast<std::uint64_t>(std::random_device{}()) << 32);
    std::cout << "seed=" << *a.seed << '\n';
  }
  a.sim.sim.seed = *a.seed;
  a.options.workers = a.workers > 0 ? a.workers : default_workers();

  const auto summary = mc_study(a.sim.sim, a.reps, variants, config, a.options);
  const std::filesystem::path dir(a.sim.out_dir);
  std::filesystem::create_directories(dir);
  write_text(dir / "summary.csv", report(summary, ReportFormat::csv));
  std::string md = report(summary, ReportFormat::markdown);
  if (summary.mise) md += "\n" + report_mise(summary, ReportFormat::markdown);
  write_text(dir / "summary.md", md);
  if (summary.mise) write_text(dir / "mise.csv", report_mise(summary, ReportFormat::csv));
  write_text(dir / "raw.csv", raw_csv(summary));

  KeyValues manifest = {{"command", "mc"}, {"version", kVersion}};
  append(manifest, sim_manifest(a.sim.sim));
  manifest.emplace_back("reps", std::to_string(a.reps));
  manifest.emplace_back("variants", a.variants);
  manifest.emplace_back("workers", std::to_string(a.options.workers));
  manifest.emplace_back("positive_lambda", full(a.options.positive_lambda));
  manifest.emplace_back("different_h3_multiplier", full(a.options.different_h3_multiplier));
  manifest.emplace_back("iterative_max_iter", std::to_string(a.options.iterative_max_iter));
  manifest.emplace_back("iterative_tol", full(a.options.iterative_tol));
  append(manifest, to_key_values(config), "config.");
  manifest.emplace_back("failed_reps", std::to_string(summary.failed));
  write_manifest(dir / "manifest.txt", manifest);

  std::cout << md;
  if (summary.failed > 0) std::cerr << summary.failed << " of " << a.reps << " replications failed\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct ValidateArgs {
  std::string data;
  bool add_intercept = false;
  bool rescale_time = false;
};

int run_validate(const ValidateArgs& a) {
  CsvReport csv_report;
  const auto dataset = load_csv(a.data, CsvSchema{a.add_intercept, a.rescale_time}, &csv_report);
  for (const auto& w : csv_report.warnings) std::cerr << "warning: " << w << '\n';
  const auto violations = validate(dataset);
  for (const auto& v : violations)
    std::cout << "subject '" << v.subject << "' " << v.field << ": " << v.message << '\n';
  std::cout << "subjects=" << dataset.n() << " observations=" << dataset.n1() << " p=" << dataset.p
            << " q=" << dataset.q << " violations=" << violations.size() << '\n';
  return violations.empty() ? kExitOk : kExitInput;
}

template <typename F>
int guarded(F&& body) {
  try {
    return body();
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitOther;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Efficient estimation of semivarying coefficient models for longitudinal data"};
  app.set_version_flag("--version", std::string(svcm::kVersion));
  app.require_subcommand(1);

  FitArgs fit;
  auto* fit_cmd = app.add_subcommand("fit", "fit a CSV dataset");
  fit_cmd->add_option("--data", fit.data, "long-format CSV")->required();
  fit_cmd->add_option("--out-dir", fit.out_dir, "output directory")->required();
  fit_cmd->add_flag("--add-intercept", fit.add_intercept, "prepend a constant column to z");
  fit_cmd->add_flag("--rescale-time", fit.rescale_time, "map observed times onto [0,1]");
  add_config_flags(fit_cmd, fit.config);

  SimArgs sim;
  auto* sim_cmd = app.add_subcommand("simulate", "draw a dataset from the simulation design");
  add_sim_flags(sim_cmd, sim);
  sim_cmd->add_option("--seed", sim.sim.seed, "64-bit seed");
  sim_cmd->add_option("--out-dir", sim.out_dir, "output directory")->required();

  McArgs mc;
  auto* mc_cmd = app.add_subcommand("mc", "Monte Carlo study");
  add_sim_flags(mc_cmd, mc.sim);
  mc_cmd->add_option("--reps", mc.reps, "replications");
  mc_cmd->add_option("--variants", mc.variants,
                     "comma-separated: independent,efficient,oracle,crude,positive,iterative,different_h3");
  mc_cmd->add_option("--seed", mc.seed, "64-bit seed; generated and printed when omitted");
  mc_cmd->add_option("--workers", mc.workers, "parallel replications (default: available cores)");
  mc_cmd->add_option("--positive-lambda", mc.options.positive_lambda, "threshold for the positive variant");
  mc_cmd->add_option("--out-dir", mc.sim.out_dir, "output directory")->required();
  add_config_flags(mc_cmd, mc.config);

  ValidateArgs val;
  auto* val_cmd = app.add_subcommand("validate", "check a CSV dataset without fitting");
  val_cmd->add_option("--data", val.data, "long-format CSV")->required();
  val_cmd->add_flag("--add-intercept", val.add_intercept, "prepend a constant column to z");
  val_cmd->add_flag("--rescale-time", val.rescale_time, "map observed times onto [0,1]");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInput;
  }

  if (*fit_cmd) return guarded([&] { return run_fit(fit); });
  if (*sim_cmd) return guarded([&] { return run_simulate(sim); });
  if (*mc_cmd) return guarded([&] { return run_mc(mc); });
  if (*val_cmd) return guarded([&] { return run_validate(val); });
  return kExitInput;
}
