#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ngmfit/design.hpp"
#include "ngmfit/fit.hpp"
#include "ngmfit/io.hpp"
#include "ngmfit/model.hpp"
#include "ngmfit/montecarlo.hpp"
#include "ngmfit/observe.hpp"
#include "ngmfit/version.hpp"

namespace {

constexpr int exit_ok = 0;
constexpr int exit_validation = 2;
constexpr int exit_nonidentifiable = 3;
constexpr int exit_nonconvergence = 4;
constexpr int exit_io = 5;

void emit_record(const std::string& key, const std::string& kind, const std::string& message) {
  ngmfit::json rec;
  rec[key] = kind;
  rec["message"] = message;
  std::cerr << rec.dump() << '\n';
}

void emit_error(const std::string& kind, const std::string& message) {
  emit_record("error", kind, message);
}

int env_workers() {
  const char* v = std::getenv("NGMFIT_WORKERS");
  if (!v) return 0;
  try {
    return std::max(0, std::stoi(v));
  } catch (const std::exception&) {
    return 0;
  }
}

std::vector<std::string> group_names(const ngmfit::RunConfig& cfg) {
  std::vector<std::string> names;
  for (const auto& g : cfg.groups) names.push_back(g.name);
  return names;
}

int cmd_simulate(const ngmfit::RunConfig& cfg, const ngmfit::json& doc,
                 const std::string& out_dir, std::uint64_t seed) {
  using namespace ngmfit;
  if (!cfg.beta) throw ValidationError("simulate: config needs a beta matrix");
  if (cfg.seasons.empty()) throw ValidationError("simulate: config needs at least one season");
  NextGenMatrix beta(*cfg.beta);
  const std::size_t m = cfg.group_count(), L = cfg.seasons.size();
  if (cfg.seed_counts && cfg.seed_counts->size() != L)
    throw ValidationError("simulate: seeding counts must have one row per season");
  if (cfg.reporting && cfg.reporting->seasons() != L)
    throw ValidationError("simulate: reporting matrices must have one column per season");

  std::vector<double> pop = cfg.populations();
  std::vector<IncidenceSeries> truth;
  std::vector<SusceptibleSeries> sus;
  std::vector<std::string> labels;
  std::vector<int> first_day;
  bool clamped = false;
  for (std::size_t y = 0; y < L; ++y) {
    std::vector<double> seeds(m);
    for (std::size_t g = 0; g < m; ++g)
      seeds[g] = cfg.seed_counts ? (*cfg.seed_counts)[y][g]
                                 : cfg.seed_fraction * cfg.seasons[y].s0[g] * pop[g];
    SimulationResult sim = simulate_seeded(cfg.beta->scaled(cfg.seasons[y].r), pop,
                                           cfg.seasons[y].s0, seeds, cfg.serial,
                                           cfg.seasons[y].horizon);
    clamped = clamped || sim.clamped;
    truth.push_back(std::move(sim.incidence));
    sus.push_back(std::move(sim.susceptibles));
    labels.push_back(std::to_string(y + 1));
    first_day.push_back(1);
  }
  if (clamped)
    emit_record("warning", "clamped",
                "new infections hit the susceptible ceiling in at least one season");

  OutputDir out(out_dir);
  try {
    out.write_text("truth.csv", incidence_csv(truth, labels, group_names(cfg), first_day));
    out.write_text("susceptibles.csv", susceptibles_csv(sus, labels, group_names(cfg)));
    if (cfg.noise) {
      std::vector<IncidenceSeries> observed =
          cfg.reporting ? observe_reported(truth, *cfg.reporting, *cfg.noise, seed)
                        : observe_seasons(truth, *cfg.noise, seed);
      out.write_text("observed.csv",
                     incidence_csv(observed, labels, group_names(cfg), first_day));
    }
    out.write_text("manifest.json", manifest_text("simulate", seed, doc));
  } catch (...) {
    out.discard();
    throw;
  }
  return exit_ok;
}

int cmd_fit(const ngmfit::RunConfig& cfg, const ngmfit::json& doc, const std::string& out_dir,
            const std::string& data_path, std::uint64_t seed) {
  using namespace ngmfit;
  IncidenceTable table = ingest_incidence_file(data_path, IngestOptions{cfg.negative_floor});
  ProblemBundle bundle = make_fit_problem(cfg, table);
  FitResult fit = two_stage_fit(bundle.problem);

  OutputDir out(out_dir);
  try {
    out.write_text("fit_result.txt", fit_result_text(fit));
    out.write_text("fit_series.csv", fit_series_csv(bundle.problem, fit, bundle.seasons,
                                                    group_names(cfg), bundle.first_day));
    out.write_text("year_summary.csv", year_summary_csv(fit, bundle.seasons, group_names(cfg)));
    out.write_text("manifest.json", manifest_text("fit", seed, doc));
  } catch (...) {
    out.discard();
    throw;
  }
  if (!fit.converged) {
    emit_error("nonconvergence", "the likelihood optimization stopped before its tolerances");
    return exit_nonconvergence;
  }
  return exit_ok;
}

int cmd_profile(const ngmfit::RunConfig& cfg, const ngmfit::json& doc, const std::string& out_dir,
                const std::string& data_path, const std::string& param, double level,
                std::uint64_t seed) {
  using namespace ngmfit;
  IncidenceTable table = ingest_incidence_file(data_path, IngestOptions{cfg.negative_floor});
  ProblemBundle bundle = make_fit_problem(cfg, table);
  FitResult fit = two_stage_fit(bundle.problem);
  ProfileInterval ci = profile_ci(bundle.problem, fit, param, level);

  OutputDir out(out_dir);
  try {
    out.write_text("fit_result.txt", fit_result_text(fit));
    out.write_text("profile_result.txt", profile_result_text(ci, fit.loglik));
    out.write_text("profile_" + param + ".csv", profile_grid_csv(ci));
    out.write_text("manifest.json", manifest_text("profile", seed, doc));
  } catch (...) {
    out.discard();
    throw;
  }
  if (!fit.converged) {
    emit_error("nonconvergence", "the likelihood optimization stopped before its tolerances");
    return exit_nonconvergence;
  }
  return exit_ok;
}

int cmd_mc(const ngmfit::RunConfig& cfg, const ngmfit::json& doc, const std::string& out_dir,
           std::uint64_t seed, int workers_flag) {
  using namespace ngmfit;
  if (!cfg.mc) throw ValidationError("mc: config needs an mc section");
  if (cfg.seed_counts)
    throw ValidationError("mc: seeding counts are not supported here, use a fraction");

  ScenarioSpec spec;
  spec.beta = cfg.mc->beta;
  spec.scenario = cfg.mc->scenario;
  spec.replicates = cfg.mc->replicates;
  spec.seed = seed;
  spec.population = cfg.populations();
  spec.s0_single = cfg.seasons.empty() ? std::vector<double>(cfg.group_count(), 0.4)
                                       : cfg.seasons[0].s0;
  spec.seed_fraction = cfg.seed_fraction;
  spec.serial = cfg.serial;
  spec.noise = cfg.noise.value_or(NoiseParams{10.0, 0.1});
  spec.smoothing_window = cfg.smoothing_window;
  spec.years = cfg.mc->years;
  spec.start = cfg.mc->start;
  spec.optimizer = cfg.optimizer;

  int workers = workers_flag > 0 ? workers_flag : env_workers();
  if (workers == 0) workers = cfg.mc->workers;

  McSummary summary = run_scenario(spec, workers);

  OutputDir out(out_dir);
  try {
    out.write_text("mc_summary.txt", mc_summary_text(summary, cfg.mc->matrix_id, spec.scenario));
    out.write_text("mc_replicates.csv", mc_replicates_csv(summary));
    if (summary.draws) out.write_text("mc_year_draws.csv", year_draws_csv(*summary.draws));
    out.write_text("manifest.json", manifest_text("mc", seed, doc));
  } catch (...) {
    out.discard();
    throw;
  }
  if (summary.failure_alarm) {
    emit_error("nonconvergence", std::to_string(summary.failed) + " of " +
                                     std::to_string(summary.replicates) +
                                     " replicates failed (above the 2% alarm line)");
    return exit_nonconvergence;
  }
  return exit_ok;
}

int cmd_diagnose(const ngmfit::RunConfig& cfg, const std::string& data_path) {
  using namespace ngmfit;
  IncidenceTable table = ingest_incidence_file(data_path, IngestOptions{cfg.negative_floor});
  ProblemBundle bundle = make_fit_problem(cfg, table);
  const FitProblem& problem = bundle.problem;
  std::vector<double> r;
  for (const auto& season : cfg.seasons) r.push_back(season.r);
  if (!r.empty() && r[0] != 1.0)
    throw ValidationError("diagnose: the first season's r must be 1");
  std::vector<IncidenceSeries> working = detail::working_series(problem);
  DesignSystem sys =
      build_design(working, problem.population, problem.s0, problem.seeds, r, problem.serial);
  IdentifiabilityReport report = identifiability(sys);
  std::cout << identifiability_text(report);
  if (report.flagged) {
    emit_error("non-identifiable", "the design matrix is rank deficient or near singular");
    return exit_nonidentifiable;
  }
  return exit_ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Renewal-model outbreak simulation and next-generation-matrix estimation"};
  app.set_version_flag("--version", std::string("ngmfit ") + ngmfit::version);
  app.require_subcommand(1);

  std::string config_path, out_dir, data_path, param;
  double level = 0.95;
  std::uint64_t seed_flag = 0;
  int workers_flag = 0;

  auto* sim = app.add_subcommand("simulate", "Simulate outbreaks from a config");
  sim->add_option("--config", config_path, "JSON run config")->required();
  sim->add_option("--out", out_dir, "Output directory (overrides the config)");
  auto* sim_seed = sim->add_option("--seed", seed_flag, "Observation seed override");

  auto* fit = app.add_subcommand("fit", "Estimate the matrix from incidence data");
  fit->add_option("--config", config_path, "JSON run config")->required();
  fit->add_option("--data", data_path, "Incidence CSV (season,day,group,count)")->required();
  fit->add_option("--out", out_dir, "Output directory (overrides the config)");

  auto* mc = app.add_subcommand("mc", "Monte Carlo study of the estimator");
  mc->add_option("--config", config_path, "JSON run config")->required();
  mc->add_option("--out", out_dir, "Output directory (overrides the config)");
  auto* mc_seed = mc->add_option("--seed", seed_flag, "Study seed override");
  mc->add_option("--workers", workers_flag, "Worker threads (0 = NGMFIT_WORKERS or config)");

  auto* prof = app.add_subcommand("profile", "Profile-likelihood confidence interval");
  prof->add_option("--config", config_path, "JSON run config")->required();
  prof->add_option("--data", data_path, "Incidence CSV (season,day,group,count)")->required();
  prof->add_option("--param", param, "Free parameter name, e.g. beta11")->required();
  prof->add_option("--level", level, "Confidence level (default 0.95)");
  prof->add_option("--out", out_dir, "Output directory (overrides the config)");

  auto* diag = app.add_subcommand("diagnose", "Identifiability report for a data set");
  diag->add_option("--config", config_path, "JSON run config")->required();
  diag->add_option("--data", data_path, "Incidence CSV (season,day,group,count)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    emit_error("usage", e.what());
    return exit_validation;
  }

  try {
    ngmfit::json doc = ngmfit::load_config_json(config_path);
    ngmfit::RunConfig cfg = ngmfit::parse_config(doc);
    std::uint64_t seed = cfg.seed;
    if ((sim->parsed() && sim_seed->count()) || (mc->parsed() && mc_seed->count()))
      seed = seed_flag;

    std::string dir = !out_dir.empty() ? out_dir : cfg.output;
    if (!diag->parsed() && dir.empty())
      throw ngmfit::ValidationError("no output directory: set 'output' in the config or --out");

    if (sim->parsed()) return cmd_simulate(cfg, doc, dir, seed);
    if (fit->parsed()) return cmd_fit(cfg, doc, dir, data_path, seed);
    if (mc->parsed()) return cmd_mc(cfg, doc, dir, seed, workers_flag);
    if (prof->parsed()) return cmd_profile(cfg, doc, dir, data_path, param, level, seed);
    if (diag->parsed()) return cmd_diagnose(cfg, data_path);
    emit_error("usage", "no subcommand given");
    return exit_validation;
  } catch (const ngmfit::NonIdentifiableError& e) {
    emit_error("non-identifiable", e.what());
    return exit_nonidentifiable;
  } catch (const ngmfit::ValidationError& e) {
    emit_error("validation", e.what());
    return exit_validation;
  } catch (const std::invalid_argument& e) {
    emit_error("validation", e.what());
    return exit_validation;
  } catch (const ngmfit::IoError& e) {
    emit_error("io", e.what());
    return exit_io;
  } catch (const std::filesystem::filesystem_error& e) {
    emit_error("io", e.what());
    return exit_io;
  } catch (const std::runtime_error& e) {
    emit_error("runtime", e.what());
    return exit_nonconvergence;
  } catch (const std::exception& e) {
    emit_error("internal", e.what());
    return exit_nonconvergence;
  }
}
