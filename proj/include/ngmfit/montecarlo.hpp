#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "fit.hpp"
#include "model.hpp"
#include "observe.hpp"

namespace ngmfit {

/// Which parts of the study design a scenario estimates:
///   single_known_s0  - one outbreak, s0 known, noise params free
///   single_free_s0   - one outbreak, s0 free, noise params free
///   multi_known_s0   - shared matrix across years, s0 known, noise fixed
///   multi_free_s0    - shared matrix across years, s0 free, noise fixed
enum class Scenario { single_known_s0, single_free_s0, multi_known_s0, multi_free_s0 };

inline bool scenario_multi_year(Scenario s) {
  return s == Scenario::multi_known_s0 || s == Scenario::multi_free_s0;
}
inline bool scenario_free_s0(Scenario s) {
  return s == Scenario::single_free_s0 || s == Scenario::multi_free_s0;
}

inline Scenario scenario_from_label(const std::string& label) {
  if (label == "i") return Scenario::single_known_s0;
  if (label == "ii") return Scenario::single_free_s0;
  if (label == "iii") return Scenario::multi_known_s0;
  if (label == "iv") return Scenario::multi_free_s0;
  throw std::invalid_argument("scenario label must be one of i, ii, iii, iv");
}

inline std::string scenario_label(Scenario s) {
  switch (s) {
    case Scenario::single_known_s0: return "i";
    case Scenario::single_free_s0: return "ii";
    case Scenario::multi_known_s0: return "iii";
    case Scenario::multi_free_s0: return "iv";
  }
  return "?";
}

/// Distribution of the per-year effective reproduction number and initial
/// susceptibility for multi-year scenarios; draws are truncated to the
/// given open intervals.
struct YearDrawSpec {
  int count = 10;
  double re_mean = 1.2;
  double re_sd = 0.05;
  double re_lo = 1.01;
  double re_hi = 1.6;
  double s0_mean = 0.4;
  double s0_sd = 0.05;
  double s0_lo = 0.05;
  double s0_hi = 0.95;
};

enum class StartMode { two_stage, random_start };

struct ScenarioSpec {
  Matrix beta;
  Scenario scenario = Scenario::single_known_s0;
  int replicates = 500;
  std::uint64_t seed = 1;
  std::vector<double> population = {1e6, 2e6};
  std::vector<double> s0_single = {0.4, 0.4};
  double seed_fraction = 1e-3;
  SerialInterval serial = default_serial_interval();
  NoiseParams noise{10.0, 0.1};
  int smoothing_window = 7;
  YearDrawSpec years;
  StartMode start = StartMode::two_stage;
  NelderMeadOptions optimizer;
};

/// The per-year truth drawn once per spec seed for multi-year scenarios.
/// re[0] is implied by the drawn s0 of year 1 because r[0] is pinned to 1.
struct YearDraws {
  std::vector<double> re;
  std::vector<std::vector<double>> s0;
  std::vector<double> r;
  std::vector<int> horizon;
};

struct ParamStats {
  std::string name;
  double truth = 0.0;
  double mean = 0.0;
  double bias = 0.0;
  double sd = 0.0;
};

struct McSummary {
  Matrix truth_beta;
  int replicates = 0;
  int failed = 0;
  std::vector<int> failed_replicates;
  bool failure_alarm = false;
  double mse = 0.0;
  double stage1_mse = 0.0;
  std::vector<ParamStats> beta_stats;
  std::vector<ParamStats> stage1_beta_stats;
  std::vector<Matrix> estimates;
  std::vector<Matrix> stage1_estimates;
  std::vector<std::vector<double>> r_estimates;
  std::vector<double> logliks;
  std::vector<bool> converged;
  std::optional<YearDraws> draws;
};

/// Sum over matrix entries of squared bias plus population variance of the
/// replicate estimates.
inline double mse(const std::vector<Matrix>& estimates, const Matrix& truth) {
  if (estimates.empty()) throw std::invalid_argument("mse: no estimates");
  const std::size_t m = truth.rows();
  double total = 0.0;
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t k = 0; k < m; ++k) {
      double mean = 0.0;
      for (const auto& e : estimates) mean += e(j, k);
      mean /= static_cast<double>(estimates.size());
      double var = 0.0;
      for (const auto& e : estimates) {
        double dv = e(j, k) - mean;
        var += dv * dv;
      }
      var /= static_cast<double>(estimates.size());
      double bias = mean - truth(j, k);
      total += bias * bias + var;
    }
  return total;
}

namespace detail {

inline double truncated_normal(GaussianSampler& rng, double mean, double sd, double lo,
                               double hi) {
  for (int tries = 0; tries < 100000; ++tries) {
    double v = mean + sd * rng.normal();
    if (v > lo && v < hi) return v;
  }
  throw std::runtime_error("truncated_normal: bounds apparently unreachable");
}

/// Index-dispatched worker loop; results must be written into per-index
/// slots so the aggregation stays deterministic regardless of thread count.
inline void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
  if (workers <= 0) {
    unsigned hc = std::thread::hardware_concurrency();
    workers = hc == 0 ? 1 : static_cast<int>(hc);
  }
  workers = std::min(workers, n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  for (auto& t : pool) t.join();
}

}  // namespace detail

/// Deterministic truth for a scenario: the draws (multi-year), the per-year
/// configs with horizons frozen to the auto-stopped truth lengths, the truth
/// trajectories, and the fit problem missing only the observations.
struct ScenarioData {
  SeasonSet seasons;
  std::vector<SimulationResult> truth;
  std::optional<YearDraws> draws;
  FitProblem problem_base;
};

inline ScenarioData make_scenario_data(const ScenarioSpec& spec) {
  NextGenMatrix beta(spec.beta);
  const std::size_t m = beta.groups();
  if (spec.population.size() != m || spec.s0_single.size() != m)
    throw std::invalid_argument("make_scenario_data: group size mismatch");
  spec.noise.validate();

  ScenarioData data;
  const bool multi = scenario_multi_year(spec.scenario);
  const std::size_t L = multi ? static_cast<std::size_t>(spec.years.count) : 1;
  if (multi && spec.years.count < 2)
    throw std::invalid_argument("make_scenario_data: multi-year scenario needs >= 2 years");

  data.seasons.r.assign(L, 1.0);
  data.seasons.configs.assign(L, OutbreakConfig{spec.population, spec.s0_single,
                                                spec.seed_fraction, spec.serial, std::nullopt});

  if (multi) {
    // One draw per spec seed: season 1 draws s0 only (its effective
    // reproduction number is whatever r = 1 gives there); later seasons draw
    // both s0 and the target effective R, converted to r through the
    // spectral radius at that season's s0.
    GaussianSampler rng(spec.seed);
    YearDraws draws;
    draws.re.resize(L);
    draws.s0.resize(L);
    draws.r.assign(L, 1.0);
    for (std::size_t y = 0; y < L; ++y) {
      draws.s0[y].resize(m);
      for (std::size_t g = 0; g < m; ++g)
        draws.s0[y][g] = detail::truncated_normal(rng, spec.years.s0_mean, spec.years.s0_sd,
                                                  spec.years.s0_lo, spec.years.s0_hi);
      if (y == 0) {
        draws.re[0] = effective_r(beta, draws.s0[0], 1.0);
      } else {
        draws.re[y] = detail::truncated_normal(rng, spec.years.re_mean, spec.years.re_sd,
                                               spec.years.re_lo, spec.years.re_hi);
        draws.r[y] = scaling_factor(beta, draws.s0[y], draws.re[y]);
      }
      data.seasons.configs[y].s0 = draws.s0[y];
      data.seasons.r[y] = draws.r[y];
    }
    data.draws = std::move(draws);
  }

  data.truth = simulate_recurrent(beta, data.seasons);
  for (std::size_t y = 0; y < L; ++y) {
    data.seasons.configs[y].horizon = data.truth[y].incidence.days();
    if (data.draws) data.draws->horizon.push_back(data.truth[y].incidence.days());
  }

  FitProblem& p = data.problem_base;
  p.population.assign(L, spec.population);
  p.serial = spec.serial;
  p.smoothing_window = spec.smoothing_window;
  p.optimizer = spec.optimizer;
  p.s0_free = scenario_free_s0(spec.scenario);
  p.phi_free = !multi;
  if (multi) p.noise = spec.noise;
  for (std::size_t y = 0; y < L; ++y) {
    p.s0.push_back(data.seasons.configs[y].s0);
    std::vector<double> seeds(m);
    for (std::size_t g = 0; g < m; ++g)
      seeds[g] = spec.seed_fraction * data.seasons.configs[y].s0[g] * spec.population[g];
    p.seeds.push_back(std::move(seeds));
  }
  return data;
}

/// Observation set and fit problem for one replicate; replicate indices are
/// 1-based and the replicate seed is spec.seed + replicate.
inline FitProblem make_replicate_problem(const ScenarioSpec& spec, const ScenarioData& data,
                                         int replicate) {
  FitProblem p = data.problem_base;
  std::vector<IncidenceSeries> truth;
  truth.reserve(data.truth.size());
  for (const auto& sim : data.truth) truth.push_back(sim.incidence);
  p.observations = observe_seasons(truth, spec.noise, spec.seed + static_cast<std::uint64_t>(replicate));
  return p;
}

inline McSummary run_scenario(const ScenarioSpec& spec, int workers = 0) {
  if (spec.replicates < 1) throw std::invalid_argument("run_scenario: replicates must be >= 1");
  ScenarioData data = make_scenario_data(spec);
  const std::size_t m = spec.beta.rows();
  const int K = spec.replicates;

  struct Slot {
    bool ok = false;
    FitResult fit;
  };
  std::vector<Slot> slots(static_cast<std::size_t>(K));

  detail::parallel_for(K, workers, [&](int idx) {
    const int replicate = idx + 1;
    try {
      FitProblem problem = make_replicate_problem(spec, data, replicate);
      FitResult fit = (spec.start == StartMode::two_stage)
                          ? two_stage_fit(problem)
                          : random_start_fit(problem, spec.seed +
                                                          static_cast<std::uint64_t>(replicate) +
                                                          0x9e3779b97f4a7c15ULL);
      slots[static_cast<std::size_t>(idx)].fit = std::move(fit);
      slots[static_cast<std::size_t>(idx)].ok = true;
    } catch (const std::exception&) {
      slots[static_cast<std::size_t>(idx)].ok = false;
    }
  });

  McSummary summary;
  summary.truth_beta = spec.beta;
  summary.replicates = K;
  summary.draws = data.draws;
  for (int idx = 0; idx < K; ++idx) {
    const Slot& slot = slots[static_cast<std::size_t>(idx)];
    if (!slot.ok) {
      summary.failed_replicates.push_back(idx + 1);
      continue;
    }
    summary.estimates.push_back(slot.fit.beta);
    summary.stage1_estimates.push_back(slot.fit.stage1.beta);
    summary.r_estimates.push_back(slot.fit.r);
    summary.logliks.push_back(slot.fit.loglik);
    summary.converged.push_back(slot.fit.converged);
  }
  summary.failed = static_cast<int>(summary.failed_replicates.size());
  summary.failure_alarm = summary.failed > 0.02 * K;
  if (summary.estimates.empty())
    throw std::runtime_error("run_scenario: every replicate failed");

  summary.mse = mse(summary.estimates, spec.beta);
  summary.stage1_mse = mse(summary.stage1_estimates, spec.beta);

  auto stats_for = [&](const std::vector<Matrix>& est) {
    std::vector<ParamStats> stats;
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t k = 0; k < m; ++k) {
        ParamStats ps;
        ps.name = "beta" + std::to_string(j + 1) + std::to_string(k + 1);
        ps.truth = spec.beta(j, k);
        double mean = 0.0;
        for (const auto& e : est) mean += e(j, k);
        mean /= static_cast<double>(est.size());
        double var = 0.0;
        for (const auto& e : est) {
          double dv = e(j, k) - mean;
          var += dv * dv;
        }
        var /= static_cast<double>(est.size());
        ps.mean = mean;
        ps.bias = mean - ps.truth;
        ps.sd = std::sqrt(var);
        stats.push_back(std::move(ps));
      }
    return stats;
  };
  summary.beta_stats = stats_for(summary.estimates);
  summary.stage1_beta_stats = stats_for(summary.stage1_estimates);
  return summary;
}

}  // namespace ngmfit
