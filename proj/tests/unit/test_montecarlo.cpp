#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <cmath>
#include <vector>

#include "ngmfit/montecarlo.hpp"

using namespace ngmfit;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

TEST_CASE("scenario labels round-trip") {
  for (const std::string& s : {"i", "ii", "iii", "iv"})
    REQUIRE(scenario_label(scenario_from_label(s)) == s);
  REQUIRE_THROWS_AS(scenario_from_label("v"), std::invalid_argument);
  REQUIRE(scenario_multi_year(Scenario::multi_free_s0));
  REQUIRE_FALSE(scenario_multi_year(Scenario::single_free_s0));
  REQUIRE(scenario_free_s0(Scenario::single_free_s0));
  REQUIRE_FALSE(scenario_free_s0(Scenario::multi_known_s0));
}

TEST_CASE("mse decomposes into squared bias plus variance") {
  Matrix truth(2, 2, 1.0);

  // perfect estimates
  REQUIRE(mse({truth, truth, truth}, truth) == 0.0);

  // pure bias: every entry off by 0.1 in every replicate
  Matrix biased(2, 2, 1.1);
  REQUIRE_THAT(mse({biased, biased}, truth), WithinAbs(0.04, 1e-14));

  // pure variance: entries straddle the truth symmetrically
  Matrix lo(2, 2, 0.9), hi(2, 2, 1.1);
  REQUIRE_THAT(mse({lo, hi}, truth), WithinAbs(0.04, 1e-14));

  // combined, one entry only
  Matrix a(2, 2, 1.0), b(2, 2, 1.0);
  a(0, 0) = 1.1;
  b(0, 0) = 1.5;  // mean 1.3: bias^2 = 0.09, var = 0.04
  REQUIRE_THAT(mse({a, b}, truth), WithinAbs(0.13, 1e-12));

  REQUIRE_THROWS_AS(mse({}, truth), std::invalid_argument);
}

TEST_CASE("truncated normal draws respect their bounds") {
  GaussianSampler rng(42);
  double sum = 0.0;
  const int n = 2000;
  for (int i = 0; i < n; ++i) {
    double v = detail::truncated_normal(rng, 0.5, 0.5, 0.3, 0.7);
    REQUIRE(v >= 0.3);
    REQUIRE(v <= 0.7);
    sum += v;
  }
  REQUIRE_THAT(sum / n, WithinAbs(0.5, 0.02));
  REQUIRE_THROWS_AS(detail::truncated_normal(rng, 0.5, 0.5, 0.7, 0.3), std::runtime_error);
}

TEST_CASE("parallel_for visits every index exactly once") {
  for (int workers : {1, 3, 8}) {
    std::vector<std::atomic<int>> hits(25);
    detail::parallel_for(25, workers, [&](int i) { hits[static_cast<std::size_t>(i)]++; });
    for (const auto& h : hits) REQUIRE(h.load() == 1);
  }
  detail::parallel_for(0, 2, [&](int) { FAIL("no work expected"); });
}

namespace {

ScenarioSpec small_spec(Scenario sc, int replicates, std::uint64_t seed = 1) {
  ScenarioSpec spec;
  spec.beta = study_matrix(1);
  spec.scenario = sc;
  spec.replicates = replicates;
  spec.seed = seed;
  spec.years.count = 2;
  return spec;
}

}  // namespace

TEST_CASE("single-year scenario data freezes the truth and problem shell") {
  ScenarioSpec spec = small_spec(Scenario::single_known_s0, 1);
  ScenarioData data = make_scenario_data(spec);
  REQUIRE(data.truth.size() == 1);
  REQUIRE_FALSE(data.draws.has_value());
  REQUIRE(data.seasons.r == std::vector<double>{1.0});

  const FitProblem& p = data.problem_base;
  REQUIRE(p.s0 == std::vector<std::vector<double>>{{0.4, 0.4}});
  REQUIRE_FALSE(p.s0_free);
  REQUIRE(p.phi_free);  // single-outbreak runs estimate the noise
  REQUIRE_FALSE(p.noise.has_value());
  REQUIRE_THAT(p.seeds[0][0], WithinRel(1e-3 * 0.4 * 1e6, 1e-12));
  REQUIRE_THAT(p.seeds[0][1], WithinRel(1e-3 * 0.4 * 2e6, 1e-12));
  // horizon frozen to the realized outbreak length
  REQUIRE(data.seasons.configs[0].horizon == data.truth[0].incidence.days());
}

TEST_CASE("multi-year draws anchor year one and invert the scaling") {
  ScenarioSpec spec = small_spec(Scenario::multi_known_s0, 1, 7);
  spec.years.count = 4;
  ScenarioData data = make_scenario_data(spec);
  REQUIRE(data.draws.has_value());
  const YearDraws& d = *data.draws;
  REQUIRE(d.r.size() == 4);
  REQUIRE(d.r[0] == 1.0);
  NextGenMatrix beta(spec.beta);
  REQUIRE_THAT(d.re[0], WithinRel(effective_r(beta, d.s0[0], 1.0), 1e-12));
  for (std::size_t y = 1; y < 4; ++y) {
    REQUIRE(d.re[y] >= spec.years.re_lo);
    REQUIRE(d.re[y] <= spec.years.re_hi);
    // r is exactly the scaling that reproduces the drawn effective R
    REQUIRE_THAT(effective_r(beta, d.s0[y], d.r[y]), WithinRel(d.re[y], 1e-10));
  }
  for (std::size_t y = 0; y < 4; ++y)
    for (double s : d.s0[y]) {
      REQUIRE(s >= spec.years.s0_lo);
      REQUIRE(s <= spec.years.s0_hi);
    }
  REQUIRE(d.horizon.size() == 4);
  for (std::size_t y = 0; y < 4; ++y)
    REQUIRE(d.horizon[y] == data.truth[y].incidence.days());

  // draws are a function of the spec seed alone
  ScenarioData again = make_scenario_data(spec);
  REQUIRE(again.draws->s0 == d.s0);
  REQUIRE(again.draws->re == d.re);

  spec.seed = 8;
  ScenarioData other = make_scenario_data(spec);
  REQUIRE_FALSE(other.draws->s0 == d.s0);

  // fixed noise, free s0 wiring for scenario iv
  spec.scenario = Scenario::multi_free_s0;
  ScenarioData iv = make_scenario_data(spec);
  REQUIRE(iv.problem_base.s0_free);
  REQUIRE_FALSE(iv.problem_base.phi_free);
  REQUIRE(iv.problem_base.noise.has_value());
}

TEST_CASE("replicate observations are seeded by offset from the spec seed") {
  ScenarioSpec spec = small_spec(Scenario::single_known_s0, 2);
  ScenarioData data = make_scenario_data(spec);
  FitProblem p1 = make_replicate_problem(spec, data, 1);

  std::vector<IncidenceSeries> truth{data.truth[0].incidence};
  std::vector<IncidenceSeries> expect = observe_seasons(truth, spec.noise, spec.seed + 1);
  REQUIRE(p1.observations[0].values == expect[0].values);

  FitProblem p2 = make_replicate_problem(spec, data, 2);
  REQUIRE_FALSE(p2.observations[0].values == p1.observations[0].values);
}

TEST_CASE("a small scenario run reports coherent statistics") {
  ScenarioSpec spec = small_spec(Scenario::single_known_s0, 6);
  McSummary s = run_scenario(spec, 1);

  REQUIRE(s.replicates == 6);
  REQUIRE(s.failed == 0);
  REQUIRE(s.failed_replicates.empty());
  REQUIRE_FALSE(s.failure_alarm);
  REQUIRE(s.estimates.size() == 6);
  REQUIRE(s.stage1_estimates.size() == 6);
  REQUIRE(s.logliks.size() == 6);
  REQUIRE(s.converged.size() == 6);
  REQUIRE(s.truth_beta == spec.beta);

  // summary mse matches a direct recomputation from the kept estimates
  REQUIRE_THAT(s.mse, WithinRel(mse(s.estimates, spec.beta), 1e-12));
  REQUIRE_THAT(s.stage1_mse, WithinRel(mse(s.stage1_estimates, spec.beta), 1e-12));

  REQUIRE(s.beta_stats.size() == 4);
  REQUIRE(s.beta_stats[0].name == "beta11");
  REQUIRE(s.beta_stats[1].name == "beta12");
  for (const ParamStats& st : s.beta_stats) {
    REQUIRE_THAT(st.bias, WithinAbs(st.mean - st.truth, 1e-14));
    REQUIRE(st.sd >= 0.0);
    REQUIRE_THAT(st.mean, WithinAbs(st.truth, 0.5));  // loose: 6 replicates
  }
  for (const auto& r : s.r_estimates) REQUIRE(r == std::vector<double>{1.0});
  for (double ll : s.logliks) REQUIRE(std::isfinite(ll));
}

TEST_CASE("scenario runs are deterministic and independent of worker count") {
  ScenarioSpec spec = small_spec(Scenario::single_known_s0, 4);
  McSummary a = run_scenario(spec, 1);
  McSummary b = run_scenario(spec, 1);
  McSummary c = run_scenario(spec, 3);
  for (std::size_t i = 0; i < 4; ++i) {
    REQUIRE(a.estimates[i] == b.estimates[i]);
    REQUIRE(a.estimates[i] == c.estimates[i]);
    REQUIRE(a.logliks[i] == b.logliks[i]);
    REQUIRE(a.logliks[i] == c.logliks[i]);
  }
  REQUIRE(a.mse == c.mse);
}

TEST_CASE("a two-year shared-matrix scenario fits the year scalings") {
  ScenarioSpec spec = small_spec(Scenario::multi_known_s0, 2, 3);
  McSummary s = run_scenario(spec, 1);
  REQUIRE(s.failed == 0);
  REQUIRE(s.draws.has_value());
  for (const auto& r : s.r_estimates) {
    REQUIRE(r.size() == 2);
    REQUIRE(r[0] == 1.0);
    // the fitted second-year scaling lands near the drawn truth
    REQUIRE_THAT(r[1], WithinAbs(s.draws->r[1], 0.25));
  }
}

TEST_CASE("random-start runs differ from two-stage runs but share the truth") {
  ScenarioSpec spec = small_spec(Scenario::single_known_s0, 2);
  McSummary warm = run_scenario(spec, 1);
  spec.start = StartMode::random_start;
  McSummary cold = run_scenario(spec, 1);
  REQUIRE(cold.replicates == 2);
  REQUIRE(cold.truth_beta == warm.truth_beta);
  // the stage-one record is the random start, not the design solve
  REQUIRE_FALSE(cold.stage1_estimates[0] == warm.stage1_estimates[0]);
}

TEST_CASE("scenario spec validation") {
  ScenarioSpec spec = small_spec(Scenario::single_known_s0, 0);
  REQUIRE_THROWS_AS(run_scenario(spec, 1), std::invalid_argument);

  spec = small_spec(Scenario::multi_known_s0, 1);
  spec.years.count = 1;
  REQUIRE_THROWS_AS(make_scenario_data(spec), std::invalid_argument);

  spec = small_spec(Scenario::single_known_s0, 1);
  spec.population = {1e6};
  REQUIRE_THROWS_AS(make_scenario_data(spec), std::invalid_argument);
}
