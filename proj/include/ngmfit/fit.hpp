#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "design.hpp"
#include "model.hpp"
#include "nelder_mead.hpp"
#include "observe.hpp"

namespace ngmfit {

/// Stand-in for -infinity in likelihood space; NM retreats from it.
inline constexpr double loglik_penalty = -1e12;

/// Estimation input: per-season observations plus everything known and
/// fixed (populations, seed counts, lag profile, reporting rates), plus the
/// declaration of what is free. The year factors r are free whenever there
/// is more than one season (r of season 1 is pinned to 1).
struct FitProblem {
  std::vector<IncidenceSeries> observations;
  std::vector<std::vector<double>> population;
  std::vector<std::vector<double>> seeds;
  SerialInterval serial = default_serial_interval();
  /// Known initial susceptible fractions; ignored as truth when s0_free
  /// (but still validated for shape).
  std::vector<std::vector<double>> s0;
  bool s0_free = false;
  bool phi_free = false;
  std::optional<NoiseParams> noise;
  std::optional<ReportingModel> reporting;
  int smoothing_window = 7;
  NelderMeadOptions optimizer;

  std::size_t groups() const { return observations.empty() ? 0 : observations[0].groups(); }
  std::size_t seasons() const { return observations.size(); }

  void validate() const {
    if (observations.empty()) throw std::invalid_argument("FitProblem: no observations");
    const std::size_t m = groups(), L = seasons();
    if (population.size() != L || seeds.size() != L || s0.size() != L)
      throw std::invalid_argument("FitProblem: per-season field count mismatch");
    for (std::size_t y = 0; y < L; ++y) {
      if (observations[y].groups() != m)
        throw std::invalid_argument("FitProblem: group count varies across seasons");
      if (observations[y].days() < 1)
        throw std::invalid_argument("FitProblem: empty season");
      if (population[y].size() != m || seeds[y].size() != m || s0[y].size() != m)
        throw std::invalid_argument("FitProblem: per-group field size mismatch");
      for (double n : population[y])
        if (!(n > 0.0)) throw std::invalid_argument("FitProblem: population must be > 0");
      for (double sd : seeds[y])
        if (!(sd >= 0.0)) throw std::invalid_argument("FitProblem: seeds must be >= 0");
      for (double s : s0[y])
        if (!(s > 0.0 && s <= 1.0))
          throw std::invalid_argument("FitProblem: s0 must lie in (0,1]");
    }
    if (!phi_free) {
      if (!noise) throw std::invalid_argument("FitProblem: noise params required unless free");
      noise->validate();
    }
    if (reporting) {
      reporting->validate();
      if (reporting->groups() != m || reporting->seasons() != L)
        throw std::invalid_argument("FitProblem: reporting shape mismatch");
    }
    if (smoothing_window < 1 || smoothing_window % 2 == 0)
      throw std::invalid_argument("FitProblem: smoothing window must be odd and >= 1");
  }
};

/// A full point in model space.
struct ModelParams {
  Matrix beta;
  std::vector<double> r;                  // per season, r[0] == 1
  std::vector<std::vector<double>> s0;    // per season, per group
  NoiseParams noise;
};

/// Which coordinates are free and how they map onto one flat vector, in the
/// order beta (row-major, log), r_2..r_L (log), s0 year-major (logit),
/// phi_a, phi_b (log).
struct ParamLayout {
  std::size_t m = 0;
  std::size_t years = 1;
  bool r_free = false;
  bool s0_free = false;
  bool phi_free = false;

  static ParamLayout for_problem(const FitProblem& p) {
    ParamLayout l;
    l.m = p.groups();
    l.years = p.seasons();
    l.r_free = p.seasons() >= 2;
    l.s0_free = p.s0_free;
    l.phi_free = p.phi_free;
    return l;
  }

  std::size_t beta_count() const { return m * m; }
  std::size_t r_count() const { return r_free ? years - 1 : 0; }
  std::size_t s0_count() const { return s0_free ? years * m : 0; }
  std::size_t phi_count() const { return phi_free ? 2 : 0; }
  std::size_t size() const { return beta_count() + r_count() + s0_count() + phi_count(); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (std::size_t j = 1; j <= m; ++j)
      for (std::size_t k = 1; k <= m; ++k)
        out.push_back("beta" + std::to_string(j) + std::to_string(k));
    for (std::size_t y = 2; y <= years && r_free; ++y) out.push_back("r" + std::to_string(y));
    if (s0_free)
      for (std::size_t y = 1; y <= years; ++y)
        for (std::size_t g = 1; g <= m; ++g)
          out.push_back("s0_" + std::to_string(y) + "_" + std::to_string(g));
    if (phi_free) {
      out.push_back("phi_a");
      out.push_back("phi_b");
    }
    return out;
  }
};

namespace detail {

inline double logit(double p) {
  p = std::clamp(p, 1e-9, 1.0 - 1e-9);
  return std::log(p / (1.0 - p));
}

inline double inv_logit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

enum class Scale { log_scale, logit_scale };

inline Scale coordinate_scale(const ParamLayout& l, std::size_t idx) {
  std::size_t off = l.beta_count() + l.r_count();
  if (idx < off) return Scale::log_scale;
  if (idx < off + l.s0_count()) return Scale::logit_scale;
  return Scale::log_scale;  // phi
}

}  // namespace detail

/// Maps between ModelParams and the flat unconstrained vector the optimizer
/// works in. base supplies the values of everything the layout keeps fixed.
struct ParamTransform {
  ParamLayout layout;
  ModelParams base;

  double to_x(std::size_t idx, double natural) const {
    if (detail::coordinate_scale(layout, idx) == detail::Scale::logit_scale)
      return detail::logit(natural);
    if (!(natural > 0.0))
      throw std::invalid_argument("ParamTransform: log-scale coordinate must be > 0");
    return std::log(natural);
  }

  double to_natural(std::size_t idx, double x) const {
    if (detail::coordinate_scale(layout, idx) == detail::Scale::logit_scale)
      return detail::inv_logit(x);
    return std::exp(x);
  }

  std::vector<double> encode(const ModelParams& p) const {
    std::vector<double> x;
    x.reserve(layout.size());
    for (std::size_t j = 0; j < layout.m; ++j)
      for (std::size_t k = 0; k < layout.m; ++k) x.push_back(to_x(x.size(), p.beta(j, k)));
    if (layout.r_free)
      for (std::size_t y = 1; y < layout.years; ++y) x.push_back(to_x(x.size(), p.r[y]));
    if (layout.s0_free)
      for (std::size_t y = 0; y < layout.years; ++y)
        for (std::size_t g = 0; g < layout.m; ++g) x.push_back(to_x(x.size(), p.s0[y][g]));
    if (layout.phi_free) {
      x.push_back(to_x(x.size(), p.noise.phi_a));
      x.push_back(to_x(x.size(), p.noise.phi_b));
    }
    return x;
  }

  ModelParams decode(const std::vector<double>& x) const {
    if (x.size() != layout.size())
      throw std::invalid_argument("ParamTransform: vector size mismatch");
    ModelParams p = base;
    std::size_t i = 0;
    p.beta = Matrix(layout.m, layout.m);
    for (std::size_t j = 0; j < layout.m; ++j)
      for (std::size_t k = 0; k < layout.m; ++k, ++i) p.beta(j, k) = to_natural(i, x[i]);
    if (layout.r_free) {
      p.r.assign(layout.years, 1.0);
      for (std::size_t y = 1; y < layout.years; ++y, ++i) p.r[y] = to_natural(i, x[i]);
    }
    if (layout.s0_free) {
      p.s0.assign(layout.years, std::vector<double>(layout.m));
      for (std::size_t y = 0; y < layout.years; ++y)
        for (std::size_t g = 0; g < layout.m; ++g, ++i) p.s0[y][g] = to_natural(i, x[i]);
    }
    if (layout.phi_free) {
      p.noise.phi_a = to_natural(i, x[i]);
      ++i;
      p.noise.phi_b = to_natural(i, x[i]);
      ++i;
    }
    return p;
  }
};

/// Gaussian log likelihood of the observations given a model point: the
/// renewal model is run per season with r_y * beta, observations are
/// compared against the (reporting-scaled) model incidence with
/// sd = phi_a + phi_b * mean. A clamped simulation or nonpositive sd yields
/// the large negative penalty instead of -infinity.
inline double log_likelihood(const ModelParams& params, const FitProblem& problem) {
  constexpr double half_log_2pi = 0.91893853320467274178;  // log(sqrt(2*pi))
  const std::size_t L = problem.seasons();
  double ll = 0.0;
  for (std::size_t y = 0; y < L; ++y) {
    const int days = problem.observations[y].days();
    SimulationResult sim =
        simulate_seeded(params.beta.scaled(params.r[y]), problem.population[y], params.s0[y],
                        problem.seeds[y], problem.serial, days);
    if (sim.clamped) return loglik_penalty;
    for (std::size_t j = 0; j < problem.groups(); ++j) {
      double sc = problem.reporting ? problem.reporting->scale(j, y) : 1.0;
      for (int t = 0; t < days; ++t) {
        double mean = sc * sim.incidence.values(j, static_cast<std::size_t>(t));
        double sd = params.noise.sd(mean);
        if (!(sd > 0.0)) return loglik_penalty;
        double res = problem.observations[y].values(j, static_cast<std::size_t>(t)) - mean;
        ll -= half_log_2pi + std::log(sd) + res * res / (2.0 * sd * sd);
      }
    }
  }
  if (!std::isfinite(ll)) return loglik_penalty;
  return ll;
}

struct StageOneEstimate {
  Matrix beta;
  std::vector<double> r;
  std::vector<std::vector<double>> s0;
  bool identifiable = true;
  /// Log likelihood at the exact point stage 2 starts from.
  double loglik = 0.0;
};

struct FitResult {
  Matrix beta;
  std::vector<double> r;
  std::vector<std::vector<double>> s0;
  NoiseParams noise;
  double loglik = 0.0;
  bool converged = false;
  long evals = 0;
  std::size_t n_free = 0;
  std::vector<std::string> param_names;
  StageOneEstimate stage1;
};

namespace detail {

/// Smooth the observations and bring them back to true-incidence scale when
/// a reporting model applies.
inline std::vector<IncidenceSeries> working_series(const FitProblem& problem) {
  std::vector<IncidenceSeries> out;
  out.reserve(problem.seasons());
  for (std::size_t y = 0; y < problem.seasons(); ++y) {
    IncidenceSeries sm = moving_average(problem.observations[y], problem.smoothing_window);
    if (problem.reporting) {
      Matrix v = sm.values;
      for (std::size_t j = 0; j < v.rows(); ++j) {
        double sc = problem.reporting->scale(j, y);
        for (std::size_t t = 0; t < v.cols(); ++t) v(j, t) /= sc;
      }
      sm = IncidenceSeries(std::move(v), sm.history);
    }
    out.push_back(std::move(sm));
  }
  return out;
}

/// Crude per-season growth reading for the r warm start: regress log total
/// smoothed incidence on day over the early window, convert the growth rate
/// to a reproduction number through the lag profile, and normalise to
/// season 1.
inline std::vector<double> growth_warm_start(const std::vector<IncidenceSeries>& working,
                                             const SerialInterval& serial) {
  std::vector<double> re(working.size(), 1.0);
  for (std::size_t y = 0; y < working.size(); ++y) {
    const auto& w = working[y];
    int span = std::min(w.days(), 28);
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int n = 0;
    for (int t = 0; t < span; ++t) {
      double total = 0.0;
      for (std::size_t j = 0; j < w.groups(); ++j)
        total += w.values(j, static_cast<std::size_t>(t));
      if (total <= 0.0) continue;
      double lx = static_cast<double>(t), ly = std::log(total);
      sx += lx;
      sy += ly;
      sxx += lx * lx;
      sxy += lx * ly;
      ++n;
    }
    double g = 0.0;
    double denom = n * sxx - sx * sx;
    if (n >= 2 && denom > 0.0) g = (n * sxy - sx * sy) / denom;
    double gen = 0.0;
    for (int tau = 1; tau <= serial.days(); ++tau) gen += serial.at(tau) * std::exp(-g * tau);
    re[y] = (gen > 0.0) ? 1.0 / gen : 1.0;
  }
  std::vector<double> r(working.size(), 1.0);
  for (std::size_t y = 1; y < working.size(); ++y)
    r[y] = std::clamp(re[y] / re[0], 0.1, 10.0);
  return r;
}

/// Noise start for stage 2 when phi is free: pooled RMS of the raw-minus-
/// smoothed residuals sets the additive scale.
inline NoiseParams phi_warm_start(const FitProblem& problem) {
  double rss = 0.0;
  long n = 0;
  for (std::size_t y = 0; y < problem.seasons(); ++y) {
    IncidenceSeries sm = moving_average(problem.observations[y], problem.smoothing_window);
    for (std::size_t j = 0; j < problem.groups(); ++j)
      for (int t = 0; t < sm.days(); ++t) {
        double res = problem.observations[y].values(j, static_cast<std::size_t>(t)) -
                     sm.values(j, static_cast<std::size_t>(t));
        rss += res * res;
        ++n;
      }
  }
  double rms = (n > 0) ? std::sqrt(rss / static_cast<double>(n)) : 1.0;
  return NoiseParams{std::max(1e-2, 0.5 * rms), 0.05};
}

inline Matrix clamp_nonnegative(Matrix beta) {
  for (double& v : beta.data())
    if (v < 0.0) v = 0.0;
  return beta;
}

inline Matrix clamp_positive(Matrix beta, double floor) {
  for (double& v : beta.data())
    if (v < floor) v = floor;
  return beta;
}

/// Fallback when the direct step is singular: a flat matrix scaled so the
/// effective reproduction number at the stage-1 s0 values is 1.2.
inline Matrix uniform_fallback(std::size_t m, const std::vector<double>& s0) {
  double ssum = 0.0;
  for (double s : s0) ssum += s;
  double entry = (ssum > 0.0) ? 1.2 / ssum : 1.0;
  return Matrix(m, m, entry);
}

struct StageOneOutcome {
  Matrix beta;
  std::vector<double> r;
  std::vector<std::vector<double>> s0;
  bool identifiable = true;
  long evals = 0;
};

inline StageOneOutcome stage_one(const FitProblem& problem,
                                 const std::vector<IncidenceSeries>& working) {
  const std::size_t m = problem.groups(), L = problem.seasons();
  StageOneOutcome out;
  out.r.assign(L, 1.0);
  out.s0 = problem.s0;

  // The stage-1 likelihood needs a noise scale: the known one when phi is
  // fixed, the data-driven warm-start scale when phi is free. The latter
  // keeps small seasons from being drowned out by the biggest ones.
  const NoiseParams stage1_noise = problem.phi_free ? phi_warm_start(problem) : *problem.noise;

  const bool r_in_psi = L >= 2;
  const bool s0_in_psi = problem.s0_free;

  auto direct_at = [&](const std::vector<double>& r, const std::vector<std::vector<double>>& s0) {
    DesignSystem sys = build_design(working, problem.population, s0, problem.seeds, r,
                                    problem.serial);
    return solve_direct(sys);
  };

  if (!r_in_psi && !s0_in_psi) {
    try {
      out.beta = direct_at(out.r, out.s0);
    } catch (const NonIdentifiableError&) {
      out.identifiable = false;
      out.beta = uniform_fallback(m, out.s0[0]);
    }
    return out;
  }

  // psi search: optimize r and/or s0 with beta profiled out linearly.
  const std::size_t n_r = r_in_psi ? L - 1 : 0;
  const std::size_t n_s0 = s0_in_psi ? L * m : 0;

  auto psi_decode = [&](const std::vector<double>& x, std::vector<double>& r,
                        std::vector<std::vector<double>>& s0) {
    r.assign(L, 1.0);
    // Box the stage-1 scalings to the warm start's plausibility range. With a
    // shared matrix only season 1 pins the absolute scale, so an unbounded
    // search can drift into beta -> 0, r_y -> huge (sacrificing season 1
    // alone); stage 2 stays unconstrained.
    for (std::size_t y = 1; y <= n_r; ++y) r[y] = std::clamp(std::exp(x[y - 1]), 0.1, 10.0);
    s0 = problem.s0;
    if (s0_in_psi)
      for (std::size_t y = 0; y < L; ++y)
        for (std::size_t g = 0; g < m; ++g) s0[y][g] = inv_logit(x[n_r + y * m + g]);
  };

  std::vector<double> x0;
  std::vector<double> r_warm = r_in_psi ? growth_warm_start(working, problem.serial)
                                        : std::vector<double>(L, 1.0);
  for (std::size_t y = 1; y <= n_r; ++y) x0.push_back(std::log(r_warm[y]));
  // Free s0 coordinates start from the values in the problem, which then
  // act as an initial guess rather than ground truth.
  if (s0_in_psi)
    for (std::size_t y = 0; y < L; ++y)
      for (std::size_t g = 0; g < m; ++g)
        x0.push_back(logit(std::clamp(problem.s0[y][g], 0.05, 0.95)));

  auto objective = [&](const std::vector<double>& x) {
    std::vector<double> r;
    std::vector<std::vector<double>> s0;
    psi_decode(x, r, s0);
    Matrix beta;
    try {
      beta = clamp_nonnegative(direct_at(r, s0));
    } catch (const NonIdentifiableError&) {
      return -loglik_penalty;
    }
    ModelParams p{std::move(beta), r, s0, stage1_noise};
    return -log_likelihood(p, problem);
  };

  NelderMeadResult nm = nelder_mead(objective, x0, problem.optimizer);
  out.evals = nm.evals;
  psi_decode(nm.x, out.r, out.s0);
  try {
    out.beta = direct_at(out.r, out.s0);
  } catch (const NonIdentifiableError&) {
    out.identifiable = false;
    out.beta = uniform_fallback(m, out.s0[0]);
  }
  return out;
}

inline FitResult stage_two(const FitProblem& problem, const ModelParams& start) {
  ParamLayout layout = ParamLayout::for_problem(problem);
  ParamTransform tf;
  tf.layout = layout;
  tf.base = start;
  if (!problem.s0_free) tf.base.s0 = problem.s0;
  if (!problem.phi_free) tf.base.noise = *problem.noise;
  if (problem.seasons() == 1) tf.base.r = {1.0};

  std::vector<double> x0 = tf.encode(start);

  FitResult result;
  result.stage1.loglik = log_likelihood(tf.decode(x0), problem);

  auto objective = [&](const std::vector<double>& x) {
    return -log_likelihood(tf.decode(x), problem);
  };
  NelderMeadResult nm = nelder_mead(objective, x0, problem.optimizer);

  ModelParams fitted = tf.decode(nm.x);
  result.beta = fitted.beta;
  result.r = fitted.r;
  result.s0 = fitted.s0;
  result.noise = fitted.noise;
  result.loglik = -nm.value;
  result.converged = nm.converged;
  result.evals += nm.evals;
  result.n_free = layout.size();
  result.param_names = layout.names();
  return result;
}

}  // namespace detail

/// Two-stage estimate: a linear least-squares warm start on the smoothed
/// incidence (with any nonlinear nuisance parameters found by a small
/// simplex search around the linear solve), then a joint likelihood
/// maximization of everything free. The stage-1 estimate is kept in the
/// result for comparison.
inline FitResult two_stage_fit(const FitProblem& problem) {
  problem.validate();
  std::vector<IncidenceSeries> working = detail::working_series(problem);
  detail::StageOneOutcome s1 = detail::stage_one(problem, working);

  ModelParams start;
  start.beta = detail::clamp_positive(s1.beta, 1e-6);
  start.r = s1.r;
  start.s0 = s1.s0;
  start.noise = problem.phi_free ? detail::phi_warm_start(problem) : *problem.noise;

  FitResult result = detail::stage_two(problem, start);
  result.evals += s1.evals;
  result.stage1.beta = s1.beta;
  result.stage1.r = s1.r;
  result.stage1.s0 = s1.s0;
  result.stage1.identifiable = s1.identifiable;
  return result;
}

/// Shared-matrix fit across L >= 2 seasons (scaling factors r_2..r_L free,
/// r_1 pinned). Same engine as two_stage_fit; the separate entry point just
/// enforces the multi-season precondition.
inline FitResult multi_outbreak_fit(const FitProblem& problem) {
  if (problem.seasons() < 2)
    throw std::invalid_argument("multi_outbreak_fit: needs at least two seasons");
  return two_stage_fit(problem);
}

/// Single maximum-likelihood run from a random starting point (no warm
/// start); used to measure what the two-stage procedure buys.
inline FitResult random_start_fit(const FitProblem& problem, std::uint64_t seed) {
  problem.validate();
  GaussianSampler rng(seed);
  const std::size_t m = problem.groups(), L = problem.seasons();

  ModelParams start;
  start.beta = Matrix(m, m);
  for (double& v : start.beta.data()) v = std::max(1e-6, 3.0 * rng.uniform());
  start.r.assign(L, 1.0);
  for (std::size_t y = 1; y < L; ++y) start.r[y] = 0.5 + 1.5 * rng.uniform();
  start.s0 = problem.s0;
  if (problem.s0_free)
    for (auto& year : start.s0)
      for (double& s : year) s = 0.1 + 0.8 * rng.uniform();
  start.noise = problem.phi_free ? detail::phi_warm_start(problem) : *problem.noise;

  FitResult result = detail::stage_two(problem, start);
  result.stage1.beta = start.beta;
  result.stage1.r = start.r;
  result.stage1.s0 = start.s0;
  result.stage1.identifiable = true;
  return result;
}

struct ProfileInterval {
  std::string param;
  double level = 0.95;
  double mle = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  bool open_lower = false;
  bool open_upper = false;
  /// (parameter value, profile log likelihood) pairs actually evaluated.
  std::vector<std::pair<double, double>> grid;
};

namespace detail {

/// Acklam's rational approximation to the standard normal quantile.
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("normal_quantile: p outside (0,1)");
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425, phigh = 1.0 - plow;
  double q, r;
  if (p < plow) {
    q = std::sqrt(-2.0 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  if (p <= phigh) {
    q = p - 0.5;
    r = q * q;
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
           (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  }
  q = std::sqrt(-2.0 * std::log(1.0 - p));
  return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
         ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
}

/// Log-likelihood drop defining the profile interval: half the chi-square
/// (1 df) quantile, e.g. 1.92 at the 95% level.
inline double profile_drop(double level) {
  double z = normal_quantile(0.5 + level / 2.0);
  return 0.5 * z * z;
}

struct ScanSide {
  double endpoint = 0.0;
  bool open = false;
};

/// Walk one side of the profile away from the MLE until the profile log
/// likelihood falls below the threshold, then bisect; flagged open when the
/// bound is reached first.
inline ScanSide scan_side(const std::function<double(double)>& pll, double mle, double ll_max,
                          double drop, double bound, bool upward,
                          std::vector<std::pair<double, double>>& grid) {
  const double threshold = ll_max - drop;
  double prev = mle;
  double step = 0.02;
  ScanSide side;
  while (true) {
    double next = upward ? prev * (1.0 + step) : prev / (1.0 + step);
    bool at_bound = upward ? next >= bound : next <= bound;
    if (at_bound) next = bound;
    double ll = pll(next);
    grid.emplace_back(next, ll);
    if (ll < threshold) {
      // bracketed between prev (inside) and next (outside)
      double inside = prev, outside = next;
      while (std::abs(outside - inside) > 1e-3 * std::max(std::abs(mle), 1e-12)) {
        double mid = 0.5 * (inside + outside);
        double lm = pll(mid);
        grid.emplace_back(mid, lm);
        (lm >= threshold ? inside : outside) = mid;
      }
      side.endpoint = 0.5 * (inside + outside);
      return side;
    }
    if (at_bound) {
      side.endpoint = bound;
      side.open = true;
      return side;
    }
    prev = next;
    step = std::min(2.0 * step, 0.6);
  }
}

}  // namespace detail

/// Profile-likelihood confidence interval for one named free parameter.
/// The parameter is swept on an adaptive grid around its MLE while all other
/// free parameters are re-maximized at every grid point (warm-started from
/// the neighbouring optimum); interval ends are bisected to 1e-3 relative
/// precision. Ends that stay above the threshold out to 10x (or 1/10th of)
/// the MLE are reported open.
inline ProfileInterval profile_ci(const FitProblem& problem, const FitResult& fit,
                                  const std::string& param, double level = 0.95) {
  problem.validate();
  if (!(level > 0.0 && level < 1.0))
    throw std::invalid_argument("profile_ci: level must lie in (0,1)");
  ParamLayout layout = ParamLayout::for_problem(problem);
  std::vector<std::string> names = layout.names();
  auto it = std::find(names.begin(), names.end(), param);
  if (it == names.end())
    throw std::invalid_argument("profile_ci: unknown or fixed parameter '" + param + "'");
  const std::size_t target = static_cast<std::size_t>(it - names.begin());

  ParamTransform tf;
  tf.layout = layout;
  tf.base.beta = fit.beta;
  tf.base.r = fit.r;
  tf.base.s0 = fit.s0;
  tf.base.noise = fit.noise;

  ModelParams mle_params = tf.base;
  std::vector<double> x_mle = tf.encode(mle_params);

  NelderMeadOptions nuisance_opts = problem.optimizer;
  nuisance_opts.tol_x = std::max(problem.optimizer.tol_x, 1e-6);
  nuisance_opts.tol_f = std::max(problem.optimizer.tol_f, 1e-8);
  nuisance_opts.restarts = 0;

  // Continuation state: the nuisance optimum of the previous grid point.
  std::vector<double> warm = x_mle;

  auto profile_ll = [&](double value) {
    double fixed = tf.to_x(target, value);
    std::vector<double> x = warm;
    x[target] = fixed;
    if (layout.size() == 1) return log_likelihood(tf.decode(x), problem);
    auto objective = [&](const std::vector<double>& reduced) {
      std::vector<double> full;
      full.reserve(layout.size());
      full.insert(full.end(), reduced.begin(), reduced.begin() + static_cast<long>(target));
      full.push_back(fixed);
      full.insert(full.end(), reduced.begin() + static_cast<long>(target), reduced.end());
      return -log_likelihood(tf.decode(full), problem);
    };
    std::vector<double> reduced;
    reduced.reserve(layout.size() - 1);
    for (std::size_t i = 0; i < layout.size(); ++i)
      if (i != target) reduced.push_back(x[i]);
    NelderMeadResult nm = nelder_mead(objective, reduced, nuisance_opts);
    std::size_t k = 0;
    for (std::size_t i = 0; i < layout.size(); ++i) warm[i] = (i == target) ? fixed : nm.x[k++];
    return -nm.value;
  };

  double mle_value = tf.to_natural(target, x_mle[target]);
  const double drop = detail::profile_drop(level);

  ProfileInterval ci;
  ci.param = param;
  ci.level = level;
  ci.mle = mle_value;
  ci.grid.emplace_back(mle_value, fit.loglik);

  const bool is_logit =
      detail::coordinate_scale(layout, target) == detail::Scale::logit_scale;
  double hi_bound = is_logit ? std::min(10.0 * mle_value, 1.0 - 1e-9) : 10.0 * mle_value;
  double lo_bound = mle_value / 10.0;

  warm = x_mle;
  detail::ScanSide up = detail::scan_side(profile_ll, mle_value, fit.loglik, drop, hi_bound,
                                          true, ci.grid);
  warm = x_mle;
  detail::ScanSide down = detail::scan_side(profile_ll, mle_value, fit.loglik, drop, lo_bound,
                                            false, ci.grid);
  ci.upper = up.endpoint;
  ci.open_upper = up.open;
  ci.lower = down.endpoint;
  ci.open_lower = down.open;
  return ci;
}

}  // namespace ngmfit
