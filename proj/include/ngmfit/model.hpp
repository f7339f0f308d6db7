#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "linalg.hpp"

namespace ngmfit {

/// Discrete daily distribution of the generation (serial) interval.
/// mass[tau-1] is the probability that transmission happens tau days after
/// infection; the masses must be nonnegative and sum to one.
class SerialInterval {
 public:
  explicit SerialInterval(std::vector<double> mass) : mass_(std::move(mass)) {
    if (mass_.empty()) throw std::invalid_argument("SerialInterval: empty profile");
    double sum = 0.0;
    for (double p : mass_) {
      if (!(p >= 0.0)) throw std::invalid_argument("SerialInterval: negative mass");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-12)
      throw std::invalid_argument("SerialInterval: masses must sum to 1, got " +
                                  std::to_string(sum));
  }

  int days() const { return static_cast<int>(mass_.size()); }
  /// Mass at lag tau, tau in 1..days().
  double at(int tau) const { return mass_[static_cast<std::size_t>(tau - 1)]; }
  const std::vector<double>& mass() const { return mass_; }

 private:
  std::vector<double> mass_;
};

/// Default 7-day profile, peaked on days 2-3 after infection. This is a
/// configuration value, not something estimated by the fits; override it in
/// the run config when a different generation interval applies.
inline SerialInterval default_serial_interval() {
  return SerialInterval({0.05, 0.25, 0.30, 0.20, 0.10, 0.07, 0.03});
}

/// Next-generation matrix. Entry (j,k) is the mean number of infections
/// produced in group j by one infective of group k in a fully susceptible
/// population, so new infections in group j are driven by row j and the
/// basic reproduction number of group k is the k-th column sum.
class NextGenMatrix {
 public:
  explicit NextGenMatrix(Matrix beta) : beta_(std::move(beta)) {
    if (!beta_.square() || beta_.rows() == 0)
      throw std::invalid_argument("NextGenMatrix: matrix must be square and nonempty");
    for (std::size_t j = 0; j < beta_.rows(); ++j)
      for (std::size_t k = 0; k < beta_.cols(); ++k)
        if (!(beta_(j, k) >= 0.0) || !std::isfinite(beta_(j, k)))
          throw std::invalid_argument("NextGenMatrix: entries must be finite and >= 0");
  }

  std::size_t groups() const { return beta_.rows(); }
  double operator()(std::size_t j, std::size_t k) const { return beta_(j, k); }
  const Matrix& matrix() const { return beta_; }

 private:
  Matrix beta_;
};

/// One outbreak's fixed quantities: group populations, initial susceptible
/// fractions, seeding fraction and the transmission lag profile. When
/// horizon is absent the simulation runs until total daily incidence drops
/// below one person, capped at 365 days.
struct OutbreakConfig {
  std::vector<double> population;
  std::vector<double> s0;
  double seed_fraction = 1e-3;
  SerialInterval serial = default_serial_interval();
  std::optional<int> horizon;

  std::size_t groups() const { return population.size(); }

  void validate() const {
    if (population.empty()) throw std::invalid_argument("OutbreakConfig: no groups");
    if (s0.size() != population.size())
      throw std::invalid_argument("OutbreakConfig: s0 size mismatch");
    for (double n : population)
      if (!(n > 0.0)) throw std::invalid_argument("OutbreakConfig: population must be > 0");
    for (double s : s0)
      if (!(s > 0.0 && s <= 1.0))
        throw std::invalid_argument("OutbreakConfig: s0 must lie in (0,1]");
    if (!(seed_fraction > 0.0 && seed_fraction < 1.0))
      throw std::invalid_argument("OutbreakConfig: seed_fraction must lie in (0,1)");
    if (horizon && *horizon < 1)
      throw std::invalid_argument("OutbreakConfig: horizon must be >= 1");
  }
};

/// Daily new infections per group. values(j, t-1) holds day t for t=1..days.
/// history, when present, holds the d days up to and including day 0 that
/// feed the transmission lags (seeding convention: day 0 carries the seed,
/// earlier days are zero).
struct IncidenceSeries {
  Matrix values;
  std::optional<Matrix> history;

  IncidenceSeries() = default;
  explicit IncidenceSeries(Matrix v, std::optional<Matrix> h = std::nullopt)
      : values(std::move(v)), history(std::move(h)) {
    if (!values.all_finite()) throw std::invalid_argument("IncidenceSeries: non-finite value");
    if (history) {
      if (history->rows() != values.rows())
        throw std::invalid_argument("IncidenceSeries: history group mismatch");
      if (!history->all_finite())
        throw std::invalid_argument("IncidenceSeries: non-finite history");
    }
  }

  std::size_t groups() const { return values.rows(); }
  int days() const { return static_cast<int>(values.cols()); }
};

/// Susceptible counts per group, s(j, t) for t=0..days (one more column than
/// the incidence series; column 0 is the post-seeding initial state).
struct SusceptibleSeries {
  Matrix s;
  std::size_t groups() const { return s.rows(); }
  int steps() const { return static_cast<int>(s.cols()) - 1; }
};

struct SimulationResult {
  IncidenceSeries incidence;
  SusceptibleSeries susceptibles;
  /// True if new infections ever had to be capped at the remaining
  /// susceptibles (only possible for transmission far above the data's).
  bool clamped = false;
};

namespace detail {

inline constexpr int max_auto_horizon = 365;

/// Renewal-equation stepper shared by simulate() and the likelihood code.
/// Seeds are absolute counts placed at day 0; S(0) = s0*N - seed.
inline SimulationResult renewal_run(const Matrix& beta, const std::vector<double>& population,
                                    const std::vector<double>& s0,
                                    const std::vector<double>& seeds,
                                    const SerialInterval& serial, std::optional<int> horizon) {
  const std::size_t m = population.size();
  const int d = serial.days();
  const int cap = horizon ? *horizon : max_auto_horizon;
  bool clamped = false;

  Matrix hist(m, static_cast<std::size_t>(d));
  for (std::size_t j = 0; j < m; ++j) hist(j, static_cast<std::size_t>(d - 1)) = seeds[j];

  std::vector<double> s_prev(m), s_cur(m);
  for (std::size_t j = 0; j < m; ++j) {
    s_prev[j] = s0[j] * population[j] - seeds[j];
    if (s_prev[j] < 0.0) {
      s_prev[j] = 0.0;
      clamped = true;
    }
  }

  // inc laid out day-major while growing; transposed into the result at the end
  std::vector<std::vector<double>> inc;
  std::vector<std::vector<double>> sus;
  sus.push_back(s_prev);

  // force[k] = sum_tau P_tau i_k(t - tau), assembled from history + new days
  auto lagged = [&](const std::vector<std::vector<double>>& days, int t, std::size_t k) {
    double f = 0.0;
    for (int tau = 1; tau <= d; ++tau) {
      int src = t - tau;  // day index; <= 0 means history
      double val;
      if (src >= 1)
        val = days[static_cast<std::size_t>(src - 1)][k];
      else {
        int col = d - 1 + src;  // src in (-(d-1))..0 maps to column 0..d-1
        val = (col >= 0) ? hist(k, static_cast<std::size_t>(col)) : 0.0;
      }
      f += serial.at(tau) * val;
    }
    return f;
  };

  for (int t = 1; t <= cap; ++t) {
    std::vector<double> force(m);
    for (std::size_t k = 0; k < m; ++k) force[k] = lagged(inc, t, k);
    std::vector<double> day(m);
    double total = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      double drive = 0.0;
      for (std::size_t k = 0; k < m; ++k) drive += beta(j, k) * force[k];
      double i_jt = s_prev[j] / population[j] * drive;
      if (i_jt > s_prev[j]) {
        i_jt = s_prev[j];
        clamped = true;
      }
      day[j] = i_jt;
      s_cur[j] = s_prev[j] - i_jt;
      total += i_jt;
    }
    inc.push_back(day);
    sus.push_back(s_cur);
    s_prev = s_cur;
    if (!horizon && total < 1.0) break;
  }

  const int days = static_cast<int>(inc.size());
  Matrix values(m, static_cast<std::size_t>(days));
  for (int t = 0; t < days; ++t)
    for (std::size_t j = 0; j < m; ++j) values(j, static_cast<std::size_t>(t)) = inc[static_cast<std::size_t>(t)][j];
  Matrix smat(m, static_cast<std::size_t>(days) + 1);
  for (int t = 0; t <= days; ++t)
    for (std::size_t j = 0; j < m; ++j) smat(j, static_cast<std::size_t>(t)) = sus[static_cast<std::size_t>(t)][j];

  SimulationResult out;
  out.incidence = IncidenceSeries(std::move(values), std::move(hist));
  out.susceptibles = SusceptibleSeries{std::move(smat)};
  out.clamped = clamped;
  return out;
}

}  // namespace detail

/// Run one outbreak. Seeds seed_fraction * s0_j * N_j infections per group
/// at day 0 (subtracted from the initial susceptibles) and steps the renewal
/// equation i_j(t) = S_j(t-1)/N_j * sum_k beta_jk sum_tau P_tau i_k(t-tau).
inline SimulationResult simulate(const NextGenMatrix& beta, const OutbreakConfig& cfg) {
  cfg.validate();
  if (beta.groups() != cfg.groups())
    throw std::invalid_argument("simulate: matrix/config group mismatch");
  std::vector<double> seeds(cfg.groups());
  for (std::size_t j = 0; j < cfg.groups(); ++j)
    seeds[j] = cfg.seed_fraction * cfg.s0[j] * cfg.population[j];
  return detail::renewal_run(beta.matrix(), cfg.population, cfg.s0, seeds, cfg.serial,
                             cfg.horizon);
}

/// simulate() with explicit seed counts, for fitting code where the seeding
/// is a known quantity independent of candidate s0 values.
inline SimulationResult simulate_seeded(const Matrix& beta, const std::vector<double>& population,
                                        const std::vector<double>& s0,
                                        const std::vector<double>& seeds,
                                        const SerialInterval& serial,
                                        std::optional<int> horizon = std::nullopt) {
  return detail::renewal_run(beta, population, s0, seeds, serial, horizon);
}

/// Year set for recurrent outbreaks: per-year config plus the year scaling
/// factors r (r[0] fixed to 1; year y transmits with r[y] * beta).
struct SeasonSet {
  std::vector<OutbreakConfig> configs;
  std::vector<double> r;

  std::size_t years() const { return configs.size(); }

  void validate() const {
    if (configs.empty()) throw std::invalid_argument("SeasonSet: no seasons");
    if (r.size() != configs.size())
      throw std::invalid_argument("SeasonSet: r length must equal season count");
    if (r[0] != 1.0) throw std::invalid_argument("SeasonSet: r[0] must be 1");
    for (double v : r)
      if (!(v > 0.0)) throw std::invalid_argument("SeasonSet: r must be > 0");
    const std::size_t m = configs[0].groups();
    for (const auto& c : configs) {
      c.validate();
      if (c.groups() != m) throw std::invalid_argument("SeasonSet: group count varies");
    }
  }
};

/// Independent outbreaks sharing one matrix, year y scaled by r[y].
inline std::vector<SimulationResult> simulate_recurrent(const NextGenMatrix& beta,
                                                        const SeasonSet& seasons) {
  seasons.validate();
  if (beta.groups() != seasons.configs[0].groups())
    throw std::invalid_argument("simulate_recurrent: matrix/config group mismatch");
  std::vector<SimulationResult> out;
  out.reserve(seasons.years());
  for (std::size_t y = 0; y < seasons.years(); ++y)
    out.push_back(simulate(NextGenMatrix(beta.matrix().scaled(seasons.r[y])),
                           seasons.configs[y]));
  return out;
}

/// Spectral radius. 2x2 (and 1x1) use the closed form from trace and
/// determinant; larger matrices use shifted power iteration, which is exact
/// for the nonnegative matrices this library works with.
inline double spectral_radius(const Matrix& mat) {
  if (!mat.square() || mat.rows() == 0)
    throw std::invalid_argument("spectral_radius: matrix must be square and nonempty");
  if (!mat.all_finite()) throw std::invalid_argument("spectral_radius: non-finite entry");
  const std::size_t n = mat.rows();
  if (n == 1) return std::abs(mat(0, 0));
  if (n == 2) {
    double tr = mat(0, 0) + mat(1, 1);
    double det = mat(0, 0) * mat(1, 1) - mat(0, 1) * mat(1, 0);
    double disc = tr * tr - 4.0 * det;
    if (disc < 0.0) return std::sqrt(det);  // complex pair, |lambda| = sqrt(det)
    double root = std::sqrt(disc);
    return std::max(std::abs((tr + root) / 2.0), std::abs((tr - root) / 2.0));
  }
  return power_iteration_radius(mat);
}

/// Basic reproduction number of each (source) group: y_scale times the
/// column sums of the matrix.
inline std::vector<double> group_r0(const NextGenMatrix& beta, double y_scale = 1.0) {
  if (!(y_scale > 0.0)) throw std::invalid_argument("group_r0: y_scale must be > 0");
  std::vector<double> r0(beta.groups(), 0.0);
  for (std::size_t k = 0; k < beta.groups(); ++k)
    for (std::size_t j = 0; j < beta.groups(); ++j) r0[k] += y_scale * beta(j, k);
  return r0;
}

/// Effective reproduction number: spectral radius of the matrix whose row j
/// is y_scale * beta[j][.] * s0[j].
inline double effective_r(const NextGenMatrix& beta, const std::vector<double>& s0,
                          double y_scale = 1.0) {
  if (s0.size() != beta.groups()) throw std::invalid_argument("effective_r: s0 size mismatch");
  for (double s : s0)
    if (!(s > 0.0 && s <= 1.0)) throw std::invalid_argument("effective_r: s0 must lie in (0,1]");
  if (!(y_scale > 0.0)) throw std::invalid_argument("effective_r: y_scale must be > 0");
  Matrix eff(beta.groups(), beta.groups());
  for (std::size_t j = 0; j < beta.groups(); ++j)
    for (std::size_t k = 0; k < beta.groups(); ++k) eff(j, k) = y_scale * beta(j, k) * s0[j];
  return spectral_radius(eff);
}

/// Year scaling factor that reaches target_re at susceptibility s0:
/// r = target_re / effective_r(beta, s0, 1).
inline double scaling_factor(const NextGenMatrix& beta, const std::vector<double>& s0,
                             double target_re) {
  if (!(target_re > 0.0)) throw std::invalid_argument("scaling_factor: target must be > 0");
  double base = effective_r(beta, s0, 1.0);
  if (!(base > 0.0)) throw std::invalid_argument("scaling_factor: zero base reproduction");
  return target_re / base;
}

/// The three transmission matrices used throughout the test battery.
inline Matrix study_matrix(int id) {
  switch (id) {
    case 1: return Matrix::from_rows({{2.50, 0.75}, {1.00, 1.50}});
    case 2: return Matrix::from_rows({{2.00, 1.00}, {1.00, 2.00}});
    case 3: return Matrix::from_rows({{1.50, 1.00}, {1.00, 2.33}});
    default: throw std::invalid_argument("study_matrix: id must be 1, 2 or 3");
  }
}

}  // namespace ngmfit
