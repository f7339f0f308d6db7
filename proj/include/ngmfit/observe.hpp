#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <vector>

#include "model.hpp"

namespace ngmfit {

/// Deterministic Gaussian source: mt19937_64 driven Box-Muller transform.
/// Both pieces are fully specified, so a given 64-bit seed reproduces the
/// same stream on every platform; std::normal_distribution is avoided
/// because its algorithm is implementation-defined.
class GaussianSampler {
 public:
  explicit GaussianSampler(std::uint64_t seed) : engine_(seed) {}

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - uniform();  // (0, 1], keeps the log finite
    double u2 = uniform();
    double radius = std::sqrt(-2.0 * std::log(u1));
    double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    have_spare_ = true;
    return radius * std::cos(angle);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

/// Additive Gaussian observation noise with incidence-proportional scale:
/// sd(i) = phi_a + phi_b * i.
struct NoiseParams {
  double phi_a = 10.0;
  double phi_b = 0.1;

  void validate() const {
    if (!(phi_a >= 0.0) || !(phi_b >= 0.0))
      throw std::invalid_argument("NoiseParams: phi_a and phi_b must be >= 0");
    if (!(phi_a + phi_b > 0.0))
      throw std::invalid_argument("NoiseParams: phi_a + phi_b must be > 0");
  }

  double sd(double incidence) const { return phi_a + phi_b * incidence; }
};

/// Per group-and-season reporting: eta is the fraction of the population
/// covered by the reporting system, theta the probability a covered case
/// shows up in it. Both are (groups x seasons).
struct ReportingModel {
  Matrix eta;
  Matrix theta;

  std::size_t groups() const { return eta.rows(); }
  std::size_t seasons() const { return eta.cols(); }

  void validate() const {
    if (eta.rows() != theta.rows() || eta.cols() != theta.cols())
      throw std::invalid_argument("ReportingModel: eta/theta shape mismatch");
    if (eta.rows() == 0 || eta.cols() == 0)
      throw std::invalid_argument("ReportingModel: empty");
    for (std::size_t j = 0; j < eta.rows(); ++j)
      for (std::size_t y = 0; y < eta.cols(); ++y) {
        if (!(eta(j, y) > 0.0 && eta(j, y) <= 1.0))
          throw std::invalid_argument("ReportingModel: eta must lie in (0,1]");
        if (!(theta(j, y) > 0.0))
          throw std::invalid_argument("ReportingModel: theta must be > 0");
      }
  }

  double scale(std::size_t group, std::size_t season) const {
    return eta(group, season) * theta(group, season);
  }
};

/// Noisy observation of an incidence series: Y_j(t) = i_j(t) + N(0, sd^2)
/// with sd = phi_a + phi_b * i_j(t). Values may come out negative; nothing
/// is clamped here. History passes through untouched (the seeding is known).
inline IncidenceSeries observe(const IncidenceSeries& truth, const NoiseParams& noise,
                               std::uint64_t seed) {
  noise.validate();
  GaussianSampler rng(seed);
  Matrix out = truth.values;
  for (std::size_t j = 0; j < truth.groups(); ++j)
    for (std::size_t t = 0; t < static_cast<std::size_t>(truth.days()); ++t)
      out(j, t) += noise.sd(truth.values(j, t)) * rng.normal();
  return IncidenceSeries(std::move(out), truth.history);
}

/// observe() across several seasons with a single seed (drawn season-major,
/// then group, then day); for one season this matches observe() exactly.
inline std::vector<IncidenceSeries> observe_seasons(const std::vector<IncidenceSeries>& truth,
                                                    const NoiseParams& noise,
                                                    std::uint64_t seed) {
  noise.validate();
  GaussianSampler rng(seed);
  std::vector<IncidenceSeries> out;
  out.reserve(truth.size());
  for (const auto& season : truth) {
    Matrix vals = season.values;
    for (std::size_t j = 0; j < season.groups(); ++j)
      for (std::size_t t = 0; t < static_cast<std::size_t>(season.days()); ++t)
        vals(j, t) += noise.sd(season.values(j, t)) * rng.normal();
    out.emplace_back(std::move(vals), season.history);
  }
  return out;
}

/// Reported-scale observation across seasons: the signal is
/// eta * theta * i and the noise sd is phi_a + phi_b * (eta * theta * i).
/// One seed drives all seasons (drawn season-major, then group, then day).
inline std::vector<IncidenceSeries> observe_reported(const std::vector<IncidenceSeries>& truth,
                                                     const ReportingModel& reporting,
                                                     const NoiseParams& noise,
                                                     std::uint64_t seed) {
  noise.validate();
  reporting.validate();
  if (reporting.seasons() != truth.size())
    throw std::invalid_argument("observe_reported: season count mismatch");
  GaussianSampler rng(seed);
  std::vector<IncidenceSeries> out;
  out.reserve(truth.size());
  for (std::size_t y = 0; y < truth.size(); ++y) {
    if (truth[y].groups() != reporting.groups())
      throw std::invalid_argument("observe_reported: group count mismatch");
    Matrix vals(truth[y].groups(), static_cast<std::size_t>(truth[y].days()));
    for (std::size_t j = 0; j < truth[y].groups(); ++j) {
      double sc = reporting.scale(j, y);
      for (std::size_t t = 0; t < static_cast<std::size_t>(truth[y].days()); ++t) {
        double mean = sc * truth[y].values(j, t);
        vals(j, t) = mean + noise.sd(mean) * rng.normal();
      }
    }
    out.emplace_back(std::move(vals), truth[y].history);
  }
  return out;
}

/// Centered moving average with an odd window; at the edges the window is
/// truncated symmetrically to the available days. Output is clamped at 0
/// (smoothed incidence feeds the estimator, which needs it nonnegative).
inline IncidenceSeries moving_average(const IncidenceSeries& series, int window) {
  if (window < 1 || window % 2 == 0)
    throw std::invalid_argument("moving_average: window must be odd and >= 1");
  const int days = series.days();
  if (window > days)
    throw std::invalid_argument("moving_average: window longer than series");
  const int half = window / 2;
  Matrix out(series.groups(), static_cast<std::size_t>(days));
  for (std::size_t j = 0; j < series.groups(); ++j)
    for (int t = 0; t < days; ++t) {
      int reach = std::min({half, t, days - 1 - t});
      double sum = 0.0;
      for (int u = t - reach; u <= t + reach; ++u)
        sum += series.values(j, static_cast<std::size_t>(u));
      double avg = sum / (2 * reach + 1);
      out(j, static_cast<std::size_t>(t)) = avg < 0.0 ? 0.0 : avg;
    }
  return IncidenceSeries(std::move(out), series.history);
}

}  // namespace ngmfit
