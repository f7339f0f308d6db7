#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "linalg.hpp"
#include "model.hpp"

namespace ngmfit {

/// Stacked linear system relating the transmission matrix entries to the
/// (smoothed) incidence. Rows run year-major, then group-major, then day;
/// columns index beta entries row-major (beta_11, beta_12, ..., beta_mm).
/// Row (y,j,t) has nonzeros only in the beta_j* columns:
///   X[(y,j,t), (j,k)] = r_y * S_j(t-1)/N_j * sum_tau P_tau ihat_k(t-tau),
/// with S_j reconstructed from the smoothed incidence itself and lags before
/// day 1 taken from the seeding convention (day 0 = seed, earlier zero).
struct DesignSystem {
  Matrix X;
  std::vector<double> response;
  std::size_t m = 0;
  std::vector<int> year_days;

  std::size_t rows() const { return X.rows(); }
};

/// Conditioning diagnostics of the design's Gram matrix B = X^T X.
/// det_blocks holds the determinant of each group's m x m block; the flag
/// trips when cond(B) > 1e8 or the smallest singular value of X drops below
/// 1e-10 times the largest.
struct IdentifiabilityReport {
  std::vector<double> det_blocks;
  double condition = 0.0;
  double min_singular = 0.0;
  double max_singular = 0.0;
  bool flagged = false;
};

class NonIdentifiableError : public std::runtime_error {
 public:
  NonIdentifiableError(const std::string& msg, IdentifiabilityReport report)
      : std::runtime_error(msg), report_(std::move(report)) {}
  const IdentifiabilityReport& report() const { return report_; }

 private:
  IdentifiabilityReport report_;
};

inline DesignSystem build_design(const std::vector<IncidenceSeries>& smoothed,
                                 const std::vector<std::vector<double>>& population,
                                 const std::vector<std::vector<double>>& s0,
                                 const std::vector<std::vector<double>>& seeds,
                                 const std::vector<double>& r, const SerialInterval& serial) {
  const std::size_t years = smoothed.size();
  if (years == 0) throw std::invalid_argument("build_design: no data");
  if (population.size() != years || s0.size() != years || seeds.size() != years ||
      r.size() != years)
    throw std::invalid_argument("build_design: per-year argument count mismatch");
  if (r[0] != 1.0) throw std::invalid_argument("build_design: r[0] must be 1");
  const std::size_t m = smoothed[0].groups();
  const int d = serial.days();

  std::size_t total_days = 0;
  for (std::size_t y = 0; y < years; ++y) {
    if (smoothed[y].groups() != m) throw std::invalid_argument("build_design: group count varies");
    if (population[y].size() != m || s0[y].size() != m || seeds[y].size() != m)
      throw std::invalid_argument("build_design: per-group argument size mismatch");
    if (!(r[y] > 0.0)) throw std::invalid_argument("build_design: r must be > 0");
    for (std::size_t j = 0; j < m; ++j)
      for (int t = 0; t < smoothed[y].days(); ++t)
        if (smoothed[y].values(j, static_cast<std::size_t>(t)) < 0.0)
          throw std::invalid_argument("build_design: negative smoothed incidence");
    total_days += static_cast<std::size_t>(smoothed[y].days());
  }

  DesignSystem sys;
  sys.m = m;
  sys.X = Matrix(m * total_days, m * m);
  sys.response.assign(m * total_days, 0.0);

  std::size_t year_offset = 0;
  for (std::size_t y = 0; y < years; ++y) {
    const auto& inc = smoothed[y];
    const int days = inc.days();
    sys.year_days.push_back(days);

    // lagged transmission pressure per group, seeding convention for t <= 0
    auto lagged = [&](std::size_t k, int t) {
      double f = 0.0;
      for (int tau = 1; tau <= d; ++tau) {
        int src = t - tau;
        double val = 0.0;
        if (src >= 1)
          val = inc.values(k, static_cast<std::size_t>(src - 1));
        else if (src == 0)
          val = seeds[y][k];
        f += serial.at(tau) * val;
      }
      return f;
    };

    std::vector<double> s_prev(m);
    for (std::size_t j = 0; j < m; ++j) {
      s_prev[j] = s0[y][j] * population[y][j] - seeds[y][j];
      if (s_prev[j] < 0.0) s_prev[j] = 0.0;
    }

    for (int t = 1; t <= days; ++t) {
      std::vector<double> force(m);
      for (std::size_t k = 0; k < m; ++k) force[k] = lagged(k, t);
      for (std::size_t j = 0; j < m; ++j) {
        std::size_t row = year_offset + j * static_cast<std::size_t>(days) +
                          static_cast<std::size_t>(t - 1);
        double w = r[y] * s_prev[j] / population[y][j];
        for (std::size_t k = 0; k < m; ++k) sys.X(row, j * m + k) = w * force[k];
        sys.response[row] = inc.values(j, static_cast<std::size_t>(t - 1));
      }
      for (std::size_t j = 0; j < m; ++j) {
        s_prev[j] -= inc.values(j, static_cast<std::size_t>(t - 1));
        if (s_prev[j] < 0.0) s_prev[j] = 0.0;
      }
    }
    year_offset += m * static_cast<std::size_t>(days);
  }
  return sys;
}

inline IdentifiabilityReport identifiability(const DesignSystem& sys) {
  const std::size_t m = sys.m;
  Matrix b = gram(sys.X);

  IdentifiabilityReport rep;
  rep.det_blocks.resize(m);
  for (std::size_t j = 0; j < m; ++j) {
    Matrix block(m, m);
    for (std::size_t a = 0; a < m; ++a)
      for (std::size_t c = 0; c < m; ++c) block(a, c) = b(j * m + a, j * m + c);
    rep.det_blocks[j] = determinant(block);
  }

  std::vector<double> ev = symmetric_eigenvalues(b);
  double lo = ev.front(), hi = ev.back();
  rep.max_singular = hi > 0.0 ? std::sqrt(hi) : 0.0;
  rep.min_singular = lo > 0.0 ? std::sqrt(lo) : 0.0;
  rep.condition = (lo > 0.0) ? hi / lo : std::numeric_limits<double>::infinity();
  rep.flagged = rep.condition > 1e8 || rep.min_singular < 1e-10 * rep.max_singular;
  return rep;
}

/// Least-squares estimate of the transmission matrix from the design system.
/// Entries are unconstrained (they can come out negative on noisy data).
/// Throws NonIdentifiableError when the system is numerically singular.
inline Matrix solve_direct(const DesignSystem& sys) {
  IdentifiabilityReport rep = identifiability(sys);
  if (rep.min_singular < 1e-10 * rep.max_singular || rep.max_singular == 0.0)
    throw NonIdentifiableError(
        "solve_direct: design matrix is rank deficient (proportional or missing "
        "group incidence)",
        rep);
  std::vector<double> flat = solve_least_squares(sys.X, sys.response);
  Matrix beta(sys.m, sys.m);
  for (std::size_t j = 0; j < sys.m; ++j)
    for (std::size_t k = 0; k < sys.m; ++k) beta(j, k) = flat[j * sys.m + k];
  return beta;
}

}  // namespace ngmfit
