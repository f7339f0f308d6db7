#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <vector>

namespace ngmfit {

struct NelderMeadOptions {
  double reflect = 1.0;
  double expand = 2.0;
  double contract = 0.5;
  double shrink = 0.5;
  /// Converged when the simplex diameter drops below tol_x AND the objective
  /// spread below tol_f.
  double tol_x = 1e-8;
  double tol_f = 1e-10;
  /// Iteration cap is max_iter_factor * dimension; one automatic restart
  /// from the incumbent happens if the first pass hits the cap.
  int max_iter_factor = 200;
  int restarts = 1;
  /// Initial simplex: each coordinate perturbed by init_step_rel of itself,
  /// or by init_step_abs where the coordinate is zero.
  double init_step_rel = 0.05;
  double init_step_abs = 0.00025;
};

struct NelderMeadResult {
  std::vector<double> x;
  double value = 0.0;
  bool converged = false;
  long evals = 0;
  int iterations = 0;
};

namespace detail {

struct Simplex {
  std::vector<std::vector<double>> x;
  std::vector<double> f;
};

inline void sort_simplex(Simplex& s) {
  std::vector<std::size_t> idx(s.f.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return s.f[a] < s.f[b]; });
  Simplex out;
  out.x.reserve(idx.size());
  out.f.reserve(idx.size());
  for (std::size_t i : idx) {
    out.x.push_back(std::move(s.x[i]));
    out.f.push_back(s.f[i]);
  }
  s = std::move(out);
}

inline double simplex_diameter(const Simplex& s) {
  double diam = 0.0;
  for (std::size_t i = 1; i < s.x.size(); ++i)
    for (std::size_t j = 0; j < s.x[i].size(); ++j)
      diam = std::max(diam, std::abs(s.x[i][j] - s.x[0][j]));
  return diam;
}

}  // namespace detail

/// Simplex minimizer with the classic fminsearch moves. Returns the best
/// vertex; converged reports whether a tolerance (rather than the iteration
/// cap) ended the final pass.
inline NelderMeadResult nelder_mead(const std::function<double(const std::vector<double>&)>& fn,
                                    std::vector<double> x0,
                                    const NelderMeadOptions& opts = {}) {
  const std::size_t n = x0.size();
  NelderMeadResult result;
  if (n == 0) {
    result.x = x0;
    result.value = fn(x0);
    result.evals = 1;
    result.converged = true;
    return result;
  }
  const int max_iter = opts.max_iter_factor * static_cast<int>(n);

  std::vector<double> best = std::move(x0);
  double best_f = fn(best);
  ++result.evals;

  for (int pass = 0; pass <= opts.restarts; ++pass) {
    detail::Simplex s;
    s.x.push_back(best);
    s.f.push_back(best_f);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> v = best;
      v[i] += (v[i] != 0.0) ? opts.init_step_rel * v[i] : opts.init_step_abs;
      s.x.push_back(std::move(v));
      s.f.push_back(fn(s.x.back()));
      ++result.evals;
    }
    detail::sort_simplex(s);

    bool tol_hit = false;
    for (int iter = 0; iter < max_iter; ++iter) {
      ++result.iterations;
      if (detail::simplex_diameter(s) < opts.tol_x &&
          std::abs(s.f.back() - s.f.front()) < opts.tol_f) {
        tol_hit = true;
        break;
      }

      std::vector<double> centroid(n, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t v = 0; v < n; ++v) centroid[i] += s.x[v][i];
        centroid[i] /= static_cast<double>(n);
      }
      const std::vector<double>& worst = s.x[n];

      auto blend = [&](double coef) {
        std::vector<double> p(n);
        for (std::size_t i = 0; i < n; ++i) p[i] = centroid[i] + coef * (centroid[i] - worst[i]);
        return p;
      };

      std::vector<double> xr = blend(opts.reflect);
      double fr = fn(xr);
      ++result.evals;

      if (fr < s.f[0]) {
        std::vector<double> xe = blend(opts.expand);
        double fe = fn(xe);
        ++result.evals;
        if (fe < fr) {
          s.x[n] = std::move(xe);
          s.f[n] = fe;
        } else {
          s.x[n] = std::move(xr);
          s.f[n] = fr;
        }
      } else if (fr < s.f[n - 1]) {
        s.x[n] = std::move(xr);
        s.f[n] = fr;
      } else if (fr < s.f[n]) {
        // outside contraction
        std::vector<double> xc = blend(opts.contract * opts.reflect);
        double fc = fn(xc);
        ++result.evals;
        if (fc <= fr) {
          s.x[n] = std::move(xc);
          s.f[n] = fc;
        } else {
          for (std::size_t v = 1; v <= n; ++v) {
            for (std::size_t i = 0; i < n; ++i)
              s.x[v][i] = s.x[0][i] + opts.shrink * (s.x[v][i] - s.x[0][i]);
            s.f[v] = fn(s.x[v]);
            ++result.evals;
          }
        }
      } else {
        // inside contraction
        std::vector<double> xc(n);
        for (std::size_t i = 0; i < n; ++i)
          xc[i] = centroid[i] - opts.contract * (centroid[i] - worst[i]);
        double fc = fn(xc);
        ++result.evals;
        if (fc < s.f[n]) {
          s.x[n] = std::move(xc);
          s.f[n] = fc;
        } else {
          for (std::size_t v = 1; v <= n; ++v) {
            for (std::size_t i = 0; i < n; ++i)
              s.x[v][i] = s.x[0][i] + opts.shrink * (s.x[v][i] - s.x[0][i]);
            s.f[v] = fn(s.x[v]);
            ++result.evals;
          }
        }
      }
      detail::sort_simplex(s);
    }

    best = s.x[0];
    best_f = s.f[0];
    if (tol_hit) {
      result.converged = true;
      break;
    }
    result.converged = false;
  }

  result.x = std::move(best);
  result.value = best_f;
  return result;
}

}  // namespace ngmfit
