#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

namespace precipx {

struct SimplexOptions {
  // Converged once every vertex lies within this distance (max-norm) of the best.
  double diameter_tol = 1e-8;
  int max_evaluations = 20000;
};

struct SimplexResult {
  std::vector<double> x;
  double value = HUGE_VAL;
  int evaluations = 0;
  bool converged = false;
};

/// Nelder-Mead minimisation of f over R^n.
///
/// `steps` gives the initial edge length along each coordinate; since the
/// moves are affine invariant this also fixes the effective coordinate
/// scaling. The diameter test is in the caller's units. f may return +inf to
/// mark infeasible points.
template <class F>
SimplexResult nelder_mead(F&& f, std::span<const double> start, std::span<const double> steps,
                          const SimplexOptions& opt = {}) {
  const std::size_t n = start.size();
  std::vector<std::vector<double>> v(n + 1, std::vector<double>(start.begin(), start.end()));
  std::vector<double> fv(n + 1);
  SimplexResult res;
  auto eval = [&](const std::vector<double>& x) {
    ++res.evaluations;
    const double y = f(std::span<const double>(x));
    return std::isnan(y) ? HUGE_VAL : y;
  };
  for (std::size_t i = 0; i < n; ++i) v[i + 1][i] += steps[i];
  for (std::size_t i = 0; i <= n; ++i) fv[i] = eval(v[i]);

  std::vector<std::size_t> order(n + 1);
  std::vector<double> centroid(n), xr(n), xe(n), xc(n);
  auto point = [&](std::vector<double>& out, double t, std::size_t worst) {
    for (std::size_t j = 0; j < n; ++j) out[j] = centroid[j] + t * (v[worst][j] - centroid[j]);
  };

  for (;;) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return fv[a] < fv[b]; });
    const std::size_t best = order.front(), worst = order.back(), second = order[n - 1];

    double diameter = 0.0;
    for (std::size_t i = 0; i <= n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        diameter = std::max(diameter, std::abs(v[i][j] - v[best][j]));
    if (diameter < opt.diameter_tol && std::isfinite(fv[best])) {
      res.converged = true;
      break;
    }
    if (res.evaluations >= opt.max_evaluations) break;

    std::fill(centroid.begin(), centroid.end(), 0.0);
    for (std::size_t i = 0; i <= n; ++i) {
      if (i == worst) continue;
      for (std::size_t j = 0; j < n; ++j) centroid[j] += v[i][j];
    }
    for (double& c : centroid) c /= static_cast<double>(n);

    point(xr, -1.0, worst);
    const double fr = eval(xr);
    if (fr < fv[best]) {
      point(xe, -2.0, worst);
      const double fe = eval(xe);
      if (fe < fr) {
        v[worst] = xe;
        fv[worst] = fe;
      } else {
        v[worst] = xr;
        fv[worst] = fr;
      }
      continue;
    }
    if (fr < fv[second]) {
      v[worst] = xr;
      fv[worst] = fr;
      continue;
    }
    const bool outside = fr < fv[worst];
    point(xc, outside ? -0.5 : 0.5, worst);
    const double fc = eval(xc);
    if (fc < (outside ? fr : fv[worst])) {
      v[worst] = xc;
      fv[worst] = fc;
      continue;
    }
    // shrink toward the best vertex
    for (std::size_t i = 0; i <= n; ++i) {
      if (i == best) continue;
      for (std::size_t j = 0; j < n; ++j) v[i][j] = v[best][j] + 0.5 * (v[i][j] - v[best][j]);
      fv[i] = eval(v[i]);
    }
  }
  const auto it = std::min_element(fv.begin(), fv.end());
  res.x = v[static_cast<std::size_t>(it - fv.begin())];
  res.value = *it;
  return res;
}

}  // namespace precipx
