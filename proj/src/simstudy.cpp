#include "precipx/simstudy.hpp"

#include <gsl/gsl_cdf.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include "precipx/csv.hpp"
#include "precipx/errors.hpp"
#include "precipx/parallel.hpp"
#include "precipx/seeding.hpp"

namespace precipx {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kGammaShape = 1.0 / 3.0;
constexpr double kGammaScale = 3.0;

std::uint64_t double_bits(double x) {
  std::uint64_t u;
  std::memcpy(&u, &x, sizeof u);
  return u;
}

BlockMaximaSeries as_series(std::span<const double> maxima) {
  BlockMaximaSeries s;
  for (std::size_t i = 0; i < maxima.size(); ++i) {
    s.years.push_back(static_cast<int>(i) + 1);
    s.maxima.emplace_back(maxima[i]);
    s.missing_fraction.push_back(0.0);
  }
  return s;
}

// Per-replicate outcome: estimates and bootstrap standard errors by return period.
struct ReplicateResult {
  bool ok = false;
  std::vector<double> estimate;
  std::vector<double> boot_se;
};

ReplicateResult run_replicate(const SimConfig& cfg, const ParentDist& parent, int n,
                              std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::vector<double> maxima = simulate_block_maxima(parent, n, cfg.years, rng);
  ReplicateResult out;
  FitOptions opt;
  opt.stationary = true;
  opt.time_origin = 0.0;
  opt.min_blocks = std::min<std::size_t>(opt.min_blocks, cfg.years);
  GevFit fit;
  try {
    fit = fit_gev(as_series(maxima), ModelSpec{}, opt);
  } catch (const Error&) {
    return out;
  }
  if (!fit.converged) return out;
  out.ok = true;
  for (double r : cfg.return_periods) out.estimate.push_back(return_value(fit.params, {}, r, 0.0));

  const std::size_t nr = cfg.return_periods.size();
  std::vector<std::vector<double>> boot(nr);
  std::uniform_int_distribution<std::size_t> pick(0, cfg.years - 1);
  std::vector<double> resampled(cfg.years);
  opt.start = fit.params;
  for (std::size_t b = 0; b < cfg.bootstraps; ++b) {
    for (double& y : resampled) y = maxima[pick(rng)];
    try {
      const GevFit bf = fit_gev(as_series(resampled), ModelSpec{}, opt);
      if (!bf.converged) continue;
      for (std::size_t k = 0; k < nr; ++k)
        boot[k].push_back(return_value(bf.params, {}, cfg.return_periods[k], 0.0));
    } catch (const Error&) {
    }
  }
  for (std::size_t k = 0; k < nr; ++k) {
    const auto& v = boot[k];
    if (v.size() < 2) {
      out.boot_se.push_back(kNaN);
      continue;
    }
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    out.boot_se.push_back(std::sqrt(ss / static_cast<double>(v.size() - 1)));
  }
  return out;
}

}  // namespace

std::string_view family_name(ParentFamily f) {
  return f == ParentFamily::Exponential ? "exponential" : "gamma";
}

ParentFamily parse_family(std::string_view name) {
  if (name == "exponential") return ParentFamily::Exponential;
  if (name == "gamma") return ParentFamily::Gamma;
  throw InvalidArgument("unknown parent family '" + std::string(name) + "'");
}

double ParentDist::nonzero_cdf(double y) const {
  if (y <= 0.0) return 0.0;
  if (family == ParentFamily::Exponential) return -std::expm1(-y);
  return gsl_cdf_gamma_P(y, kGammaShape, kGammaScale);
}

double ParentDist::nonzero_survival(double y) const {
  if (y <= 0.0) return 1.0;
  if (family == ParentFamily::Exponential) return std::exp(-y);
  return gsl_cdf_gamma_Q(y, kGammaShape, kGammaScale);
}

double ParentDist::sample(std::mt19937_64& rng) const {
  if (p > 0.0 && std::bernoulli_distribution(p)(rng)) return 0.0;
  if (family == ParentFamily::Exponential) return std::exponential_distribution<double>(1.0)(rng);
  return std::gamma_distribution<double>(kGammaShape, kGammaScale)(rng);
}

double true_return_value(const ParentDist& parent, double block_size, double return_period) {
  if (!(return_period > 1.0)) throw InvalidArgument("true_return_value: r must exceed 1");
  if (!(parent.p >= 0.0 && parent.p < 1.0)) throw InvalidArgument("true_return_value: p in [0, 1)");
  const double m = block_size * (1.0 - parent.p);
  if (!(m >= 1.0)) throw InvalidArgument("true_return_value: n(1 - p) must be at least 1");
  // Solve m * log F(y) = log(1 - 1/r); the left side increases with y.
  const double target = std::log1p(-1.0 / return_period);
  auto g = [&](double y) { return m * std::log1p(-parent.nonzero_survival(y)) - target; };
  double lo = 0.0, hi = 1.0;
  while (g(hi) < 0.0) {
    lo = hi;
    hi *= 2.0;
  }
  for (int i = 0; i < 400 && hi - lo > 1e-12; ++i) {
    const double mid = 0.5 * (lo + hi);
    (g(mid) < 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

double gumbel_convergence(int n, std::span<const double> y_grid) {
  if (n < 1) throw InvalidArgument("gumbel_convergence: n must be >= 1");
  const double shift = std::log(static_cast<double>(n));
  double sup = 0.0;
  for (double y : y_grid) {
    const double x = y + shift;
    const double fn = x > 0.0 ? std::exp(n * std::log1p(-std::exp(-x))) : 0.0;
    sup = std::max(sup, std::abs(fn - std::exp(-std::exp(-y))));
  }
  return sup;
}

std::vector<double> default_convergence_grid() {
  std::vector<double> y;
  for (int i = 0; i <= 13000; ++i) y.push_back(-3.0 + i * 0.001);
  return y;
}

std::vector<double> simulate_block_maxima(const ParentDist& parent, int block_size,
                                          std::size_t years, std::mt19937_64& rng) {
  std::vector<double> out(years);
  for (double& m : out) {
    double best = 0.0;
    for (int i = 0; i < block_size; ++i) best = std::max(best, parent.sample(rng));
    m = best;
  }
  return out;
}

const SimCell& SimStudyResult::at(ParentFamily family, int block_size,
                                  double return_period) const {
  for (const auto& c : cells)
    if (c.parent.family == family && c.block_size == block_size &&
        c.return_period == return_period)
      return c;
  throw InvalidArgument("SimStudyResult: no such cell");
}

SimStudyResult run_sim_study(const SimConfig& cfg) {
  if (cfg.years < 2 || cfg.replicates < 2 || cfg.block_sizes.empty() ||
      cfg.return_periods.empty() || cfg.parents.empty())
    throw InvalidArgument("run_sim_study: empty or degenerate configuration");
  for (int n : cfg.block_sizes)
    if (n < 1) throw InvalidArgument("run_sim_study: block sizes must be >= 1");
  for (double r : cfg.return_periods)
    if (!(r > 1.0)) throw InvalidArgument("run_sim_study: return periods must exceed 1");

  struct Item {
    std::size_t parent;
    std::size_t block;
    std::size_t rep;
  };
  std::vector<Item> items;
  for (std::size_t p = 0; p < cfg.parents.size(); ++p)
    for (std::size_t b = 0; b < cfg.block_sizes.size(); ++b)
      for (std::size_t r = 0; r < cfg.replicates; ++r) items.push_back(Item{p, b, r});

  std::vector<ReplicateResult> results(items.size());
  parallel_for(items.size(), cfg.threads, [&](std::size_t i) {
    const Item& it = items[i];
    const ParentDist& parent = cfg.parents[it.parent];
    const int n = cfg.block_sizes[it.block];
    const std::uint64_t seed =
        derive_seed(cfg.seed, {static_cast<std::uint64_t>(parent.family), double_bits(parent.p),
                               static_cast<std::uint64_t>(n), it.rep});
    results[i] = run_replicate(cfg, parent, n, seed);
  });

  SimStudyResult out;
  std::size_t offset = 0;
  for (const auto& parent : cfg.parents) {
    for (int n : cfg.block_sizes) {
      const auto begin = results.begin() + static_cast<std::ptrdiff_t>(offset);
      const auto end = begin + static_cast<std::ptrdiff_t>(cfg.replicates);
      offset += cfg.replicates;
      const std::size_t failures =
          static_cast<std::size_t>(std::count_if(begin, end, [](const auto& r) { return !r.ok; }));
      for (std::size_t k = 0; k < cfg.return_periods.size(); ++k) {
        SimCell cell;
        cell.parent = parent;
        cell.block_size = n;
        cell.return_period = cfg.return_periods[k];
        cell.true_value = true_return_value(parent, n, cell.return_period);
        cell.failures = failures;
        cell.replicates = cfg.replicates;
        cell.flagged = static_cast<double>(failures) > 0.05 * static_cast<double>(cfg.replicates);
        double sum = 0.0, sq_err = 0.0, se_sum = 0.0;
        std::size_t count = 0, se_count = 0;
        for (auto it = begin; it != end; ++it) {
          if (!it->ok) continue;
          const double e = it->estimate[k];
          sum += e;
          sq_err += (e - cell.true_value) * (e - cell.true_value);
          ++count;
          if (std::isfinite(it->boot_se[k])) {
            se_sum += it->boot_se[k];
            ++se_count;
          }
        }
        if (count < 2) {
          cell.rmse = cell.mc_sd = cell.mean_boot_se = cell.re_percent = kNaN;
          out.cells.push_back(cell);
          continue;
        }
        const double mean = sum / static_cast<double>(count);
        double ss = 0.0;
        for (auto it = begin; it != end; ++it)
          if (it->ok) ss += (it->estimate[k] - mean) * (it->estimate[k] - mean);
        cell.rmse = std::sqrt(sq_err / static_cast<double>(count));
        cell.mc_sd = std::sqrt(ss / static_cast<double>(count - 1));
        cell.mean_boot_se = se_count > 0 ? se_sum / static_cast<double>(se_count) : kNaN;
        cell.re_percent = (cell.mc_sd / cell.mean_boot_se - 1.0) * 100.0;
        out.cells.push_back(cell);
      }
    }
  }
  return out;
}

std::string sim_result_csv(const SimStudyResult& result) {
  using csv::format_double;
  std::ostringstream out;
  out << "family,p,n,r,rmse,re_percent,mc_sd,mean_boot_se,failures\n";
  for (const auto& c : result.cells)
    out << family_name(c.parent.family) << ',' << format_double(c.parent.p) << ','
        << c.block_size << ',' << format_double(c.return_period) << ','
        << format_double(c.rmse) << ',' << format_double(c.re_percent) << ','
        << format_double(c.mc_sd) << ',' << format_double(c.mean_boot_se) << ',' << c.failures
        << '\n';
  return out.str();
}

std::string convergence_csv(std::span<const int> block_sizes, std::span<const double> y_grid) {
  std::ostringstream out;
  out << "n,sup_distance\n";
  for (int n : block_sizes)
    out << n << ',' << csv::format_double(gumbel_convergence(n, y_grid)) << '\n';
  return out.str();
}

}  // namespace precipx
