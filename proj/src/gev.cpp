#include "precipx/gev.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "precipx/errors.hpp"

namespace precipx {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kEulerGamma = 0.57721566490153286;

void require_finite(std::initializer_list<double> xs, const char* where) {
  for (double x : xs)
    if (!std::isfinite(x)) throw InvalidArgument(std::string(where) + ": non-finite argument");
}

// Observation pairs used by the likelihood, with the covariate already shifted.
struct Sample {
  std::vector<double> t;
  std::vector<double> y;
};

Sample valid_sample(const BlockMaximaSeries& s, double origin) {
  Sample out;
  out.t.reserve(s.size());
  out.y.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!s.maxima[i]) continue;
    out.t.push_back(static_cast<double>(s.years[i]) - origin);
    out.y.push_back(*s.maxima[i]);
  }
  return out;
}

// Negative log-likelihood; when `max_abs_xi` is finite the shape is also
// required to stay inside [-max_abs_xi, max_abs_xi] at every sample time.
double sample_nll(const Sample& s, ModelSpec model, const GevParams& p,
                  double max_abs_xi = kInf) {
  double total = 0.0;
  for (std::size_t i = 0; i < s.y.size(); ++i) {
    const GevState g = evaluate(p, model, s.t[i]);
    if (!(g.sigma > 0.0) || std::abs(g.xi) > max_abs_xi) return kInf;
    const double z = (s.y[i] - g.mu) / g.sigma;
    if (std::abs(g.xi) < kGumbelShapeEps) {
      total += std::log(g.sigma) + z + std::exp(-z);
    } else {
      const double w = g.xi * z;
      if (!(w > -1.0)) return kInf;
      const double lw = std::log1p(w);
      total += std::log(g.sigma) + (1.0 + 1.0 / g.xi) * lw + std::exp(-lw / g.xi);
    }
  }
  return std::isfinite(total) ? total : kInf;
}

// Layout of the free-parameter vector for a model.
struct ParamLayout {
  ModelSpec model;
  bool stationary;

  std::size_t size() const {
    std::size_t n = 3;  // mu0, sigma0, xi0
    if (!stationary) ++n;
    if (model.quadratic_location()) ++n;
    if (model.scale_trend()) ++n;
    if (model.shape_trend()) ++n;
    return n;
  }

  std::vector<double> pack(const GevParams& p) const {
    std::vector<double> x{p.mu0};
    if (!stationary) x.push_back(p.mu1);
    if (model.quadratic_location()) x.push_back(p.mu2);
    x.push_back(p.sigma0);
    if (model.scale_trend()) x.push_back(p.sigma1);
    x.push_back(p.xi0);
    if (model.shape_trend()) x.push_back(p.xi1);
    return x;
  }

  GevParams unpack(std::span<const double> x) const {
    GevParams p;
    std::size_t k = 0;
    p.mu0 = x[k++];
    p.mu1 = stationary ? 0.0 : x[k++];
    p.mu2 = model.quadratic_location() ? x[k++] : 0.0;
    p.sigma0 = x[k++];
    p.sigma1 = model.scale_trend() ? x[k++] : 0.0;
    p.xi0 = x[k++];
    p.xi1 = model.shape_trend() ? x[k++] : 0.0;
    return p;
  }
};

}  // namespace

std::size_t BlockMaximaSeries::valid_count() const {
  return static_cast<std::size_t>(
      std::count_if(maxima.begin(), maxima.end(), [](const auto& m) { return m.has_value(); }));
}

int ModelSpec::n_par() const {
  switch (label) {
    case TrendModel::M0: return 4;
    case TrendModel::M1:
    case TrendModel::M2:
    case TrendModel::M3: return 5;
    case TrendModel::M4: return 6;
  }
  return 0;
}

std::string_view ModelSpec::name() const {
  static constexpr std::array<std::string_view, 5> names{"M0", "M1", "M2", "M3", "M4"};
  return names[static_cast<std::size_t>(label)];
}

ModelSpec ModelSpec::parse(std::string_view name) {
  for (TrendModel m : kAllModels)
    if (ModelSpec{m}.name() == name) return ModelSpec{m};
  throw InvalidArgument("unknown trend model '" + std::string(name) + "'");
}

GevState evaluate(const GevParams& p, ModelSpec model, double t) {
  GevState g{p.mu0 + p.mu1 * t, p.sigma0, p.xi0};
  if (model.quadratic_location()) g.mu += p.mu2 * t * t;
  if (model.scale_trend()) g.sigma += p.sigma1 * t;
  if (model.shape_trend()) g.xi += p.xi1 * t;
  return g;
}

double gev_cdf(double y, double mu, double sigma, double xi) {
  require_finite({y, mu, sigma, xi}, "gev_cdf");
  if (!(sigma > 0.0)) throw InvalidArgument("gev_cdf: sigma must be positive");
  const double z = (y - mu) / sigma;
  if (std::abs(xi) < kGumbelShapeEps) return std::exp(-std::exp(-z));
  const double w = xi * z;
  if (!(w > -1.0)) return xi > 0.0 ? 0.0 : 1.0;
  return std::exp(-std::exp(-std::log1p(w) / xi));
}

double gev_log_density(double y, double mu, double sigma, double xi) {
  require_finite({y, mu, sigma, xi}, "gev_log_density");
  if (!(sigma > 0.0)) throw InvalidArgument("gev_log_density: sigma must be positive");
  const double z = (y - mu) / sigma;
  if (std::abs(xi) < kGumbelShapeEps) return -std::log(sigma) - z - std::exp(-z);
  const double w = xi * z;
  if (!(w > -1.0)) return -kInf;
  const double lw = std::log1p(w);
  return -std::log(sigma) - (1.0 + 1.0 / xi) * lw - std::exp(-lw / xi);
}

double gev_quantile(double p, double mu, double sigma, double xi) {
  require_finite({p, mu, sigma, xi}, "gev_quantile");
  if (!(p > 0.0 && p < 1.0)) throw InvalidArgument("gev_quantile: p must lie in (0, 1)");
  if (!(sigma > 0.0)) throw InvalidArgument("gev_quantile: sigma must be positive");
  const double e = -std::log(p);
  if (std::abs(xi) < kGumbelShapeEps) return mu - sigma * std::log(e);
  return mu + sigma * std::expm1(-xi * std::log(e)) / xi;
}

double return_period_factor(double xi, double r) {
  require_finite({xi, r}, "return_period_factor");
  if (!(r > 1.0)) throw InvalidArgument("return period must exceed 1");
  // -log(1 - 1/r), computed without cancellation for large r
  const double e = -std::log1p(-1.0 / r);
  if (std::abs(xi) < kGumbelShapeEps) return std::log(e);
  return -std::expm1(-xi * std::log(e)) / xi;
}

double neg_log_likelihood(const BlockMaximaSeries& maxima, ModelSpec model,
                          const GevParams& params, double time_origin) {
  if (maxima.valid_count() == 0) throw InvalidArgument("neg_log_likelihood: no valid maxima");
  return sample_nll(valid_sample(maxima, time_origin), model, params);
}

GevFit fit_gev(const BlockMaximaSeries& maxima, ModelSpec model, const FitOptions& options) {
  const std::size_t n_valid = maxima.valid_count();
  if (n_valid < options.min_blocks)
    throw InsufficientData("fit_gev: " + std::to_string(n_valid) + " valid maxima, need " +
                           std::to_string(options.min_blocks));

  double origin = 0.0;
  if (options.time_origin) {
    origin = *options.time_origin;
  } else {
    int lo = std::numeric_limits<int>::max(), hi = std::numeric_limits<int>::min();
    for (std::size_t i = 0; i < maxima.size(); ++i) {
      if (!maxima.maxima[i]) continue;
      lo = std::min(lo, maxima.years[i]);
      hi = std::max(hi, maxima.years[i]);
    }
    origin = 0.5 * (static_cast<double>(lo) + static_cast<double>(hi));
  }
  const Sample sample = valid_sample(maxima, origin);

  const double n = static_cast<double>(sample.y.size());
  const double mean = std::accumulate(sample.y.begin(), sample.y.end(), 0.0) / n;
  double ss = 0.0;
  for (double y : sample.y) ss += (y - mean) * (y - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  if (!(sd > 0.0) || !std::isfinite(sd)) throw DegenerateData("fit_gev: all maxima identical");

  double half_span = 1.0;
  for (double t : sample.t) half_span = std::max(half_span, std::abs(t));

  const ParamLayout layout{model, options.stationary};
  auto objective = [&](std::span<const double> x) {
    return sample_nll(sample, model, layout.unpack(x), 1.0);
  };

  GevParams init;
  const double sigma_hat = sd * std::sqrt(6.0) / M_PI;
  init.sigma0 = sigma_hat;
  init.mu0 = mean - kEulerGamma * sigma_hat;
  init.xi0 = 0.05;
  if (options.start) {
    GevParams s = *options.start;
    if (options.stationary) s.mu1 = 0.0;
    if (std::isfinite(sample_nll(sample, model, s, 1.0))) init = s;
  }

  GevParams step;
  step.mu0 = 0.3 * sigma_hat;
  step.mu1 = 0.3 * sigma_hat / half_span;
  step.mu2 = 0.3 * sigma_hat / (half_span * half_span);
  step.sigma0 = 0.2 * sigma_hat;
  step.sigma1 = 0.1 * sigma_hat / half_span;
  step.xi0 = 0.1;
  step.xi1 = 0.1 / half_span;
  const std::vector<double> steps = layout.pack(step);

  SimplexResult best = nelder_mead(objective, layout.pack(init), steps, options.simplex);
  // Restart around the incumbent with jittered, smaller simplices; stop as soon
  // as a restart fails to improve the objective.
  for (int k = 0; k < options.restarts && std::isfinite(best.value); ++k) {
    std::vector<double> x0 = best.x, s = steps;
    for (std::size_t j = 0; j < s.size(); ++j) {
      const double sign = ((j + static_cast<std::size_t>(k)) % 2 == 0) ? 1.0 : -1.0;
      s[j] *= 0.1 * sign * (1.0 + 0.5 * k);
      x0[j] += 0.05 * steps[j] * sign;
    }
    SimplexResult trial = nelder_mead(objective, x0, s, options.simplex);
    const bool improved = trial.value < best.value - 1e-10 * (1.0 + std::abs(best.value));
    if (trial.value <= best.value) {
      trial.evaluations += best.evaluations;
      best = std::move(trial);
    }
    if (!improved) break;
  }

  GevFit fit;
  fit.model = model;
  fit.params = layout.unpack(best.x);
  fit.neg_log_lik = best.value;
  fit.converged = best.converged && std::isfinite(best.value);
  fit.n_blocks = sample.y.size();
  fit.time_origin = origin;
  return fit;
}

double return_value(const GevParams& params, ModelSpec model, double r, double t) {
  require_finite({r, t}, "return_value");
  const GevState g = evaluate(params, model, t);
  return g.mu - g.sigma * return_period_factor(g.xi, r);
}

double relative_change_closed_form(const GevParams& p, double r, double t1, double t2) {
  const double denom = p.mu0 + p.mu1 * t1 - p.sigma0 * return_period_factor(p.xi0, r);
  if (denom == 0.0 || !std::isfinite(denom))
    throw NumericError("relative change: return value at t1 is zero");
  return p.mu1 * (t2 - t1) / denom;
}

double absolute_change_closed_form(const GevParams& p, double t1, double t2) {
  return p.mu1 * (t2 - t1);
}

double constant_ratio_return_value(const ConstantRatioTrend& p, double r, double t) {
  const double growth = std::exp(p.alpha * t / p.mu0);
  return p.mu0 * growth - p.sigma0 * growth * return_period_factor(p.xi, r);
}

double predictive_aic(std::span<const BlockMaximaSeries> station_maxima,
                      std::span<const GevParams> smoothed_params, ModelSpec model,
                      double time_origin) {
  if (station_maxima.size() != smoothed_params.size() || station_maxima.empty())
    throw InvalidArgument("predictive_aic: need one parameter set per station");
  double sum_loglik = 0.0;
  for (std::size_t i = 0; i < station_maxima.size(); ++i)
    sum_loglik -= neg_log_likelihood(station_maxima[i], model, smoothed_params[i], time_origin);
  const double mean_loglik = sum_loglik / static_cast<double>(station_maxima.size());
  return -2.0 * mean_loglik + 2.0 * model.n_par();
}

}  // namespace precipx
