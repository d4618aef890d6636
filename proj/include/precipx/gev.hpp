#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "precipx/block_maxima.hpp"
#include "precipx/simplex.hpp"

namespace precipx {

/// Shape values closer to zero than this use the Gumbel form.
inline constexpr double kGumbelShapeEps = 1e-8;

// Time trend models for the GEV parameters:
//   M0  linear location                                   4 parameters
//   M1  quadratic location                                5
//   M2  linear location, linear scale                     5
//   M3  linear location, linear shape                     5
//   M4  linear location, linear scale, linear shape       6
enum class TrendModel { M0, M1, M2, M3, M4 };

struct ModelSpec {
  TrendModel label = TrendModel::M0;

  int n_par() const;
  std::string_view name() const;
  bool quadratic_location() const { return label == TrendModel::M1; }
  bool scale_trend() const { return label == TrendModel::M2 || label == TrendModel::M4; }
  bool shape_trend() const { return label == TrendModel::M3 || label == TrendModel::M4; }

  static ModelSpec parse(std::string_view name);
  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

inline constexpr std::array<TrendModel, 5> kAllModels{TrendModel::M0, TrendModel::M1,
                                                      TrendModel::M2, TrendModel::M3,
                                                      TrendModel::M4};

/// Climatological coefficients. Coefficients not used by a model are ignored
/// when that model is evaluated.
struct GevParams {
  double mu0 = 0.0;
  double mu1 = 0.0;
  double mu2 = 0.0;
  double sigma0 = 1.0;
  double sigma1 = 0.0;
  double xi0 = 0.0;
  double xi1 = 0.0;
};

/// Location/scale/shape at one value of the time covariate.
struct GevState {
  double mu;
  double sigma;
  double xi;
};

GevState evaluate(const GevParams& p, ModelSpec model, double t);

/// Location and scale both grow as exp(alpha t / mu0), so their ratio is fixed.
struct ConstantRatioTrend {
  double mu0 = 1.0;
  double alpha = 0.0;
  double sigma0 = 1.0;
  double xi = 0.0;
};

struct GevFit {
  GevParams params;
  ModelSpec model;
  double neg_log_lik = HUGE_VAL;
  bool converged = false;
  std::size_t n_blocks = 0;
  // Calendar year that maps to t = 0.
  double time_origin = 0.0;
};

struct FitOptions {
  // Calendar year mapped to t = 0; defaults to the midpoint of the years present.
  std::optional<double> time_origin;
  // Hold the location slope at zero (stationary fit).
  bool stationary = false;
  // Starting point; the Gumbel moment estimate is used when absent or infeasible.
  std::optional<GevParams> start;
  int restarts = 3;
  std::size_t min_blocks = 20;
  SimplexOptions simplex{1e-8, 20000};
};

double gev_cdf(double y, double mu, double sigma, double xi);
/// Log density; -inf outside the support.
double gev_log_density(double y, double mu, double sigma, double xi);
double gev_quantile(double p, double mu, double sigma, double xi);

/// f_xi(r) such that the r-period return value is mu - sigma * f_xi(r).
double return_period_factor(double xi, double r);

/// Sum of negative log densities over the valid maxima, with t = year - time_origin.
/// Returns +inf when any scale is non-positive or any point is outside the support.
double neg_log_likelihood(const BlockMaximaSeries& maxima, ModelSpec model,
                          const GevParams& params, double time_origin = 0.0);

GevFit fit_gev(const BlockMaximaSeries& maxima, ModelSpec model, const FitOptions& options = {});

/// Value exceeded with probability 1/r at covariate t.
double return_value(const GevParams& params, ModelSpec model, double r, double t);

// Closed forms for the linear-location model (M0).
double relative_change_closed_form(const GevParams& params, double r, double t1, double t2);
double absolute_change_closed_form(const GevParams& params, double t1, double t2);

double constant_ratio_return_value(const ConstantRatioTrend& params, double r, double t);

/// AIC = -2 * (mean station log-likelihood) + 2 * n_par, where each station is
/// scored under its own (typically spatially smoothed) coefficients.
double predictive_aic(std::span<const BlockMaximaSeries> station_maxima,
                      std::span<const GevParams> smoothed_params, ModelSpec model,
                      double time_origin);

}  // namespace precipx
