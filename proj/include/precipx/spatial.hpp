#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "precipx/gev.hpp"

namespace precipx {

struct Coord {
  double lon = 0.0;
  double lat = 0.0;
  friend bool operator==(const Coord&, const Coord&) = default;
};

inline constexpr double kEarthRadiusKm = 6371.0;

/// Haversine distance.
double great_circle_km(Coord a, Coord b);

/// Matérn correlation with smoothness 3/2: (1 + sqrt(3) d / range) exp(-sqrt(3) d / range).
double matern32_correlation(double distance_km, double range_km);

struct Grid {
  std::vector<Coord> cells;
  double resolution = 0.0;  // degrees

  std::size_t size() const { return cells.size(); }

  /// Cell centres of a regular lon/lat lattice covering the box, row by row
  /// (latitude outer, longitude inner).
  static Grid regular(double lon_min, double lon_max, double lat_min, double lat_max,
                      double resolution);
  /// Arbitrary cell centres; rejects duplicates and non-positive resolution.
  static Grid from_cells(std::vector<Coord> cells, double resolution);
};

/// Stationary Gaussian process with Matérn(3/2) covariance
///   C(d) = variance * rho(d) + nugget * [d == 0]
/// and a constant mean.
struct KrigingModel {
  double variance = 0.0;
  double range_km = 1.0;
  double nugget = 0.0;
  double mean = 0.0;
};

/// Nugget never drops below this fraction of the variance.
inline constexpr double kNuggetFloor = 1e-10;

/// Covariance of the observations at `coords` (row-major, n x n).
std::vector<double> covariance_matrix(const KrigingModel& model, std::span<const Coord> coords);

/// Maximum-likelihood variance, range, nugget and mean (profile likelihood,
/// coarse candidate grid then simplex refinement). Needs at least 10 sites.
KrigingModel fit_kriging_model(std::span<const Coord> coords, std::span<const double> values);

struct KrigingPrediction {
  std::vector<double> mean;
  std::vector<double> sd;
};

/// Simple kriging with the model's constant mean. Predicts the latent field,
/// so with a (floored) zero nugget the data are reproduced at the sites.
KrigingPrediction krige(const KrigingModel& model, std::span<const Coord> coords,
                        std::span<const double> values, const Grid& grid);

/// Kriging as a fixed linear map from site values to target predictions.
/// The covariance parameters are frozen; the constant mean is re-estimated
/// by generalized least squares for every input vector.
class LinearSmoother {
 public:
  LinearSmoother(const KrigingModel& model, std::span<const Coord> coords,
                 std::span<const Coord> targets);

  std::vector<double> apply(std::span<const double> values) const;
  std::size_t inputs() const { return n_in_; }
  std::size_t outputs() const { return n_out_; }

 private:
  std::size_t n_in_ = 0;
  std::size_t n_out_ = 0;
  std::vector<double> op_;  // row-major n_out x n_in
};

struct StationFit {
  Coord coord;
  GevFit fit;
};

/// Gridded best estimates of the climatological coefficients.
struct CoefficientField {
  Grid grid;
  ModelSpec model;
  double time_origin = 0.0;
  std::vector<GevParams> cells;
};

/// Coefficient surfaces smoothed independently. The scale intercept is
/// smoothed on the log scale; shape values are clipped to [-1, 1].
enum class Surface { Mu0, Mu1, Mu2, LogSigma0, Sigma1, Xi0, Xi1 };

std::vector<Surface> surfaces_for(ModelSpec model);
std::string_view surface_name(Surface s);
double surface_value(const GevParams& p, Surface s);

/// Fits one kriging model per coefficient surface and reuses them, so that
/// replicate fits of the same stations are smoothed with identical operators.
class CoefficientSmoother {
 public:
  CoefficientSmoother(std::span<const StationFit> fits, std::vector<Coord> targets,
                      double resolution = 0.0);

  const std::vector<Surface>& surfaces() const { return surfaces_; }
  const std::vector<KrigingModel>& models() const { return models_; }
  ModelSpec model() const { return model_; }

  /// `params[i]` belongs to station i of the construction set; nullopt marks a
  /// station dropped from this replicate (the operator is rebuilt for the subset).
  CoefficientField smooth(std::span<const std::optional<GevParams>> params,
                          double time_origin) const;

 private:
  std::vector<Coord> stations_;
  Grid grid_;
  ModelSpec model_;
  std::vector<Surface> surfaces_;
  std::vector<KrigingModel> models_;
  std::vector<LinearSmoother> full_;
};

/// Independent kriging of each coefficient surface onto the grid.
CoefficientField smooth_coefficients(std::span<const StationFit> station_fits, const Grid& grid);

/// Schema: `lon,lat,mu0,mu1,sigma,xi`, followed by mu2/sigma1/xi1 for models that use them.
std::string coefficient_field_csv(const CoefficientField& field);

}  // namespace precipx
