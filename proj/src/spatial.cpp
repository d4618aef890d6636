#include "precipx/spatial.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "precipx/csv.hpp"
#include "precipx/errors.hpp"
#include "precipx/simplex.hpp"

namespace precipx {

namespace {

constexpr double kDegToRad = M_PI / 180.0;
const double kSqrt3 = std::sqrt(3.0);

Eigen::MatrixXd distance_matrix(std::span<const Coord> a, std::span<const Coord> b) {
  Eigen::MatrixXd d(static_cast<Eigen::Index>(a.size()), static_cast<Eigen::Index>(b.size()));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j)
      d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = great_circle_km(a[i], b[j]);
  return d;
}

Eigen::MatrixXd correlation(const Eigen::MatrixXd& dist, double range_km) {
  return dist.unaryExpr([range_km](double d) { return matern32_correlation(d, range_km); });
}

double effective_nugget(const KrigingModel& m) {
  return std::max(m.nugget, kNuggetFloor * m.variance);
}

Eigen::MatrixXd observation_covariance(const KrigingModel& m, const Eigen::MatrixXd& dist) {
  Eigen::MatrixXd k = m.variance * correlation(dist, m.range_km);
  k.diagonal().array() += effective_nugget(m);
  return k;
}

void check_sites(std::span<const Coord> coords, std::span<const double> values) {
  if (coords.size() != values.size())
    throw InvalidArgument("kriging: coordinate and value counts differ");
  for (std::size_t i = 0; i < coords.size(); ++i) {
    if (!std::isfinite(values[i])) throw InvalidArgument("kriging: non-finite value");
    for (std::size_t j = i + 1; j < coords.size(); ++j)
      if (coords[i] == coords[j]) throw InvalidArgument("kriging: duplicate coordinates");
  }
}

bool is_constant(std::span<const double> v, double* mean_out) {
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  *mean_out = mean;
  return ss / n <= 1e-24 * std::max(1.0, mean * mean);
}

// Profile negative log-likelihood in (range, nugget ratio); the variance and
// mean are concentrated out. Writes the concentrated values when finite.
double profile_nll(const Eigen::MatrixXd& dist, const Eigen::VectorXd& v, double range_km,
                   double ratio, double* variance, double* mean) {
  const auto n = v.size();
  Eigen::MatrixXd vmat = correlation(dist, range_km);
  vmat.diagonal().array() += ratio;
  Eigen::LLT<Eigen::MatrixXd> llt(vmat);
  if (llt.info() != Eigen::Success) return HUGE_VAL;
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
  const Eigen::VectorXd vi1 = llt.solve(ones);
  const Eigen::VectorXd viv = llt.solve(v);
  const double denom = ones.dot(vi1);
  if (!(denom > 0.0)) return HUGE_VAL;
  const double m = ones.dot(viv) / denom;
  const Eigen::VectorXd resid = v - m * ones;
  const double s2 = resid.dot(llt.solve(resid)) / static_cast<double>(n);
  if (!(s2 > 0.0) || !std::isfinite(s2)) return HUGE_VAL;
  const Eigen::MatrixXd& l = llt.matrixLLT();
  const double logdet = 2.0 * l.diagonal().array().log().sum();
  if (variance) *variance = s2;
  if (mean) *mean = m;
  return 0.5 * static_cast<double>(n) * std::log(s2) + 0.5 * logdet;
}

}  // namespace

double great_circle_km(Coord a, Coord b) {
  const double phi1 = a.lat * kDegToRad, phi2 = b.lat * kDegToRad;
  const double dphi = phi2 - phi1;
  const double dlambda = (b.lon - a.lon) * kDegToRad;
  const double h = std::sin(dphi / 2) * std::sin(dphi / 2) +
                   std::cos(phi1) * std::cos(phi2) * std::sin(dlambda / 2) * std::sin(dlambda / 2);
  return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(h)));
}

double matern32_correlation(double distance_km, double range_km) {
  const double u = kSqrt3 * distance_km / range_km;
  return (1.0 + u) * std::exp(-u);
}

Grid Grid::regular(double lon_min, double lon_max, double lat_min, double lat_max,
                   double resolution) {
  if (!(resolution > 0.0)) throw InvalidArgument("grid resolution must be positive");
  if (!(lon_max > lon_min) || !(lat_max > lat_min)) throw InvalidArgument("empty grid box");
  Grid g;
  g.resolution = resolution;
  const auto nlon = static_cast<std::size_t>(std::floor((lon_max - lon_min) / resolution + 1e-9));
  const auto nlat = static_cast<std::size_t>(std::floor((lat_max - lat_min) / resolution + 1e-9));
  if (nlon == 0 || nlat == 0) throw InvalidArgument("grid box smaller than one cell");
  for (std::size_t i = 0; i < nlat; ++i)
    for (std::size_t j = 0; j < nlon; ++j)
      g.cells.push_back(Coord{lon_min + (static_cast<double>(j) + 0.5) * resolution,
                              lat_min + (static_cast<double>(i) + 0.5) * resolution});
  return g;
}

Grid Grid::from_cells(std::vector<Coord> cells, double resolution) {
  if (!(resolution > 0.0)) throw InvalidArgument("grid resolution must be positive");
  auto sorted = cells;
  std::sort(sorted.begin(), sorted.end(), [](Coord a, Coord b) {
    return a.lat != b.lat ? a.lat < b.lat : a.lon < b.lon;
  });
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw InvalidArgument("grid cells must be unique");
  return Grid{std::move(cells), resolution};
}

std::vector<double> covariance_matrix(const KrigingModel& model, std::span<const Coord> coords) {
  const Eigen::MatrixXd k = observation_covariance(model, distance_matrix(coords, coords));
  std::vector<double> out(static_cast<std::size_t>(k.size()));
  for (Eigen::Index i = 0; i < k.rows(); ++i)
    for (Eigen::Index j = 0; j < k.cols(); ++j)
      out[static_cast<std::size_t>(i * k.cols() + j)] = k(i, j);
  return out;
}

KrigingModel fit_kriging_model(std::span<const Coord> coords, std::span<const double> values) {
  if (coords.size() < 10)
    throw InsufficientData("fit_kriging_model: need at least 10 stations, got " +
                           std::to_string(coords.size()));
  check_sites(coords, values);

  const Eigen::MatrixXd dist = distance_matrix(coords, coords);
  const double dmax = dist.maxCoeff();
  double dmin = dmax;
  for (Eigen::Index i = 0; i < dist.rows(); ++i)
    for (Eigen::Index j = i + 1; j < dist.cols(); ++j) dmin = std::min(dmin, dist(i, j));

  double mean = 0.0;
  if (is_constant(values, &mean)) return KrigingModel{0.0, dmax, 0.0, mean};

  const Eigen::VectorXd v =
      Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));

  const double log_range_lo = std::log(std::max(dmin, dmax / 1000.0)) - std::log(10.0);
  const double log_range_hi = std::log(10.0 * dmax);
  const double log_ratio_lo = std::log(kNuggetFloor);
  const double log_ratio_hi = std::log(100.0);

  auto objective = [&](std::span<const double> x) {
    if (x[0] < log_range_lo || x[0] > log_range_hi || x[1] < log_ratio_lo || x[1] > log_ratio_hi)
      return HUGE_VAL;
    return profile_nll(dist, v, std::exp(x[0]), std::exp(x[1]), nullptr, nullptr);
  };

  // coarse candidate grid
  static constexpr std::array<double, 9> ratios{1e-10, 1e-6, 1e-3, 0.01, 0.05, 0.2, 0.5, 1.0, 3.0};
  constexpr int kRanges = 15;
  const double r_lo = std::log(std::max(dmin, dmax / 100.0)), r_hi = std::log(2.0 * dmax);
  std::array<double, 2> best{0.0, 0.0};
  double best_value = HUGE_VAL;
  for (int i = 0; i < kRanges; ++i) {
    const double lr = r_lo + (r_hi - r_lo) * i / (kRanges - 1);
    for (double ratio : ratios) {
      const std::array<double, 2> x{lr, std::log(ratio)};
      const double f = objective(x);
      if (f < best_value) {
        best_value = f;
        best = x;
      }
    }
  }
  if (!std::isfinite(best_value))
    throw NumericError("fit_kriging_model: covariance singular for every candidate");

  const std::array<double, 2> steps{0.3, 1.0};
  const SimplexResult refined = nelder_mead(objective, best, steps, SimplexOptions{1e-6, 2000});
  const std::array<double, 2> x = refined.value < best_value
                                      ? std::array<double, 2>{refined.x[0], refined.x[1]}
                                      : best;

  KrigingModel m;
  m.range_km = std::exp(x[0]);
  const double ratio = std::exp(x[1]);
  profile_nll(dist, v, m.range_km, ratio, &m.variance, &m.mean);
  m.nugget = std::max(ratio, kNuggetFloor) * m.variance;
  return m;
}

KrigingPrediction krige(const KrigingModel& model, std::span<const Coord> coords,
                        std::span<const double> values, const Grid& grid) {
  if (grid.cells.empty()) throw InvalidArgument("krige: empty grid");
  if (coords.empty()) throw InvalidArgument("krige: no data");
  check_sites(coords, values);
  const std::size_t m = grid.cells.size();
  KrigingPrediction out{std::vector<double>(m, model.mean), std::vector<double>(m, 0.0)};
  if (model.variance <= 0.0) return out;

  const Eigen::MatrixXd k = observation_covariance(model, distance_matrix(coords, coords));
  Eigen::LLT<Eigen::MatrixXd> llt(k);
  if (llt.info() != Eigen::Success) throw NumericError("krige: covariance not positive definite");
  const Eigen::MatrixXd cross =
      model.variance * correlation(distance_matrix(coords, grid.cells), model.range_km);
  const Eigen::MatrixXd weights = llt.solve(cross);  // n x m
  Eigen::VectorXd resid(static_cast<Eigen::Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i)
    resid(static_cast<Eigen::Index>(i)) = values[i] - model.mean;
  for (std::size_t c = 0; c < m; ++c) {
    const auto col = static_cast<Eigen::Index>(c);
    out.mean[c] = model.mean + weights.col(col).dot(resid);
    const double var = model.variance - cross.col(col).dot(weights.col(col));
    out.sd[c] = std::sqrt(std::max(0.0, var));
  }
  return out;
}

LinearSmoother::LinearSmoother(const KrigingModel& model, std::span<const Coord> coords,
                               std::span<const Coord> targets)
    : n_in_(coords.size()), n_out_(targets.size()), op_(n_in_ * n_out_) {
  if (coords.empty()) throw InvalidArgument("LinearSmoother: no sites");
  if (model.variance <= 0.0) {
    std::fill(op_.begin(), op_.end(), 1.0 / static_cast<double>(n_in_));
    return;
  }
  const Eigen::MatrixXd k = observation_covariance(model, distance_matrix(coords, coords));
  Eigen::LLT<Eigen::MatrixXd> llt(k);
  if (llt.info() != Eigen::Success)
    throw NumericError("LinearSmoother: covariance not positive definite");
  const auto n = static_cast<Eigen::Index>(n_in_);
  const Eigen::VectorXd ki1 = llt.solve(Eigen::VectorXd::Ones(n));
  const Eigen::VectorXd gls = ki1 / ki1.sum();
  const Eigen::MatrixXd cross =
      model.variance * correlation(distance_matrix(coords, targets), model.range_km);
  const Eigen::MatrixXd w = llt.solve(cross);  // n x m
  for (std::size_t c = 0; c < n_out_; ++c) {
    const auto col = w.col(static_cast<Eigen::Index>(c));
    const double leftover = 1.0 - col.sum();
    for (std::size_t i = 0; i < n_in_; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      op_[c * n_in_ + i] = col(ii) + leftover * gls(ii);
    }
  }
}

std::vector<double> LinearSmoother::apply(std::span<const double> values) const {
  if (values.size() != n_in_) throw InvalidArgument("LinearSmoother: input size mismatch");
  std::vector<double> out(n_out_);
  for (std::size_t c = 0; c < n_out_; ++c) {
    const double* row = op_.data() + c * n_in_;
    double acc = 0.0;
    for (std::size_t i = 0; i < n_in_; ++i) acc += row[i] * values[i];
    out[c] = acc;
  }
  return out;
}

std::vector<Surface> surfaces_for(ModelSpec model) {
  std::vector<Surface> s{Surface::Mu0, Surface::Mu1, Surface::LogSigma0, Surface::Xi0};
  if (model.quadratic_location()) s.push_back(Surface::Mu2);
  if (model.scale_trend()) s.push_back(Surface::Sigma1);
  if (model.shape_trend()) s.push_back(Surface::Xi1);
  return s;
}

std::string_view surface_name(Surface s) {
  switch (s) {
    case Surface::Mu0: return "mu0";
    case Surface::Mu1: return "mu1";
    case Surface::Mu2: return "mu2";
    case Surface::LogSigma0: return "log_sigma0";
    case Surface::Sigma1: return "sigma1";
    case Surface::Xi0: return "xi0";
    case Surface::Xi1: return "xi1";
  }
  return "";
}

double surface_value(const GevParams& p, Surface s) {
  switch (s) {
    case Surface::Mu0: return p.mu0;
    case Surface::Mu1: return p.mu1;
    case Surface::Mu2: return p.mu2;
    case Surface::LogSigma0: return std::log(p.sigma0);
    case Surface::Sigma1: return p.sigma1;
    case Surface::Xi0: return p.xi0;
    case Surface::Xi1: return p.xi1;
  }
  return 0.0;
}

namespace {

void assign_surface(GevParams& p, Surface s, double value) {
  switch (s) {
    case Surface::Mu0: p.mu0 = value; break;
    case Surface::Mu1: p.mu1 = value; break;
    case Surface::Mu2: p.mu2 = value; break;
    case Surface::LogSigma0: p.sigma0 = std::exp(value); break;
    case Surface::Sigma1: p.sigma1 = value; break;
    case Surface::Xi0: p.xi0 = std::clamp(value, -1.0, 1.0); break;
    case Surface::Xi1: p.xi1 = value; break;
  }
}

}  // namespace

CoefficientSmoother::CoefficientSmoother(std::span<const StationFit> fits,
                                         std::vector<Coord> targets, double resolution) {
  if (fits.empty()) throw InvalidArgument("smooth_coefficients: no station fits");
  if (targets.empty()) throw InvalidArgument("smooth_coefficients: empty grid");
  model_ = fits.front().fit.model;
  for (const auto& f : fits) {
    if (!f.fit.converged) throw InvalidArgument("smooth_coefficients: unconverged station fit");
    if (!(f.fit.model == model_)) throw InvalidArgument("smooth_coefficients: mixed trend models");
    stations_.push_back(f.coord);
  }
  grid_.cells = std::move(targets);
  grid_.resolution = resolution;
  surfaces_ = surfaces_for(model_);
  std::vector<double> values(fits.size());
  for (Surface s : surfaces_) {
    for (std::size_t i = 0; i < fits.size(); ++i) values[i] = surface_value(fits[i].fit.params, s);
    models_.push_back(fit_kriging_model(stations_, values));
    full_.emplace_back(models_.back(), stations_, grid_.cells);
  }
}

CoefficientField CoefficientSmoother::smooth(std::span<const std::optional<GevParams>> params,
                                             double time_origin) const {
  if (params.size() != stations_.size())
    throw InvalidArgument("CoefficientSmoother: station count mismatch");
  std::vector<std::size_t> present;
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i]) present.push_back(i);
  if (present.empty()) throw InvalidArgument("CoefficientSmoother: no stations");
  const bool complete = present.size() == params.size();
  std::vector<Coord> subset;
  if (!complete)
    for (std::size_t i : present) subset.push_back(stations_[i]);

  CoefficientField field{grid_, model_, time_origin, std::vector<GevParams>(grid_.size())};
  std::vector<double> values(present.size());
  for (std::size_t k = 0; k < surfaces_.size(); ++k) {
    for (std::size_t j = 0; j < present.size(); ++j)
      values[j] = surface_value(*params[present[j]], surfaces_[k]);
    const std::vector<double> smoothed =
        complete ? full_[k].apply(values)
                 : LinearSmoother(models_[k], subset, grid_.cells).apply(values);
    for (std::size_t c = 0; c < grid_.size(); ++c)
      assign_surface(field.cells[c], surfaces_[k], smoothed[c]);
  }
  return field;
}

CoefficientField smooth_coefficients(std::span<const StationFit> station_fits, const Grid& grid) {
  if (station_fits.empty()) throw InvalidArgument("smooth_coefficients: no station fits");
  const double origin = station_fits.front().fit.time_origin;
  std::vector<std::optional<GevParams>> params;
  for (const auto& f : station_fits) {
    if (f.fit.time_origin != origin)
      throw InvalidArgument("smooth_coefficients: fits use different time origins");
    params.emplace_back(f.fit.params);
  }
  const CoefficientSmoother smoother(station_fits, grid.cells, grid.resolution);
  return smoother.smooth(params, origin);
}

std::string coefficient_field_csv(const CoefficientField& field) {
  const bool q = field.model.quadratic_location(), s = field.model.scale_trend(),
             x = field.model.shape_trend();
  std::ostringstream out;
  out << "lon,lat,mu0,mu1,sigma,xi";
  if (q) out << ",mu2";
  if (s) out << ",sigma1";
  if (x) out << ",xi1";
  out << '\n';
  using csv::format_double;
  for (std::size_t c = 0; c < field.cells.size(); ++c) {
    const auto& p = field.cells[c];
    out << format_double(field.grid.cells[c].lon) << ',' << format_double(field.grid.cells[c].lat)
        << ',' << format_double(p.mu0) << ',' << format_double(p.mu1) << ','
        << format_double(p.sigma0) << ',' << format_double(p.xi0);
    if (q) out << ',' << format_double(p.mu2);
    if (s) out << ',' << format_double(p.sigma1);
    if (x) out << ',' << format_double(p.xi1);
    out << '\n';
  }
  return out.str();
}

}  // namespace precipx
