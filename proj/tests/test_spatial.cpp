#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "precipx/errors.hpp"
#include "precipx/spatial.hpp"
#include "support/synthetic.hpp"

using namespace precipx;

namespace {

std::vector<Coord> random_sites(std::size_t n, std::uint64_t seed, double lon0 = -110,
                                double lon1 = -100, double lat0 = 35, double lat1 = 45) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> lon(lon0, lon1), lat(lat0, lat1);
  std::vector<Coord> out(n);
  for (auto& c : out) c = {lon(rng), lat(rng)};
  return out;
}

// Draws one Gaussian field with the given model at the sites.
std::vector<double> simulate_field(const KrigingModel& m, std::span<const Coord> sites,
                                   std::uint64_t seed) {
  const auto n = static_cast<Eigen::Index>(sites.size());
  const std::vector<double> c = covariance_matrix(m, sites);
  const Eigen::MatrixXd k = Eigen::Map<const Eigen::MatrixXd>(c.data(), n, n);
  const Eigen::MatrixXd l = Eigen::LLT<Eigen::MatrixXd>(k).matrixL();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  Eigen::VectorXd e(n);
  for (Eigen::Index i = 0; i < n; ++i) e(i) = z(rng);
  const Eigen::VectorXd y = l * e;
  std::vector<double> out(sites.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = m.mean + y(static_cast<Eigen::Index>(i));
  return out;
}

// Dense solve by Gaussian elimination with partial pivoting.
std::vector<double> solve(std::vector<std::vector<double>> a, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t p = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(a[i][k]) > std::abs(a[p][k])) p = i;
    std::swap(a[k], a[p]);
    std::swap(b[k], b[p]);
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = a[i][k] / a[k][k];
      for (std::size_t j = k; j < n; ++j) a[i][j] -= f * a[k][j];
      b[i] -= f * b[k];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t j = i + 1; j < n; ++j) s -= a[i][j] * x[j];
    x[i] = s / a[i][i];
  }
  return x;
}

double haversine_oracle(Coord a, Coord b) {
  const double d2r = M_PI / 180.0;
  const double dlat = (b.lat - a.lat) * d2r, dlon = (b.lon - a.lon) * d2r;
  const double h = std::pow(std::sin(dlat / 2), 2) +
                   std::cos(a.lat * d2r) * std::cos(b.lat * d2r) * std::pow(std::sin(dlon / 2), 2);
  return 2 * 6371.0 * std::asin(std::sqrt(h));
}

GevFit make_fit(double mu0, double mu1, double sigma, double xi) {
  GevFit f;
  f.params.mu0 = mu0;
  f.params.mu1 = mu1;
  f.params.sigma0 = sigma;
  f.params.xi0 = xi;
  f.converged = true;
  f.n_blocks = 40;
  return f;
}

}  // namespace

TEST_CASE("great-circle distance") {
  CHECK(great_circle_km({0, 0}, {1, 0}) == doctest::Approx(6371.0 * M_PI / 180.0).epsilon(1e-12));
  CHECK(great_circle_km({-100, 40}, {-100, 40}) == 0.0);
  CHECK(great_circle_km({0, 0}, {180, 0}) == doctest::Approx(M_PI * 6371.0));
  const auto sites = random_sites(50, 3, -180, 180, -80, 80);
  for (std::size_t i = 0; i + 1 < sites.size(); ++i) {
    CHECK(great_circle_km(sites[i], sites[i + 1]) ==
          doctest::Approx(haversine_oracle(sites[i], sites[i + 1])).epsilon(1e-10));
    CHECK(great_circle_km(sites[i], sites[i + 1]) == great_circle_km(sites[i + 1], sites[i]));
  }
}

TEST_CASE("Matern 3/2 correlation") {
  CHECK(matern32_correlation(0, 100) == 1.0);
  const double d = 150, r = 300, a = std::sqrt(3.0) * d / r;
  CHECK(matern32_correlation(d, r) == doctest::Approx((1 + a) * std::exp(-a)).epsilon(1e-14));
  double prev = 1.0;
  for (double x = 10; x < 3000; x += 10) {
    const double c = matern32_correlation(x, r);
    CHECK(c < prev);
    CHECK(c > 0);
    prev = c;
  }
}

TEST_CASE("covariance matrices are symmetric positive semidefinite") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 20; ++trial) {
    const KrigingModel m{0.1 + 5 * u(rng), 20 + 2000 * u(rng), trial % 3 == 0 ? 0.0 : u(rng),
                         0.0};
    const auto sites = random_sites(60, 100 + trial);
    const std::vector<double> c = covariance_matrix(m, sites);
    const Eigen::Map<const Eigen::MatrixXd> k(c.data(), 60, 60);
    CHECK((k - k.transpose()).cwiseAbs().maxCoeff() == 0.0);
    const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(k).eigenvalues();
    CHECK(ev.minCoeff() >= -1e-8 * ev.maxCoeff());
  }
}

TEST_CASE("grids") {
  const Grid g = Grid::regular(-110, -100, 35, 45, 0.5);
  CHECK(g.size() == 400);
  CHECK(g.cells.front() == Coord{-109.75, 35.25});
  CHECK(g.cells[1] == Coord{-109.25, 35.25});
  CHECK(g.cells.back() == Coord{-100.25, 44.75});
  CHECK(Grid::regular(-110, -100.5, 35, 44.5, 0.5).size() == 361);
  CHECK_THROWS_AS(Grid::regular(0, 1, 0, 1, 0), InvalidArgument);
  CHECK_THROWS_AS(Grid::from_cells({{0, 0}, {1, 1}, {0, 0}}, 1.0), InvalidArgument);
  CHECK_THROWS_AS(Grid::from_cells({{0, 0}}, -1.0), InvalidArgument);
  CHECK(Grid::from_cells({{1, 0}, {0, 0}}, 1.0).cells.front() == Coord{1, 0});
}

TEST_CASE("kriging model input errors") {
  const auto five = random_sites(5, 1);
  const std::vector<double> v5(5, 1.0);
  CHECK_THROWS_AS(fit_kriging_model(five, v5), InsufficientData);
  auto dup = random_sites(12, 2);
  dup[7] = dup[3];
  const std::vector<double> v12(12, 1.0);
  CHECK_THROWS_AS(fit_kriging_model(dup, v12), InvalidArgument);
  const auto sites = random_sites(12, 2);
  const KrigingModel m{1, 300, 0, 0};
  CHECK_THROWS_AS(krige(m, sites, v12, Grid{}), InvalidArgument);
}

TEST_CASE("constant field gives constant predictions") {
  const auto sites = random_sites(30, 4);
  const std::vector<double> v(30, 2.5);
  const KrigingModel m = fit_kriging_model(sites, v);
  CHECK(m.variance == 0.0);
  CHECK(m.mean == 2.5);
  const auto p = krige(m, sites, v, testing::test_grid());
  for (std::size_t c = 0; c < p.mean.size(); ++c) {
    CHECK(p.mean[c] == 2.5);
    CHECK(p.sd[c] == 0.0);
  }
}

TEST_CASE("range recovery from a simulated Matern field") {
  const auto sites = random_sites(200, 21);
  const KrigingModel truth{1.0, 300.0, 0.0, 4.0};
  const auto values = simulate_field(truth, sites, 22);
  const KrigingModel m = fit_kriging_model(sites, values);
  CHECK(m.range_km > 150.0);
  CHECK(m.range_km < 600.0);
  CHECK(m.variance > 0.0);
  CHECK(m.nugget >= kNuggetFloor * m.variance);
}

TEST_CASE("kriging with zero nugget is exact at the data sites") {
  const auto sites = random_sites(40, 31);
  const KrigingModel m{2.0, 400.0, 0.0, 1.0};
  const auto values = simulate_field(m, sites, 32);
  const auto p = krige(m, sites, values, Grid::from_cells(sites, 0.5));
  for (std::size_t i = 0; i < sites.size(); ++i) {
    CHECK(std::abs(p.mean[i] - values[i]) < 1e-8);
    CHECK(p.sd[i] < 1e-3);
  }
}

TEST_CASE("far from the data the prediction falls back to the mean") {
  const auto sites = random_sites(30, 41);
  const KrigingModel m{3.0, 100.0, 0.1, 7.0};
  const auto values = simulate_field(m, sites, 42);
  const auto p = krige(m, sites, values, Grid::from_cells({{60, -30}}, 0.5));
  CHECK(p.mean[0] == doctest::Approx(7.0).epsilon(1e-12));
  CHECK(p.sd[0] == doctest::Approx(std::sqrt(3.0)).epsilon(1e-12));
}

TEST_CASE("leave-one-out error on a smooth field beats its variance") {
  const auto sites = random_sites(60, 51);
  std::vector<double> values;
  for (auto c : sites) values.push_back(std::sin(c.lon / 2.0) + std::cos(c.lat / 1.5));
  double sse = 0.0;
  for (std::size_t i = 0; i < sites.size(); ++i) {
    std::vector<Coord> s;
    std::vector<double> v;
    for (std::size_t j = 0; j < sites.size(); ++j)
      if (j != i) {
        s.push_back(sites[j]);
        v.push_back(values[j]);
      }
    const KrigingModel m = fit_kriging_model(s, v);
    const auto p = krige(m, s, v, Grid::from_cells({sites[i]}, 0.5));
    sse += std::pow(p.mean[0] - values[i], 2);
  }
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / 60.0;
  double var = 0.0;
  for (double x : values) var += (x - mean) * (x - mean);
  CHECK(sse / 60.0 < var / 60.0);
}

TEST_CASE("simple kriging matches a dense-solve oracle") {
  const auto sites = random_sites(12, 61);
  const KrigingModel m{1.5, 250.0, 0.2, -1.0};
  const auto values = simulate_field(m, sites, 62);
  const auto targets = random_sites(5, 63);
  const auto p = krige(m, sites, values, Grid::from_cells(targets, 0.5));
  for (std::size_t t = 0; t < targets.size(); ++t) {
    std::vector<std::vector<double>> k(12, std::vector<double>(12));
    std::vector<double> c(12);
    for (std::size_t i = 0; i < 12; ++i) {
      for (std::size_t j = 0; j < 12; ++j)
        k[i][j] = m.variance * matern32_correlation(haversine_oracle(sites[i], sites[j]),
                                                    m.range_km) +
                  (i == j ? m.nugget : 0.0);
      c[i] = m.variance * matern32_correlation(haversine_oracle(sites[i], targets[t]), m.range_km);
    }
    const auto w = solve(k, c);
    double mean = m.mean, var = m.variance;
    for (std::size_t i = 0; i < 12; ++i) {
      mean += w[i] * (values[i] - m.mean);
      var -= w[i] * c[i];
    }
    CHECK(p.mean[t] == doctest::Approx(mean).epsilon(1e-9));
    CHECK(p.sd[t] == doctest::Approx(std::sqrt(var)).epsilon(1e-9));
  }
}

TEST_CASE("predictions do not depend on station order") {
  auto sites = random_sites(25, 71);
  const KrigingModel truth{1.0, 300.0, 0.05, 0.0};
  auto values = simulate_field(truth, sites, 72);
  const Grid g = testing::test_grid();
  const KrigingModel m = fit_kriging_model(sites, values);
  const auto a = krige(m, sites, values, g);

  std::vector<std::size_t> idx(sites.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), std::mt19937_64(73));
  std::vector<Coord> s2;
  std::vector<double> v2;
  for (auto i : idx) {
    s2.push_back(sites[i]);
    v2.push_back(values[i]);
  }
  const KrigingModel m2 = fit_kriging_model(s2, v2);
  CHECK(m2.range_km == doctest::Approx(m.range_km).epsilon(1e-5));
  const auto b = krige(m, s2, v2, g);
  const LinearSmoother la(m, sites, g.cells), lb(m, s2, g.cells);
  const auto sa = la.apply(values), sb = lb.apply(v2);
  for (std::size_t c = 0; c < g.size(); ++c) {
    CHECK(a.mean[c] == doctest::Approx(b.mean[c]).epsilon(1e-9));
    CHECK(sa[c] == doctest::Approx(sb[c]).epsilon(1e-9));
  }
}

TEST_CASE("weights reproduce a field sitting at the mean") {
  const auto sites = random_sites(20, 81);
  const KrigingModel m{1.0, 200.0, 0.01, 3.0};
  const auto p = krige(m, sites, std::vector<double>(20, 3.0), testing::test_grid());
  for (double x : p.mean) CHECK(x == doctest::Approx(3.0).epsilon(1e-12));
  const LinearSmoother s(m, sites, testing::test_grid().cells);
  for (double x : s.apply(std::vector<double>(20, 1.0))) CHECK(x == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("linear smoother is exact at the sites with zero nugget") {
  const auto sites = random_sites(30, 91);
  const KrigingModel m{1.0, 350.0, 0.0, 0.0};
  const auto values = simulate_field(KrigingModel{1.0, 350.0, 0.0, 5.0}, sites, 92);
  const LinearSmoother s(m, sites, sites);
  const auto out = s.apply(values);
  for (std::size_t i = 0; i < sites.size(); ++i) CHECK(std::abs(out[i] - values[i]) < 1e-7);
  CHECK_THROWS_AS(s.apply(std::vector<double>(3)), InvalidArgument);
}

TEST_CASE("smoothing identical coefficients gives a constant field") {
  const auto sites = random_sites(15, 101);
  std::vector<StationFit> fits;
  for (auto c : sites) fits.push_back({c, make_fit(30.0, 0.1, 8.0, 0.12)});
  const auto field = smooth_coefficients(fits, testing::test_grid());
  REQUIRE(field.cells.size() == 400);
  for (const auto& p : field.cells) {
    CHECK(p.mu0 == doctest::Approx(30.0).epsilon(1e-12));
    CHECK(p.mu1 == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(p.sigma0 == doctest::Approx(8.0).epsilon(1e-12));
    CHECK(p.xi0 == doctest::Approx(0.12).epsilon(1e-12));
  }
}

TEST_CASE("smoothed scale is positive and shape stays in range") {
  std::mt19937_64 rng(111);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 5; ++trial) {
    const auto sites = random_sites(20, 200 + trial);
    std::vector<StationFit> fits;
    for (auto c : sites)
      fits.push_back({c, make_fit(20 + 10 * u(rng), u(rng) - 0.5, 0.01 + 20 * u(rng) * u(rng),
                                  3 * (u(rng) - 0.5))});
    const auto field = smooth_coefficients(fits, testing::test_grid());
    for (const auto& p : field.cells) {
      CHECK(p.sigma0 > 0.0);
      CHECK(p.xi0 >= -1.0);
      CHECK(p.xi0 <= 1.0);
    }
  }
}

TEST_CASE("coefficient smoother input checks and subsets") {
  const auto sites = random_sites(15, 121);
  std::mt19937_64 rng(122);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<StationFit> fits;
  for (auto c : sites) fits.push_back({c, make_fit(20 + 5 * u(rng), 0.1 * u(rng), 6, 0.1)});
  const Grid g = testing::test_grid();
  const CoefficientSmoother sm(fits, g.cells, g.resolution);
  CHECK(sm.surfaces().size() == 4);

  std::vector<std::optional<GevParams>> params;
  for (const auto& f : fits) params.emplace_back(f.fit.params);
  params[4] = std::nullopt;
  const auto partial = sm.smooth(params, 0.0);
  // Oracle: smoothing only the kept stations with the frozen models.
  std::vector<Coord> kept;
  std::vector<double> mu0;
  for (std::size_t i = 0; i < fits.size(); ++i)
    if (i != 4) {
      kept.push_back(sites[i]);
      mu0.push_back(fits[i].fit.params.mu0);
    }
  const auto expect = LinearSmoother(sm.models()[0], kept, g.cells).apply(mu0);
  for (std::size_t c = 0; c < g.size(); ++c)
    CHECK(partial.cells[c].mu0 == doctest::Approx(expect[c]).epsilon(1e-12));

  CHECK_THROWS_AS(sm.smooth(std::vector<std::optional<GevParams>>(3), 0.0), InvalidArgument);
  fits[2].fit.converged = false;
  CHECK_THROWS_AS(smooth_coefficients(fits, g), InvalidArgument);
}

TEST_CASE("coefficient CSV schema") {
  const auto sites = random_sites(12, 131);
  std::vector<StationFit> fits;
  for (auto c : sites) fits.push_back({c, make_fit(1, 0, 1, 0)});
  const auto csv = coefficient_field_csv(smooth_coefficients(fits, Grid::from_cells({{-105, 40}}, 1)));
  CHECK(csv.rfind("lon,lat,mu0,mu1,sigma,xi\n", 0) == 0);
  CHECK(surface_name(Surface::LogSigma0) == "log_sigma0");
}
