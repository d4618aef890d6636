#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "precipx/changes.hpp"
#include "precipx/errors.hpp"

using namespace precipx;

namespace {

CoefficientField single_cell(GevParams p, ModelSpec model = {}, double origin = 0.0) {
  return CoefficientField{Grid::from_cells({{-100, 40}}, 0.5), model, origin, {p}};
}

GevParams params(double mu0, double mu1, double sigma, double xi) {
  GevParams p;
  p.mu0 = mu0;
  p.mu1 = mu1;
  p.sigma0 = sigma;
  p.xi0 = xi;
  return p;
}

SeasonReturns season(std::vector<double> a, std::vector<double> b) {
  return SeasonReturns{std::move(a), std::move(b), {}};
}

}  // namespace

TEST_CASE("metric names") {
  CHECK(parse_metric("relative") == ChangeMetric::Relative);
  CHECK(metric_name(ChangeMetric::Absolute) == "absolute");
  CHECK_THROWS_AS(parse_metric("ratio"), InvalidArgument);
}

TEST_CASE("no trend means no change") {
  const auto f = single_cell(params(30, 0, 5, 0.1));
  CHECK(change_field(f, ChangeMetric::Relative, 20, 1950, 2017).delta[0] == 0.0);
  CHECK(change_field(f, ChangeMetric::Absolute, 20, 1950, 2017).delta[0] == 0.0);
}

TEST_CASE("Gumbel reference cell") {
  const auto f = single_cell(params(10, 0.1, 1, 0));
  const double y20 = -std::log(-std::log(0.95));
  const double rel = 6.7 / (10 + y20);
  CHECK(rel == doctest::Approx(0.51657).epsilon(1e-4));
  CHECK(change_field(f, ChangeMetric::Relative, 20, 0, 67).delta[0] == doctest::Approx(rel).epsilon(1e-12));
  CHECK(change_field(f, ChangeMetric::Absolute, 20, 0, 67).delta[0] == doctest::Approx(6.7).epsilon(1e-12));
  // Calendar years are measured from the field's time origin.
  const auto shifted = single_cell(params(10, 0.1, 1, 0), {}, 1950);
  CHECK(change_field(shifted, ChangeMetric::Relative, 20, 1950, 2017).delta[0] ==
        doctest::Approx(rel).epsilon(1e-12));
}

TEST_CASE("absolute change is independent of r under linear location, relative is not") {
  const auto f = single_cell(params(25, 0.08, 6, 0.15));
  const double a20 = change_field(f, ChangeMetric::Absolute, 20, 1950, 2017).delta[0];
  const double a50 = change_field(f, ChangeMetric::Absolute, 50, 1950, 2017).delta[0];
  CHECK(std::abs(a20 - a50) < 1e-12);
  CHECK(a20 == doctest::Approx(0.08 * 67).epsilon(1e-12));
  const double r20 = change_field(f, ChangeMetric::Relative, 20, 1950, 2017).delta[0];
  const double r50 = change_field(f, ChangeMetric::Relative, 50, 1950, 2017).delta[0];
  CHECK(r20 != doctest::Approx(r50));
}

TEST_CASE("change field properties on random cells") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<Coord> cells;
  std::vector<GevParams> ps;
  for (int i = 0; i < 500; ++i) {
    cells.push_back({-120.0 + i * 0.1, 40});
    GevParams p = params(20 + 30 * u(rng), u(rng) - 0.5, 1 + 10 * u(rng), 0.6 * u(rng) - 0.3);
    p.sigma1 = 0.02 * (u(rng) - 0.5);
    p.xi1 = 0.002 * (u(rng) - 0.5);
    ps.push_back(p);
  }
  for (TrendModel label : kAllModels) {
    const CoefficientField f{Grid::from_cells(cells, 0.1), ModelSpec{label}, 1983.5, ps};
    const auto rel = change_field(f, ChangeMetric::Relative, 20, 1950, 2017);
    const auto abs = change_field(f, ChangeMetric::Absolute, 20, 1950, 2017);
    const auto back = change_field(f, ChangeMetric::Absolute, 20, 2017, 1950);
    const auto rv = endpoint_return_values(f, 20, 1950, 2017);
    for (std::size_t c = 0; c < cells.size(); ++c) {
      CHECK(abs.delta[c] == -back.delta[c]);
      if (rv.at_t1[c] > 0) {
        CHECK(rel.delta[c] > -1.0);
        CHECK((rel.delta[c] > 0) == (abs.delta[c] > 0));
        CHECK(rel.delta[c] == doctest::Approx(abs.delta[c] / rv.at_t1[c]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("change value edge cases") {
  CHECK(std::isnan(change_value(0.0, 1.0, ChangeMetric::Relative)));
  CHECK(change_value(0.0, 1.0, ChangeMetric::Absolute) == 1.0);
  CHECK(std::isnan(change_value(NAN, 1.0, ChangeMetric::Absolute)));
  const auto f = single_cell(params(1, 0, 1, 0));
  CHECK_THROWS_AS(change_field(f, ChangeMetric::Absolute, 1.0, 1950, 2017), InvalidArgument);
  CHECK_THROWS_AS(change_field(f, ChangeMetric::Absolute, 20, 1950, 1950), InvalidArgument);
}

TEST_CASE("annual change follows a dominant season") {
  SeasonalReturnSet s{Grid::from_cells({{0, 0}}, 1), 20, 1950, 2017, {}};
  s.seasons[1] = season({50}, {60});  // MAM dominates at both ends
  s.seasons[3] = season({30}, {35});
  s.seasons[0] = season({10}, {9});
  const auto a = annual_change(s, ChangeMetric::Absolute);
  CHECK(a.field.delta[0] == 10.0);
  CHECK(a.seasons_used[0] == 3);
  CHECK(annual_change(s, ChangeMetric::Relative).field.delta[0] == doctest::Approx(0.2));
}

TEST_CASE("a flat wet season hides a large change in a drier one") {
  SeasonalReturnSet s{Grid::from_cells({{0, 0}}, 1), 20, 1950, 2017, {}};
  s.seasons[1] = season({80}, {80.5});
  s.seasons[3] = season({40}, {70});
  const auto a = annual_change(s, ChangeMetric::Absolute);
  CHECK(a.field.delta[0] == doctest::Approx(0.5));
}

TEST_CASE("masked seasons drop out of the annual maxima") {
  SeasonalReturnSet s{Grid::from_cells({{0, 0}, {1, 0}}, 1), 20, 1950, 2017, {}};
  s.seasons[2] = SeasonReturns{{100, 100}, {50, 50}, {true, false}};
  s.seasons[0] = season({10, 10}, {12, 12});
  const auto a = annual_change(s, ChangeMetric::Absolute);
  CHECK(a.field.delta[0] == 2.0);
  CHECK(a.field.delta[1] == -50.0);
  CHECK(a.seasons_used == std::vector<int>{1, 2});

  SeasonalReturnSet none{Grid::from_cells({{0, 0}}, 1), 20, 1950, 2017, {}};
  none.seasons[0] = SeasonReturns{{1}, {2}, {true}};
  const auto b = annual_change(none, ChangeMetric::Absolute);
  CHECK(std::isnan(b.field.delta[0]));
  CHECK(b.seasons_used[0] == 0);

  SeasonalReturnSet bad{Grid::from_cells({{0, 0}}, 1), 20, 1950, 2017, {}};
  bad.seasons[0] = season({1, 2}, {1, 2});
  CHECK_THROWS_AS(annual_change(bad, ChangeMetric::Absolute), InvalidArgument);
}

TEST_CASE("annual absolute change never exceeds the largest seasonal change") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 100);
  std::bernoulli_distribution mask(0.15);
  const std::size_t m = 200;
  std::vector<Coord> cells;
  for (std::size_t i = 0; i < m; ++i) cells.push_back({double(i), 0});
  for (int trial = 0; trial < 50; ++trial) {
    SeasonalReturnSet s{Grid::from_cells(cells, 1), 20, 1950, 2017, {}};
    for (auto& season : s.seasons) {
      SeasonReturns r{std::vector<double>(m), std::vector<double>(m), std::vector<bool>(m)};
      for (std::size_t c = 0; c < m; ++c) {
        r.at_t1[c] = u(rng);
        r.at_t2[c] = u(rng);
        r.masked[c] = mask(rng);
      }
      season = r;
    }
    const auto a = annual_change(s, ChangeMetric::Absolute);
    for (std::size_t c = 0; c < m; ++c) {
      double best = -HUGE_VAL;
      for (const auto& season : s.seasons)
        if (!season->masked[c]) best = std::max(best, season->at_t2[c] - season->at_t1[c]);
      if (a.seasons_used[c] > 0) CHECK(a.field.delta[c] <= best);
    }
  }
}

TEST_CASE("change CSV schema") {
  const auto f = single_cell(params(10, 0.1, 1, 0));
  const std::string csv = change_field_csv(change_field(f, ChangeMetric::Absolute, 20, 0, 10));
  CHECK(csv.rfind("lon,lat,delta,metric,r,t1,t2\n-100,40,", 0) == 0);
  CHECK(csv.find(",absolute,20,0,10\n") != std::string::npos);
}
