#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "precipx/errors.hpp"
#include "precipx/simstudy.hpp"

using namespace precipx;

namespace {

double exp_closed_form(double n_eff, double r) {
  return -std::log(1.0 - std::pow(1.0 - 1.0 / r, 1.0 / n_eff));
}

double block_max_cdf(const ParentDist& parent, double n, double y) {
  return std::pow(parent.nonzero_cdf(y), n * (1.0 - parent.p));
}

}  // namespace

TEST_CASE("family names") {
  CHECK(parse_family("gamma") == ParentFamily::Gamma);
  CHECK(family_name(ParentFamily::Exponential) == "exponential");
  CHECK_THROWS_AS(parse_family("pareto"), InvalidArgument);
}

TEST_CASE("parent distributions have unit mean on the nonzero part") {
  std::mt19937_64 rng(1);
  for (auto family : {ParentFamily::Exponential, ParentFamily::Gamma}) {
    const ParentDist d{family, 0.0};
    double sum = 0, ss = 0;
    const int n = 400000;
    for (int i = 0; i < n; ++i) {
      const double x = d.sample(rng);
      sum += x;
      ss += x * x;
    }
    const double mean = sum / n, var = ss / n - mean * mean;
    const double true_var = family == ParentFamily::Exponential ? 1.0 : 3.0;
    CHECK(mean == doctest::Approx(1.0).epsilon(5 * std::sqrt(true_var / n)));
    CHECK(var == doctest::Approx(true_var).epsilon(0.05));
    CHECK(d.nonzero_cdf(1.3) + d.nonzero_survival(1.3) == doctest::Approx(1.0).epsilon(1e-14));
  }
  const ParentDist dry{ParentFamily::Gamma, 0.7};
  int zeros = 0;
  for (int i = 0; i < 100000; ++i) zeros += dry.sample(rng) == 0.0;
  CHECK(zeros / 1e5 == doctest::Approx(0.7).epsilon(0.01));
}

TEST_CASE("exact return values") {
  const ParentDist e{ParentFamily::Exponential, 0.0};
  CHECK(true_return_value(e, 90, 20) == doctest::Approx(7.470).epsilon(1e-4));
  CHECK(true_return_value(e, 90, 20) == doctest::Approx(exp_closed_form(90, 20)).epsilon(1e-11));
  const ParentDist wet{ParentFamily::Exponential, 0.3};
  CHECK(true_return_value(wet, 90, 20) == doctest::Approx(7.114).epsilon(1e-4));
  CHECK(true_return_value(wet, 90, 20) == doctest::Approx(exp_closed_form(63, 20)).epsilon(1e-11));
  for (int n : {5, 10, 25, 50, 100, 200})
    for (double r : {10.0, 20.0, 50.0, 100.0, 500.0, 1000.0}) {
      CHECK(true_return_value(e, n, r) == doctest::Approx(exp_closed_form(n, r)).epsilon(1e-11));
      const ParentDist g{ParentFamily::Gamma, 0.0};
      CHECK(block_max_cdf(g, n, true_return_value(g, n, r)) ==
            doctest::Approx(1.0 - 1.0 / r).epsilon(1e-11));
    }
  CHECK_THROWS_AS(true_return_value(e, 90, 1.0), InvalidArgument);
  CHECK_THROWS_AS(true_return_value(ParentDist{ParentFamily::Exponential, 1.0}, 90, 20),
                  InvalidArgument);
  CHECK_THROWS_AS(true_return_value(ParentDist{ParentFamily::Exponential, 0.9}, 5, 20),
                  InvalidArgument);
}

TEST_CASE("Gamma return value agrees with a brute-force quantile") {
  const ParentDist g{ParentFamily::Gamma, 0.0};
  const int n = 10;
  const double r = 20;
  std::mt19937_64 rng(2);
  const std::size_t draws = 1000000;
  const auto maxima = simulate_block_maxima(g, n, draws, rng);
  std::vector<double> sorted = maxima;
  const auto k = static_cast<std::size_t>((1.0 - 1.0 / r) * draws);
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k), sorted.end());
  const double empirical = sorted[k];
  const double exact = true_return_value(g, n, r);
  const double h = 1e-4;
  const double density = (block_max_cdf(g, n, exact + h) - block_max_cdf(g, n, exact - h)) / (2 * h);
  const double se = std::sqrt((1.0 / r) * (1.0 - 1.0 / r) / draws) / density;
  CHECK(std::abs(empirical - exact) < 3 * se);
}

TEST_CASE("simulated block maxima follow the exact maximum distribution") {
  for (auto parent : {ParentDist{ParentFamily::Exponential, 0.2}, ParentDist{ParentFamily::Gamma, 0.5}}) {
    std::mt19937_64 rng(3);
    auto m = simulate_block_maxima(parent, 40, 100000, rng);
    std::sort(m.begin(), m.end());
    double ks = 0;
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double f = block_max_cdf(parent, 40, m[i]);
      ks = std::max({ks, std::abs(f - double(i) / m.size()), std::abs(f - double(i + 1) / m.size())});
    }
    CHECK(ks < 0.01);
  }
}

TEST_CASE("Gumbel convergence of exponential maxima") {
  const std::vector<double> zero{0.0};
  CHECK(gumbel_convergence(1, zero) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
  const auto grid = default_convergence_grid();
  CHECK(grid.front() == -3.0);
  CHECK(grid.back() == doctest::Approx(10.0));
  CHECK(grid.size() == 13001);
  CHECK(gumbel_convergence(50, grid) < 0.01);
  double prev = HUGE_VAL;
  for (int n : {5, 10, 50, 200}) {
    const double d = gumbel_convergence(n, grid);
    CHECK(d < prev);
    prev = d;
  }
  const std::vector<int> ns{1, 50};
  const std::string csv = convergence_csv(ns, zero);
  CHECK(csv.rfind("n,sup_distance\n1,", 0) == 0);
  CHECK_THROWS_AS(gumbel_convergence(0, grid), InvalidArgument);
}

TEST_CASE("sim study bookkeeping and determinism") {
  SimConfig cfg;
  cfg.block_sizes = {10, 25};
  cfg.return_periods = {20, 100};
  cfg.parents = {{ParentFamily::Exponential, 0.0}};
  cfg.replicates = 12;
  cfg.bootstraps = 8;
  cfg.seed = 5;
  const auto a = run_sim_study(cfg);
  REQUIRE(a.cells.size() == 4);
  for (const auto& c : a.cells) {
    CHECK(c.rmse >= 0.0);
    CHECK(c.replicates == 12);
    CHECK(c.re_percent == doctest::Approx((c.mc_sd / c.mean_boot_se - 1.0) * 100.0));
    CHECK((c.re_percent < 0) == (c.mean_boot_se > c.mc_sd));
    CHECK(c.true_value == true_return_value(c.parent, c.block_size, c.return_period));
    CHECK(c.flagged == (c.failures * 20 > c.replicates));
  }
  CHECK(a.at(ParentFamily::Exponential, 25, 100).block_size == 25);
  CHECK_THROWS_AS(a.at(ParentFamily::Gamma, 25, 100), InvalidArgument);
  cfg.threads = 3;
  const auto b = run_sim_study(cfg);
  CHECK(sim_result_csv(a) == sim_result_csv(b));
  CHECK(sim_result_csv(a).rfind("family,p,n,r,rmse,re_percent,mc_sd,mean_boot_se,failures\n", 0) == 0);
  cfg.replicates = 0;
  CHECK_THROWS_AS(run_sim_study(cfg), InvalidArgument);
}

TEST_CASE("zero-rain probability acts as a shorter block") {
  const ParentDist wet{ParentFamily::Exponential, 0.5}, dry{ParentFamily::Exponential, 0.0};
  CHECK(true_return_value(wet, 50, 20) == doctest::Approx(true_return_value(dry, 25, 20)).epsilon(1e-11));
  SimConfig cfg;
  cfg.return_periods = {20};
  cfg.replicates = 300;
  cfg.bootstraps = 2;
  cfg.parents = {wet};
  cfg.block_sizes = {50};
  const auto a = run_sim_study(cfg);
  cfg.parents = {dry};
  cfg.block_sizes = {25};
  const auto b = run_sim_study(cfg);
  const double ra = a.cells[0].rmse, rb = b.cells[0].rmse;
  // RMSE from 300 replicates carries roughly 4% relative Monte Carlo error each.
  CHECK(std::abs(ra / rb - 1.0) < 0.2);
}
