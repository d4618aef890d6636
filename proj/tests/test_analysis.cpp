#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "precipx/analysis.hpp"
#include "precipx/csv.hpp"
#include "precipx/errors.hpp"
#include "support/synthetic.hpp"

using namespace precipx;
namespace fs = std::filesystem;

namespace {

Grid coarse_grid() { return Grid::regular(-110, -100, 35, 45, 2.0); }

AnalysisConfig small_config() {
  AnalysisConfig c;
  c.bootstraps = 20;
  c.permutations = 20;
  c.seed = 3;
  return c;
}

std::vector<BlockMaximaSeries> stations(std::size_t n = 25, std::uint64_t seed = 1) {
  testing::SyntheticConfig cfg;
  cfg.stations = n;
  cfg.years = 30;
  cfg.seed = seed;
  cfg.trend = 0.2;
  return testing::synthetic_stations(cfg);
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("precipx_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string first_line(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  return line;
}

}  // namespace

TEST_CASE("stations are aligned on one run of years") {
  BlockMaximaSeries a{"A", 0, 0, Season::JJA, {1950, 1952}, {1.0, 2.0}, {0.0, 0.1}};
  BlockMaximaSeries b{"B", 1, 1, Season::JJA, {1953}, {3.0}, {0.2}};
  const std::vector<BlockMaximaSeries> both{a, b};
  const auto al = align_stations(both);
  CHECK(al.years == std::vector<int>{1950, 1951, 1952, 1953});
  CHECK(al.series[0].maxima == std::vector<std::optional<double>>{1.0, std::nullopt, 2.0, std::nullopt});
  CHECK(al.series[0].missing_fraction[1] == 1.0);
  CHECK(al.series[1].maxima[3] == 3.0);
  CHECK(al.series[1].missing_fraction[3] == 0.2);
  CHECK_THROWS_AS(align_stations({}), InvalidArgument);
}

TEST_CASE("observed z uses bootstrap se and null z the shared permutation se") {
  const std::vector<double> delta{1.0, 0.5};
  const std::vector<std::vector<double>> boot{{1, 0}, {2, 0}, {3, 0}};
  const std::vector<std::vector<double>> perm{{-1, 1}, {1, -1}};
  const std::vector<double> q{0.1};
  const auto t = test_change(delta, boot, perm, q, default_fs_cutoffs());
  CHECK(t.bootstrap_se[0] == doctest::Approx(1.0));
  CHECK(t.bootstrap_se[1] == 0.0);
  CHECK(t.z.z[0] == doctest::Approx(1.0));
  CHECK(std::isnan(t.z.z[1]));
  CHECK(t.permutation_se[0] == doctest::Approx(std::sqrt(2.0)));
  REQUIRE(t.null_z.size() == 2);
  CHECK(t.null_z[0].z[0] == doctest::Approx(-1 / std::sqrt(2.0)));
  CHECK(t.null_z[1].replicate == 1u);
  CHECK(t.fdr.size() == 1);
  CHECK(t.fs.fs.size() == 51);
}

TEST_CASE("season analysis end to end") {
  const auto st = stations();
  const AnalysisConfig cfg = small_config();
  const Grid g = coarse_grid();
  const auto a = analyze_season(st, g, cfg);
  CHECK(a.t1 == 1951);
  CHECK(a.t2 == 1980);
  CHECK(a.time_origin == 1965.5);
  CHECK(a.stations.size() == 25);
  CHECK(a.surfaces.size() == 4);
  CHECK(a.returns.at_t1.size() == g.size());
  CHECK(a.bootstrap.outcomes.size() == 20);
  CHECK(a.permutation.outcomes.size() == 20);
  CHECK(a.testing.z.z.size() == g.size());
  CHECK(a.testing.fdr.size() == 2);
  for (const auto& p : a.coefficients.cells) CHECK(p.sigma0 > 0.0);
  // The uniform positive trend must show up as a positive mean change.
  double mean = 0;
  for (double d : a.testing.delta) mean += d;
  CHECK(mean > 0);

  AnalysisConfig threaded = cfg;
  threaded.threads = 3;
  const auto b = analyze_season(st, g, threaded);
  CHECK(a.testing.delta == b.testing.delta);
  CHECK(a.testing.bootstrap_se == b.testing.bootstrap_se);
  CHECK(a.testing.permutation_se == b.testing.permutation_se);
}

TEST_CASE("stations that cannot be fitted are excluded and reported") {
  auto st = stations();
  for (std::size_t i = 0; i < 20; ++i) st[3].maxima[i] = std::nullopt;
  const auto a = analyze_season(st, coarse_grid(), small_config());
  CHECK(!a.stations[3].fit.has_value());
  CHECK(!a.stations[3].error.empty());
  CHECK(a.stations[4].fit.has_value());

  auto few = stations(9);
  CHECK_THROWS_AS(analyze_season(few, coarse_grid(), small_config()), InsufficientData);
  AnalysisConfig bad = small_config();
  bad.t1 = 1960;
  bad.t2 = 1960;
  CHECK_THROWS_AS(analyze_season(stations(), coarse_grid(), bad), InvalidArgument);
}

TEST_CASE("season outputs and replicate round trip") {
  const fs::path dir = temp_dir("season");
  const auto st = stations();
  const Grid g = coarse_grid();
  const auto a = analyze_season(st, g, small_config(), RunStorage{dir, "h", false});
  write_season_outputs(dir, a);
  CHECK(first_line(dir / "station_fits.csv") ==
        "station_id,lon,lat,status,n_blocks,neg_log_lik,mu0,mu1,mu2,sigma0,sigma1,xi0,xi1");
  CHECK(first_line(dir / "returns.csv") == "lon,lat,rv_t1,rv_t2");
  CHECK(first_line(dir / "change.csv") == "lon,lat,delta,metric,r,t1,t2");
  CHECK(first_line(dir / "coefficients.csv") == "lon,lat,mu0,mu1,sigma,xi");
  CHECK(first_line(dir / "decisions.csv") == "lon,lat,z,reject_q33,reject_q10");
  CHECK(first_line(dir / "fs.csv") == "cutoff,fs");
  CHECK(first_line(dir / "zscores.csv") == "lon,lat,delta,bootstrap_se,permutation_se,z");
  CHECK(first_line(dir / "null_z.csv") == "replicate,lon,lat,z");
  CHECK(fs::exists(dir / "kriging.json"));
  CHECK(fs::exists(dir / "fdr.json"));
  CHECK(fs::exists(dir / "bootstrap" / "0001.csv"));
  CHECK(fs::exists(dir / "permutation" / "manifest.json"));

  const auto mem = season_replicates(a);
  const auto disk = load_season_replicates(dir, g);
  CHECK(disk.observed.at_t1 == mem.observed.at_t1);
  CHECK(disk.observed.at_t2 == mem.observed.at_t2);
  REQUIRE(disk.bootstrap.size() == mem.bootstrap.size());
  for (std::size_t h = 0; h < mem.bootstrap.size(); ++h) {
    CHECK(disk.bootstrap[h].has_value() == mem.bootstrap[h].has_value());
    if (mem.bootstrap[h]) CHECK(disk.bootstrap[h]->at_t2 == mem.bootstrap[h]->at_t2);
  }

  // Resuming with the same hash reproduces the run without refitting.
  const auto again = analyze_season(st, g, small_config(), RunStorage{dir, "h", true});
  CHECK(again.testing.bootstrap_se == a.testing.bootstrap_se);
  CHECK(again.testing.permutation_se == a.testing.permutation_se);
  fs::remove_all(dir);
}

TEST_CASE("annual analysis of a single season equals the seasonal test") {
  const auto a = analyze_season(stations(), coarse_grid(), small_config());
  std::array<std::optional<SeasonReplicates>, 4> seasons;
  seasons[2] = season_replicates(a);
  const auto ann = analyze_annual(a.grid, a.r, a.t1, a.t2, a.metric, seasons, small_config().q_levels,
                                  default_fs_cutoffs());
  CHECK(ann.change.field.delta == a.testing.delta);
  CHECK(ann.testing.bootstrap_se == a.testing.bootstrap_se);
  CHECK(ann.testing.permutation_se == a.testing.permutation_se);
  for (std::size_t k = 0; k < 2; ++k) CHECK(ann.testing.fdr[k].rejected == a.testing.fdr[k].rejected);
  CHECK_THROWS_AS(analyze_annual(a.grid, a.r, a.t1, a.t2, a.metric, {}, small_config().q_levels,
                                 default_fs_cutoffs()),
                  InvalidArgument);
}

TEST_CASE("annual replicates pair by index and never exceed the largest seasonal change") {
  const Grid g = coarse_grid();
  const auto a = analyze_season(stations(25, 1), g, small_config());
  const auto b = analyze_season(stations(25, 2), g, small_config());
  std::array<std::optional<SeasonReplicates>, 4> seasons;
  seasons[1] = season_replicates(a);
  seasons[3] = season_replicates(b);
  // Drop one replicate in one season: that index must disappear from the composition.
  seasons[3]->bootstrap[4] = std::nullopt;
  const auto ann = analyze_annual(g, a.r, a.t1, a.t2, ChangeMetric::Absolute, seasons,
                                  small_config().q_levels, default_fs_cutoffs());
  std::size_t both = 0;
  for (std::size_t h = 0; h < 20; ++h) both += seasons[1]->bootstrap[h] && seasons[3]->bootstrap[h];
  CHECK(ann.bootstrap_used == both);
  for (std::size_t c = 0; c < g.size(); ++c) {
    const double da = a.returns.at_t2[c] - a.returns.at_t1[c];
    const double db = b.returns.at_t2[c] - b.returns.at_t1[c];
    CHECK(ann.change.field.delta[c] <= std::max(da, db));
  }
}

TEST_CASE("FNV-1a reference values") {
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
  CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
  CHECK(fnv1a_hex("foobar") == "85944171f73967e8");
}
