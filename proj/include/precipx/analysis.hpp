#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "precipx/block_maxima.hpp"
#include "precipx/changes.hpp"
#include "precipx/fdr.hpp"
#include "precipx/gev.hpp"
#include "precipx/resampling.hpp"
#include "precipx/spatial.hpp"

namespace precipx {

inline constexpr std::string_view kVersion = "1.0.0";

struct AnalysisConfig {
  ModelSpec model{};
  ChangeMetric metric = ChangeMetric::Relative;
  double r = 20.0;
  // Endpoint calendar years; default to the first and last analysis years.
  std::optional<int> t1;
  std::optional<int> t2;
  std::size_t bootstraps = kDefaultReplicates;
  std::size_t permutations = kDefaultReplicates;
  std::vector<double> q_levels{kQLow, kQHigh};
  std::vector<double> fs_cutoffs = default_fs_cutoffs();
  std::uint64_t seed = 1;
  unsigned threads = 1;
  std::size_t min_blocks = 20;
};

/// Stations placed on one consecutive run of years (absent years are missing
/// blocks), so that a year-index sequence means the same years everywhere.
struct AlignedStations {
  std::vector<int> years;
  std::vector<BlockMaximaSeries> series;
};

AlignedStations align_stations(std::span<const BlockMaximaSeries> stations);

struct StationFitRecord {
  std::string station_id;
  Coord coord;
  std::optional<GevFit> fit;  // nullopt: excluded from the analysis
  std::string error;
};

/// Standardization and multiple testing of one change field.
struct TestOutcome {
  std::vector<double> delta;
  std::vector<double> bootstrap_se;
  ZScoreField z;
  std::vector<double> permutation_se;
  std::vector<ZScoreField> null_z;
  std::vector<FdrResult> fdr;
  FieldSignificance fs;
};

/// Observed z uses the bootstrap se; null z uses the shared permutation se.
TestOutcome test_change(std::span<const double> delta,
                        std::span<const std::vector<double>> bootstrap_deltas,
                        std::span<const std::vector<double>> permutation_deltas,
                        std::span<const double> q_levels, std::span<const double> fs_cutoffs);

/// FDR decisions and field significance for precomputed z fields.
TestOutcome test_z_fields(ZScoreField observed, std::vector<ZScoreField> null_z,
                          std::span<const double> q_levels, std::span<const double> fs_cutoffs);

struct SeasonAnalysis {
  Grid grid;
  std::vector<StationFitRecord> stations;
  std::vector<int> years;
  double time_origin = 0.0;
  int t1 = 0;
  int t2 = 0;
  double r = 20.0;
  ChangeMetric metric = ChangeMetric::Relative;
  std::vector<Surface> surfaces;
  std::vector<KrigingModel> kriging;
  CoefficientField coefficients;
  ReturnValuePair returns;
  ReplicateSet bootstrap;
  ReplicateSet permutation;
  TestOutcome testing;
};

/// Where replicate outputs are persisted and how earlier ones are reused.
struct RunStorage {
  std::filesystem::path dir;
  std::string config_hash;
  bool resume = false;
};

/// Station fits, kriging, change field, bootstrap and permutation replicates,
/// FDR decisions and field significance for one season's stations.
SeasonAnalysis analyze_season(std::span<const BlockMaximaSeries> stations, const Grid& grid,
                              const AnalysisConfig& config,
                              const std::optional<RunStorage>& storage = std::nullopt);

/// Writes station_fits.csv, kriging.json, coefficients.csv, returns.csv,
/// change.csv and the testing outputs into `dir`.
void write_season_outputs(const std::filesystem::path& dir, const SeasonAnalysis& analysis);

/// zscores.csv, null_z.csv, decisions.csv, fs.csv, fdr.json.
void write_testing_outputs(const std::filesystem::path& dir, const Grid& grid,
                           const TestOutcome& testing);

/// Return values of one season, observed and per replicate (nullopt = dropped).
struct SeasonReplicates {
  ReturnValuePair observed;
  std::vector<std::optional<ReturnValuePair>> bootstrap;
  std::vector<std::optional<ReturnValuePair>> permutation;
  std::vector<bool> masked;  // empty = nothing masked
};

SeasonReplicates season_replicates(const SeasonAnalysis& analysis);

/// Reads returns.csv and the bootstrap/permutation replicate stores of a season directory.
SeasonReplicates load_season_replicates(const std::filesystem::path& season_dir,
                                        const Grid& grid);

struct AnnualAnalysis {
  AnnualChange change;
  TestOutcome testing;
  std::size_t bootstrap_used = 0;
  std::size_t permutation_used = 0;
};

/// Composes the annual change for the observed data and for every replicate
/// index kept in all present seasons, then tests it like a seasonal change.
/// Seasons share replicate year sequences, so index h pairs across seasons.
AnnualAnalysis analyze_annual(const Grid& grid, double r, double t1, double t2,
                              ChangeMetric metric,
                              const std::array<std::optional<SeasonReplicates>, 4>& seasons,
                              std::span<const double> q_levels,
                              std::span<const double> fs_cutoffs);

/// 64-bit FNV-1a, as 16 lowercase hex digits.
std::string fnv1a_hex(std::string_view data);

}  // namespace precipx
