#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "precipx/block_maxima.hpp"
#include "precipx/spatial.hpp"

namespace precipx {

enum class ResampleKind { Bootstrap, Permutation };

std::string_view kind_name(ResampleKind kind);

/// Year-index sequences (1-based, length T), one per replicate. Every station
/// is resampled with the same sequence within a replicate.
struct ResamplePlan {
  ResampleKind kind = ResampleKind::Bootstrap;
  std::size_t years = 0;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> replicate_seeds;
  std::vector<std::vector<int>> sequences;

  std::size_t replicates() const { return sequences.size(); }
};

inline constexpr std::size_t kDefaultReplicates = 250;

/// Replicate r draws from a stream derived from (seed, kind, r) alone.
ResamplePlan make_plan(ResampleKind kind, std::size_t years, std::size_t replicates,
                       std::uint64_t seed);

/// Bootstrap carries the year covariates along with the maxima; permutation
/// shuffles the maxima but keeps the original consecutive years.
BlockMaximaSeries resample_maxima(const BlockMaximaSeries& maxima, std::span<const int> sequence,
                                  ResampleKind kind);

/// Gridded output of one full pipeline run on resampled data.
struct ReplicateOutcome {
  std::vector<double> rv_t1;
  std::vector<double> rv_t2;
  std::vector<double> delta;
  std::size_t failed_stations = 0;
  std::size_t total_stations = 0;
};

/// One pipeline run: station fits, smoothing, change metric. May throw
/// precipx::Error, which drops the replicate.
using Pipeline = std::function<ReplicateOutcome(std::span<const int> sequence, ResampleKind kind)>;

/// A replicate is dropped when more than this fraction of its station fits fail.
inline constexpr double kMaxFailedStations = 0.10;
/// More than this fraction of dropped replicates aborts the resampling run.
inline constexpr double kMaxDroppedReplicates = 0.25;

/// Persists replicate outputs as `<dir>/<index>.csv` (`lon,lat,rv_t1,rv_t2,delta`)
/// plus `<dir>/manifest.json` listing seeds and completion status. Safe to
/// call from several worker threads.
class ReplicateStore {
 public:
  ReplicateStore(std::filesystem::path dir, Grid grid, ResampleKind kind, std::uint64_t seed,
                 std::string config_hash, bool resume);

  /// Outer nullopt: nothing stored. Inner nullopt: stored as dropped.
  std::optional<std::optional<ReplicateOutcome>> load(std::size_t index) const;
  void save(std::size_t index, std::uint64_t replicate_seed,
            const std::optional<ReplicateOutcome>& outcome);

  static std::string file_name(std::size_t index);

 private:
  struct Entry {
    std::uint64_t seed = 0;
    bool dropped = false;
    std::size_t failed_stations = 0;
    std::size_t total_stations = 0;
  };
  void write_manifest_locked() const;

  std::filesystem::path dir_;
  Grid grid_;
  ResampleKind kind_;
  std::uint64_t seed_;
  std::string config_hash_;
  mutable std::mutex mutex_;
  std::map<std::size_t, Entry> entries_;
};

struct ReplicateSet {
  ResampleKind kind = ResampleKind::Bootstrap;
  std::vector<std::optional<ReplicateOutcome>> outcomes;  // nullopt = dropped
  std::size_t dropped = 0;

  /// Delta fields of the kept replicates, in replicate order.
  std::vector<std::vector<double>> deltas() const;
};

/// Runs every replicate of the plan (reusing stored ones) and applies the drop policy.
ReplicateSet run_replicates(const Pipeline& pipeline, const ResamplePlan& plan, unsigned threads,
                            ReplicateStore* store = nullptr);

/// Per-cell sample standard deviation (divisor count - 1) over the replicate
/// fields, ignoring NaN entries; NaN where fewer than two values exist.
std::vector<double> per_cell_sd(std::span<const std::vector<double>> fields);

/// Standardized change; provenance is the permutation replicate, or none for
/// the observed data. NaN marks an undefined z (zero or undefined se).
struct ZScoreField {
  std::vector<double> z;
  std::optional<std::size_t> replicate;
};

ZScoreField standardize(std::span<const double> delta, std::span<const double> se,
                        std::optional<std::size_t> replicate = std::nullopt);

struct BootstrapResult {
  std::vector<double> se;
  ReplicateSet replicates;
};

BootstrapResult bootstrap_standard_errors(const Pipeline& pipeline, const ResamplePlan& plan,
                                          unsigned threads = 1, ReplicateStore* store = nullptr);

/// z_h = delta_h / se, with one se per cell shared by all permutation replicates.
std::vector<ZScoreField> permutation_z(std::span<const std::vector<double>> deltas,
                                       std::span<const double> se);

struct PermutationNull {
  std::vector<double> se;
  std::vector<ZScoreField> z;
  ReplicateSet replicates;
};

PermutationNull permutation_null(const Pipeline& pipeline, const ResamplePlan& plan,
                                 unsigned threads = 1, ReplicateStore* store = nullptr);

}  // namespace precipx
