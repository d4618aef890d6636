#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "precipx/resampling.hpp"
#include "precipx/spatial.hpp"

namespace precipx {

/// Outcome of the empirical FDR procedure at one target rate q.
struct FdrResult {
  double q = 0.1;
  double c_star = HUGE_VAL;  // +inf when no cutoff qualifies
  std::vector<bool> rejected;
  double v_hat = 0.0;      // estimated false rejections at c_star
  std::size_t r_hat = 0;   // observed rejections at c_star
  std::size_t tested = 0;  // cells with a defined z
};

/// Low and high confidence levels.
inline constexpr double kQLow = 0.33;
inline constexpr double kQHigh = 0.1;

/// Mean over null replicates of the number of cells with |z| > c.
double estimate_false_rejections(std::span<const ZScoreField> null_z, double c);

/// Number of observed cells with |z| > c.
std::size_t count_rejections(const ZScoreField& observed, double c);

/// Smallest cutoff c (searched over 0 and the distinct observed |z|) with
/// V(c) / R(c) <= q and R(c) > 0; cells with |z| > c are rejected. Cells whose
/// z is undefined (NaN) are never tested.
FdrResult fdr_threshold(const ZScoreField& observed, std::span<const ZScoreField> null_z,
                        double q);

struct FieldSignificance {
  std::vector<double> cutoffs;
  std::vector<double> fs;
  std::vector<std::size_t> ties;  // replicates whose CDF equals the observed CDF at the cutoff
};

/// FS(c): fraction of null replicates whose empirical |z| CDF at c exceeds the
/// observed one, i.e. replicates less extreme than the data.
FieldSignificance field_significance(const ZScoreField& observed,
                                     std::span<const ZScoreField> null_z,
                                     std::span<const double> cutoffs);

/// 0, 0.1, ..., 5.
std::vector<double> default_fs_cutoffs();

/// Schema: `lon,lat,z,reject_qXX...` with one column per result, XX = round(100 q).
std::string decisions_csv(const Grid& grid, const ZScoreField& observed,
                          std::span<const FdrResult> results);

/// Schema: `cutoff,fs`.
std::string field_significance_csv(const FieldSignificance& fs);

std::string q_column_name(double q);

}  // namespace precipx
