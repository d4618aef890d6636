#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "precipx/block_maxima.hpp"
#include "precipx/spatial.hpp"

namespace precipx {

enum class ChangeMetric { Relative, Absolute };

std::string_view metric_name(ChangeMetric m);
ChangeMetric parse_metric(std::string_view name);

/// Per-cell change in the r-period return value between calendar years t1 and t2.
/// Undefined cells hold NaN.
struct ChangeField {
  Grid grid;
  ChangeMetric metric = ChangeMetric::Absolute;
  double r = 20.0;
  double t1 = 0.0;
  double t2 = 0.0;
  std::vector<double> delta;
};

struct ReturnValuePair {
  std::vector<double> at_t1;
  std::vector<double> at_t2;
};

/// Return values of every cell at calendar years t1 and t2.
ReturnValuePair endpoint_return_values(const CoefficientField& coeffs, double r, double t1,
                                       double t2);

/// NaN for a relative change whose starting return value is zero.
double change_value(double rv_t1, double rv_t2, ChangeMetric metric);

ChangeField change_field(const CoefficientField& coeffs, ChangeMetric metric, double r,
                         double t1, double t2);

struct SeasonReturns {
  std::vector<double> at_t1;
  std::vector<double> at_t2;
  std::vector<bool> masked;  // empty = nothing masked
};

/// Per-season return-value fields at the two endpoint years.
struct SeasonalReturnSet {
  Grid grid;
  double r = 20.0;
  double t1 = 0.0;
  double t2 = 0.0;
  std::array<std::optional<SeasonReturns>, 4> seasons;  // indexed by Season
};

struct AnnualChange {
  ChangeField field;
  std::vector<int> seasons_used;  // contributing seasons per cell; < 4 flags masking
};

/// Change between the largest seasonal return values at t2 and at t1.
/// Masked or absent seasons are left out of both maxima.
AnnualChange annual_change(const SeasonalReturnSet& seasonal, ChangeMetric metric);

/// Schema: `lon,lat,delta,metric,r,t1,t2`.
std::string change_field_csv(const ChangeField& field);

}  // namespace precipx
