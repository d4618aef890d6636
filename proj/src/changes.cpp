#include "precipx/changes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "precipx/csv.hpp"
#include "precipx/errors.hpp"

namespace precipx {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}

std::string_view metric_name(ChangeMetric m) {
  return m == ChangeMetric::Relative ? "relative" : "absolute";
}

ChangeMetric parse_metric(std::string_view name) {
  if (name == "relative") return ChangeMetric::Relative;
  if (name == "absolute") return ChangeMetric::Absolute;
  throw InvalidArgument("unknown change metric '" + std::string(name) + "'");
}

ReturnValuePair endpoint_return_values(const CoefficientField& coeffs, double r, double t1,
                                       double t2) {
  if (!(r > 1.0)) throw InvalidArgument("return period must exceed 1");
  ReturnValuePair out;
  out.at_t1.reserve(coeffs.cells.size());
  out.at_t2.reserve(coeffs.cells.size());
  const double c1 = t1 - coeffs.time_origin, c2 = t2 - coeffs.time_origin;
  for (const auto& p : coeffs.cells) {
    out.at_t1.push_back(return_value(p, coeffs.model, r, c1));
    out.at_t2.push_back(return_value(p, coeffs.model, r, c2));
  }
  return out;
}

double change_value(double rv_t1, double rv_t2, ChangeMetric metric) {
  if (!std::isfinite(rv_t1) || !std::isfinite(rv_t2)) return kNaN;
  if (metric == ChangeMetric::Absolute) return rv_t2 - rv_t1;
  if (rv_t1 == 0.0) return kNaN;
  return (rv_t2 - rv_t1) / rv_t1;
}

ChangeField change_field(const CoefficientField& coeffs, ChangeMetric metric, double r,
                         double t1, double t2) {
  if (t1 == t2) throw InvalidArgument("change_field: endpoint years coincide");
  const ReturnValuePair rv = endpoint_return_values(coeffs, r, t1, t2);
  ChangeField f{coeffs.grid, metric, r, t1, t2, {}};
  f.delta.reserve(rv.at_t1.size());
  for (std::size_t c = 0; c < rv.at_t1.size(); ++c)
    f.delta.push_back(change_value(rv.at_t1[c], rv.at_t2[c], metric));
  return f;
}

AnnualChange annual_change(const SeasonalReturnSet& seasonal, ChangeMetric metric) {
  const std::size_t m = seasonal.grid.size();
  for (const auto& s : seasonal.seasons) {
    if (!s) continue;
    if (s->at_t1.size() != m || s->at_t2.size() != m || (!s->masked.empty() && s->masked.size() != m))
      throw InvalidArgument("annual_change: season field does not match the grid");
  }
  AnnualChange out{ChangeField{seasonal.grid, metric, seasonal.r, seasonal.t1, seasonal.t2, {}},
                   std::vector<int>(m, 0)};
  out.field.delta.assign(m, kNaN);
  for (std::size_t c = 0; c < m; ++c) {
    double max1 = -HUGE_VAL, max2 = -HUGE_VAL;
    int used = 0;
    for (const auto& s : seasonal.seasons) {
      if (!s || (!s->masked.empty() && s->masked[c])) continue;
      if (!std::isfinite(s->at_t1[c]) || !std::isfinite(s->at_t2[c])) continue;
      max1 = std::max(max1, s->at_t1[c]);
      max2 = std::max(max2, s->at_t2[c]);
      ++used;
    }
    out.seasons_used[c] = used;
    if (used > 0) out.field.delta[c] = change_value(max1, max2, metric);
  }
  return out;
}

std::string change_field_csv(const ChangeField& field) {
  using csv::format_double;
  std::ostringstream out;
  out << "lon,lat,delta,metric,r,t1,t2\n";
  for (std::size_t c = 0; c < field.delta.size(); ++c)
    out << format_double(field.grid.cells[c].lon) << ',' << format_double(field.grid.cells[c].lat)
        << ',' << format_double(field.delta[c]) << ',' << metric_name(field.metric) << ','
        << format_double(field.r) << ',' << format_double(field.t1) << ','
        << format_double(field.t2) << '\n';
  return out.str();
}

}  // namespace precipx
