#include "precipx/fdr.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "precipx/csv.hpp"
#include "precipx/errors.hpp"

namespace precipx {

namespace {

std::vector<double> sorted_abs(const ZScoreField& f) {
  std::vector<double> out;
  out.reserve(f.z.size());
  for (double z : f.z)
    if (!std::isnan(z)) out.push_back(std::abs(z));
  std::sort(out.begin(), out.end());
  return out;
}

std::size_t count_above(const std::vector<double>& sorted, double c) {
  return static_cast<std::size_t>(sorted.end() -
                                  std::upper_bound(sorted.begin(), sorted.end(), c));
}

double ecdf(const std::vector<double>& sorted, double c) {
  if (sorted.empty()) return 0.0;
  return static_cast<double>(sorted.size() - count_above(sorted, c)) /
         static_cast<double>(sorted.size());
}

}  // namespace

double estimate_false_rejections(std::span<const ZScoreField> null_z, double c) {
  if (null_z.empty()) throw InvalidArgument("estimate_false_rejections: empty null set");
  if (!(c >= 0.0)) throw InvalidArgument("estimate_false_rejections: cutoff must be >= 0");
  std::size_t total = 0;
  for (const auto& f : null_z)
    for (double z : f.z)
      if (!std::isnan(z) && std::abs(z) > c) ++total;
  return static_cast<double>(total) / static_cast<double>(null_z.size());
}

std::size_t count_rejections(const ZScoreField& observed, double c) {
  return count_above(sorted_abs(observed), c);
}

FdrResult fdr_threshold(const ZScoreField& observed, std::span<const ZScoreField> null_z,
                        double q) {
  if (!(q > 0.0 && q < 1.0)) throw InvalidArgument("fdr_threshold: q must lie in (0, 1)");
  if (null_z.empty()) throw InvalidArgument("fdr_threshold: empty null set");
  FdrResult res;
  res.q = q;
  res.rejected.assign(observed.z.size(), false);

  const std::vector<double> obs = sorted_abs(observed);
  res.tested = obs.size();
  std::vector<double> pooled;
  for (const auto& f : null_z) {
    auto s = sorted_abs(f);
    pooled.insert(pooled.end(), s.begin(), s.end());
  }
  std::sort(pooled.begin(), pooled.end());
  const double h = static_cast<double>(null_z.size());

  std::vector<double> candidates{0.0};
  for (double a : obs)
    if (a > candidates.back()) candidates.push_back(a);

  for (double c : candidates) {
    const std::size_t r = count_above(obs, c);
    if (r == 0) break;  // R only shrinks from here on
    const double v = static_cast<double>(count_above(pooled, c)) / h;
    if (v <= q * static_cast<double>(r)) {
      res.c_star = c;
      res.r_hat = r;
      res.v_hat = v;
      break;
    }
  }
  if (std::isfinite(res.c_star))
    for (std::size_t i = 0; i < observed.z.size(); ++i)
      res.rejected[i] = !std::isnan(observed.z[i]) && std::abs(observed.z[i]) > res.c_star;
  return res;
}

FieldSignificance field_significance(const ZScoreField& observed,
                                     std::span<const ZScoreField> null_z,
                                     std::span<const double> cutoffs) {
  if (cutoffs.empty()) throw InvalidArgument("field_significance: no cutoffs");
  if (null_z.empty()) throw InvalidArgument("field_significance: empty null set");
  const std::vector<double> obs = sorted_abs(observed);
  std::vector<std::vector<double>> nulls;
  for (const auto& f : null_z) nulls.push_back(sorted_abs(f));

  FieldSignificance out;
  out.cutoffs.assign(cutoffs.begin(), cutoffs.end());
  for (double c : cutoffs) {
    const double f_obs = ecdf(obs, c);
    std::size_t less_extreme = 0, ties = 0;
    for (const auto& n : nulls) {
      const double f_null = ecdf(n, c);
      if (f_obs < f_null) ++less_extreme;
      if (f_obs == f_null) ++ties;
    }
    out.fs.push_back(static_cast<double>(less_extreme) / static_cast<double>(nulls.size()));
    out.ties.push_back(ties);
  }
  return out;
}

std::vector<double> default_fs_cutoffs() {
  std::vector<double> c;
  for (int i = 0; i <= 50; ++i) c.push_back(i / 10.0);
  return c;
}

std::string q_column_name(double q) {
  return "reject_q" + std::to_string(static_cast<int>(std::lround(q * 100.0)));
}

std::string decisions_csv(const Grid& grid, const ZScoreField& observed,
                          std::span<const FdrResult> results) {
  using csv::format_double;
  std::ostringstream out;
  out << "lon,lat,z";
  for (const auto& r : results) out << ',' << q_column_name(r.q);
  out << '\n';
  for (std::size_t c = 0; c < observed.z.size(); ++c) {
    out << format_double(grid.cells[c].lon) << ',' << format_double(grid.cells[c].lat) << ','
        << format_double(observed.z[c]);
    for (const auto& r : results) out << ',' << (r.rejected[c] ? 1 : 0);
    out << '\n';
  }
  return out.str();
}

std::string field_significance_csv(const FieldSignificance& fs) {
  std::ostringstream out;
  out << "cutoff,fs\n";
  for (std::size_t i = 0; i < fs.cutoffs.size(); ++i)
    out << csv::format_double(fs.cutoffs[i]) << ',' << csv::format_double(fs.fs[i]) << '\n';
  return out.str();
}

}  // namespace precipx
