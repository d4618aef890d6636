#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace precipx {

enum class Season { DJF, MAM, JJA, SON };

inline constexpr std::array<Season, 4> kAllSeasons{Season::DJF, Season::MAM, Season::JJA,
                                                   Season::SON};

std::string_view season_name(Season s);
Season parse_season(std::string_view name);

/// Seasonal maxima for one station, one entry per season-year.
///
/// `years` is the time covariate attached to each entry. After a bootstrap
/// resample it need not be sorted or unique.
struct BlockMaximaSeries {
  std::string station_id;
  double lon = 0.0;
  double lat = 0.0;
  Season season = Season::DJF;
  std::vector<int> years;
  std::vector<std::optional<double>> maxima;
  std::vector<double> missing_fraction;

  std::size_t size() const { return years.size(); }
  std::size_t valid_count() const;
};

}  // namespace precipx
