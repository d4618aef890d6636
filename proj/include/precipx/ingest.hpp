#pragma once

#include <chrono>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "precipx/block_maxima.hpp"

namespace precipx {

using Date = std::chrono::sys_days;

/// Daily precipitation (mm) for one station. Days absent from `dates` are
/// missing, as are entries whose value is nullopt.
struct DailySeries {
  std::string station_id;
  double lon = 0.0;
  double lat = 0.0;
  std::vector<Date> dates;  // strictly increasing
  std::vector<std::optional<double>> values;
};

/// A station record must have at least this fraction of nonmissing days.
inline constexpr double kMinCompleteness = 2.0 / 3.0;
/// A seasonal block is usable when at most this fraction of its days is missing.
inline constexpr double kMaxBlockMissing = 1.0 / 3.0;

Date make_date(int year, unsigned month, unsigned day);
/// Parses YYYY-MM-DD; nullopt when malformed or not a calendar date.
std::optional<Date> parse_date(std::string_view text);
std::string format_date(Date d);

/// First and last day of the season-year block. DJF of year y starts on
/// 1 December of y - 1.
std::pair<Date, Date> season_bounds(Season season, int year);

/// Input schema: `station_id,lon,lat,date,prcp_mm`; empty prcp_mm = missing.
/// Stations are returned sorted by id, each with dates ascending.
std::vector<DailySeries> parse_daily_csv(std::istream& in);
std::vector<DailySeries> parse_daily_csv(const std::filesystem::path& path);

/// Fraction of calendar days in [start, end] with a nonmissing value.
double station_completeness(const DailySeries& series, Date start, Date end);
bool passes_completeness(double fraction);

BlockMaximaSeries extract_block_maxima(const DailySeries& series, Season season, int start_year,
                                       int end_year);

/// Schema: `station_id,lon,lat,season,year,max_mm,missing_fraction`.
void write_block_maxima_csv(std::ostream& out, std::span<const BlockMaximaSeries> series);
/// Groups rows by (station, season); output sorted by station id then season.
std::vector<BlockMaximaSeries> read_block_maxima_csv(std::istream& in);
std::vector<BlockMaximaSeries> read_block_maxima_csv(const std::filesystem::path& path);

}  // namespace precipx
