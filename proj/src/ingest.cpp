#include "precipx/ingest.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <tuple>

#include "precipx/csv.hpp"
#include "precipx/errors.hpp"

namespace precipx {

namespace chr = std::chrono;

std::string_view season_name(Season s) {
  static constexpr std::array<std::string_view, 4> names{"DJF", "MAM", "JJA", "SON"};
  return names[static_cast<std::size_t>(s)];
}

Season parse_season(std::string_view name) {
  for (Season s : kAllSeasons)
    if (season_name(s) == name) return s;
  throw InvalidArgument("unknown season '" + std::string(name) + "'");
}

Date make_date(int year, unsigned month, unsigned day) {
  const chr::year_month_day ymd{chr::year{year}, chr::month{month}, chr::day{day}};
  if (!ymd.ok()) throw InvalidArgument("invalid calendar date");
  return Date{ymd};
}

std::optional<Date> parse_date(std::string_view text) {
  if (text.size() != 10 || text[4] != '-' || text[7] != '-') return std::nullopt;
  const auto y = csv::parse_int(text.substr(0, 4));
  const auto m = csv::parse_int(text.substr(5, 2));
  const auto d = csv::parse_int(text.substr(8, 2));
  if (!y || !m || !d || *m < 1 || *m > 12 || *d < 1 || *d > 31) return std::nullopt;
  const chr::year_month_day ymd{chr::year{static_cast<int>(*y)},
                                chr::month{static_cast<unsigned>(*m)},
                                chr::day{static_cast<unsigned>(*d)}};
  if (!ymd.ok()) return std::nullopt;
  return Date{ymd};
}

std::string format_date(Date d) {
  const chr::year_month_day ymd{d};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

std::pair<Date, Date> season_bounds(Season season, int year) {
  const auto last_of = [](int y, unsigned m) {
    return Date{chr::year_month_day_last{chr::year{y}, chr::month_day_last{chr::month{m}}}};
  };
  switch (season) {
    case Season::DJF: return {make_date(year - 1, 12, 1), last_of(year, 2)};
    case Season::MAM: return {make_date(year, 3, 1), make_date(year, 5, 31)};
    case Season::JJA: return {make_date(year, 6, 1), make_date(year, 8, 31)};
    case Season::SON: return {make_date(year, 9, 1), make_date(year, 11, 30)};
  }
  throw InvalidArgument("bad season");
}

std::vector<DailySeries> parse_daily_csv(std::istream& in) {
  const csv::Table table = csv::read(in);
  static const std::vector<std::string> expected{"station_id", "lon", "lat", "date", "prcp_mm"};
  if (table.header != expected)
    throw ParseError("header must be station_id,lon,lat,date,prcp_mm", 1);

  struct Entry {
    Date date;
    std::optional<double> value;
    std::size_t line;
  };
  struct Pending {
    double lon, lat;
    std::vector<Entry> entries;
  };
  std::map<std::string, Pending> stations;
  for (const auto& row : table.rows) {
    const auto& f = row.fields;
    if (f[0].empty()) throw ParseError("empty station_id", row.line);
    const auto lon = csv::parse_double(f[1]);
    const auto lat = csv::parse_double(f[2]);
    if (!lon || !lat || !std::isfinite(*lon) || !std::isfinite(*lat) || *lat < -90 || *lat > 90)
      throw ParseError("bad coordinates", row.line);
    const auto date = parse_date(f[3]);
    if (!date) throw ParseError("bad date '" + f[3] + "'", row.line);
    std::optional<double> value;
    if (!f[4].empty()) {
      value = csv::parse_double(f[4]);
      if (!value || !std::isfinite(*value)) throw ParseError("bad prcp_mm '" + f[4] + "'", row.line);
      if (*value < 0.0) throw ParseError("negative precipitation", row.line);
    }
    auto [it, inserted] = stations.try_emplace(f[0], Pending{*lon, *lat, {}});
    if (!inserted && (it->second.lon != *lon || it->second.lat != *lat))
      throw ParseError("coordinates differ from earlier rows of station " + f[0], row.line);
    it->second.entries.push_back(Entry{*date, value, row.line});
  }

  std::vector<DailySeries> out;
  out.reserve(stations.size());
  for (auto& [id, p] : stations) {
    std::sort(p.entries.begin(), p.entries.end(), [](const Entry& a, const Entry& b) {
      return std::tie(a.date, a.line) < std::tie(b.date, b.line);
    });
    DailySeries s{id, p.lon, p.lat, {}, {}};
    s.dates.reserve(p.entries.size());
    s.values.reserve(p.entries.size());
    for (const auto& e : p.entries) {
      if (!s.dates.empty() && s.dates.back() == e.date)
        throw DuplicateRecord("duplicate record for station " + id + " on " +
                              format_date(e.date) + " (line " + std::to_string(e.line) + ")");
      s.dates.push_back(e.date);
      s.values.push_back(e.value);
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<DailySeries> parse_daily_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open " + path.string());
  return parse_daily_csv(in);
}

namespace {

// Present values inside [first, last], visited in date order.
template <class Fn>
void for_each_present(const DailySeries& s, Date first, Date last, Fn&& fn) {
  auto it = std::lower_bound(s.dates.begin(), s.dates.end(), first);
  for (; it != s.dates.end() && *it <= last; ++it) {
    const auto& v = s.values[static_cast<std::size_t>(it - s.dates.begin())];
    if (v) fn(*v);
  }
}

}  // namespace

double station_completeness(const DailySeries& series, Date start, Date end) {
  if (end < start) throw InvalidArgument("station_completeness: end precedes start");
  const double total = static_cast<double>((end - start).count() + 1);
  std::size_t present = 0;
  for_each_present(series, start, end, [&](double) { ++present; });
  return static_cast<double>(present) / total;
}

bool passes_completeness(double fraction) { return fraction >= kMinCompleteness - 1e-12; }

BlockMaximaSeries extract_block_maxima(const DailySeries& series, Season season, int start_year,
                                       int end_year) {
  if (end_year < start_year) throw InvalidArgument("extract_block_maxima: empty year range");
  BlockMaximaSeries out;
  out.station_id = series.station_id;
  out.lon = series.lon;
  out.lat = series.lat;
  out.season = season;
  for (int year = start_year; year <= end_year; ++year) {
    const auto [first, last] = season_bounds(season, year);
    const double days = static_cast<double>((last - first).count() + 1);
    std::size_t present = 0;
    double block_max = -HUGE_VAL;
    for_each_present(series, first, last, [&](double v) {
      ++present;
      block_max = std::max(block_max, v);
    });
    const double missing = 1.0 - static_cast<double>(present) / days;
    out.years.push_back(year);
    out.missing_fraction.push_back(missing);
    if (present > 0 && missing <= kMaxBlockMissing + 1e-12)
      out.maxima.emplace_back(block_max);
    else
      out.maxima.emplace_back(std::nullopt);
  }
  return out;
}

void write_block_maxima_csv(std::ostream& out, std::span<const BlockMaximaSeries> series) {
  out << "station_id,lon,lat,season,year,max_mm,missing_fraction\n";
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.size(); ++i) {
      out << s.station_id << ',' << csv::format_double(s.lon) << ','
          << csv::format_double(s.lat) << ',' << season_name(s.season) << ',' << s.years[i]
          << ',' << (s.maxima[i] ? csv::format_double(*s.maxima[i]) : std::string()) << ','
          << csv::format_double(s.missing_fraction[i]) << '\n';
    }
}

std::vector<BlockMaximaSeries> read_block_maxima_csv(std::istream& in) {
  const csv::Table table = csv::read(in);
  static const std::vector<std::string> expected{"station_id", "lon",    "lat",
                                                 "season",     "year",   "max_mm",
                                                 "missing_fraction"};
  if (table.header != expected)
    throw ParseError("header must be station_id,lon,lat,season,year,max_mm,missing_fraction", 1);

  struct Item {
    int year;
    std::optional<double> max;
    double missing;
  };
  std::map<std::pair<std::string, Season>, std::tuple<double, double, std::vector<Item>>> groups;
  for (const auto& row : table.rows) {
    const auto& f = row.fields;
    const auto lon = csv::parse_double(f[1]);
    const auto lat = csv::parse_double(f[2]);
    const auto year = csv::parse_int(f[4]);
    const auto miss = csv::parse_double(f[6]);
    if (!lon || !lat || !year || !miss) throw ParseError("malformed block-maxima row", row.line);
    Season season;
    try {
      season = parse_season(f[3]);
    } catch (const InvalidArgument&) {
      throw ParseError("bad season '" + f[3] + "'", row.line);
    }
    std::optional<double> max;
    if (!f[5].empty()) {
      max = csv::parse_double(f[5]);
      if (!max || *max < 0.0) throw ParseError("bad max_mm '" + f[5] + "'", row.line);
    }
    auto& g = groups[{f[0], season}];
    std::get<0>(g) = *lon;
    std::get<1>(g) = *lat;
    std::get<2>(g).push_back(Item{static_cast<int>(*year), max, *miss});
  }
  std::vector<BlockMaximaSeries> out;
  for (auto& [key, g] : groups) {
    auto& items = std::get<2>(g);
    std::stable_sort(items.begin(), items.end(),
                     [](const Item& a, const Item& b) { return a.year < b.year; });
    BlockMaximaSeries s;
    s.station_id = key.first;
    s.season = key.second;
    s.lon = std::get<0>(g);
    s.lat = std::get<1>(g);
    for (const auto& it : items) {
      if (!s.years.empty() && s.years.back() == it.year)
        throw DuplicateRecord("duplicate block for station " + key.first + " year " +
                              std::to_string(it.year));
      s.years.push_back(it.year);
      s.maxima.push_back(it.max);
      s.missing_fraction.push_back(it.missing);
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<BlockMaximaSeries> read_block_maxima_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open " + path.string());
  return read_block_maxima_csv(in);
}

}  // namespace precipx
