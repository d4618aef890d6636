#include "precipx/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "precipx/analysis.hpp"
#include "precipx/csv.hpp"
#include "precipx/errors.hpp"
#include "precipx/ingest.hpp"
#include "precipx/parallel.hpp"
#include "precipx/simstudy.hpp"

namespace precipx {

namespace {

namespace fs = std::filesystem;
using Json = nlohmann::json;

/// Bad input or configuration: exit status 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Json load_config(const std::optional<std::string>& path) {
  if (!path) return Json::object();
  if (!fs::exists(*path)) throw UsageError("config file not found: " + *path);
  try {
    Json j = Json::parse(read_text(*path));
    if (!j.is_object()) throw UsageError("config must be a JSON object");
    return j;
  } catch (const Json::exception& e) {
    throw UsageError("config " + *path + ": " + e.what());
  }
}

template <class T>
void overlay(Json& cfg, const char* key, const std::optional<T>& value) {
  if (value) cfg[key] = *value;
}

template <class T>
T get(const Json& cfg, const char* key, T fallback) {
  if (!cfg.contains(key) || cfg[key].is_null()) return fallback;
  try {
    return cfg[key].get<T>();
  } catch (const Json::exception&) {
    throw UsageError(std::string("config key '") + key + "' has the wrong type");
  }
}

std::string require_string(const Json& cfg, const char* key, const char* flag) {
  const auto v = get<std::string>(cfg, key, "");
  if (v.empty()) throw UsageError(std::string("missing ") + flag);
  return v;
}

unsigned thread_count(const Json& cfg) {
  const auto t = get<unsigned>(cfg, "threads", 0);
  return t == 0 ? default_threads() : t;
}

/// Refuses to reuse a non-empty output directory unless forced; a forced run clears it.
void prepare_output(const fs::path& dir, bool force, bool resume) {
  if (fs::exists(dir) && !fs::is_directory(dir))
    throw UsageError(dir.string() + " exists and is not a directory");
  if (fs::exists(dir) && !fs::is_empty(dir) && !resume) {
    if (!force)
      throw UsageError(dir.string() + " already contains outputs; pass --force to overwrite");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

std::vector<Season> parse_seasons(const Json& cfg) {
  std::vector<Season> out;
  for (const auto& name : get<std::vector<std::string>>(cfg, "seasons", {"DJF", "MAM", "JJA", "SON"}))
    out.push_back(parse_season(name));
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::string json_dump(const Json& j) { return j.dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// extract

int cmd_extract(const Json& cfg, bool force, std::ostream& out) {
  const fs::path input = require_string(cfg, "input", "--input");
  const fs::path dir = require_string(cfg, "output_dir", "--out");
  if (!fs::exists(input)) throw UsageError("input not found: " + input.string());
  const std::vector<DailySeries> stations = parse_daily_csv(input);
  if (stations.empty()) throw UsageError(input.string() + " contains no stations");

  int first = std::numeric_limits<int>::max(), last = std::numeric_limits<int>::min();
  for (const auto& s : stations)
    for (const auto& d : s.dates) {
      const int y = static_cast<int>(std::chrono::year_month_day(d).year());
      first = std::min(first, y);
      last = std::max(last, y);
    }
  const int start_year = get<int>(cfg, "start_year", first);
  const int end_year = get<int>(cfg, "end_year", last);
  if (end_year < start_year) throw UsageError("end_year precedes start_year");
  const auto seasons = parse_seasons(cfg);

  prepare_output(dir, force, false);
  const Date period_start = season_bounds(Season::DJF, start_year).first;
  const Date period_end = season_bounds(Season::SON, end_year).second;
  Json manifest;
  manifest["version"] = kVersion;
  manifest["start_year"] = start_year;
  manifest["end_year"] = end_year;
  Json kept = Json::array(), skipped = Json::array();
  std::size_t files = 0;
  for (const auto& s : stations) {
    const double completeness = station_completeness(s, period_start, period_end);
    if (!passes_completeness(completeness)) {
      skipped.push_back({{"station_id", s.station_id}, {"completeness", completeness}});
      continue;
    }
    kept.push_back(s.station_id);
    for (Season season : seasons) {
      const BlockMaximaSeries bm = extract_block_maxima(s, season, start_year, end_year);
      const fs::path sdir = dir / std::string(season_name(season));
      fs::create_directories(sdir);
      std::ostringstream text;
      write_block_maxima_csv(text, std::span<const BlockMaximaSeries>(&bm, 1));
      csv::write_atomic(sdir / (s.station_id + ".csv"), text.str());
      ++files;
    }
  }
  manifest["stations"] = std::move(kept);
  manifest["skipped_incomplete"] = std::move(skipped);
  csv::write_atomic(dir / "manifest.json", json_dump(manifest));
  out << "extract: " << files << " block-maxima files written to " << dir.string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// analyze

std::vector<BlockMaximaSeries> load_maxima(const fs::path& path, Season season) {
  std::vector<BlockMaximaSeries> all;
  if (fs::is_directory(path)) {
    const fs::path sdir = path / std::string(season_name(season));
    if (!fs::is_directory(sdir)) return {};
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(sdir))
      if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      auto part = read_block_maxima_csv(f);
      all.insert(all.end(), part.begin(), part.end());
    }
  } else {
    all = read_block_maxima_csv(path);
  }
  std::vector<BlockMaximaSeries> out;
  for (auto& s : all)
    if (s.season == season) out.push_back(std::move(s));
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.station_id < b.station_id; });
  return out;
}

std::string hash_inputs(const fs::path& path) {
  std::string all;
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(path))
      if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) all += fs::relative(f, path).generic_string() + '\n' + read_text(f);
  } else {
    all = read_text(path);
  }
  return fnv1a_hex(all);
}

Grid grid_from_config(const Json& cfg, std::span<const BlockMaximaSeries> stations) {
  Json g = cfg.contains("grid") ? cfg["grid"] : Json::object();
  if (!g.is_object()) throw UsageError("grid must be an object");
  double lon_min = HUGE_VAL, lon_max = -HUGE_VAL, lat_min = HUGE_VAL, lat_max = -HUGE_VAL;
  for (const auto& s : stations) {
    lon_min = std::min(lon_min, s.lon);
    lon_max = std::max(lon_max, s.lon);
    lat_min = std::min(lat_min, s.lat);
    lat_max = std::max(lat_max, s.lat);
  }
  try {
    return Grid::regular(g.value("lon_min", lon_min), g.value("lon_max", lon_max),
                         g.value("lat_min", lat_min), g.value("lat_max", lat_max),
                         g.value("resolution", 0.5));
  } catch (const Json::exception& e) {
    throw UsageError(std::string("grid: ") + e.what());
  }
}

Json parse_grid_flag(const std::string& text) {
  std::vector<double> v;
  for (auto field : csv::split(text)) {
    const auto x = csv::parse_double(field);
    if (!x) throw UsageError("--grid expects lon_min,lon_max,lat_min,lat_max,resolution");
    v.push_back(*x);
  }
  if (v.size() != 5) throw UsageError("--grid expects lon_min,lon_max,lat_min,lat_max,resolution");
  return Json{{"lon_min", v[0]}, {"lon_max", v[1]}, {"lat_min", v[2]}, {"lat_max", v[3]},
              {"resolution", v[4]}};
}

AnalysisConfig analysis_config(const Json& cfg) {
  AnalysisConfig a;
  a.model = ModelSpec::parse(get<std::string>(cfg, "model", "M0"));
  a.metric = parse_metric(get<std::string>(cfg, "metric", "relative"));
  a.r = get<double>(cfg, "r", 20.0);
  if (cfg.contains("t1")) a.t1 = get<int>(cfg, "t1", 0);
  if (cfg.contains("t2")) a.t2 = get<int>(cfg, "t2", 0);
  a.bootstraps = get<std::size_t>(cfg, "bootstraps", kDefaultReplicates);
  a.permutations = get<std::size_t>(cfg, "permutations", kDefaultReplicates);
  a.q_levels = get<std::vector<double>>(cfg, "q_levels", {kQLow, kQHigh});
  a.seed = get<std::uint64_t>(cfg, "seed", 1);
  a.threads = thread_count(cfg);
  a.min_blocks = get<std::size_t>(cfg, "min_blocks", 20);
  if (!(a.r > 1.0)) throw UsageError("r must exceed 1");
  for (double q : a.q_levels)
    if (!(q > 0.0 && q < 1.0)) throw UsageError("q levels must lie in (0, 1)");
  return a;
}

/// Configuration entries that determine analysis outputs (threads and paths excluded).
Json canonical_analysis_config(const Json& cfg, const AnalysisConfig& a, const Grid& grid,
                               const std::vector<Season>& seasons, const std::string& input_hash) {
  Json j;
  j["model"] = a.model.name();
  j["metric"] = metric_name(a.metric);
  j["r"] = a.r;
  j["t1"] = a.t1 ? Json(*a.t1) : Json(nullptr);
  j["t2"] = a.t2 ? Json(*a.t2) : Json(nullptr);
  j["bootstraps"] = a.bootstraps;
  j["permutations"] = a.permutations;
  j["q_levels"] = a.q_levels;
  j["seed"] = a.seed;
  j["min_blocks"] = a.min_blocks;
  j["grid"] = {{"cells", grid.size()}, {"resolution", grid.resolution}};
  if (cfg.contains("grid")) j["grid"]["bounds"] = cfg["grid"];
  Json names = Json::array();
  for (Season s : seasons) names.push_back(season_name(s));
  j["seasons"] = names;
  j["input_hash"] = input_hash;
  return j;
}

int cmd_analyze(const Json& cfg, bool force, bool resume, std::ostream& out, std::ostream& err) {
  const fs::path maxima = require_string(cfg, "maxima", "--maxima");
  const fs::path dir = require_string(cfg, "output_dir", "--out");
  if (!fs::exists(maxima)) throw UsageError("maxima not found: " + maxima.string());
  const AnalysisConfig acfg = analysis_config(cfg);
  const auto seasons = parse_seasons(cfg);

  std::map<Season, std::vector<BlockMaximaSeries>> by_season;
  std::vector<BlockMaximaSeries> every;
  for (Season s : seasons) {
    by_season[s] = load_maxima(maxima, s);
    every.insert(every.end(), by_season[s].begin(), by_season[s].end());
  }
  if (every.empty()) throw UsageError("no block maxima found for the requested seasons");
  const Grid grid = grid_from_config(cfg, every);
  const Json canonical = canonical_analysis_config(cfg, acfg, grid, seasons, hash_inputs(maxima));
  const std::string hash = fnv1a_hex(canonical.dump());

  if (resume && fs::exists(dir / "manifest.json")) {
    Json old;
    try {
      old = Json::parse(read_text(dir / "manifest.json"));
    } catch (const Json::exception&) {
    }
    if (old.value("config_hash", "") != hash)
      throw UsageError("--resume: configuration differs from the run in " + dir.string() +
                       "; use --force to start over");
  }
  prepare_output(dir, force, resume);

  Json manifest;
  manifest["version"] = kVersion;
  manifest["seed"] = acfg.seed;
  manifest["config_hash"] = hash;
  manifest["config"] = canonical;
  manifest["modules"] = {{"gev", kVersion},        {"spatial", kVersion}, {"changes", kVersion},
                         {"resampling", kVersion}, {"testing", kVersion}};
  Json status = Json::object();
  for (Season s : seasons) status[std::string(season_name(s))] = "pending";
  manifest["seasons"] = status;
  csv::write_atomic(dir / "manifest.json", json_dump(manifest));

  int code = kExitOk;
  for (Season s : seasons) {
    const std::string name(season_name(s));
    const fs::path sdir = dir / name;
    try {
      if (by_season[s].empty()) throw InsufficientData("no stations");
      const SeasonAnalysis a =
          analyze_season(by_season[s], grid, acfg, RunStorage{sdir, hash, resume});
      write_season_outputs(sdir, a);
      std::size_t rejected = 0;
      if (!a.testing.fdr.empty()) rejected = a.testing.fdr.front().r_hat;
      out << "analyze " << name << ": " << a.testing.fdr.size() << " q levels, " << rejected
          << " cells rejected at q=" << acfg.q_levels.front() << '\n';
      manifest["seasons"][name] = "complete";
    } catch (const Error& e) {
      err << "analyze " << name << ": " << e.what() << '\n';
      manifest["seasons"][name] = std::string("failed: ") + e.what();
      code = kExitAnalysisFailure;
    }
    csv::write_atomic(dir / "manifest.json", json_dump(manifest));
  }
  return code;
}

// ---------------------------------------------------------------------------
// annual

Grid grid_from_returns(const fs::path& path, double resolution) {
  const csv::Table t = csv::read_file(path);
  const std::size_t lo = t.require_column("lon"), la = t.require_column("lat");
  std::vector<Coord> cells;
  for (const auto& row : t.rows) {
    const auto x = csv::parse_double(row.fields[lo]);
    const auto y = csv::parse_double(row.fields[la]);
    if (!x || !y) throw ParseError(path.string() + ": bad coordinate", row.line);
    cells.push_back(Coord{*x, *y});
  }
  return Grid::from_cells(std::move(cells), resolution);
}

std::map<Season, std::vector<bool>> load_mask(const fs::path& path, const Grid& grid) {
  const csv::Table t = csv::read_file(path);
  const std::size_t lo = t.require_column("lon"), la = t.require_column("lat"),
                    se = t.require_column("season");
  std::map<Season, std::vector<bool>> out;
  for (const auto& row : t.rows) {
    const auto x = csv::parse_double(row.fields[lo]);
    const auto y = csv::parse_double(row.fields[la]);
    if (!x || !y) throw ParseError(path.string() + ": bad coordinate", row.line);
    const Season s = parse_season(row.fields[se]);
    auto& m = out[s];
    if (m.empty()) m.assign(grid.size(), false);
    bool found = false;
    for (std::size_t c = 0; c < grid.size(); ++c)
      if (std::abs(grid.cells[c].lon - *x) < 1e-9 && std::abs(grid.cells[c].lat - *y) < 1e-9) {
        m[c] = true;
        found = true;
      }
    if (!found) throw ParseError(path.string() + ": mask cell is not on the grid", row.line);
  }
  return out;
}

std::string annual_flags_csv(const Grid& grid, const std::vector<int>& used) {
  std::ostringstream out;
  out << "lon,lat,seasons_used\n";
  for (std::size_t c = 0; c < grid.size(); ++c)
    out << csv::format_double(grid.cells[c].lon) << ',' << csv::format_double(grid.cells[c].lat)
        << ',' << used[c] << '\n';
  return out.str();
}

int cmd_annual(const Json& cfg, bool force, std::ostream& out) {
  const fs::path run = require_string(cfg, "run_dir", "--run");
  if (!fs::exists(run / "manifest.json")) throw UsageError("no analysis run in " + run.string());
  const Json manifest = Json::parse(read_text(run / "manifest.json"));
  const Json& rc = manifest.at("config");
  const fs::path dir = get<std::string>(cfg, "output_dir", (run / "annual").string());

  std::array<std::optional<SeasonReplicates>, 4> seasons;
  std::optional<Grid> grid;
  for (Season s : kAllSeasons) {
    const fs::path sdir = run / std::string(season_name(s));
    if (manifest.at("seasons").value(std::string(season_name(s)), "") != "complete") continue;
    if (!grid) grid = grid_from_returns(sdir / "returns.csv", rc.at("grid").value("resolution", 0.0));
    seasons[static_cast<std::size_t>(s)] = load_season_replicates(sdir, *grid);
  }
  if (!grid) throw UsageError("no completed seasonal analyses in " + run.string());
  if (cfg.contains("mask")) {
    const fs::path mask_path = require_string(cfg, "mask", "--mask");
    if (!fs::exists(mask_path)) throw UsageError("mask not found: " + mask_path.string());
    for (auto& [s, m] : load_mask(mask_path, *grid))
      if (auto& sr = seasons[static_cast<std::size_t>(s)]) sr->masked = m;
  }

  const ChangeMetric metric =
      parse_metric(get<std::string>(cfg, "metric", rc.at("metric").get<std::string>()));
  const double r = rc.at("r").get<double>();
  // Endpoints recorded by the seasonal change files.
  const csv::Table change = csv::read_file(
      run / std::string(season_name(*std::find_if(kAllSeasons.begin(), kAllSeasons.end(),
                                                   [&](Season s) {
                                                     return seasons[static_cast<std::size_t>(s)]
                                                         .has_value();
                                                   }))) /
      "change.csv");
  if (change.rows.empty()) throw UsageError("empty seasonal change file");
  const double t1 = *csv::parse_double(change.rows.front().fields[change.require_column("t1")]);
  const double t2 = *csv::parse_double(change.rows.front().fields[change.require_column("t2")]);
  const auto q_levels = rc.at("q_levels").get<std::vector<double>>();

  prepare_output(dir, force, false);
  const AnnualAnalysis a =
      analyze_annual(*grid, r, t1, t2, metric, seasons, q_levels, default_fs_cutoffs());
  csv::write_atomic(dir / "change.csv", change_field_csv(a.change.field));
  csv::write_atomic(dir / "seasons_used.csv", annual_flags_csv(*grid, a.change.seasons_used));
  write_testing_outputs(dir, *grid, a.testing);
  Json m;
  m["version"] = kVersion;
  m["source_config_hash"] = manifest.at("config_hash");
  m["metric"] = metric_name(metric);
  m["bootstrap_replicates"] = a.bootstrap_used;
  m["permutation_replicates"] = a.permutation_used;
  Json used = Json::array();
  for (Season s : kAllSeasons)
    if (seasons[static_cast<std::size_t>(s)]) used.push_back(season_name(s));
  m["seasons"] = used;
  csv::write_atomic(dir / "manifest.json", json_dump(m));
  out << "annual: " << used.size() << " seasons composed into " << dir.string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// simulate

int cmd_simulate(const Json& cfg, bool force, std::ostream& out) {
  const fs::path dir = require_string(cfg, "output_dir", "--out");
  SimConfig sc;
  sc.years = get<std::size_t>(cfg, "years", sc.years);
  sc.block_sizes = get<std::vector<int>>(cfg, "block_sizes", sc.block_sizes);
  sc.return_periods = get<std::vector<double>>(cfg, "return_periods", sc.return_periods);
  sc.replicates = get<std::size_t>(cfg, "replicates", sc.replicates);
  sc.bootstraps = get<std::size_t>(cfg, "bootstraps", sc.bootstraps);
  sc.seed = get<std::uint64_t>(cfg, "seed", sc.seed);
  sc.threads = thread_count(cfg);
  const auto families = get<std::vector<std::string>>(cfg, "families", {"exponential", "gamma"});
  const auto ps = get<std::vector<double>>(cfg, "p", {0.0});
  sc.parents.clear();
  for (const auto& f : families)
    for (double p : ps) {
      if (!(p >= 0.0 && p < 1.0)) throw UsageError("p must lie in [0, 1)");
      sc.parents.push_back(ParentDist{parse_family(f), p});
    }
  prepare_output(dir, force, false);
  const SimStudyResult result = run_sim_study(sc);
  csv::write_atomic(dir / "sim_results.csv", sim_result_csv(result));
  const auto grid = default_convergence_grid();
  csv::write_atomic(dir / "convergence.csv", convergence_csv(sc.block_sizes, grid));
  std::size_t flagged = 0;
  for (const auto& c : result.cells) flagged += c.flagged ? 1 : 0;
  out << "simulate: " << result.cells.size() << " cells, " << flagged
      << " flagged for fit failures\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// fdr

// Smallest positive separation between cell centres along either axis; 1 when undefined.
double cell_spacing(const std::vector<Coord>& cells) {
  double best = HUGE_VAL;
  for (auto axis : {&Coord::lon, &Coord::lat}) {
    std::vector<double> v;
    for (const auto& c : cells) v.push_back(c.*axis);
    std::sort(v.begin(), v.end());
    for (std::size_t i = 1; i < v.size(); ++i)
      if (v[i] > v[i - 1]) best = std::min(best, v[i] - v[i - 1]);
  }
  return std::isfinite(best) ? best : 1.0;
}

int cmd_fdr(const Json& cfg, bool force, std::ostream& out) {
  const fs::path observed_path = require_string(cfg, "observed", "--observed");
  const fs::path null_path = require_string(cfg, "null", "--null");
  const fs::path dir = require_string(cfg, "output_dir", "--out");
  for (const auto& p : {observed_path, null_path})
    if (!fs::exists(p)) throw UsageError("not found: " + p.string());
  const auto q_levels = get<std::vector<double>>(cfg, "q_levels", {kQLow, kQHigh});
  for (double q : q_levels)
    if (!(q > 0.0 && q < 1.0)) throw UsageError("q levels must lie in (0, 1)");

  const csv::Table obs = csv::read_file(observed_path);
  const std::size_t lo = obs.require_column("lon"), la = obs.require_column("lat"),
                    zc = obs.require_column("z");
  std::vector<Coord> cells;
  ZScoreField observed;
  for (const auto& row : obs.rows) {
    const auto x = csv::parse_double(row.fields[lo]);
    const auto y = csv::parse_double(row.fields[la]);
    const auto z = csv::parse_double(row.fields[zc]);
    if (!x || !y || !z) throw ParseError(observed_path.string() + ": bad value", row.line);
    cells.push_back(Coord{*x, *y});
    observed.z.push_back(*z);
  }
  const Grid grid = Grid::from_cells(cells, get<double>(cfg, "resolution", cell_spacing(cells)));

  const csv::Table nt = csv::read_file(null_path);
  const std::size_t rc = nt.require_column("replicate"), nz = nt.require_column("z");
  std::map<long long, std::vector<double>> fields;
  for (const auto& row : nt.rows) {
    const auto h = csv::parse_int(row.fields[rc]);
    const auto z = csv::parse_double(row.fields[nz]);
    if (!h || !z) throw ParseError(null_path.string() + ": bad value", row.line);
    fields[*h].push_back(*z);
  }
  std::vector<ZScoreField> null_z;
  for (auto& [h, z] : fields) {
    if (z.size() != grid.size())
      throw UsageError("null replicate " + std::to_string(h) + " has " +
                       std::to_string(z.size()) + " cells, expected " +
                       std::to_string(grid.size()));
    null_z.push_back(ZScoreField{std::move(z), static_cast<std::size_t>(h - 1)});
  }
  prepare_output(dir, force, false);
  const TestOutcome t = test_z_fields(observed, std::move(null_z), q_levels, default_fs_cutoffs());
  csv::write_atomic(dir / "decisions.csv", decisions_csv(grid, t.z, t.fdr));
  csv::write_atomic(dir / "fs.csv", field_significance_csv(t.fs));
  Json j = Json::array();
  for (const auto& f : t.fdr)
    j.push_back({{"q", f.q},
                 {"c_star", std::isfinite(f.c_star) ? Json(f.c_star) : Json(nullptr)},
                 {"rejections", f.r_hat},
                 {"estimated_false_rejections", f.v_hat},
                 {"tested_cells", f.tested}});
  csv::write_atomic(dir / "fdr.json", json_dump(Json{{"levels", j}}));
  for (const auto& f : t.fdr) out << "fdr q=" << f.q << ": " << f.r_hat << " rejections\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// kriging-fit

int cmd_kriging_fit(const Json& cfg, bool force, std::ostream& out) {
  const fs::path sites_path = require_string(cfg, "sites", "--sites");
  const fs::path dir = require_string(cfg, "output_dir", "--out");
  if (!fs::exists(sites_path)) throw UsageError("sites not found: " + sites_path.string());
  const csv::Table t = csv::read_file(sites_path);
  const std::size_t lo = t.require_column("lon"), la = t.require_column("lat"),
                    vc = t.require_column("value");
  std::vector<Coord> coords;
  std::vector<double> values;
  std::vector<BlockMaximaSeries> boxes;
  for (const auto& row : t.rows) {
    const auto x = csv::parse_double(row.fields[lo]);
    const auto y = csv::parse_double(row.fields[la]);
    const auto v = csv::parse_double(row.fields[vc]);
    if (!x || !y || !v) throw ParseError(sites_path.string() + ": bad value", row.line);
    coords.push_back(Coord{*x, *y});
    values.push_back(*v);
    BlockMaximaSeries b;
    b.lon = *x;
    b.lat = *y;
    boxes.push_back(std::move(b));
  }
  const Grid grid = grid_from_config(cfg, boxes);
  prepare_output(dir, force, false);
  const KrigingModel m = fit_kriging_model(coords, values);
  const KrigingPrediction p = krige(m, coords, values, grid);
  nlohmann::ordered_json j;
  j["variance"] = m.variance;
  j["range_km"] = m.range_km;
  j["nugget"] = m.nugget;
  j["mean"] = m.mean;
  csv::write_atomic(dir / "kriging.json", j.dump(2) + "\n");
  std::ostringstream text;
  text << "lon,lat,mean,sd\n";
  for (std::size_t c = 0; c < grid.size(); ++c)
    text << csv::format_double(grid.cells[c].lon) << ',' << csv::format_double(grid.cells[c].lat)
         << ',' << csv::format_double(p.mean[c]) << ',' << csv::format_double(p.sd[c]) << '\n';
  csv::write_atomic(dir / "prediction.csv", text.str());
  out << "kriging-fit: range " << m.range_km << " km, " << grid.size() << " cells\n";
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Spatial extreme-precipitation trend analysis"};
  app.require_subcommand(1);
  app.fallthrough();
  std::optional<std::string> config_path;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  bool force = false, resume = false;
  app.add_option("--config", config_path, "JSON configuration file");
  app.add_option("--seed", seed, "Base random seed");
  app.add_option("--threads", threads, "Worker threads (0 = all cores)");
  app.add_flag("--force", force, "Overwrite existing outputs");
  app.add_flag("--resume", resume, "Reuse completed replicates of an identical run");

  std::optional<std::string> input, out_dir, maxima, run_dir, mask, metric, model, grid,
      observed, null_z, sites;
  std::optional<int> start_year, end_year, t1, t2;
  std::optional<double> r;
  std::optional<std::size_t> bootstraps, permutations, replicates, years;
  std::vector<std::string> seasons, families;
  std::vector<double> q_levels, return_periods, ps;
  std::vector<int> block_sizes;

  auto* extract = app.add_subcommand("extract", "Extract seasonal block maxima from daily records");
  extract->add_option("--input", input, "Daily CSV (station_id,lon,lat,date,prcp_mm)");
  extract->add_option("--out", out_dir, "Output directory");
  extract->add_option("--start-year", start_year);
  extract->add_option("--end-year", end_year);
  extract->add_option("--seasons", seasons)->delimiter(',');

  auto* analyze = app.add_subcommand("analyze", "Seasonal trend analysis with significance testing");
  analyze->add_option("--maxima", maxima, "Block-maxima directory or CSV");
  analyze->add_option("--out", out_dir, "Run directory");
  analyze->add_option("--seasons", seasons)->delimiter(',');
  analyze->add_option("--model", model, "M0..M4");
  analyze->add_option("--metric", metric, "relative or absolute");
  analyze->add_option("--r", r, "Return period");
  analyze->add_option("--t1", t1);
  analyze->add_option("--t2", t2);
  analyze->add_option("--bootstraps", bootstraps);
  analyze->add_option("--permutations", permutations);
  analyze->add_option("--q", q_levels, "FDR levels")->delimiter(',');
  analyze->add_option("--grid", grid, "lon_min,lon_max,lat_min,lat_max,resolution");

  auto* annual = app.add_subcommand("annual", "Compose seasonal analyses into annual changes");
  annual->add_option("--run", run_dir, "Run directory written by analyze");
  annual->add_option("--out", out_dir, "Output directory (default <run>/annual)");
  annual->add_option("--mask", mask, "CSV of masked cells (lon,lat,season)");
  annual->add_option("--metric", metric, "relative or absolute");

  auto* simulate = app.add_subcommand("simulate", "Block-size simulation study");
  simulate->add_option("--out", out_dir, "Output directory");
  simulate->add_option("--families", families, "exponential, gamma")->delimiter(',');
  simulate->add_option("--p", ps, "Zero-rain probabilities")->delimiter(',');
  simulate->add_option("--block-sizes", block_sizes)->delimiter(',');
  simulate->add_option("--return-periods", return_periods)->delimiter(',');
  simulate->add_option("--replicates", replicates);
  simulate->add_option("--bootstraps", bootstraps);
  simulate->add_option("--years", years);

  auto* fdr = app.add_subcommand("fdr", "FDR decisions and field significance from z fields");
  fdr->add_option("--observed", observed, "CSV with lon,lat,z");
  fdr->add_option("--null", null_z, "CSV with replicate,lon,lat,z");
  fdr->add_option("--out", out_dir, "Output directory");
  fdr->add_option("--q", q_levels, "FDR levels")->delimiter(',');

  auto* kfit = app.add_subcommand("kriging-fit", "Fit and apply a Matérn kriging model");
  kfit->add_option("--sites", sites, "CSV with lon,lat,value");
  kfit->add_option("--out", out_dir, "Output directory");
  kfit->add_option("--grid", grid, "lon_min,lon_max,lat_min,lat_max,resolution");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  try {
    Json cfg = load_config(config_path);
    overlay(cfg, "seed", seed);
    overlay(cfg, "threads", threads);
    overlay(cfg, "input", input);
    overlay(cfg, "output_dir", out_dir);
    overlay(cfg, "maxima", maxima);
    overlay(cfg, "run_dir", run_dir);
    overlay(cfg, "mask", mask);
    overlay(cfg, "metric", metric);
    overlay(cfg, "model", model);
    overlay(cfg, "observed", observed);
    overlay(cfg, "null", null_z);
    overlay(cfg, "sites", sites);
    overlay(cfg, "start_year", start_year);
    overlay(cfg, "end_year", end_year);
    overlay(cfg, "t1", t1);
    overlay(cfg, "t2", t2);
    overlay(cfg, "r", r);
    overlay(cfg, "bootstraps", bootstraps);
    overlay(cfg, "permutations", permutations);
    overlay(cfg, "replicates", replicates);
    overlay(cfg, "years", years);
    if (!seasons.empty()) cfg["seasons"] = seasons;
    if (!families.empty()) cfg["families"] = families;
    if (!q_levels.empty()) cfg["q_levels"] = q_levels;
    if (!return_periods.empty()) cfg["return_periods"] = return_periods;
    if (!ps.empty()) cfg["p"] = ps;
    if (!block_sizes.empty()) cfg["block_sizes"] = block_sizes;
    if (grid) cfg["grid"] = parse_grid_flag(*grid);
    if (force && resume) throw UsageError("--force and --resume are mutually exclusive");

    if (extract->parsed()) return cmd_extract(cfg, force, out);
    if (analyze->parsed()) return cmd_analyze(cfg, force, resume, out, err);
    if (annual->parsed()) return cmd_annual(cfg, force, out);
    if (simulate->parsed()) return cmd_simulate(cfg, force, out);
    if (fdr->parsed()) return cmd_fdr(cfg, force, out);
    if (kfit->parsed()) return cmd_kriging_fit(cfg, force, out);
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DuplicateRecord& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    err << "analysis failed: " << e.what() << '\n';
    return kExitAnalysisFailure;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Json::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "analysis failed: " << e.what() << '\n';
    return kExitAnalysisFailure;
  }
}

}  // namespace precipx
