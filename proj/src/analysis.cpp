#include "precipx/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "json.hpp"
#include "precipx/csv.hpp"
#include "precipx/errors.hpp"
#include "precipx/parallel.hpp"

namespace precipx {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<double> deltas_of(const ReturnValuePair& rv, ChangeMetric metric) {
  std::vector<double> d(rv.at_t1.size());
  for (std::size_t c = 0; c < d.size(); ++c) d[c] = change_value(rv.at_t1[c], rv.at_t2[c], metric);
  return d;
}

struct IndexedDeltas {
  std::vector<std::vector<double>> deltas;
  std::vector<std::size_t> ids;
};

IndexedDeltas kept(const ReplicateSet& set) {
  IndexedDeltas out;
  for (std::size_t h = 0; h < set.outcomes.size(); ++h)
    if (set.outcomes[h]) {
      out.deltas.push_back(set.outcomes[h]->delta);
      out.ids.push_back(h);
    }
  return out;
}

TestOutcome test_change_indexed(std::span<const double> delta,
                                std::span<const std::vector<double>> bootstrap_deltas,
                                const IndexedDeltas& permutation,
                                std::span<const double> q_levels,
                                std::span<const double> fs_cutoffs) {
  if (bootstrap_deltas.size() < 2 || permutation.deltas.size() < 2)
    throw InvalidArgument("test_change: need at least two bootstrap and two permutation fields");
  TestOutcome out;
  out.delta.assign(delta.begin(), delta.end());
  out.bootstrap_se = per_cell_sd(bootstrap_deltas);
  out.z = standardize(delta, out.bootstrap_se);
  out.permutation_se = per_cell_sd(permutation.deltas);
  for (std::size_t k = 0; k < permutation.deltas.size(); ++k)
    out.null_z.push_back(standardize(permutation.deltas[k], out.permutation_se, permutation.ids[k]));
  for (double q : q_levels) out.fdr.push_back(fdr_threshold(out.z, out.null_z, q));
  out.fs = field_significance(out.z, out.null_z, fs_cutoffs);
  return out;
}

std::string station_fits_csv(const std::vector<StationFitRecord>& stations) {
  using csv::format_double;
  std::ostringstream out;
  out << "station_id,lon,lat,status,n_blocks,neg_log_lik,mu0,mu1,mu2,sigma0,sigma1,xi0,xi1\n";
  for (const auto& s : stations) {
    out << s.station_id << ',' << format_double(s.coord.lon) << ',' << format_double(s.coord.lat);
    if (!s.fit) {
      out << ",excluded,,,,,,,,,\n";
      continue;
    }
    const auto& p = s.fit->params;
    out << ",ok," << s.fit->n_blocks << ',' << format_double(s.fit->neg_log_lik) << ','
        << format_double(p.mu0) << ',' << format_double(p.mu1) << ',' << format_double(p.mu2)
        << ',' << format_double(p.sigma0) << ',' << format_double(p.sigma1) << ','
        << format_double(p.xi0) << ',' << format_double(p.xi1) << '\n';
  }
  return out.str();
}

std::string returns_csv(const Grid& grid, const ReturnValuePair& rv) {
  using csv::format_double;
  std::ostringstream out;
  out << "lon,lat,rv_t1,rv_t2\n";
  for (std::size_t c = 0; c < grid.size(); ++c)
    out << format_double(grid.cells[c].lon) << ',' << format_double(grid.cells[c].lat) << ','
        << format_double(rv.at_t1[c]) << ',' << format_double(rv.at_t2[c]) << '\n';
  return out.str();
}

ReturnValuePair read_returns(const std::filesystem::path& path, std::size_t cells) {
  const csv::Table t = csv::read_file(path);
  if (t.rows.size() != cells)
    throw InvalidArgument(path.string() + ": expected " + std::to_string(cells) + " cells, found " +
                          std::to_string(t.rows.size()));
  const std::size_t a = t.require_column("rv_t1"), b = t.require_column("rv_t2");
  ReturnValuePair rv;
  for (const auto& row : t.rows) {
    const auto x = csv::parse_double(row.fields[a]);
    const auto y = csv::parse_double(row.fields[b]);
    if (!x || !y) throw ParseError(path.string() + ": bad return value", row.line);
    rv.at_t1.push_back(*x);
    rv.at_t2.push_back(*y);
  }
  return rv;
}

std::vector<std::optional<ReturnValuePair>> read_store(const std::filesystem::path& dir,
                                                       std::size_t cells) {
  const auto manifest = dir / "manifest.json";
  if (!std::filesystem::exists(manifest))
    throw InvalidArgument(manifest.string() + " not found");
  nlohmann::json j;
  {
    std::ifstream in(manifest);
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw InvalidArgument(manifest.string() + ": " + e.what());
    }
  }
  std::map<std::size_t, std::optional<ReturnValuePair>> by_index;
  for (const auto& e : j.at("replicates")) {
    const auto index = e.at("index").get<std::size_t>();
    if (index == 0) throw InvalidArgument(manifest.string() + ": replicate index 0");
    if (e.at("status") == "dropped")
      by_index[index] = std::nullopt;
    else
      by_index[index] = read_returns(dir / ReplicateStore::file_name(index - 1), cells);
  }
  std::vector<std::optional<ReturnValuePair>> out;
  for (const auto& [index, rv] : by_index) {
    if (index != out.size() + 1)
      throw InvalidArgument(manifest.string() + ": replicate " + std::to_string(out.size() + 1) +
                            " missing; rerun the analysis");
    out.push_back(rv);
  }
  return out;
}

std::vector<std::vector<double>> compose_annual(
    const Grid& grid, double r, double t1, double t2, ChangeMetric metric,
    const std::array<std::optional<SeasonReplicates>, 4>& seasons, bool bootstrap,
    std::vector<std::size_t>& ids) {
  std::size_t n = std::numeric_limits<std::size_t>::max();
  for (const auto& s : seasons)
    if (s) n = std::min(n, (bootstrap ? s->bootstrap : s->permutation).size());
  std::vector<std::vector<double>> out;
  for (std::size_t h = 0; h < n; ++h) {
    SeasonalReturnSet set{grid, r, t1, t2, {}};
    bool complete = true;
    for (std::size_t k = 0; k < 4 && complete; ++k) {
      if (!seasons[k]) continue;
      const auto& rep = (bootstrap ? seasons[k]->bootstrap : seasons[k]->permutation)[h];
      if (!rep) {
        complete = false;
        break;
      }
      set.seasons[k] = SeasonReturns{rep->at_t1, rep->at_t2, seasons[k]->masked};
    }
    if (!complete) continue;
    out.push_back(annual_change(set, metric).field.delta);
    ids.push_back(h);
  }
  const std::size_t dropped = n - out.size();
  if (static_cast<double>(dropped) > kMaxDroppedReplicates * static_cast<double>(n))
    throw ResamplingFailure(std::string("annual ") + (bootstrap ? "bootstrap" : "permutation") +
                            ": " + std::to_string(dropped) + " of " + std::to_string(n) +
                            " replicates dropped in some season");
  return out;
}

}  // namespace

AlignedStations align_stations(std::span<const BlockMaximaSeries> stations) {
  if (stations.empty()) throw InvalidArgument("align_stations: no stations");
  int lo = std::numeric_limits<int>::max(), hi = std::numeric_limits<int>::min();
  for (const auto& s : stations)
    for (int y : s.years) {
      lo = std::min(lo, y);
      hi = std::max(hi, y);
    }
  if (lo > hi) throw InsufficientData("align_stations: no blocks");
  AlignedStations out;
  for (int y = lo; y <= hi; ++y) out.years.push_back(y);
  const std::size_t T = out.years.size();
  for (const auto& s : stations) {
    BlockMaximaSeries a;
    a.station_id = s.station_id;
    a.lon = s.lon;
    a.lat = s.lat;
    a.season = s.season;
    a.years = out.years;
    a.maxima.assign(T, std::nullopt);
    a.missing_fraction.assign(T, 1.0);
    for (std::size_t i = 0; i < s.years.size(); ++i) {
      const auto k = static_cast<std::size_t>(s.years[i] - lo);
      a.maxima[k] = s.maxima[i];
      a.missing_fraction[k] = s.missing_fraction[i];
    }
    out.series.push_back(std::move(a));
  }
  return out;
}

TestOutcome test_change(std::span<const double> delta,
                        std::span<const std::vector<double>> bootstrap_deltas,
                        std::span<const std::vector<double>> permutation_deltas,
                        std::span<const double> q_levels, std::span<const double> fs_cutoffs) {
  IndexedDeltas perm;
  perm.deltas.assign(permutation_deltas.begin(), permutation_deltas.end());
  for (std::size_t h = 0; h < perm.deltas.size(); ++h) perm.ids.push_back(h);
  return test_change_indexed(delta, bootstrap_deltas, perm, q_levels, fs_cutoffs);
}

TestOutcome test_z_fields(ZScoreField observed, std::vector<ZScoreField> null_z,
                          std::span<const double> q_levels, std::span<const double> fs_cutoffs) {
  if (null_z.empty()) throw InvalidArgument("test_z_fields: no null fields");
  for (const auto& z : null_z)
    if (z.z.size() != observed.z.size())
      throw InvalidArgument("test_z_fields: null field size differs from observed");
  TestOutcome out;
  out.z = std::move(observed);
  out.null_z = std::move(null_z);
  for (double q : q_levels) out.fdr.push_back(fdr_threshold(out.z, out.null_z, q));
  out.fs = field_significance(out.z, out.null_z, fs_cutoffs);
  return out;
}

SeasonAnalysis analyze_season(std::span<const BlockMaximaSeries> stations, const Grid& grid,
                              const AnalysisConfig& cfg, const std::optional<RunStorage>& storage) {
  if (grid.size() == 0) throw InvalidArgument("analyze_season: empty grid");
  for (double q : cfg.q_levels)
    if (!(q > 0.0 && q < 1.0)) throw InvalidArgument("analyze_season: q levels must lie in (0, 1)");
  const AlignedStations aligned = align_stations(stations);

  SeasonAnalysis a;
  a.grid = grid;
  a.years = aligned.years;
  a.time_origin = 0.5 * (aligned.years.front() + aligned.years.back());
  a.t1 = cfg.t1.value_or(aligned.years.front());
  a.t2 = cfg.t2.value_or(aligned.years.back());
  a.r = cfg.r;
  a.metric = cfg.metric;
  if (a.t1 == a.t2) throw InvalidArgument("analyze_season: t1 and t2 must differ");

  FitOptions fit_opts;
  fit_opts.time_origin = a.time_origin;
  fit_opts.min_blocks = cfg.min_blocks;

  a.stations.resize(aligned.series.size());
  parallel_for(aligned.series.size(), cfg.threads, [&](std::size_t i) {
    const auto& s = aligned.series[i];
    StationFitRecord rec{s.station_id, Coord{s.lon, s.lat}, std::nullopt, {}};
    try {
      GevFit f = fit_gev(s, cfg.model, fit_opts);
      if (f.converged)
        rec.fit = f;
      else
        rec.error = "not converged";
    } catch (const Error& e) {
      rec.error = e.what();
    }
    a.stations[i] = std::move(rec);
  });

  std::vector<std::size_t> included;
  std::vector<StationFit> fits;
  for (std::size_t i = 0; i < a.stations.size(); ++i)
    if (a.stations[i].fit) {
      included.push_back(i);
      fits.push_back(StationFit{a.stations[i].coord, *a.stations[i].fit});
    }
  if (fits.size() < 10)
    throw InsufficientData("analyze_season: " + std::to_string(fits.size()) +
                           " stations fitted, need 10");

  const CoefficientSmoother smoother(fits, grid.cells, grid.resolution);
  a.surfaces = smoother.surfaces();
  a.kriging = smoother.models();
  std::vector<std::optional<GevParams>> observed;
  for (const auto& f : fits) observed.emplace_back(f.fit.params);
  a.coefficients = smoother.smooth(observed, a.time_origin);
  a.returns = endpoint_return_values(a.coefficients, cfg.r, a.t1, a.t2);
  const std::vector<double> delta = deltas_of(a.returns, cfg.metric);

  const Pipeline pipeline = [&](std::span<const int> sequence, ResampleKind kind) {
    ReplicateOutcome out;
    out.total_stations = included.size();
    std::vector<std::optional<GevParams>> params(included.size());
    FitOptions opts = fit_opts;
    for (std::size_t j = 0; j < included.size(); ++j) {
      const BlockMaximaSeries resampled =
          resample_maxima(aligned.series[included[j]], sequence, kind);
      opts.start = fits[j].fit.params;
      try {
        const GevFit f = fit_gev(resampled, cfg.model, opts);
        if (f.converged) params[j] = f.params;
      } catch (const Error&) {
      }
      if (!params[j]) ++out.failed_stations;
    }
    if (static_cast<double>(out.failed_stations) >
        kMaxFailedStations * static_cast<double>(out.total_stations))
      return out;
    const CoefficientField field = smoother.smooth(params, a.time_origin);
    ReturnValuePair rv = endpoint_return_values(field, cfg.r, a.t1, a.t2);
    out.delta = deltas_of(rv, cfg.metric);
    out.rv_t1 = std::move(rv.at_t1);
    out.rv_t2 = std::move(rv.at_t2);
    return out;
  };

  const std::size_t T = aligned.years.size();
  const ResamplePlan boot_plan = make_plan(ResampleKind::Bootstrap, T, cfg.bootstraps, cfg.seed);
  const ResamplePlan perm_plan =
      make_plan(ResampleKind::Permutation, T, cfg.permutations, cfg.seed);
  std::optional<ReplicateStore> boot_store, perm_store;
  if (storage) {
    boot_store.emplace(storage->dir / "bootstrap", grid, ResampleKind::Bootstrap, cfg.seed,
                       storage->config_hash, storage->resume);
    perm_store.emplace(storage->dir / "permutation", grid, ResampleKind::Permutation, cfg.seed,
                       storage->config_hash, storage->resume);
  }
  a.bootstrap = run_replicates(pipeline, boot_plan, cfg.threads,
                               boot_store ? &*boot_store : nullptr);
  a.permutation = run_replicates(pipeline, perm_plan, cfg.threads,
                                 perm_store ? &*perm_store : nullptr);
  a.testing = test_change_indexed(delta, a.bootstrap.deltas(), kept(a.permutation), cfg.q_levels,
                                  cfg.fs_cutoffs);
  return a;
}

void write_testing_outputs(const std::filesystem::path& dir, const Grid& grid,
                           const TestOutcome& t) {
  using csv::format_double;
  std::filesystem::create_directories(dir);
  const std::size_t m = grid.size();
  auto at = [](const std::vector<double>& v, std::size_t c) { return c < v.size() ? v[c] : kNaN; };
  {
    std::ostringstream out;
    out << "lon,lat,delta,bootstrap_se,permutation_se,z\n";
    for (std::size_t c = 0; c < m; ++c)
      out << format_double(grid.cells[c].lon) << ',' << format_double(grid.cells[c].lat) << ','
          << format_double(at(t.delta, c)) << ',' << format_double(at(t.bootstrap_se, c)) << ','
          << format_double(at(t.permutation_se, c)) << ',' << format_double(t.z.z[c]) << '\n';
    csv::write_atomic(dir / "zscores.csv", out.str());
  }
  {
    std::ostringstream out;
    out << "replicate,lon,lat,z\n";
    for (std::size_t k = 0; k < t.null_z.size(); ++k) {
      const std::size_t id = t.null_z[k].replicate.value_or(k) + 1;
      for (std::size_t c = 0; c < m; ++c)
        out << id << ',' << format_double(grid.cells[c].lon) << ','
            << format_double(grid.cells[c].lat) << ',' << format_double(t.null_z[k].z[c]) << '\n';
    }
    csv::write_atomic(dir / "null_z.csv", out.str());
  }
  csv::write_atomic(dir / "decisions.csv", decisions_csv(grid, t.z, t.fdr));
  csv::write_atomic(dir / "fs.csv", field_significance_csv(t.fs));

  nlohmann::ordered_json j;
  j["null_replicates"] = t.null_z.size();
  nlohmann::ordered_json levels = nlohmann::ordered_json::array();
  for (const auto& f : t.fdr) {
    nlohmann::ordered_json e;
    e["q"] = f.q;
    e["c_star"] = std::isfinite(f.c_star) ? nlohmann::ordered_json(f.c_star) : nullptr;
    e["rejections"] = f.r_hat;
    e["estimated_false_rejections"] = f.v_hat;
    e["tested_cells"] = f.tested;
    e["untested_cells"] = m - f.tested;
    levels.push_back(std::move(e));
  }
  j["levels"] = std::move(levels);
  nlohmann::ordered_json ties = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < t.fs.cutoffs.size(); ++k)
    if (t.fs.ties[k] > 0) ties.push_back({{"cutoff", t.fs.cutoffs[k]}, {"ties", t.fs.ties[k]}});
  j["field_significance_ties"] = std::move(ties);
  csv::write_atomic(dir / "fdr.json", j.dump(2) + "\n");
}

void write_season_outputs(const std::filesystem::path& dir, const SeasonAnalysis& a) {
  std::filesystem::create_directories(dir);
  csv::write_atomic(dir / "station_fits.csv", station_fits_csv(a.stations));

  nlohmann::ordered_json k;
  k["model"] = a.coefficients.model.name();
  k["time_origin"] = a.time_origin;
  nlohmann::ordered_json surfaces = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < a.surfaces.size(); ++i)
    surfaces.push_back({{"surface", surface_name(a.surfaces[i])},
                        {"variance", a.kriging[i].variance},
                        {"range_km", a.kriging[i].range_km},
                        {"nugget", a.kriging[i].nugget},
                        {"mean", a.kriging[i].mean}});
  k["surfaces"] = std::move(surfaces);
  csv::write_atomic(dir / "kriging.json", k.dump(2) + "\n");

  csv::write_atomic(dir / "coefficients.csv", coefficient_field_csv(a.coefficients));
  csv::write_atomic(dir / "returns.csv", returns_csv(a.grid, a.returns));
  const ChangeField change{a.grid, a.metric, a.r, static_cast<double>(a.t1),
                           static_cast<double>(a.t2), a.testing.delta};
  csv::write_atomic(dir / "change.csv", change_field_csv(change));
  write_testing_outputs(dir, a.grid, a.testing);
}

SeasonReplicates season_replicates(const SeasonAnalysis& a) {
  SeasonReplicates s;
  s.observed = a.returns;
  auto convert = [](const ReplicateSet& set) {
    std::vector<std::optional<ReturnValuePair>> out;
    for (const auto& o : set.outcomes)
      out.push_back(o ? std::optional<ReturnValuePair>(ReturnValuePair{o->rv_t1, o->rv_t2})
                      : std::nullopt);
    return out;
  };
  s.bootstrap = convert(a.bootstrap);
  s.permutation = convert(a.permutation);
  return s;
}

SeasonReplicates load_season_replicates(const std::filesystem::path& season_dir,
                                        const Grid& grid) {
  SeasonReplicates s;
  s.observed = read_returns(season_dir / "returns.csv", grid.size());
  s.bootstrap = read_store(season_dir / "bootstrap", grid.size());
  s.permutation = read_store(season_dir / "permutation", grid.size());
  return s;
}

AnnualAnalysis analyze_annual(const Grid& grid, double r, double t1, double t2,
                              ChangeMetric metric,
                              const std::array<std::optional<SeasonReplicates>, 4>& seasons,
                              std::span<const double> q_levels,
                              std::span<const double> fs_cutoffs) {
  SeasonalReturnSet observed{grid, r, t1, t2, {}};
  bool any = false;
  for (std::size_t k = 0; k < 4; ++k) {
    if (!seasons[k]) continue;
    any = true;
    const auto& s = *seasons[k];
    observed.seasons[k] = SeasonReturns{s.observed.at_t1, s.observed.at_t2, s.masked};
  }
  if (!any) throw InvalidArgument("analyze_annual: no seasons");
  AnnualAnalysis out;
  out.change = annual_change(observed, metric);
  std::vector<std::size_t> boot_ids;
  IndexedDeltas perm;
  const auto boot = compose_annual(grid, r, t1, t2, metric, seasons, true, boot_ids);
  perm.deltas = compose_annual(grid, r, t1, t2, metric, seasons, false, perm.ids);
  out.bootstrap_used = boot.size();
  out.permutation_used = perm.deltas.size();
  out.testing = test_change_indexed(out.change.field.delta, boot, perm, q_levels, fs_cutoffs);
  return out;
}

std::string fnv1a_hex(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : data) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace precipx
