#include "precipx/resampling.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"
#include "precipx/csv.hpp"
#include "precipx/errors.hpp"
#include "precipx/parallel.hpp"
#include "precipx/seeding.hpp"

namespace precipx {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}

std::string_view kind_name(ResampleKind kind) {
  return kind == ResampleKind::Bootstrap ? "bootstrap" : "permutation";
}

ResamplePlan make_plan(ResampleKind kind, std::size_t years, std::size_t replicates,
                       std::uint64_t seed) {
  if (years < 2) throw InvalidArgument("make_plan: need at least two years");
  if (replicates < 2) throw InvalidArgument("make_plan: need at least two replicates");
  ResamplePlan plan{kind, years, seed, {}, {}};
  const std::uint64_t tag = kind == ResampleKind::Bootstrap ? 1 : 2;
  for (std::size_t r = 0; r < replicates; ++r) {
    const std::uint64_t s = derive_seed(seed, {tag, r});
    std::mt19937_64 rng(s);
    std::vector<int> seq(years);
    if (kind == ResampleKind::Bootstrap) {
      std::uniform_int_distribution<int> pick(1, static_cast<int>(years));
      for (int& v : seq) v = pick(rng);
    } else {
      std::iota(seq.begin(), seq.end(), 1);
      std::shuffle(seq.begin(), seq.end(), rng);
    }
    plan.replicate_seeds.push_back(s);
    plan.sequences.push_back(std::move(seq));
  }
  return plan;
}

BlockMaximaSeries resample_maxima(const BlockMaximaSeries& maxima, std::span<const int> sequence,
                                  ResampleKind kind) {
  const std::size_t n = maxima.size();
  if (sequence.size() != n)
    throw InvalidArgument("resample_maxima: sequence length " + std::to_string(sequence.size()) +
                          " does not match " + std::to_string(n) + " blocks");
  BlockMaximaSeries out = maxima;
  for (std::size_t i = 0; i < n; ++i) {
    const int k = sequence[i];
    if (k < 1 || static_cast<std::size_t>(k) > n)
      throw InvalidArgument("resample_maxima: year index out of range");
    const auto src = static_cast<std::size_t>(k - 1);
    out.maxima[i] = maxima.maxima[src];
    out.missing_fraction[i] = maxima.missing_fraction[src];
    if (kind == ResampleKind::Bootstrap) out.years[i] = maxima.years[src];
  }
  return out;
}

// ---------------------------------------------------------------------------
// ReplicateStore

ReplicateStore::ReplicateStore(std::filesystem::path dir, Grid grid, ResampleKind kind,
                               std::uint64_t seed, std::string config_hash, bool resume)
    : dir_(std::move(dir)),
      grid_(std::move(grid)),
      kind_(kind),
      seed_(seed),
      config_hash_(std::move(config_hash)) {
  std::filesystem::create_directories(dir_);
  const auto manifest = dir_ / "manifest.json";
  if (!resume || !std::filesystem::exists(manifest)) return;
  std::ifstream in(manifest);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception&) {
    return;  // unreadable manifest: recompute everything
  }
  if (j.value("kind", "") != kind_name(kind_) || j.value("seed", std::uint64_t{0}) != seed_ ||
      j.value("config_hash", "") != config_hash_)
    return;
  for (const auto& e : j.at("replicates")) {
    const auto index = e.at("index").get<std::size_t>() - 1;
    Entry entry{e.at("seed").get<std::uint64_t>(), e.at("status") == "dropped",
                e.value("failed_stations", std::size_t{0}),
                e.value("total_stations", std::size_t{0})};
    if (!entry.dropped && !std::filesystem::exists(dir_ / file_name(index))) continue;
    entries_[index] = entry;
  }
}

std::string ReplicateStore::file_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04zu.csv", index + 1);
  return buf;
}

std::optional<std::optional<ReplicateOutcome>> ReplicateStore::load(std::size_t index) const {
  Entry entry;
  {
    std::lock_guard lock(mutex_);
    const auto it = entries_.find(index);
    if (it == entries_.end()) return std::nullopt;
    entry = it->second;
  }
  if (entry.dropped) return std::optional<ReplicateOutcome>{};
  const csv::Table t = csv::read_file(dir_ / file_name(index));
  if (t.rows.size() != grid_.size()) return std::nullopt;
  const std::size_t c1 = t.require_column("rv_t1"), c2 = t.require_column("rv_t2"),
                    cd = t.require_column("delta");
  ReplicateOutcome out;
  out.failed_stations = entry.failed_stations;
  out.total_stations = entry.total_stations;
  for (const auto& row : t.rows) {
    const auto a = csv::parse_double(row.fields[c1]);
    const auto b = csv::parse_double(row.fields[c2]);
    const auto d = csv::parse_double(row.fields[cd]);
    if (!a || !b || !d) return std::nullopt;
    out.rv_t1.push_back(*a);
    out.rv_t2.push_back(*b);
    out.delta.push_back(*d);
  }
  return std::optional<ReplicateOutcome>{std::move(out)};
}

void ReplicateStore::save(std::size_t index, std::uint64_t replicate_seed,
                          const std::optional<ReplicateOutcome>& outcome) {
  Entry entry{replicate_seed, !outcome.has_value(), 0, 0};
  if (outcome) {
    entry.failed_stations = outcome->failed_stations;
    entry.total_stations = outcome->total_stations;
    using csv::format_double;
    std::ostringstream out;
    out << "lon,lat,rv_t1,rv_t2,delta\n";
    for (std::size_t c = 0; c < grid_.size(); ++c)
      out << format_double(grid_.cells[c].lon) << ',' << format_double(grid_.cells[c].lat) << ','
          << format_double(outcome->rv_t1[c]) << ',' << format_double(outcome->rv_t2[c]) << ','
          << format_double(outcome->delta[c]) << '\n';
    csv::write_atomic(dir_ / file_name(index), out.str());
  }
  std::lock_guard lock(mutex_);
  entries_[index] = entry;
  write_manifest_locked();
}

void ReplicateStore::write_manifest_locked() const {
  nlohmann::json j;
  j["kind"] = kind_name(kind_);
  j["seed"] = seed_;
  j["config_hash"] = config_hash_;
  nlohmann::json reps = nlohmann::json::array();
  for (const auto& [index, e] : entries_) {
    reps.push_back({{"index", index + 1},
                    {"seed", e.seed},
                    {"status", e.dropped ? "dropped" : "complete"},
                    {"failed_stations", e.failed_stations},
                    {"total_stations", e.total_stations}});
  }
  j["replicates"] = std::move(reps);
  csv::write_atomic(dir_ / "manifest.json", j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------

std::vector<std::vector<double>> ReplicateSet::deltas() const {
  std::vector<std::vector<double>> out;
  for (const auto& o : outcomes)
    if (o) out.push_back(o->delta);
  return out;
}

ReplicateSet run_replicates(const Pipeline& pipeline, const ResamplePlan& plan, unsigned threads,
                            ReplicateStore* store) {
  ReplicateSet set{plan.kind, std::vector<std::optional<ReplicateOutcome>>(plan.replicates()), 0};
  parallel_for(plan.replicates(), threads, [&](std::size_t r) {
    if (store) {
      if (auto stored = store->load(r)) {
        set.outcomes[r] = std::move(*stored);
        return;
      }
    }
    std::optional<ReplicateOutcome> outcome;
    try {
      ReplicateOutcome o = pipeline(plan.sequences[r], plan.kind);
      if (static_cast<double>(o.failed_stations) <=
          kMaxFailedStations * static_cast<double>(o.total_stations))
        outcome = std::move(o);
    } catch (const Error&) {
      // counted as dropped below
    }
    if (store) store->save(r, plan.replicate_seeds[r], outcome);
    set.outcomes[r] = std::move(outcome);
  });
  set.dropped = static_cast<std::size_t>(
      std::count_if(set.outcomes.begin(), set.outcomes.end(), [](const auto& o) { return !o; }));
  if (static_cast<double>(set.dropped) >
      kMaxDroppedReplicates * static_cast<double>(plan.replicates()))
    throw ResamplingFailure(std::string(kind_name(plan.kind)) + ": " +
                            std::to_string(set.dropped) + " of " +
                            std::to_string(plan.replicates()) + " replicates dropped");
  return set;
}

std::vector<double> per_cell_sd(std::span<const std::vector<double>> fields) {
  if (fields.empty()) return {};
  const std::size_t m = fields.front().size();
  std::vector<double> out(m, kNaN);
  for (std::size_t c = 0; c < m; ++c) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& f : fields)
      if (std::isfinite(f[c])) {
        sum += f[c];
        ++n;
      }
    if (n < 2) continue;
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (const auto& f : fields)
      if (std::isfinite(f[c])) ss += (f[c] - mean) * (f[c] - mean);
    out[c] = std::sqrt(ss / static_cast<double>(n - 1));
  }
  return out;
}

ZScoreField standardize(std::span<const double> delta, std::span<const double> se,
                        std::optional<std::size_t> replicate) {
  if (delta.size() != se.size()) throw InvalidArgument("standardize: size mismatch");
  ZScoreField z{std::vector<double>(delta.size(), kNaN), replicate};
  for (std::size_t c = 0; c < delta.size(); ++c)
    if (se[c] > 0.0 && std::isfinite(se[c]) && std::isfinite(delta[c])) z.z[c] = delta[c] / se[c];
  return z;
}

BootstrapResult bootstrap_standard_errors(const Pipeline& pipeline, const ResamplePlan& plan,
                                          unsigned threads, ReplicateStore* store) {
  if (plan.kind != ResampleKind::Bootstrap)
    throw InvalidArgument("bootstrap_standard_errors: plan is not a bootstrap plan");
  BootstrapResult res;
  res.replicates = run_replicates(pipeline, plan, threads, store);
  const auto deltas = res.replicates.deltas();
  res.se = per_cell_sd(deltas);
  return res;
}

std::vector<ZScoreField> permutation_z(std::span<const std::vector<double>> deltas,
                                       std::span<const double> se) {
  std::vector<ZScoreField> out;
  out.reserve(deltas.size());
  for (std::size_t h = 0; h < deltas.size(); ++h) out.push_back(standardize(deltas[h], se, h));
  return out;
}

PermutationNull permutation_null(const Pipeline& pipeline, const ResamplePlan& plan,
                                 unsigned threads, ReplicateStore* store) {
  if (plan.kind != ResampleKind::Permutation)
    throw InvalidArgument("permutation_null: plan is not a permutation plan");
  PermutationNull res;
  res.replicates = run_replicates(pipeline, plan, threads, store);
  const auto deltas = res.replicates.deltas();
  res.se = per_cell_sd(deltas);
  for (std::size_t r = 0; r < res.replicates.outcomes.size(); ++r)
    if (const auto& o = res.replicates.outcomes[r]) res.z.push_back(standardize(o->delta, res.se, r));
  return res;
}

}  // namespace precipx
