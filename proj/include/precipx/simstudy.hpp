#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "precipx/gev.hpp"

namespace precipx {

enum class ParentFamily { Exponential, Gamma };

std::string_view family_name(ParentFamily f);
ParentFamily parse_family(std::string_view name);

/// Daily "precipitation": zero with probability p, otherwise Exponential(rate 1)
/// or Gamma(shape 1/3, scale 3). Both nonzero parts have mean 1.
struct ParentDist {
  ParentFamily family = ParentFamily::Exponential;
  double p = 0.0;

  /// CDF and survival function of the nonzero part.
  double nonzero_cdf(double y) const;
  double nonzero_survival(double y) const;
  double sample(std::mt19937_64& rng) const;
};

struct SimConfig {
  std::size_t years = 68;
  std::vector<int> block_sizes{5, 10, 25, 50, 100, 200};
  std::vector<double> return_periods{10, 20, 50, 100, 500, 1000};
  std::vector<ParentDist> parents{{ParentFamily::Exponential, 0.0}, {ParentFamily::Gamma, 0.0}};
  std::size_t replicates = 1000;
  std::size_t bootstraps = 100;
  std::uint64_t seed = 1;
  unsigned threads = 1;
};

/// One (parent, block size, return period) cell of the sweep.
struct SimCell {
  ParentDist parent;
  int block_size = 0;
  double return_period = 0.0;
  double true_value = 0.0;
  double rmse = 0.0;
  double re_percent = 0.0;  // (MC sd / mean bootstrap se - 1) * 100
  double mc_sd = 0.0;
  double mean_boot_se = 0.0;
  std::size_t failures = 0;
  std::size_t replicates = 0;
  bool flagged = false;  // more than 5% failed fits
};

struct SimStudyResult {
  std::vector<SimCell> cells;

  const SimCell& at(ParentFamily family, int block_size, double return_period) const;
};

/// Upper 1 - 1/r quantile of F^{n(1-p)}, with F the nonzero-part CDF, by bisection.
double true_return_value(const ParentDist& parent, double block_size, double return_period);

/// sup over y of |F_E(y + log n)^n - exp(-exp(-y))| for the unit Exponential.
double gumbel_convergence(int n, std::span<const double> y_grid);

/// y in [-3, 10] at spacing 0.001.
std::vector<double> default_convergence_grid();

/// Largest of n parent draws, repeated `years` times.
std::vector<double> simulate_block_maxima(const ParentDist& parent, int block_size,
                                          std::size_t years, std::mt19937_64& rng);

SimStudyResult run_sim_study(const SimConfig& config);

/// Schema: `family,p,n,r,rmse,re_percent,mc_sd,mean_boot_se,failures`.
std::string sim_result_csv(const SimStudyResult& result);
/// Schema: `n,sup_distance`.
std::string convergence_csv(std::span<const int> block_sizes, std::span<const double> y_grid);

}  // namespace precipx
