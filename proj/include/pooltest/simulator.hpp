#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pooltest/mcmc.hpp"
#include "pooltest/types.hpp"

namespace pooltest {

/// Parameters of the synthetic hierarchical survey generator: regions with
/// fixed baseline prevalences, villages and trap sites nested below them,
/// yearly sampling with a declining odds trend, negative-binomial catch
/// sizes, and fixed-size pooling with a remainder pool.
struct SimConfig {
  std::vector<double> region_prevalences = {0.005, 0.02, 0.04};
  int villages_per_region = 10;
  int sites_per_village = 10;
  std::vector<double> years = {0.0, 1.0, 2.0};
  double year_odds_ratio = 0.8;
  double catch_mean = 200.0;
  double catch_dispersion = 5.0;  // negative-binomial size parameter
  int pool_max = 25;
  double sd_village_intercept = 0.5;
  double sd_site_intercept = 0.3;
  double sd_village_slope = 0.2;
  std::uint64_t seed = 6;

  void validate() const;
};

struct GroundTruth {
  struct SiteYear {
    std::string region, village, site;
    double year;
    double prevalence;
  };
  std::vector<SiteYear> site_years;
  /// Marginal prevalences: arithmetic means of the member sites' truths.
  std::map<std::pair<std::string, double>, double> region_year;              // (region, year)
  std::map<std::pair<std::string, double>, double> village_year;             // (village, year)
  std::map<std::string, double> village_intercepts;                          // realized effects
  std::map<std::string, double> village_slopes;
  std::map<std::string, double> site_intercepts;
};

/// Split a catch into pools of `pool_max` plus one remainder pool.
std::vector<int> partition_catch(long long catch_size, int pool_max);

struct SimResult {
  PoolDataset data;
  GroundTruth truth;
};

/// Deterministic for a given seed: column order and draw order are fixed.
SimResult simulate(const SimConfig& cfg);

enum class CoverageMethod { prev_freq, prev_bayes, hier_prev, reg_bayes, reg_bayes_hier };
CoverageMethod coverage_method_from_string(const std::string& name);
std::string coverage_method_to_string(CoverageMethod m);

struct CoverageReport {
  struct MethodResult {
    CoverageMethod method;
    long long cells = 0;
    long long covered = 0;
    std::vector<double> widths;
    long long warning_count = 0;

    double coverage() const { return cells == 0 ? 0.0 : static_cast<double>(covered) / cells; }
    double median_width() const;
  };
  double level = 0.95;
  int replicates = 0;
  std::vector<MethodResult> methods;

  const MethodResult& result_for(CoverageMethod m) const;
};

/// Repeatedly simulate, estimate per (region, year) with each method, and
/// record whether each interval covers the true marginal prevalence.
/// Replicates run concurrently on split seeds; assembly is deterministic.
CoverageReport coverage_experiment(const SimConfig& cfg, int replicates,
                                   const std::vector<CoverageMethod>& methods, double level = 0.95,
                                   const McmcConfig& mcmc_base = {});

}  // namespace pooltest
