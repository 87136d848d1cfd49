#include "pooltest/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "pooltest/model_core.hpp"
#include "pooltest/rng.hpp"

namespace pooltest {

void SimConfig::validate() const {
  if (region_prevalences.empty()) throw std::invalid_argument("at least one region prevalence is required");
  for (double p : region_prevalences) {
    if (!(p > 0.0) || !(p < 1.0)) throw std::invalid_argument("region prevalences must lie in (0,1)");
  }
  if (villages_per_region < 1 || sites_per_village < 1)
    throw std::invalid_argument("village and site counts must be >= 1");
  if (years.empty()) throw std::invalid_argument("at least one sampling year is required");
  if (!(year_odds_ratio > 0.0)) throw std::invalid_argument("year odds ratio must be positive");
  if (!(catch_mean >= 0.0) || !(catch_dispersion > 0.0))
    throw std::invalid_argument("catch mean must be >= 0 and dispersion > 0");
  if (pool_max < 1) throw std::invalid_argument("pool_max must be >= 1");
  if (sd_village_intercept < 0.0 || sd_site_intercept < 0.0 || sd_village_slope < 0.0)
    throw std::invalid_argument("random-effect standard deviations must be >= 0");
}

std::vector<int> partition_catch(long long catch_size, int pool_max) {
  if (catch_size < 0) throw std::invalid_argument("catch size must be >= 0");
  if (pool_max < 1) throw std::invalid_argument("pool_max must be >= 1");
  std::vector<int> pools(static_cast<std::size_t>(catch_size / pool_max), pool_max);
  const int remainder = static_cast<int>(catch_size % pool_max);
  if (remainder > 0) pools.push_back(remainder);
  return pools;
}

SimResult simulate(const SimConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, {0x51AULL}));

  const double log_or = std::log(cfg.year_odds_ratio);
  std::vector<Pool> pools;
  GroundTruth truth;

  struct Accumulator {
    double sum = 0.0;
    long long count = 0;
  };
  std::map<std::pair<std::string, double>, Accumulator> region_year_acc;
  std::map<std::pair<std::string, double>, Accumulator> village_year_acc;

  for (std::size_t r = 0; r < cfg.region_prevalences.size(); ++r) {
    const std::string region(1, static_cast<char>('A' + (r % 26)));
    const std::string region_name =
        r < 26 ? region : region + std::to_string(r / 26);  // A..Z, then A1, B1, ...
    const double base_logit = link_apply(Link::logit, cfg.region_prevalences[r]);

    for (int v = 1; v <= cfg.villages_per_region; ++v) {
      const std::string village = region_name + "-" + std::to_string(v);
      const double u_village = cfg.sd_village_intercept * rng.normal();
      const double b_village = cfg.sd_village_slope * rng.normal();
      truth.village_intercepts[village] = u_village;
      truth.village_slopes[village] = b_village;

      for (int s = 1; s <= cfg.sites_per_village; ++s) {
        const std::string site = village + "-" + std::to_string(s);
        const double u_site = cfg.sd_site_intercept * rng.normal();
        truth.site_intercepts[site] = u_site;

        for (double year : cfg.years) {
          const double eta = base_logit + u_village + u_site + (log_or + b_village) * year;
          const double prevalence = link_inverse(Link::logit, eta);
          truth.site_years.push_back({region_name, village, site, year, prevalence});
          region_year_acc[{region_name, year}].sum += prevalence;
          region_year_acc[{region_name, year}].count += 1;
          village_year_acc[{village, year}].sum += prevalence;
          village_year_acc[{village, year}].count += 1;

          const long long catch_size = rng.neg_binomial(cfg.catch_mean, cfg.catch_dispersion);
          for (int pool_size : partition_catch(catch_size, cfg.pool_max)) {
            const double phi = pool_positive_prob(prevalence, pool_size);
            Pool pool;
            pool.size = pool_size;
            pool.positive = rng.uniform() < phi;
            pool.covariates = {{"Region", region_name},
                               {"Village", village},
                               {"Site", site},
                               {"Year", year}};
            pools.push_back(std::move(pool));
          }
        }
      }
    }
  }

  for (const auto& [key, acc] : region_year_acc) truth.region_year[key] = acc.sum / acc.count;
  for (const auto& [key, acc] : village_year_acc) truth.village_year[key] = acc.sum / acc.count;

  SimResult result;
  result.data = PoolDataset(std::move(pools), {"Region", "Village", "Site", "Year"}, {"Village", "Site"});
  result.truth = std::move(truth);
  return result;
}

}  // namespace pooltest
