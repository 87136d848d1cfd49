#include "pooltest/prevalence_freq.hpp"

#include <algorithm>
#include <cmath>

#include "pooltest/model_core.hpp"
#include "pooltest/special.hpp"

namespace pooltest {

namespace {

constexpr double kEps = 1e-12;

double mle_from_stats(const PooledSuffStats& stats) {
  if (stats.num_pools == 0) throw DataError("cannot estimate prevalence from an empty dataset");
  if (!stats.any_positive()) return 0.0;
  if (!stats.any_negative()) return 1.0;

  // Interior optimum: the score is positive near 0 and negative near 1,
  // and the likelihood is strictly concave in log(1-p). Start from the
  // equal-size closed form evaluated at the mean pool size.
  double lo = kEps, hi = 1.0 - kEps;
  long long pos_pools = 0;
  for (const auto& [size, count] : stats.positive_size_counts) pos_pools += count;
  const double frac = static_cast<double>(pos_pools) / static_cast<double>(stats.num_pools);
  const double mean_size = static_cast<double>(stats.num_individuals) / static_cast<double>(stats.num_pools);
  double p = 1.0 - std::pow(1.0 - std::min(frac, 1.0 - 1e-6), 1.0 / mean_size);
  p = std::clamp(p, lo, hi);

  for (int it = 0; it < 200; ++it) {
    const auto [score, curv] = score_and_curvature(stats, p);
    if (std::fabs(score) < 1e-10) return p;
    if (score > 0.0) lo = std::max(lo, p); else hi = std::min(hi, p);
    double pn = curv < 0.0 ? p - score / curv : p;
    if (!(pn > lo) || !(pn < hi)) pn = 0.5 * (lo + hi);
    if (std::fabs(pn - p) < 1e-12) return pn;
    p = pn;
  }
  return p;
}

// Deviance 2*(llmax - ll(p)) minus the chi-square threshold.
double deviance_gap(const PooledSuffStats& stats, double llmax, double p, double q) {
  return 2.0 * (llmax - pooled_log_likelihood(stats, p)) - q;
}

// Root of the deviance gap between a (gap < 0 side, near the MLE) and
// b (gap > 0 side); bisection polished with Newton steps on the gap.
double solve_deviance(const PooledSuffStats& stats, double llmax, double q, double inner, double outer) {
  double lo = inner, hi = outer;  // gap(lo) < 0 <= gap(hi)
  for (int it = 0; it < 100; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (deviance_gap(stats, llmax, mid, q) < 0.0) lo = mid; else hi = mid;
    if (std::fabs(hi - lo) < 1e-13 * std::max(1.0, std::fabs(lo))) break;
  }
  double p = 0.5 * (lo + hi);
  for (int it = 0; it < 4; ++it) {
    if (!(p > 0.0) || !(p < 1.0)) break;
    const double gap = deviance_gap(stats, llmax, p, q);
    const double slope = -2.0 * score_and_curvature(stats, p).first;
    if (slope == 0.0 || !std::isfinite(slope)) break;
    const double pn = p - gap / slope;
    if (pn > 0.0 && pn < 1.0) p = pn; else break;
  }
  return p;
}

std::pair<double, double> wilks_from_stats(const PooledSuffStats& stats, double level) {
  if (stats.num_pools == 0) throw DataError("cannot estimate prevalence from an empty dataset");
  if (!(level > 0.0) || !(level < 1.0)) throw std::invalid_argument("interval level must be in (0,1)");
  const double q = chi_square_quantile(level, 1.0);

  if (!stats.any_positive()) {
    // ll(p) = N log(1-p), maximized at zero: closed-form upper bound.
    const double n = static_cast<double>(stats.num_individuals);
    return {0.0, -std::expm1(-q / (2.0 * n))};
  }
  if (!stats.any_negative()) {
    const double llmax = 0.0;  // every phi_s(1) = 1
    // Bracket downward from 1 until the deviance exceeds q.
    double outer = 0.5;
    while (deviance_gap(stats, llmax, outer, q) < 0.0 && outer > 1e-300) outer *= 0.5;
    return {solve_deviance(stats, llmax, q, std::min(1.0 - kEps, 0.999999), outer), 1.0};
  }

  const double mle = mle_from_stats(stats);
  const double llmax = pooled_log_likelihood(stats, mle);

  double low_outer = mle;
  while (low_outer > 1e-300 && deviance_gap(stats, llmax, low_outer, q) < 0.0) low_outer *= 0.5;
  const double low = solve_deviance(stats, llmax, q, mle, low_outer);

  double high_outer = mle;
  double gap1m = 1.0 - mle;
  while (gap1m > 1e-300 && deviance_gap(stats, llmax, 1.0 - gap1m, q) < 0.0) gap1m *= 0.5;
  high_outer = 1.0 - gap1m;
  const double high = solve_deviance(stats, llmax, q, mle, high_outer);

  return {std::min(low, mle), std::max(high, mle)};
}

}  // namespace

double prevalence_mle(const PoolDataset& data) { return mle_from_stats(PooledSuffStats::from(data)); }

std::pair<double, double> wilks_interval(const PoolDataset& data, double level) {
  return wilks_from_stats(PooledSuffStats::from(data), level);
}

PrevalenceEstimate estimate_prevalence_freq(const PoolDataset& data, double level) {
  const PooledSuffStats stats = PooledSuffStats::from(data);
  PrevalenceEstimate est;
  est.point = mle_from_stats(stats);
  const auto [low, high] = wilks_from_stats(stats, level);
  est.interval_low = low;
  est.interval_high = high;
  est.level = level;
  est.method = EstimateMethod::mle_lr;
  est.num_pools = stats.num_pools;
  est.num_individuals = stats.num_individuals;
  return est;
}

std::vector<PrevalenceEstimate> estimate_stratified(const PoolDataset& data,
                                                    const std::vector<std::string>& strata, double level) {
  std::vector<PrevalenceEstimate> out;
  for (const Stratum& cell : stratify(data, strata)) {
    PrevalenceEstimate est = estimate_prevalence_freq(cell.data, level);
    est.stratum = cell.key;
    out.push_back(std::move(est));
  }
  return out;
}

}  // namespace pooltest
