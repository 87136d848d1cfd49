#include <algorithm>
#include <cmath>

#include "pooltest/mcmc.hpp"
#include "pooltest/parallel.hpp"
#include "pooltest/prevalence_bayes.hpp"
#include "pooltest/prevalence_freq.hpp"
#include "pooltest/regression.hpp"
#include "pooltest/rng.hpp"
#include "pooltest/simulator.hpp"

namespace pooltest {

namespace {

struct CellResult {
  bool covered = false;
  double width = 0.0;
  bool warned = false;
};

using CellKey = std::pair<std::string, double>;  // (region, year)

// Iteration counts grow with the parameter count so every model family is
// sampled long enough for stable interval endpoints.
McmcConfig scaled_cfg(const McmcConfig& base, int dim) {
  McmcConfig cfg = base;
  cfg.warmup_iters = std::max(base.warmup_iters, 12 * dim);
  cfg.sampling_iters = std::max(base.sampling_iters, 60 * dim);
  cfg.thin = std::max<int>(base.thin, static_cast<int>(cfg.sampling_iters / 2000));
  if (cfg.thin < 1) cfg.thin = 1;
  // Random-walk proposals mix best near 0.234 acceptance once the
  // parameter count is large.
  if (dim > 20 && base.target_accept == McmcConfig{}.target_accept) cfg.target_accept = 0.234;
  return cfg;
}

std::map<CellKey, CellResult> run_stratified(const std::vector<PrevalenceEstimate>& estimates,
                                             const GroundTruth& truth) {
  std::map<CellKey, CellResult> out;
  for (const PrevalenceEstimate& est : estimates) {
    CellKey key;
    for (const auto& [col, value] : est.stratum) {
      if (col == "Region") key.first = format_value(value);
      if (col == "Year") key.second = value_as_number(value);
    }
    const auto it = truth.region_year.find(key);
    if (it == truth.region_year.end()) continue;
    CellResult cell;
    cell.covered = est.interval_low <= it->second && it->second <= est.interval_high;
    cell.width = est.interval_high - est.interval_low;
    cell.warned = est.convergence.has_value() && est.convergence->flagged;
    out[key] = cell;
  }
  return out;
}

std::map<CellKey, CellResult> run_regression(const FittedModel& model, const GroundTruth& truth,
                                             double level) {
  const std::vector<PrevalenceTable> tables = get_prevalence(model, std::nullopt, level);
  std::map<CellKey, CellResult> out;
  const PrevalenceTable& pop = tables.front();
  int region_col = -1, year_col = -1;
  for (std::size_t c = 0; c < pop.columns.size(); ++c) {
    if (pop.columns[c] == "Region") region_col = static_cast<int>(c);
    if (pop.columns[c] == "Year") year_col = static_cast<int>(c);
  }
  if (region_col < 0 || year_col < 0) throw std::logic_error("coverage model must include Region and Year");
  for (const PrevalenceTable::Row& row : pop.rows) {
    const CellKey key{format_value(row.values[region_col]), value_as_number(row.values[year_col])};
    const auto it = truth.region_year.find(key);
    if (it == truth.region_year.end()) continue;
    CellResult cell;
    cell.covered = row.low <= it->second && it->second <= row.high;
    cell.width = row.high - row.low;
    cell.warned = !model.meta.warnings.empty();
    out[key] = cell;
  }
  return out;
}

}  // namespace

double CoverageReport::MethodResult::median_width() const {
  if (widths.empty()) return 0.0;
  std::vector<double> sorted = widths;
  std::sort(sorted.begin(), sorted.end());
  return quantile_sorted(sorted, 0.5);
}

const CoverageReport::MethodResult& CoverageReport::result_for(CoverageMethod m) const {
  for (const MethodResult& r : methods) {
    if (r.method == m) return r;
  }
  throw std::invalid_argument("method was not part of the experiment");
}

CoverageMethod coverage_method_from_string(const std::string& name) {
  if (name == "prev_freq") return CoverageMethod::prev_freq;
  if (name == "prev_bayes") return CoverageMethod::prev_bayes;
  if (name == "hier_prev") return CoverageMethod::hier_prev;
  if (name == "reg_bayes") return CoverageMethod::reg_bayes;
  if (name == "reg_bayes_hier") return CoverageMethod::reg_bayes_hier;
  throw std::invalid_argument("unknown coverage method '" + name + "'");
}

std::string coverage_method_to_string(CoverageMethod m) {
  switch (m) {
    case CoverageMethod::prev_freq: return "prev_freq";
    case CoverageMethod::prev_bayes: return "prev_bayes";
    case CoverageMethod::hier_prev: return "hier_prev";
    case CoverageMethod::reg_bayes: return "reg_bayes";
    case CoverageMethod::reg_bayes_hier: return "reg_bayes_hier";
  }
  return "unknown";
}

CoverageReport coverage_experiment(const SimConfig& cfg, int replicates,
                                   const std::vector<CoverageMethod>& methods, double level,
                                   const McmcConfig& mcmc_base) {
  if (replicates < 10) throw std::invalid_argument("coverage experiments need at least 10 replicates");
  if (methods.empty()) throw std::invalid_argument("no methods selected");
  cfg.validate();

  using PerMethod = std::map<CellKey, CellResult>;
  std::vector<std::vector<PerMethod>> results(replicates);

  parallel_for(static_cast<std::size_t>(replicates), [&](std::size_t rep) {
    SimConfig rep_cfg = cfg;
    rep_cfg.seed = derive_seed(cfg.seed, {0xC0FULL, static_cast<std::uint64_t>(rep)});
    const SimResult sim = simulate(rep_cfg);
    const std::vector<std::string> strata = {"Region", "Year"};

    std::vector<PerMethod> per_method;
    per_method.reserve(methods.size());
    for (const CoverageMethod method : methods) {
      switch (method) {
        case CoverageMethod::prev_freq: {
          per_method.push_back(run_stratified(estimate_stratified(sim.data, strata, level), sim.truth));
          break;
        }
        case CoverageMethod::prev_bayes: {
          std::vector<PrevalenceEstimate> ests;
          for (const Stratum& cell : stratify(sim.data, strata)) {
            PrevalenceEstimate est = posterior_1d(cell.data, BetaPrior{}, level);
            est.stratum = cell.key;
            ests.push_back(std::move(est));
          }
          per_method.push_back(run_stratified(ests, sim.truth));
          break;
        }
        case CoverageMethod::hier_prev: {
          const int dim = 1 + 2 + cfg.villages_per_region * (1 + cfg.sites_per_village);
          McmcConfig mc = scaled_cfg(mcmc_base, dim);
          mc.seed = derive_seed(rep_cfg.seed, {0x81ULL});
          per_method.push_back(run_stratified(
              hier_prevalence(sim.data, HierSpec{{"Village", "Site"}, {}}, BetaPrior{}, strata, level, mc),
              sim.truth));
          break;
        }
        case CoverageMethod::reg_bayes: {
          ModelFormula f = parse_formula("Result ~ Region + Year");
          McmcConfig mc = scaled_cfg(mcmc_base, 8);
          mc.seed = derive_seed(rep_cfg.seed, {0x82ULL});
          per_method.push_back(run_regression(fit_bayes(f, sim.data, {}, mc), sim.truth, level));
          break;
        }
        case CoverageMethod::reg_bayes_hier: {
          ModelFormula f = parse_formula("Result ~ Region + Year + (1|Village/Site)");
          const int n_regions = static_cast<int>(cfg.region_prevalences.size());
          const int dim = n_regions + 1 + 2 +
                          n_regions * cfg.villages_per_region * (1 + cfg.sites_per_village);
          McmcConfig mc = scaled_cfg(mcmc_base, dim);
          mc.seed = derive_seed(rep_cfg.seed, {0x83ULL});
          per_method.push_back(run_regression(fit_bayes(f, sim.data, {}, mc), sim.truth, level));
          break;
        }
      }
    }
    results[rep] = std::move(per_method);
  });

  CoverageReport report;
  report.level = level;
  report.replicates = replicates;
  for (std::size_t m = 0; m < methods.size(); ++m) {
    CoverageReport::MethodResult agg;
    agg.method = methods[m];
    for (int rep = 0; rep < replicates; ++rep) {
      for (const auto& [key, cell] : results[rep][m]) {
        agg.cells += 1;
        if (cell.covered) agg.covered += 1;
        if (cell.warned) agg.warning_count += 1;
        agg.widths.push_back(cell.width);
      }
    }
    report.methods.push_back(std::move(agg));
  }
  return report;
}

}  // namespace pooltest
