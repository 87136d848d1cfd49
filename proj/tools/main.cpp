#include <CLI11.hpp>
#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>

#include "pooltest/artifact.hpp"
#include "pooltest/io.hpp"
#include "pooltest/json_writer.hpp"
#include "pooltest/prevalence_bayes.hpp"
#include "pooltest/prevalence_freq.hpp"
#include "pooltest/regression.hpp"
#include "pooltest/simulator.hpp"
#include "pooltest/version.hpp"

namespace {

using namespace pooltest;

std::string num9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

// A rectangular result table that renders as CSV (9 significant digits)
// or as a JSON array of objects (17 significant digits).
struct ResultTable {
  std::vector<std::string> columns;
  struct Cell {
    enum Kind { text, number, empty } kind = empty;
    std::string s;
    double x = 0.0;
  };
  std::vector<std::vector<Cell>> rows;

  static Cell cell(const std::string& s) { return {Cell::text, s, 0.0}; }
  static Cell cell(double x) { return {Cell::number, "", x}; }
  static Cell cell(const Value& v) {
    if (value_is_numeric(v)) return cell(std::get<double>(v));
    return cell(std::get<std::string>(v));
  }
  static Cell blank() { return {}; }

  std::string to_csv() const {
    std::ostringstream out;
    write_csv_row(out, columns);
    std::vector<std::string> fields;
    for (const auto& row : rows) {
      fields.clear();
      for (const Cell& c : row)
        fields.push_back(c.kind == Cell::number ? num9(c.x) : c.s);
      write_csv_row(out, fields);
    }
    return out.str();
  }

  std::string to_json() const {
    JsonWriter w;
    w.begin_array();
    for (const auto& row : rows) {
      w.begin_object();
      for (std::size_t i = 0; i < columns.size(); ++i) {
        w.key(columns[i]);
        switch (row[i].kind) {
          case Cell::number: w.value(row[i].x); break;
          case Cell::text: w.value(row[i].s); break;
          case Cell::empty: w.value_null(); break;
        }
      }
      w.end_object();
    }
    w.end_array();
    return w.str() + "\n";
  }

  std::string render(const std::string& format) const { return format == "json" ? to_json() : to_csv(); }
};

void emit(const std::string& contents, const std::string& output_path) {
  if (output_path.empty() || output_path == "-") {
    std::cout << contents;
    return;
  }
  atomic_write_file(output_path, contents);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::stringstream ss(text);
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<double> split_doubles(const std::string& text) {
  std::vector<double> out;
  for (const std::string& item : split_list(text)) out.push_back(std::stod(item));
  return out;
}

struct CommonDataFlags {
  std::string input;
  std::string result_col = "Result";
  std::string size_col = "NumInPool";

  void attach(CLI::App* cmd) {
    cmd->add_option("-i,--input", input, "Input CSV of pool results")->required();
    cmd->add_option("--result-col", result_col, "Name of the test-result column");
    cmd->add_option("--size-col", size_col, "Name of the pool-size column");
  }

  PoolDataset load(const std::vector<std::string>& hierarchy = {}) const {
    IngestOptions opts;
    opts.result_column = result_col;
    opts.size_column = size_col;
    opts.hierarchy_columns = hierarchy;
    return ingest_csv_file(input, opts);
  }
};

struct McmcFlags {
  McmcConfig cfg;
  void attach(CLI::App* cmd, bool with_seed = true) {
    cmd->add_option("--chains", cfg.chains, "Number of MCMC chains");
    cmd->add_option("--warmup", cfg.warmup_iters, "Warmup iterations per chain");
    cmd->add_option("--samples", cfg.sampling_iters, "Sampling iterations per chain");
    cmd->add_option("--thin", cfg.thin, "Keep every thin-th draw");
    cmd->add_option("--target-accept", cfg.target_accept, "Adaptation target acceptance rate");
    if (with_seed) cmd->add_option("--seed", cfg.seed, "Random seed");
  }
};

void append_stratum_columns(ResultTable& table, const std::vector<std::string>& strata) {
  for (const std::string& s : strata) table.columns.push_back(s);
}

// ---- prev ----------------------------------------------------------------

int run_prev(const CommonDataFlags& data_flags, const std::vector<std::string>& strata, double alpha,
             double beta, std::optional<double> prior_absent, double level, const std::string& format,
             const std::string& output) {
  const PoolDataset data = data_flags.load();
  ResultTable table;
  append_stratum_columns(table, strata);
  for (const std::string& c :
       {std::string("Method"), std::string("NumPools"), std::string("NumIndividuals"),
        std::string("Estimate"), std::string("IntervalLow"), std::string("IntervalHigh"),
        std::string("Level"), std::string("ProbAbsent")})
    table.columns.push_back(c);

  const BetaPrior prior{alpha, beta};
  for (const Stratum& cell : stratify(data, strata)) {
    PrevalenceEstimate freq = estimate_prevalence_freq(cell.data, level);
    PrevalenceEstimate bayes = prior_absent.has_value()
                                   ? posterior_with_absence(cell.data, AbsencePrior{*prior_absent, prior}, level)
                                   : posterior_1d(cell.data, prior, level);
    for (const PrevalenceEstimate* est : {&freq, &bayes}) {
      std::vector<ResultTable::Cell> row;
      for (const auto& [col, v] : cell.key) row.push_back(ResultTable::cell(v));
      row.push_back(ResultTable::cell(method_to_string(est->method)));
      row.push_back(ResultTable::cell(static_cast<double>(est->num_pools)));
      row.push_back(ResultTable::cell(static_cast<double>(est->num_individuals)));
      row.push_back(ResultTable::cell(est->point));
      row.push_back(ResultTable::cell(est->interval_low));
      row.push_back(ResultTable::cell(est->interval_high));
      row.push_back(ResultTable::cell(est->level));
      if (est->prob_absent.has_value()) row.push_back(ResultTable::cell(*est->prob_absent));
      else row.push_back(ResultTable::blank());
      table.rows.push_back(std::move(row));
    }
  }
  emit(table.render(format), output);
  return 0;
}

// ---- hierprev ------------------------------------------------------------

int run_hierprev(const CommonDataFlags& data_flags, const std::vector<std::string>& hierarchy,
                 const std::vector<std::string>& strata, double alpha, double beta,
                 const std::vector<double>& sd_scales, double level, const McmcConfig& mcmc,
                 const std::string& format, const std::string& output) {
  const PoolDataset data = data_flags.load(hierarchy);
  HierSpec spec{hierarchy, sd_scales};
  const std::vector<PrevalenceEstimate> estimates =
      hier_prevalence(data, spec, BetaPrior{alpha, beta}, strata, level, mcmc);

  ResultTable table;
  append_stratum_columns(table, strata);
  for (const std::string& c :
       {std::string("NumPools"), std::string("NumIndividuals"), std::string("Estimate"),
        std::string("CrILow"), std::string("CrIHigh"), std::string("Level"), std::string("MaxRhat"),
        std::string("MinEss"), std::string("Warning")})
    table.columns.push_back(c);
  for (const PrevalenceEstimate& est : estimates) {
    std::vector<ResultTable::Cell> row;
    for (const auto& [col, v] : est.stratum) row.push_back(ResultTable::cell(v));
    row.push_back(ResultTable::cell(static_cast<double>(est.num_pools)));
    row.push_back(ResultTable::cell(static_cast<double>(est.num_individuals)));
    row.push_back(ResultTable::cell(est.point));
    row.push_back(ResultTable::cell(est.interval_low));
    row.push_back(ResultTable::cell(est.interval_high));
    row.push_back(ResultTable::cell(est.level));
    row.push_back(ResultTable::cell(est.convergence->max_rhat));
    row.push_back(ResultTable::cell(est.convergence->min_ess));
    row.push_back(est.convergence->flagged ? ResultTable::cell(est.convergence->message)
                                           : ResultTable::blank());
    table.rows.push_back(std::move(row));
  }
  emit(table.render(format), output);
  return 0;
}

// ---- reg / regbayes --------------------------------------------------------

ResultTable coefficient_table_freq(const FittedModel& model) {
  ResultTable table;
  table.columns = {"Term", "Estimate", "StdError"};
  for (int j = 0; j < model.num_fixed(); ++j) {
    table.rows.push_back({ResultTable::cell(model.fixed.columns[j].name),
                          ResultTable::cell(model.beta[j]),
                          ResultTable::cell(std::sqrt(model.beta_cov(j, j)))});
  }
  for (const RandomEffectSummary& s : model.random_effects) {
    table.rows.push_back({ResultTable::cell("sd(" + s.label + ")"), ResultTable::cell(s.sd[0]),
                          ResultTable::blank()});
    if (s.sd.size() > 1) {
      table.rows.push_back({ResultTable::cell("sd(" + s.label + ":" + s.slope + ")"),
                            ResultTable::cell(s.sd[1]), ResultTable::blank()});
      table.rows.push_back({ResultTable::cell("corr(" + s.label + ")"), ResultTable::cell(s.corr),
                            ResultTable::blank()});
    }
  }
  return table;
}

ResultTable coefficient_table_bayes(const FittedModel& model, double level) {
  ResultTable table;
  table.columns = {"Term", "Estimate", "StdError", "CrILow", "CrIHigh", "Rhat", "Ess"};
  const double tail = (1.0 - level) / 2.0;
  for (int j = 0; j < model.num_fixed(); ++j) {
    table.rows.push_back({ResultTable::cell(model.fixed.columns[j].name),
                          ResultTable::cell(model.draws.mean(j)), ResultTable::cell(model.draws.sd(j)),
                          ResultTable::cell(model.draws.quantile(j, tail)),
                          ResultTable::cell(model.draws.quantile(j, 1.0 - tail)),
                          ResultTable::cell(model.draws.split_rhat[j]),
                          ResultTable::cell(model.draws.bulk_ess[j])});
  }
  for (std::size_t t = 0; t < model.random_effects.size(); ++t) {
    const RandomEffectSummary& s = model.random_effects[t];
    table.rows.push_back({ResultTable::cell("sd(" + s.label + ")"), ResultTable::cell(s.sd[0]),
                          ResultTable::blank(), ResultTable::blank(), ResultTable::blank(),
                          ResultTable::blank(), ResultTable::blank()});
    if (s.sd.size() > 1) {
      table.rows.push_back({ResultTable::cell("sd(" + s.label + ":" + s.slope + ")"),
                            ResultTable::cell(s.sd[1]), ResultTable::blank(), ResultTable::blank(),
                            ResultTable::blank(), ResultTable::blank(), ResultTable::blank()});
      table.rows.push_back({ResultTable::cell("corr(" + s.label + ")"), ResultTable::cell(s.corr),
                            ResultTable::blank(), ResultTable::blank(), ResultTable::blank(),
                            ResultTable::blank(), ResultTable::blank()});
    }
  }
  return table;
}

int run_reg(const CommonDataFlags& data_flags, const std::string& formula_text, const std::string& link,
            bool bayesian, const McmcConfig& mcmc, double level, const std::string& save_model_path,
            const std::string& format, const std::string& output) {
  const PoolDataset data = data_flags.load();
  ModelFormula formula = parse_formula(formula_text);
  formula.link = link_from_string(link);

  FittedModel model;
  if (bayesian) {
    model = fit_bayes(formula, data, RegressionPriors{}, mcmc);
  } else {
    model = formula.random_terms.empty() ? fit_glm(formula, data) : fit_glmm_laplace(formula, data);
  }
  for (const std::string& w : model.meta.warnings) std::cerr << "warning: " << w << "\n";

  const ResultTable table =
      bayesian ? coefficient_table_bayes(model, level) : coefficient_table_freq(model);
  emit(table.render(format), output);
  if (!save_model_path.empty()) save_model(model, save_model_path);
  return 0;
}

// ---- predict ---------------------------------------------------------------

ResultTable prevalence_table_to_result(const PrevalenceTable& table) {
  ResultTable out;
  out.columns = table.columns;
  out.columns.push_back("Estimate");
  out.columns.push_back(table.bayesian ? "CrILow" : "CILow");
  out.columns.push_back(table.bayesian ? "CrIHigh" : "CIHigh");
  for (const PrevalenceTable::Row& row : table.rows) {
    std::vector<ResultTable::Cell> cells;
    for (const Value& v : row.values) cells.push_back(ResultTable::cell(v));
    cells.push_back(ResultTable::cell(row.estimate));
    cells.push_back(ResultTable::cell(row.low));
    cells.push_back(ResultTable::cell(row.high));
    out.rows.push_back(std::move(cells));
  }
  return out;
}

int run_predict(const std::string& model_path, const std::string& newdata_path, double level,
                const std::string& format, const std::string& out_prefix) {
  const FittedModel model = load_model(model_path);
  std::optional<std::vector<std::map<std::string, Value>>> newdata;
  if (!newdata_path.empty()) newdata = covariate_table(read_csv_file(newdata_path));
  const std::vector<PrevalenceTable> tables = get_prevalence(model, newdata, level);
  const std::string ext = format == "json" ? ".json" : ".csv";
  for (const PrevalenceTable& table : tables) {
    const ResultTable rendered = prevalence_table_to_result(table);
    emit(rendered.render(format), out_prefix + "." + table.name + ext);
  }
  return 0;
}

// ---- simulate / coverage -----------------------------------------------------

struct SimFlags {
  SimConfig cfg;
  std::string regions_text, years_text;

  void attach(CLI::App* cmd) {
    cmd->add_option("--region-prevalences", regions_text, "Comma-separated baseline prevalences");
    cmd->add_option("--villages", cfg.villages_per_region, "Villages per region");
    cmd->add_option("--sites", cfg.sites_per_village, "Trap sites per village");
    cmd->add_option("--years", years_text, "Comma-separated sampling years");
    cmd->add_option("--year-odds-ratio", cfg.year_odds_ratio, "Odds ratio applied per year");
    cmd->add_option("--catch-mean", cfg.catch_mean, "Mean catch per site and year");
    cmd->add_option("--catch-dispersion", cfg.catch_dispersion, "Negative binomial size parameter");
    cmd->add_option("--pool-max", cfg.pool_max, "Maximum pool size");
    cmd->add_option("--sd-village", cfg.sd_village_intercept, "Village intercept SD (log-odds)");
    cmd->add_option("--sd-site", cfg.sd_site_intercept, "Site intercept SD (log-odds)");
    cmd->add_option("--sd-slope", cfg.sd_village_slope, "Village slope SD (log-odds per year)");
    cmd->add_option("--seed", cfg.seed, "Random seed");
  }

  SimConfig resolve() const {
    SimConfig out = cfg;
    if (!regions_text.empty()) out.region_prevalences = split_doubles(regions_text);
    if (!years_text.empty()) out.years = split_doubles(years_text);
    return out;
  }
};

std::string truth_to_csv(const GroundTruth& truth) {
  std::ostringstream out;
  write_csv_row(out, {"Scope", "Region", "Village", "Site", "Year", "TruePrevalence", "InterceptEffect",
                      "SlopeEffect"});
  auto region_of = [](const std::string& village) { return village.substr(0, village.find('-')); };
  for (const auto& [key, p] : truth.region_year)
    write_csv_row(out, {"region", key.first, "", "", num9(key.second), num9(p), "", ""});
  for (const auto& [key, p] : truth.village_year)
    write_csv_row(out, {"village", region_of(key.first), key.first, "", num9(key.second), num9(p),
                        num9(truth.village_intercepts.at(key.first)),
                        num9(truth.village_slopes.at(key.first))});
  for (const auto& sy : truth.site_years)
    write_csv_row(out, {"site", sy.region, sy.village, sy.site, num9(sy.year), num9(sy.prevalence),
                        num9(truth.site_intercepts.at(sy.site)), ""});
  return out.str();
}

int run_simulate(const SimFlags& flags, const std::string& data_path, const std::string& truth_path) {
  const SimResult sim = simulate(flags.resolve());
  emit(dataset_to_csv(sim.data), data_path);
  if (!truth_path.empty()) emit(truth_to_csv(sim.truth), truth_path);
  return 0;
}

int run_coverage(const SimFlags& flags, int replicates, const std::string& methods_text, double level,
                 const McmcConfig& mcmc, const std::string& format, const std::string& output) {
  std::vector<CoverageMethod> methods;
  for (const std::string& name : split_list(methods_text)) methods.push_back(coverage_method_from_string(name));
  const CoverageReport report = coverage_experiment(flags.resolve(), replicates, methods, level, mcmc);

  ResultTable table;
  table.columns = {"Method", "Cells", "Covered", "Coverage", "MedianWidth", "Warnings"};
  for (const auto& m : report.methods) {
    table.rows.push_back({ResultTable::cell(coverage_method_to_string(m.method)),
                          ResultTable::cell(static_cast<double>(m.cells)),
                          ResultTable::cell(static_cast<double>(m.covered)),
                          ResultTable::cell(m.coverage()), ResultTable::cell(m.median_width()),
                          ResultTable::cell(static_cast<double>(m.warning_count))});
  }
  emit(table.render(format), output);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prevalence estimation and regression for pooled (group) testing surveys"};
  app.set_version_flag("--version", std::string(kProjectName) + " " + kProjectVersion);
  app.require_subcommand(1);

  std::string format = "csv", output, stratify_text;
  double level = 0.95;

  // prev
  auto* prev = app.add_subcommand("prev", "Frequentist and Bayesian prevalence estimates");
  CommonDataFlags prev_data;
  prev_data.attach(prev);
  double prior_alpha = 0.5, prior_beta = 0.5;
  std::optional<double> prior_absent;
  prev->add_option("--stratify", stratify_text, "Comma-separated stratifying columns");
  prev->add_option("--prior-alpha", prior_alpha, "Beta prior shape alpha");
  prev->add_option("--prior-beta", prior_beta, "Beta prior shape beta");
  prev->add_option("--prior-absent", prior_absent, "Prior probability the marker is absent");
  prev->add_option("--level", level, "Interval coverage level");
  prev->add_option("--format", format, "Output format (csv or json)")->check(CLI::IsMember({"csv", "json"}));
  prev->add_option("-o,--output", output, "Output path (stdout when omitted)");

  // hierprev
  auto* hierprev = app.add_subcommand("hierprev", "Hierarchical Bayesian prevalence estimates");
  CommonDataFlags hier_data;
  hier_data.attach(hierprev);
  std::string hierarchy_text, sd_scales_text;
  McmcFlags hier_mcmc;
  hierprev->add_option("--hierarchy", hierarchy_text, "Comma-separated hierarchy columns, outermost first")
      ->required();
  hierprev->add_option("--stratify", stratify_text, "Comma-separated stratifying columns");
  hierprev->add_option("--prior-alpha", prior_alpha, "Beta prior shape alpha");
  hierprev->add_option("--prior-beta", prior_beta, "Beta prior shape beta");
  hierprev->add_option("--sd-prior-scale", sd_scales_text,
                       "Half-normal scales for the level SDs (one value or one per level)");
  hierprev->add_option("--level", level, "Interval coverage level");
  hier_mcmc.attach(hierprev);
  hierprev->add_option("--format", format, "Output format (csv or json)")
      ->check(CLI::IsMember({"csv", "json"}));
  hierprev->add_option("-o,--output", output, "Output path (stdout when omitted)");

  // reg / regbayes
  auto* reg = app.add_subcommand("reg", "Frequentist pooled-binomial regression");
  auto* regbayes = app.add_subcommand("regbayes", "Bayesian pooled-binomial regression");
  CommonDataFlags reg_data, regbayes_data;
  reg_data.attach(reg);
  regbayes_data.attach(regbayes);
  std::string formula_text, link = "logit", save_model_path;
  McmcFlags reg_mcmc;
  for (CLI::App* cmd : {reg, regbayes}) {
    cmd->add_option("--formula", formula_text, "Model formula, e.g. \"Result ~ Region + Year\"")
        ->required();
    cmd->add_option("--link", link, "Link function")->check(CLI::IsMember({"logit", "cloglog"}));
    cmd->add_option("--level", level, "Interval coverage level");
    cmd->add_option("--save-model", save_model_path, "Write a model artifact JSON here");
    cmd->add_option("--format", format, "Output format (csv or json)")
        ->check(CLI::IsMember({"csv", "json"}));
    cmd->add_option("-o,--output", output, "Output path (stdout when omitted)");
  }
  reg_mcmc.attach(regbayes);

  // predict
  auto* predict = app.add_subcommand("predict", "Prevalence tables from a fitted model artifact");
  std::string model_path, newdata_path, out_prefix = "prevalence";
  predict->add_option("--model", model_path, "Model artifact JSON")->required();
  predict->add_option("--newdata", newdata_path, "Optional covariate CSV for out-of-sample prediction");
  predict->add_option("--level", level, "Interval coverage level");
  predict->add_option("--format", format, "Output format (csv or json)")
      ->check(CLI::IsMember({"csv", "json"}));
  predict->add_option("--out-prefix", out_prefix, "Prefix for the per-level output files");

  // simulate
  auto* simulate_cmd = app.add_subcommand("simulate", "Generate a synthetic pooled survey");
  SimFlags sim_flags;
  sim_flags.attach(simulate_cmd);
  std::string sim_data_path, sim_truth_path;
  simulate_cmd->add_option("--output-data", sim_data_path, "Dataset CSV path")->required();
  simulate_cmd->add_option("--output-truth", sim_truth_path, "Ground-truth CSV path");

  // coverage
  auto* coverage = app.add_subcommand("coverage", "Interval coverage comparison across methods");
  SimFlags cov_flags;
  cov_flags.attach(coverage);
  McmcFlags cov_mcmc;
  int replicates = 50;
  std::string methods_text = "prev_freq,prev_bayes,hier_prev,reg_bayes,reg_bayes_hier";
  coverage->add_option("--replicates", replicates, "Number of simulated surveys");
  coverage->add_option("--methods", methods_text, "Comma-separated methods to compare");
  coverage->add_option("--level", level, "Interval coverage level");
  cov_mcmc.attach(coverage, /*with_seed=*/false);  // the sim seed drives everything
  coverage->add_option("--format", format, "Output format (csv or json)")
      ->check(CLI::IsMember({"csv", "json"}));
  coverage->add_option("-o,--output", output, "Output path (stdout when omitted)");

  try {
    app.parse(argc, argv);
    if (prev->parsed())
      return run_prev(prev_data, split_list(stratify_text), prior_alpha, prior_beta, prior_absent, level,
                      format, output);
    if (hierprev->parsed())
      return run_hierprev(hier_data, split_list(hierarchy_text), split_list(stratify_text), prior_alpha,
                          prior_beta, split_doubles(sd_scales_text), level, hier_mcmc.cfg, format, output);
    if (reg->parsed())
      return run_reg(reg_data, formula_text, link, false, McmcConfig{}, level, save_model_path, format,
                     output);
    if (regbayes->parsed())
      return run_reg(regbayes_data, formula_text, link, true, reg_mcmc.cfg, level, save_model_path, format,
                     output);
    if (predict->parsed()) return run_predict(model_path, newdata_path, level, format, out_prefix);
    if (simulate_cmd->parsed()) return run_simulate(sim_flags, sim_data_path, sim_truth_path);
    if (coverage->parsed()) {
      cov_mcmc.cfg.seed = cov_flags.cfg.seed;
      return run_coverage(cov_flags, replicates, methods_text, level, cov_mcmc.cfg, format, output);
    }
    return 0;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // all usage problems map to exit 1
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::domain_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
