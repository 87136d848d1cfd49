#include "pooltest/artifact.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "pooltest/csv.hpp"
#include "pooltest/json_writer.hpp"
#include "pooltest/version.hpp"

namespace pooltest {

namespace {

std::string sidecar_path(const std::string& json_path, const std::string& suffix) {
  std::string base = json_path;
  if (base.size() > 5 && base.substr(base.size() - 5) == ".json") base.resize(base.size() - 5);
  return base + suffix;
}

void write_value(JsonWriter& w, const Value& v) {
  if (value_is_numeric(v)) w.value(std::get<double>(v));
  else w.value(std::get<std::string>(v));
}

Value read_value(const nlohmann::json& j) {
  if (j.is_number()) return Value(j.get<double>());
  return Value(j.get<std::string>());
}

std::string draws_csv(const PosteriorDraws& draws) {
  std::ostringstream out;
  std::vector<std::string> fields;
  fields.push_back("Chain");
  for (const std::string& name : draws.parameter_names) fields.push_back(name);
  write_csv_row(out, fields);
  char buf[40];
  for (int c = 0; c < draws.num_chains; ++c) {
    for (int i = 0; i < draws.iters_per_chain; ++i) {
      fields.clear();
      fields.push_back(std::to_string(c + 1));
      for (int j = 0; j < draws.dim; ++j) {
        std::snprintf(buf, sizeof(buf), "%.17g", draws.value(c, i, j));
        fields.push_back(buf);
      }
      write_csv_row(out, fields);
    }
  }
  return out.str();
}

std::string matrix_csv(const Eigen::MatrixXd& m) {
  std::ostringstream out;
  std::vector<std::string> fields;
  fields.reserve(m.cols());
  for (Eigen::Index j = 0; j < m.cols(); ++j) fields.push_back("u" + std::to_string(j));
  write_csv_row(out, fields);
  char buf[40];
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    fields.clear();
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", m(i, j));
      fields.push_back(buf);
    }
    write_csv_row(out, fields);
  }
  return out.str();
}

}  // namespace

void save_model(const FittedModel& model, const std::string& json_path) {
  const bool bayes = model.framework == Framework::bayesian;
  JsonWriter w;
  w.begin_object();
  w.key("schema_version").value(1);
  w.key("software").begin_object();
  w.key("name").value(kProjectName);
  w.key("version").value(kProjectVersion);
  w.end_object();
  w.key("framework").value(bayes ? "bayesian" : "frequentist");
  w.key("formula").value(model.formula.text);
  w.key("link").value(link_to_string(model.formula.link));
  w.key("seed").value(static_cast<long long>(model.seed));

  w.key("fixed").begin_object();
  w.key("columns").begin_array();
  for (const auto& col : model.fixed.columns) {
    w.begin_object();
    w.key("name").value(col.name);
    w.key("term").value(col.term);
    w.key("level").value(col.level);
    w.end_object();
  }
  w.end_array();
  w.key("terms").begin_array();
  for (const auto& t : model.fixed.terms) w.value(t);
  w.end_array();
  w.key("categorical_levels").begin_object();
  for (const auto& [term, levels] : model.fixed.categorical_levels) {
    w.key(term).begin_array();
    for (const auto& level : levels) w.value(level);
    w.end_array();
  }
  w.end_object();
  w.end_object();

  w.key("groups").begin_array();
  for (const GroupTerm& term : model.groups) {
    w.begin_object();
    w.key("label").value(term.label);
    w.key("slope").value(term.spec.slope);
    w.key("display").value(term.spec.display);
    w.key("group_columns").begin_array();
    for (const auto& c : term.spec.group_columns) w.value(c);
    w.end_array();
    w.key("inner_dim").value(term.inner_dim);
    w.key("offset").value(term.offset);
    w.key("level_keys").begin_array();
    for (const auto& k : term.level_keys) w.value(k);
    w.end_array();
    w.end_object();
  }
  w.end_array();

  w.key("observed").begin_array();
  for (const ObservedRow& row : model.observed) {
    w.begin_object();
    w.key("values").begin_object();
    for (const auto& [col, v] : row.values) {
      w.key(col);
      write_value(w, v);
    }
    w.end_object();
    w.key("term_levels").begin_array();
    for (int l : row.term_levels) w.value(l);
    w.end_array();
    w.end_object();
  }
  w.end_array();

  w.key("coefficients").begin_object();
  w.key("names").begin_array();
  for (const auto& col : model.fixed.columns) w.value(col.name);
  w.end_array();
  w.key("estimates").begin_array();
  for (Eigen::Index j = 0; j < model.beta.size(); ++j) w.value(model.beta[j]);
  w.end_array();
  w.end_object();

  w.key("random_effects").begin_array();
  for (const RandomEffectSummary& s : model.random_effects) {
    w.begin_object();
    w.key("label").value(s.label);
    w.key("slope").value(s.slope);
    w.key("sd").begin_array();
    for (double v : s.sd) w.value(v);
    w.end_array();
    w.key("corr").value(s.corr);
    w.end_object();
  }
  w.end_array();

  if (!bayes) {
    w.key("covariance").begin_array();
    for (Eigen::Index i = 0; i < model.beta_cov.rows(); ++i) {
      w.begin_array();
      for (Eigen::Index j = 0; j < model.beta_cov.cols(); ++j) w.value(model.beta_cov(i, j));
      w.end_array();
    }
    w.end_array();
    w.key("theta").begin_array();
    for (double t : model.theta) w.value(t);
    w.end_array();
    w.key("u_modes").begin_array();
    for (Eigen::Index j = 0; j < model.u_modes.size(); ++j) w.value(model.u_modes[j]);
    w.end_array();
    if (model.u_cov.size() > 0) {
      const std::string ucov = sidecar_path(json_path, "_ucov.csv");
      atomic_write_file(ucov, matrix_csv(model.u_cov));
      w.key("u_cov_file").value(std::filesystem::path(ucov).filename().string());
    }
  } else {
    const std::string draws_path = sidecar_path(json_path, "_draws.csv");
    atomic_write_file(draws_path, draws_csv(model.draws));
    w.key("draws").begin_object();
    w.key("file").value(std::filesystem::path(draws_path).filename().string());
    w.key("chains").value(model.draws.num_chains);
    w.key("iters_per_chain").value(model.draws.iters_per_chain);
    w.key("dim").value(model.draws.dim);
    w.key("split_rhat").begin_array();
    for (double r : model.draws.split_rhat) w.value(r);
    w.end_array();
    w.key("bulk_ess").begin_array();
    for (double e : model.draws.bulk_ess) w.value(e);
    w.end_array();
    w.key("acceptance_rate").begin_array();
    for (double a : model.draws.acceptance_rate) w.value(a);
    w.end_array();
    w.end_object();
    w.key("var_param_offset").begin_array();
    for (int o : model.var_param_offset) w.value(o);
    w.end_array();
  }

  w.key("fit").begin_object();
  w.key("log_likelihood").value(model.meta.log_likelihood);
  w.key("iterations").value(model.meta.iterations);
  w.key("max_rhat").value(model.meta.max_rhat);
  w.key("min_ess").value(model.meta.min_ess);
  w.key("warnings").begin_array();
  for (const auto& warning : model.meta.warnings) w.value(warning);
  w.end_array();
  w.end_object();

  w.end_object();
  atomic_write_file(json_path, w.str() + "\n");
}

FittedModel load_model(const std::string& json_path) {
  std::ifstream in(json_path);
  if (!in) throw DataError("cannot open model artifact '" + json_path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("invalid model artifact: " + std::string(e.what()));
  }
  if (!j.contains("schema_version") || j["schema_version"].get<int>() != 1)
    throw DataError("unsupported model artifact schema");

  FittedModel model;
  model.framework = j["framework"] == "bayesian" ? Framework::bayesian : Framework::frequentist;
  model.formula = parse_formula(j["formula"].get<std::string>());
  model.formula.link = link_from_string(j["link"].get<std::string>());
  model.seed = j["seed"].get<std::uint64_t>();

  for (const auto& col : j["fixed"]["columns"]) {
    model.fixed.columns.push_back({col["name"].get<std::string>(), col["term"].get<std::string>(),
                                   col["level"].get<std::string>()});
  }
  for (const auto& t : j["fixed"]["terms"]) model.fixed.terms.push_back(t.get<std::string>());
  for (const auto& [term, levels] : j["fixed"]["categorical_levels"].items()) {
    std::vector<std::string> ls;
    for (const auto& l : levels) ls.push_back(l.get<std::string>());
    model.fixed.categorical_levels[term] = std::move(ls);
  }

  for (const auto& g : j["groups"]) {
    GroupTerm term;
    term.label = g["label"].get<std::string>();
    term.spec.slope = g["slope"].get<std::string>();
    term.spec.display = g["display"].get<std::string>();
    for (const auto& c : g["group_columns"]) term.spec.group_columns.push_back(c.get<std::string>());
    term.inner_dim = g["inner_dim"].get<int>();
    term.offset = g["offset"].get<int>();
    for (const auto& k : g["level_keys"]) term.level_keys.push_back(k.get<std::string>());
    model.groups.push_back(std::move(term));
  }

  for (const auto& row_json : j["observed"]) {
    ObservedRow row;
    for (const auto& [col, v] : row_json["values"].items()) row.values.emplace(col, read_value(v));
    for (const auto& l : row_json["term_levels"]) row.term_levels.push_back(l.get<int>());
    model.observed.push_back(std::move(row));
  }

  const auto& estimates = j["coefficients"]["estimates"];
  model.beta.resize(estimates.size());
  for (std::size_t k = 0; k < estimates.size(); ++k) model.beta[k] = estimates[k].get<double>();

  for (const auto& s : j["random_effects"]) {
    RandomEffectSummary summary;
    summary.label = s["label"].get<std::string>();
    summary.slope = s["slope"].get<std::string>();
    for (const auto& v : s["sd"]) summary.sd.push_back(v.get<double>());
    summary.corr = s["corr"].get<double>();
    model.random_effects.push_back(std::move(summary));
  }

  const std::filesystem::path dir = std::filesystem::path(json_path).parent_path();
  if (model.framework == Framework::frequentist) {
    const auto& cov = j["covariance"];
    model.beta_cov.resize(cov.size(), cov.size());
    for (std::size_t a = 0; a < cov.size(); ++a)
      for (std::size_t b = 0; b < cov[a].size(); ++b) model.beta_cov(a, b) = cov[a][b].get<double>();
    for (const auto& t : j["theta"]) model.theta.push_back(t.get<double>());
    const auto& modes = j["u_modes"];
    model.u_modes.resize(modes.size());
    for (std::size_t k = 0; k < modes.size(); ++k) model.u_modes[k] = modes[k].get<double>();
    if (j.contains("u_cov_file")) {
      const CsvTable csv = read_csv_file((dir / j["u_cov_file"].get<std::string>()).string());
      const std::size_t q = csv.rows.size();
      model.u_cov.resize(q, q);
      for (std::size_t a = 0; a < q; ++a)
        for (std::size_t b = 0; b < q; ++b) model.u_cov(a, b) = std::stod(csv.rows[a][b]);
    }
  } else {
    const auto& dj = j["draws"];
    PosteriorDraws& draws = model.draws;
    draws.num_chains = dj["chains"].get<int>();
    draws.iters_per_chain = dj["iters_per_chain"].get<int>();
    draws.dim = dj["dim"].get<int>();
    for (const auto& r : dj["split_rhat"]) draws.split_rhat.push_back(r.get<double>());
    for (const auto& e : dj["bulk_ess"]) draws.bulk_ess.push_back(e.get<double>());
    for (const auto& a : dj["acceptance_rate"]) draws.acceptance_rate.push_back(a.get<double>());
    const std::string draws_file = (dir / dj["file"].get<std::string>()).string();
    const CsvTable csv = read_csv_file(draws_file);
    draws.parameter_names.assign(csv.header.begin() + 1, csv.header.end());
    draws.draws.reserve(csv.rows.size() * draws.dim);
    for (const auto& row : csv.rows) {
      for (std::size_t c = 1; c < row.size(); ++c) draws.draws.push_back(std::stod(row[c]));
    }
    if (static_cast<int>(csv.rows.size()) != draws.num_chains * draws.iters_per_chain)
      throw DataError("draws sidecar does not match the artifact dimensions");
    for (const auto& o : j["var_param_offset"]) model.var_param_offset.push_back(o.get<int>());
  }

  model.meta.log_likelihood = j["fit"]["log_likelihood"].get<double>();
  model.meta.iterations = j["fit"]["iterations"].get<int>();
  model.meta.max_rhat = j["fit"]["max_rhat"].get<double>();
  model.meta.min_ess = j["fit"]["min_ess"].get<double>();
  for (const auto& warning : j["fit"]["warnings"]) model.meta.warnings.push_back(warning.get<std::string>());
  return model;
}

}  // namespace pooltest
