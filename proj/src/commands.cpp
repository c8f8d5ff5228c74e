#include "simplexfit/commands.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <fstream>
#include <iostream>
#include <set>

#include "simplexfit/dist.hpp"
#include "simplexfit/errors.hpp"
#include "simplexfit/links.hpp"
#include "simplexfit/rng.hpp"

namespace simplexfit::commands {

namespace {

using nlohmann::json;

std::string fmt10(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string timestamp_utc() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text(const std::string& out_dir, const std::string& name, const std::string& text) {
  std::filesystem::create_directories(out_dir);
  const std::string path = (std::filesystem::path(out_dir) / name).string();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open output file: " + path);
  f << text;
}

void write_json(const std::string& out_dir, const std::string& name, const json& doc) {
  write_text(out_dir, name, doc.dump(2) + "\n");
}

const json& require_field(const json& doc, const char* key, const char* where) {
  auto it = doc.find(key);
  if (it == doc.end())
    throw ConfigError(std::string("missing required config field '") + key + "' in " + where);
  return *it;
}

double as_number(const json& v, const std::string& what) {
  if (!v.is_number()) throw ConfigError("config field " + what + " must be a number");
  return v.get<double>();
}

std::string as_string(const json& v, const std::string& what) {
  if (!v.is_string()) throw ConfigError("config field " + what + " must be a string");
  return v.get<std::string>();
}

std::vector<std::string> as_string_list(const json& v, const std::string& what) {
  if (!v.is_array()) throw ConfigError("config field " + what + " must be an array of strings");
  std::vector<std::string> out;
  for (const auto& e : v) out.push_back(as_string(e, what + " entry"));
  return out;
}

Eigen::VectorXd as_vector(const json& v, const std::string& what) {
  if (!v.is_array()) throw ConfigError("config field " + what + " must be an array of numbers");
  Eigen::VectorXd out(v.size());
  Eigen::Index i = 0;
  for (const auto& e : v) out(i++) = as_number(e, what + " entry");
  return out;
}

struct SubmodelConfig {
  std::string formula_text;
  std::string link;
  std::vector<std::string> parameters;
};

SubmodelConfig parse_submodel(const json& doc, const char* where) {
  SubmodelConfig out;
  out.formula_text = as_string(require_field(doc, "formula", where), std::string(where) + ".formula");
  out.link = as_string(require_field(doc, "link", where), std::string(where) + ".link");
  out.parameters =
      as_string_list(require_field(doc, "parameters", where), std::string(where) + ".parameters");
  if (out.parameters.empty())
    throw ConfigError(std::string(where) + ".parameters must not be empty");
  return out;
}

json inference_json(const std::vector<estimate::InferenceRow>& rows) {
  json out = json::array();
  for (const auto& r : rows)
    out.push_back({{"name", r.name}, {"estimate", r.estimate}, {"se", r.se}, {"z", r.z},
                   {"p", r.p}});
  return out;
}

json trace_json(const estimate::FittedModel& fit) {
  json out = json::array();
  for (const auto& rec : fit.trace)
    out.push_back({{"iteration", rec.iteration}, {"loglik", rec.loglik},
                   {"max_abs_score", rec.max_abs_score}, {"halvings", rec.halvings},
                   {"phase", rec.phase}});
  return out;
}

int guard(const std::function<int()>& body) {
  try {
    return body();
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const FitError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNoConvergence;
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  }
}

estimate::FittedModel fit_from_config(const RunConfig& cfg) {
  Dataset data = Dataset::load_csv(cfg.data_path, cfg.response);
  return estimate::fit(cfg.spec, data, cfg.fit_options);
}

std::string scheme_name(const diagnostics::Scheme& s) {
  switch (s.kind) {
    case diagnostics::Scheme::Kind::CaseWeights:
      return "case_weights";
    case diagnostics::Scheme::Kind::Response:
      return "response";
    case diagnostics::Scheme::Kind::Covariate:
      return "covariate";
  }
  return "unknown";
}

json curvature_json(const diagnostics::CurvatureSet& c) {
  json flagged = json::array();
  for (std::size_t t : c.flagged) flagged.push_back(t + 1);
  return {{"c_max", c.c_max}, {"threshold", c.threshold}, {"flagged", flagged}};
}

}  // namespace

RunConfig parse_config(const json& doc) {
  RunConfig cfg;
  cfg.data_path = as_string(require_field(doc, "data", "the top level"), "data");
  cfg.response = as_string(require_field(doc, "response", "the top level"), "response");

  const SubmodelConfig mean = parse_submodel(require_field(doc, "mean", "the top level"), "mean");
  const SubmodelConfig disp =
      parse_submodel(require_field(doc, "dispersion", "the top level"), "dispersion");

  cfg.spec.mean_link = links::mean_link_from_name(mean.link);
  cfg.spec.dispersion_link = links::disp_link_from_name(disp.link);
  cfg.spec.beta_names = mean.parameters;
  cfg.spec.gamma_names = disp.parameters;
  cfg.spec.mean_formula = formula::ExpressionTree::parse(
      mean.formula_text, std::set<std::string>(mean.parameters.begin(), mean.parameters.end()));
  cfg.spec.dispersion_formula = formula::ExpressionTree::parse(
      disp.formula_text, std::set<std::string>(disp.parameters.begin(), disp.parameters.end()));

  if (doc.contains("pinned_starts")) {
    const json& pins = doc.at("pinned_starts");
    if (!pins.is_object()) throw ConfigError("config field pinned_starts must be an object");
    for (auto it = pins.begin(); it != pins.end(); ++it)
      cfg.spec.pinned_starts[it.key()] = as_number(it.value(), "pinned_starts." + it.key());
  }
  cfg.spec.validate();

  if (doc.contains("fit")) {
    const json& f = doc.at("fit");
    if (f.contains("max_iterations"))
      cfg.fit_options.max_iterations = static_cast<int>(as_number(f.at("max_iterations"), "fit.max_iterations"));
    if (f.contains("grad_tolerance"))
      cfg.fit_options.grad_tolerance = as_number(f.at("grad_tolerance"), "fit.grad_tolerance");
    if (f.contains("step_halving_max"))
      cfg.fit_options.step_halving_max =
          static_cast<int>(as_number(f.at("step_halving_max"), "fit.step_halving_max"));
    if (f.contains("algorithm")) {
      const std::string a = as_string(f.at("algorithm"), "fit.algorithm");
      if (a == "fisher_scoring")
        cfg.fit_options.algorithm = estimate::FitOptions::Algorithm::FisherScoring;
      else if (a == "quasi_newton")
        cfg.fit_options.algorithm = estimate::FitOptions::Algorithm::QuasiNewton;
      else if (a == "hybrid")
        cfg.fit_options.algorithm = estimate::FitOptions::Algorithm::Hybrid;
      else
        throw ConfigError("unknown fit.algorithm '" + a + "'");
    }
    if (f.contains("starting_mode")) {
      const std::string m = as_string(f.at("starting_mode"), "fit.starting_mode");
      if (m == "two_step")
        cfg.fit_options.starting_mode = estimate::FitOptions::StartingMode::TwoStep;
      else if (m == "user_supplied")
        cfg.fit_options.starting_mode = estimate::FitOptions::StartingMode::UserSupplied;
      else
        throw ConfigError("unknown fit.starting_mode '" + m + "'");
    }
    if (f.contains("starting_as_printed"))
      cfg.fit_options.starting_as_printed = f.at("starting_as_printed").get<bool>();
    if (f.contains("beta0")) cfg.fit_options.beta0 = as_vector(f.at("beta0"), "fit.beta0");
    if (f.contains("gamma0")) cfg.fit_options.gamma0 = as_vector(f.at("gamma0"), "fit.gamma0");
  }
  if (cfg.fit_options.max_iterations < 1 || !(cfg.fit_options.grad_tolerance > 0.0) ||
      cfg.fit_options.step_halving_max < 1)
    throw ConfigError("invalid fit options: tolerances must be positive, max_iterations >= 1");

  if (doc.contains("seed")) cfg.seed = static_cast<std::uint64_t>(as_number(doc.at("seed"), "seed"));
  if (doc.contains("out_dir")) cfg.out_dir = as_string(doc.at("out_dir"), "out_dir");

  if (doc.contains("envelope")) {
    const json& e = doc.at("envelope");
    if (e.contains("replicates"))
      cfg.envelope_replicates = static_cast<int>(as_number(e.at("replicates"), "envelope.replicates"));
    if (e.contains("refit")) cfg.envelope_refit = e.at("refit").get<bool>();
  }

  if (doc.contains("influence")) {
    const json& inf = doc.at("influence");
    std::vector<std::string> names = {"case_weights", "response"};
    if (inf.contains("schemes")) names = as_string_list(inf.at("schemes"), "influence.schemes");
    for (const std::string& nm : names) {
      if (nm == "case_weights") {
        cfg.influence_schemes.push_back(diagnostics::Scheme::case_weights());
      } else if (nm == "response") {
        cfg.influence_schemes.push_back(diagnostics::Scheme::response());
      } else if (nm == "covariate") {
        std::string cm, cd;
        if (inf.contains("covariate_mean"))
          cm = as_string(inf.at("covariate_mean"), "influence.covariate_mean");
        if (inf.contains("covariate_dispersion"))
          cd = as_string(inf.at("covariate_dispersion"), "influence.covariate_dispersion");
        cfg.influence_schemes.push_back(diagnostics::Scheme::covariate(cm, cd));
      } else {
        throw ConfigError("unknown influence scheme '" + nm + "'");
      }
    }
    if (inf.contains("deletion_sets")) {
      const json& sets = inf.at("deletion_sets");
      if (!sets.is_array()) throw ConfigError("influence.deletion_sets must be an array of arrays");
      for (const auto& st : sets) {
        std::vector<std::size_t> cases;
        for (const auto& v : st) {
          const double c = as_number(v, "influence.deletion_sets entry");
          if (c < 1) throw ConfigError("deletion case indices are 1-based and must be >= 1");
          cases.push_back(static_cast<std::size_t>(c) - 1);
        }
        cfg.deletion_sets.push_back(std::move(cases));
      }
    }
  } else {
    cfg.influence_schemes = {diagnostics::Scheme::case_weights(),
                             diagnostics::Scheme::response()};
  }

  // Full resolved echo, defaults included; reruns are reproducible from it.
  json echo = doc;
  echo["data"] = cfg.data_path;
  echo["response"] = cfg.response;
  echo["seed"] = cfg.seed;
  echo["out_dir"] = cfg.out_dir;
  json fit_echo;
  fit_echo["max_iterations"] = cfg.fit_options.max_iterations;
  fit_echo["grad_tolerance"] = cfg.fit_options.grad_tolerance;
  fit_echo["step_halving_max"] = cfg.fit_options.step_halving_max;
  fit_echo["algorithm"] =
      cfg.fit_options.algorithm == estimate::FitOptions::Algorithm::FisherScoring
          ? "fisher_scoring"
          : cfg.fit_options.algorithm == estimate::FitOptions::Algorithm::QuasiNewton
                ? "quasi_newton"
                : "hybrid";
  fit_echo["starting_mode"] =
      cfg.fit_options.starting_mode == estimate::FitOptions::StartingMode::TwoStep
          ? "two_step"
          : "user_supplied";
  fit_echo["starting_as_printed"] = cfg.fit_options.starting_as_printed;
  echo["fit"] = fit_echo;
  echo["envelope"] = {{"replicates", cfg.envelope_replicates}, {"refit", cfg.envelope_refit}};
  cfg.echo = echo;
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  json doc;
  try {
    doc = json::parse(f);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(doc);
}

int cmd_fit(const RunConfig& cfg) {
  return guard([&]() {
    estimate::FittedModel fit = fit_from_config(cfg);

    json out;
    out["command"] = "fit";
    out["timestamp"] = timestamp_utc();
    out["seed"] = cfg.seed;
    out["config"] = cfg.echo;
    out["converged"] = fit.converged;
    out["iterations"] = fit.iterations;
    out["loglik"] = fit.loglik;
    out["notes"] = fit.notes;
    out["trace"] = trace_json(fit);

    if (!fit.converged) {
      json est = json::array();
      for (std::size_t i = 0; i < cfg.spec.k(); ++i)
        est.push_back({{"name", cfg.spec.beta_names[i]}, {"estimate", fit.beta_hat(i)}});
      for (std::size_t i = 0; i < cfg.spec.q(); ++i)
        est.push_back({{"name", cfg.spec.gamma_names[i]}, {"estimate", fit.gamma_hat(i)}});
      out["estimates"] = est;
      write_json(cfg.out_dir, "fit.json", out);
      std::cerr << "error: fit did not converge within " << cfg.fit_options.max_iterations
                << " iterations (max |score| = "
                << (fit.trace.empty() ? 0.0 : fit.trace.back().max_abs_score) << ")\n";
      return kExitNoConvergence;
    }

    out["estimates"] = inference_json(estimate::inference_table(fit));
    write_json(cfg.out_dir, "fit.json", out);

    const diagnostics::ResidualReport res = diagnostics::weighted_residuals(fit);
    const model::DesignState& s = fit.terminal_state;
    std::string csv = "index,y,mu_hat,sigma2_hat,r_beta,h_star\n";
    for (Eigen::Index t = 0; t < s.n(); ++t)
      csv += std::to_string(t + 1) + "," + fmt10(s.y(t)) + "," + fmt10(s.mu(t)) + "," +
             fmt10(s.sigma2(t)) + "," + fmt10(res.r_beta(t)) + "," + fmt10(res.h_star_diag(t)) +
             "\n";
    write_text(cfg.out_dir, "residuals.csv", csv);
    return kExitOk;
  });
}

int cmd_envelope(const RunConfig& cfg) {
  return guard([&]() {
    estimate::FittedModel fit = fit_from_config(cfg);
    if (!fit.converged) {
      std::cerr << "error: fit did not converge; envelope not computed\n";
      return kExitNoConvergence;
    }
    const diagnostics::EnvelopeBands bands = diagnostics::simulated_envelope(
        fit, cfg.envelope_replicates, cfg.seed, cfg.envelope_refit);

    std::string csv = "order_stat,observed,lower,median,upper\n";
    for (Eigen::Index t = 0; t < bands.observed.size(); ++t)
      csv += std::to_string(t + 1) + "," + fmt10(bands.observed(t)) + "," +
             fmt10(bands.lower(t)) + "," + fmt10(bands.median(t)) + "," + fmt10(bands.upper(t)) +
             "\n";
    write_text(cfg.out_dir, "envelope.csv", csv);

    json out;
    out["command"] = "envelope";
    out["timestamp"] = timestamp_utc();
    out["seed"] = cfg.seed;
    out["config"] = cfg.echo;
    out["omega_lo"] = bands.omega_lo;
    out["omega_hi"] = bands.omega_hi;
    out["n_replicates"] = bands.n_replicates;
    out["n_skipped"] = bands.n_skipped;
    write_json(cfg.out_dir, "envelope.json", out);
    return kExitOk;
  });
}

int cmd_influence(const RunConfig& cfg) {
  return guard([&]() {
    estimate::FittedModel fit = fit_from_config(cfg);
    if (!fit.converged) {
      std::cerr << "error: fit did not converge; influence not computed\n";
      return kExitNoConvergence;
    }

    json summary;
    summary["command"] = "influence";
    summary["timestamp"] = timestamp_utc();
    summary["seed"] = cfg.seed;
    summary["config"] = cfg.echo;
    json schemes_json;

    for (const diagnostics::Scheme& scheme : cfg.influence_schemes) {
      const diagnostics::InfluenceReport rep = diagnostics::influence(fit, scheme);
      const std::string name = scheme_name(scheme);

      std::string csv =
          "index,i_max,c_t,flagged,i_max_beta,c_t_beta,flagged_beta,i_max_gamma,c_t_gamma,"
          "flagged_gamma\n";
      auto is_flagged = [](const std::vector<std::size_t>& f, Eigen::Index t) {
        return std::find(f.begin(), f.end(), static_cast<std::size_t>(t)) != f.end() ? 1 : 0;
      };
      for (Eigen::Index t = 0; t < rep.full.c_t.size(); ++t)
        csv += std::to_string(t + 1) + "," + fmt10(rep.full.i_max(t)) + "," +
               fmt10(rep.full.c_t(t)) + "," + std::to_string(is_flagged(rep.full.flagged, t)) +
               "," + fmt10(rep.beta_only.i_max(t)) + "," + fmt10(rep.beta_only.c_t(t)) + "," +
               std::to_string(is_flagged(rep.beta_only.flagged, t)) + "," +
               fmt10(rep.gamma_only.i_max(t)) + "," + fmt10(rep.gamma_only.c_t(t)) + "," +
               std::to_string(is_flagged(rep.gamma_only.flagged, t)) + "\n";
      write_text(cfg.out_dir, "influence_" + name + ".csv", csv);

      json sj;
      sj["theta"] = curvature_json(rep.full);
      sj["beta_only"] = curvature_json(rep.beta_only);
      sj["gamma_only"] = curvature_json(rep.gamma_only);
      if (scheme.kind == diagnostics::Scheme::Kind::Covariate) {
        sj["covariate_mean"] = scheme.covariate_mean;
        sj["covariate_dispersion"] = scheme.covariate_dispersion;
      }
      schemes_json[name] = sj;
    }
    summary["schemes"] = schemes_json;

    if (!cfg.deletion_sets.empty()) {
      json dels = json::array();
      for (const auto& cases : cfg.deletion_sets) {
        const diagnostics::DeletionReport rep = diagnostics::delete_and_refit(fit, cases);
        json rows = json::array();
        for (const auto& r : rep.rows)
          rows.push_back({{"name", r.name}, {"estimate_old", r.estimate_old},
                          {"estimate_new", r.estimate_new},
                          {"pct_change_estimate", r.pct_change_estimate},
                          {"se_old", r.se_old}, {"se_new", r.se_new},
                          {"pct_change_se", r.pct_change_se}, {"p_new", r.p_new}});
        json cases_json = json::array();
        for (std::size_t c : rep.cases) cases_json.push_back(c + 1);
        dels.push_back({{"cases", cases_json}, {"rows", rows}});
      }
      summary["deletions"] = dels;
    }

    write_json(cfg.out_dir, "influence.json", summary);
    return kExitOk;
  });
}

namespace {

struct CovariateGen {
  std::string name;
  double low = 0.0, high = 1.0;
};

std::vector<CovariateGen> parse_covariate_gens(const json& arr, const char* where) {
  if (!arr.is_array()) throw ConfigError(std::string(where) + ".covariates must be an array");
  std::vector<CovariateGen> out;
  for (const auto& c : arr) {
    CovariateGen g;
    g.name = as_string(require_field(c, "name", where), std::string(where) + ".covariates.name");
    const std::string dist = c.contains("dist") ? as_string(c.at("dist"), "dist") : "uniform";
    if (dist != "uniform")
      throw ConfigError("unsupported covariate distribution '" + dist + "' (only uniform)");
    g.low = as_number(require_field(c, "low", where), "low");
    g.high = as_number(require_field(c, "high", where), "high");
    if (!(g.high > g.low)) throw ConfigError("covariate range must satisfy high > low");
    out.push_back(std::move(g));
  }
  return out;
}

double skewness(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= n;
  double m2 = 0.0, m3 = 0.0;
  for (double x : v) {
    const double d = x - mean;
    m2 += d * d;
    m3 += d * d * d;
  }
  m2 /= n;
  m3 /= n;
  return m3 / std::pow(m2, 1.5);
}

}  // namespace

int cmd_mc_study(const json& doc, std::uint64_t seed, const std::string& out_dir) {
  return guard([&]() {
    const json& mc = require_field(doc, "mc_study", "the top level");
    const json& scenarios = require_field(mc, "scenarios", "mc_study");
    if (!scenarios.is_array() || scenarios.empty())
      throw ConfigError("mc_study.scenarios must be a non-empty array");

    json summary;
    summary["command"] = "mc_study";
    summary["timestamp"] = timestamp_utc();
    summary["seed"] = seed;
    summary["config"] = doc;
    json scen_out = json::array();

    for (const json& sc : scenarios) {
      const std::string name = as_string(require_field(sc, "name", "scenario"), "scenario.name");
      const bool shared = sc.contains("shared_intercept") && sc.at("shared_intercept").get<bool>();
      const Eigen::VectorXd beta = as_vector(require_field(sc, "beta", "scenario"), "scenario.beta");
      const Eigen::VectorXd gamma =
          as_vector(require_field(sc, "gamma", "scenario"), "scenario.gamma");
      const std::size_t n =
          static_cast<std::size_t>(as_number(require_field(sc, "n", "scenario"), "scenario.n"));
      const int n_rep = static_cast<int>(
          as_number(require_field(sc, "replicates", "scenario"), "scenario.replicates"));
      if (n_rep < 1) throw ConfigError("scenario.replicates must be >= 1");
      if (n < 8 || n % 40 != 0)
        throw ConfigError("scenario.n must be a positive multiple of the base design size 40");
      const std::size_t expected_k = shared ? 3 : 4;
      if (static_cast<std::size_t>(beta.size()) != expected_k ||
          static_cast<std::size_t>(gamma.size()) != 2)
        throw ConfigError("scenario '" + name + "': beta must have " +
                          std::to_string(expected_k) + " entries and gamma 2");

      // Base design of 40 draws, tiled to n; larger n reuses the covariates.
      const std::uint64_t scen_seed = derive_seed(seed, std::hash<std::string>{}(name));
      Rng cov_rng(derive_seed(scen_seed, 0));
      const std::size_t base = 40;
      std::vector<double> x2(base), x3(base), x4(base), z2(base);
      for (std::size_t t = 0; t < base; ++t) x2[t] = cov_rng.uniform(0.5, 1.5);
      for (std::size_t t = 0; t < base; ++t) x3[t] = cov_rng.uniform(0.0, 1.0);
      for (std::size_t t = 0; t < base; ++t) x4[t] = cov_rng.uniform(-0.5, 0.5);
      for (std::size_t t = 0; t < base; ++t) z2[t] = cov_rng.uniform(0.5, 1.5);

      std::vector<std::vector<double>> cols(4, std::vector<double>(n));
      std::vector<double> mu_true(n), s2_true(n);
      for (std::size_t t = 0; t < n; ++t) {
        const std::size_t b = t % base;
        cols[0][t] = x2[b];
        cols[1][t] = x3[b];
        cols[2][t] = x4[b];
        cols[3][t] = z2[b];
        double eta;
        if (shared)
          eta = beta(0) + std::pow(x2[b], beta(0)) + beta(1) * x3[b] + beta(2) * x4[b];
        else
          eta = beta(0) + std::pow(x2[b], beta(1)) + beta(2) * x3[b] + beta(3) * x4[b];
        mu_true[t] = links::link_eval(links::MeanLink::Logit, links::LinkMode::Inverse, eta);
        s2_true[t] = std::exp(gamma(0) + std::pow(z2[b], gamma(1)));
      }
      const double lambda = *std::max_element(s2_true.begin(), s2_true.end()) /
                            *std::min_element(s2_true.begin(), s2_true.end());

      model::ModelSpec spec;
      if (shared) {
        spec.mean_formula = formula::ExpressionTree::parse("b2 + x2^b2 + b3*x3 + b4*x4",
                                                           {"b2", "b3", "b4"});
        spec.beta_names = {"b2", "b3", "b4"};
      } else {
        spec.mean_formula = formula::ExpressionTree::parse("b1 + x2^b2 + b3*x3 + b4*x4",
                                                           {"b1", "b2", "b3", "b4"});
        spec.beta_names = {"b1", "b2", "b3", "b4"};
      }
      spec.dispersion_formula = formula::ExpressionTree::parse("g1 + z2^g2", {"g1", "g2"});
      spec.gamma_names = {"g1", "g2"};
      spec.mean_link = links::MeanLink::Logit;
      spec.dispersion_link = links::DispLink::Log;
      // The exponent parameters are invisible to the linear reduction; they
      // start from the data-generating values unless the scenario overrides.
      spec.pinned_starts["b2"] = shared ? beta(0) : beta(1);
      spec.pinned_starts["g2"] = gamma(1);
      if (sc.contains("pinned_starts")) {
        const json& pins = sc.at("pinned_starts");
        for (auto it = pins.begin(); it != pins.end(); ++it)
          spec.pinned_starts[it.key()] = as_number(it.value(), "scenario.pinned_starts");
      }

      Dataset data({"y", "x2", "x3", "x4", "z2"},
                   {std::vector<double>(n, 0.5), cols[0], cols[1], cols[2], cols[3]}, "y");

      std::vector<dist::Sampler> samplers;
      samplers.reserve(n);
      for (std::size_t t = 0; t < n; ++t)
        samplers.emplace_back(dist::SimplexParams(mu_true[t], s2_true[t]));

      estimate::FitOptions opts;
      std::vector<std::vector<double>> sorted_reps;
      std::vector<double> pooled;
      int failures = 0;
      double mu_hat_min = 1.0, mu_hat_max = 0.0;
      for (int rep = 0; rep < n_rep; ++rep) {
        Rng rng(derive_seed(scen_seed, static_cast<std::uint64_t>(rep) + 1));
        std::vector<double> ystar(n);
        for (std::size_t t = 0; t < n; ++t) ystar[t] = samplers[t].draw(rng);
        try {
          estimate::FittedModel f = estimate::fit(spec, data.with_response(ystar), opts);
          if (!f.converged) {
            ++failures;
            continue;
          }
          Eigen::VectorXd r = diagnostics::weighted_residuals(f).r_beta;
          mu_hat_min = std::min(mu_hat_min, f.terminal_state.mu.minCoeff());
          mu_hat_max = std::max(mu_hat_max, f.terminal_state.mu.maxCoeff());
          std::sort(r.data(), r.data() + r.size());
          pooled.insert(pooled.end(), r.data(), r.data() + r.size());
          sorted_reps.emplace_back(r.data(), r.data() + r.size());
        } catch (const std::runtime_error&) {
          ++failures;
        }
        if (failures * 20 > n_rep)
          throw FitError("mc_study scenario '" + name + "' aborted: more than 5% of replicates "
                         "failed (" + std::to_string(failures) + ")");
      }

      // Mean order statistics (QQ-plot data) across successful replicates.
      const std::size_t m = sorted_reps.size();
      std::string csv = "order_stat,mean_residual,normal_quantile\n";
      std::vector<double> mean_os(n, 0.0);
      for (const auto& r : sorted_reps)
        for (std::size_t t = 0; t < n; ++t) mean_os[t] += r[t];
      for (std::size_t t = 0; t < n; ++t) {
        mean_os[t] /= static_cast<double>(m);
        const double p = (static_cast<double>(t) + 0.5) / static_cast<double>(n);
        csv += std::to_string(t + 1) + "," + fmt10(mean_os[t]) + "," +
               fmt10(links::norm_quantile(p)) + "\n";
      }
      write_text(out_dir, "mc_" + name + ".csv", csv);

      double pm = 0.0;
      for (double r : pooled) pm += r;
      pm /= static_cast<double>(pooled.size());
      double pv = 0.0;
      for (double r : pooled) pv += (r - pm) * (r - pm);
      pv /= static_cast<double>(pooled.size() - 1);
      std::vector<double> pooled_sorted = pooled;
      std::sort(pooled_sorted.begin(), pooled_sorted.end());
      const double q_lo =
          pooled_sorted[static_cast<std::size_t>(0.025 * (pooled_sorted.size() - 1))];
      const double q_hi =
          pooled_sorted[static_cast<std::size_t>(0.975 * (pooled_sorted.size() - 1))];

      json scen_json;
      scen_json["name"] = name;
      scen_json["n"] = n;
      scen_json["replicates"] = n_rep;
      scen_json["failures"] = failures;
      scen_json["lambda"] = lambda;
      scen_json["mu_true_min"] = *std::min_element(mu_true.begin(), mu_true.end());
      scen_json["mu_true_max"] = *std::max_element(mu_true.begin(), mu_true.end());
      scen_json["mu_hat_min"] = mu_hat_min;
      scen_json["mu_hat_max"] = mu_hat_max;
      scen_json["residual_mean"] = pm;
      scen_json["residual_variance"] = pv;
      scen_json["residual_skewness"] = skewness(pooled);
      scen_json["omega_lo"] = q_lo;
      scen_json["omega_hi"] = q_hi;
      scen_out.push_back(scen_json);
    }

    summary["scenarios"] = scen_out;
    write_json(out_dir, "mc_summary.json", summary);
    return kExitOk;
  });
}

int cmd_simulate(const json& doc, std::uint64_t seed, const std::string& out_dir) {
  return guard([&]() {
    const json& sim = require_field(doc, "simulate", "the top level");
    const std::size_t n =
        static_cast<std::size_t>(as_number(require_field(sim, "n", "simulate"), "simulate.n"));
    if (n < 2) throw ConfigError("simulate.n must be >= 2");
    const std::string response =
        sim.contains("response") ? as_string(sim.at("response"), "simulate.response") : "y";
    const std::string output =
        sim.contains("output") ? as_string(sim.at("output"), "simulate.output") : "simulated.csv";

    const std::vector<CovariateGen> gens =
        parse_covariate_gens(require_field(sim, "covariates", "simulate"), "simulate");
    const SubmodelConfig mean = parse_submodel(require_field(sim, "mean", "simulate"), "simulate.mean");
    const SubmodelConfig disp =
        parse_submodel(require_field(sim, "dispersion", "simulate"), "simulate.dispersion");
    const Eigen::VectorXd bvals =
        as_vector(require_field(sim.at("mean"), "values", "simulate.mean"), "simulate.mean.values");
    const Eigen::VectorXd gvals = as_vector(
        require_field(sim.at("dispersion"), "values", "simulate.dispersion"),
        "simulate.dispersion.values");
    if (static_cast<std::size_t>(bvals.size()) != mean.parameters.size() ||
        static_cast<std::size_t>(gvals.size()) != disp.parameters.size())
      throw ConfigError("simulate: parameter value lists must match the parameter name lists");

    const links::MeanLink mlink = links::mean_link_from_name(mean.link);
    const links::DispLink dlink = links::disp_link_from_name(disp.link);
    const formula::ExpressionTree mean_tree = formula::ExpressionTree::parse(
        mean.formula_text,
        std::set<std::string>(mean.parameters.begin(), mean.parameters.end()));
    const formula::ExpressionTree disp_tree = formula::ExpressionTree::parse(
        disp.formula_text,
        std::set<std::string>(disp.parameters.begin(), disp.parameters.end()));

    std::map<std::string, double> bm, gm;
    for (std::size_t i = 0; i < mean.parameters.size(); ++i)
      bm.emplace(mean.parameters[i], bvals(i));
    for (std::size_t i = 0; i < disp.parameters.size(); ++i)
      gm.emplace(disp.parameters[i], gvals(i));

    Rng cov_rng(derive_seed(seed, 0));
    std::map<std::string, std::vector<double>> cols;
    for (const CovariateGen& g : gens) {
      std::vector<double> v(n);
      for (std::size_t t = 0; t < n; ++t) v[t] = cov_rng.uniform(g.low, g.high);
      cols.emplace(g.name, std::move(v));
    }

    Rng draw_rng(derive_seed(seed, 1));
    std::vector<double> y(n);
    for (std::size_t t = 0; t < n; ++t) {
      std::map<std::string, double> row;
      for (const auto& [nm, v] : cols) row.emplace(nm, v[t]);
      const double mu = links::link_eval(mlink, links::LinkMode::Inverse, mean_tree.eval(bm, row));
      const double s2 =
          links::link_eval(dlink, links::LinkMode::Inverse, disp_tree.eval(gm, row));
      y[t] = dist::Sampler(dist::SimplexParams(mu, s2)).draw(draw_rng);
    }

    std::vector<std::string> names = {response};
    std::vector<std::vector<double>> data_cols = {y};
    for (const CovariateGen& g : gens) {
      names.push_back(g.name);
      data_cols.push_back(cols.at(g.name));
    }
    Dataset out(names, data_cols, response);
    std::filesystem::create_directories(out_dir);
    out.write_csv((std::filesystem::path(out_dir) / output).string());
    return kExitOk;
  });
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"maximum-likelihood fitting and diagnostics for nonlinear simplex regression"};
  app.require_subcommand(1);

  std::string config_path, out_dir_override;
  std::int64_t seed_override = -1;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "path to the run-configuration JSON")->required();
    sub->add_option("--seed", seed_override, "override the config seed");
    sub->add_option("--out-dir", out_dir_override, "override the output directory");
  };
  CLI::App* fit_cmd = app.add_subcommand("fit", "fit the model and write fit.json / residuals.csv");
  CLI::App* env_cmd =
      app.add_subcommand("envelope", "simulated envelope bands for the weighted residuals");
  CLI::App* inf_cmd = app.add_subcommand("influence", "local influence and deletion diagnostics");
  CLI::App* mc_cmd = app.add_subcommand("mc-study", "Monte Carlo residual-calibration study");
  CLI::App* sim_cmd = app.add_subcommand("simulate", "draw a synthetic dataset from a model");
  for (CLI::App* sub : {fit_cmd, env_cmd, inf_cmd, mc_cmd, sim_cmd}) add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  return guard([&]() {
    if (mc_cmd->parsed() || sim_cmd->parsed()) {
      std::ifstream f(config_path);
      if (!f) throw ConfigError("cannot open config file: " + config_path);
      json doc;
      try {
        doc = json::parse(f);
      } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
      }
      std::uint64_t seed = doc.contains("seed") ? doc.at("seed").get<std::uint64_t>() : 0;
      std::string out_dir =
          doc.contains("out_dir") ? doc.at("out_dir").get<std::string>() : std::string(".");
      if (seed_override >= 0) seed = static_cast<std::uint64_t>(seed_override);
      if (!out_dir_override.empty()) out_dir = out_dir_override;
      return mc_cmd->parsed() ? cmd_mc_study(doc, seed, out_dir)
                              : cmd_simulate(doc, seed, out_dir);
    }

    RunConfig cfg = load_config(config_path);
    if (seed_override >= 0) {
      cfg.seed = static_cast<std::uint64_t>(seed_override);
      cfg.echo["seed"] = cfg.seed;
    }
    if (!out_dir_override.empty()) {
      cfg.out_dir = out_dir_override;
      cfg.echo["out_dir"] = cfg.out_dir;
    }
    if (fit_cmd->parsed()) return cmd_fit(cfg);
    if (env_cmd->parsed()) return cmd_envelope(cfg);
    return cmd_influence(cfg);
  });
}

}  // namespace simplexfit::commands
