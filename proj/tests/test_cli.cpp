#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "simplexfit/dataset.hpp"
#include "simplexfit/estimate.hpp"

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(SIMPLEXFIT_BIN) + " " + args + " 2> cli_stderr.txt";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  out << content;
}

// File contents with every line mentioning "timestamp" removed, for
// rerun-reproducibility comparisons.
std::string without_timestamp(const std::string& text) {
  std::istringstream in(text);
  std::string line, out;
  while (std::getline(in, line)) {
    if (line.find("\"timestamp\"") == std::string::npos) out += line + "\n";
  }
  return out;
}

struct WorkDir {
  fs::path path;
  explicit WorkDir(const std::string& name) : path(fs::path("cli_work") / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
};

// Shared simulate config: a nonlinear mean (power term) with log dispersion.
json simulate_config(int n, const std::string& output) {
  return json{
      {"seed", 991},
      {"simulate",
       {{"n", n},
        {"response", "y"},
        {"output", output},
        {"covariates",
         json::array({{{"name", "x"}, {"dist", "uniform"}, {"low", 0.5}, {"high", 1.5}},
                      {{"name", "w"}, {"dist", "uniform"}, {"low", -1.0}, {"high", 1.0}},
                      {{"name", "z"}, {"dist", "uniform"}, {"low", 0.0}, {"high", 1.0}}})},
        {"mean",
         {{"formula", "b1 + x^b2 + b3*w"},
          {"link", "logit"},
          {"parameters", {"b1", "b2", "b3"}},
          {"values", {-0.5, 1.2, 0.6}}}},
        {"dispersion",
         {{"formula", "g1 + g2*z"},
          {"link", "log"},
          {"parameters", {"g1", "g2"}},
          {"values", {-1.0, 0.8}}}}}}};
}

json fit_config(const std::string& data_path, const std::string& out_dir) {
  return json{{"data", data_path},
              {"response", "y"},
              {"seed", 17},
              {"out_dir", out_dir},
              {"mean",
               {{"formula", "b1 + x^b2 + b3*w"},
                {"link", "logit"},
                {"parameters", {"b1", "b2", "b3"}}}},
              {"dispersion",
               {{"formula", "g1 + g2*z"}, {"link", "log"}, {"parameters", {"g1", "g2"}}}},
              {"pinned_starts", {{"b2", 1.0}}}};
}

// One shared simulated dataset for the fit/envelope/influence cases.
const std::string& shared_data() {
  static std::string path = [] {
    WorkDir wd("shared");
    const std::string out = (wd.path / "data.csv").string();
    json cfg = simulate_config(500, out);
    const std::string cfg_path = (wd.path / "sim.json").string();
    spit(cfg_path, cfg.dump(2));
    REQUIRE(run("simulate --config " + cfg_path) == 0);
    return out;
  }();
  return path;
}

}  // namespace

TEST_CASE("simulate: reproducible output and parameter recovery within 4 se") {
  WorkDir wd("simulate");
  const std::string out1 = (wd.path / "a.csv").string();
  const std::string out2 = (wd.path / "b.csv").string();
  json cfg = simulate_config(500, out1);
  const std::string cfg_path = (wd.path / "sim.json").string();
  spit(cfg_path, cfg.dump(2));
  REQUIRE(run("simulate --config " + cfg_path) == 0);

  cfg["simulate"]["output"] = out2;
  spit(cfg_path, cfg.dump(2));
  REQUIRE(run("simulate --config " + cfg_path) == 0);
  CHECK(slurp(out1) == slurp(out2));

  // A different seed changes the draws.
  cfg["seed"] = 992;
  spit(cfg_path, cfg.dump(2));
  REQUIRE(run("simulate --config " + cfg_path) == 0);
  CHECK(slurp(out1) != slurp(out2));

  // Recovery: fit the simulated data through the library and compare to the
  // generating values.
  using namespace simplexfit;
  auto data = Dataset::load_csv(out1, "y");
  model::ModelSpec spec;
  spec.mean_formula =
      formula::ExpressionTree::parse("b1 + x^b2 + b3*w", {"b1", "b2", "b3"});
  spec.dispersion_formula = formula::ExpressionTree::parse("g1 + g2*z", {"g1", "g2"});
  spec.beta_names = {"b1", "b2", "b3"};
  spec.gamma_names = {"g1", "g2"};
  spec.pinned_starts = {{"b2", 1.0}};
  auto fit = estimate::fit(spec, data);
  REQUIRE(fit.converged);
  const double truth[] = {-0.5, 1.2, 0.6, -1.0, 0.8};
  Eigen::VectorXd theta(5);
  theta << fit.beta_hat, fit.gamma_hat;
  for (int i = 0; i < 5; ++i) {
    CAPTURE(i);
    CHECK(std::abs(theta(i) - truth[i]) < 4.0 * std::sqrt(fit.cov(i, i)));
  }
}

TEST_CASE("fit: exit 0, well-formed outputs, rerun identical modulo timestamp") {
  WorkDir wd("fit");
  json cfg = fit_config(shared_data(), wd.path.string());
  const std::string cfg_path = (wd.path / "fit.json.in").string();
  spit(cfg_path, cfg.dump(2));
  REQUIRE(run("fit --config " + cfg_path) == 0);

  json out = json::parse(slurp((wd.path / "fit.json").string()));
  CHECK(out.at("command") == "fit");
  CHECK(out.at("converged") == true);
  CHECK(out.at("estimates").size() == 5);
  CHECK(out.at("estimates")[0].contains("p"));
  CHECK(out.at("trace").size() > 0);

  const std::string fit1 = slurp((wd.path / "fit.json").string());
  const std::string res1 = slurp((wd.path / "residuals.csv").string());
  REQUIRE(run("fit --config " + cfg_path) == 0);
  CHECK(without_timestamp(slurp((wd.path / "fit.json").string())) == without_timestamp(fit1));
  CHECK(slurp((wd.path / "residuals.csv").string()) == res1);

  // residuals.csv has one line per observation plus the header.
  std::istringstream in(res1);
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) ++lines;
  CHECK(lines == 501);
  CHECK(res1.rfind("index,y,mu_hat,sigma2_hat,r_beta,h_star\n", 0) == 0);
}

TEST_CASE("fit: configuration and data errors map to exit codes 2 and 3") {
  WorkDir wd("errors");
  json cfg = fit_config(shared_data(), wd.path.string());
  const std::string cfg_path = (wd.path / "cfg.json").string();

  json bad_link = cfg;
  bad_link["mean"]["link"] = "cauchit";
  spit(cfg_path, bad_link.dump(2));
  CHECK(run("fit --config " + cfg_path) == 2);
  CHECK(slurp("cli_stderr.txt").rfind("error:", 0) == 0);

  json bad_formula = cfg;
  bad_formula["mean"]["formula"] = "b1 + * x";
  spit(cfg_path, bad_formula.dump(2));
  CHECK(run("fit --config " + cfg_path) == 2);

  json bad_data = cfg;
  bad_data["data"] = "no_such_file_xyz.csv";
  spit(cfg_path, bad_data.dump(2));
  CHECK(run("fit --config " + cfg_path) == 3);

  // Malformed JSON is a configuration error.
  spit(cfg_path, "{ not json");
  CHECK(run("fit --config " + cfg_path) == 2);

  // Missing --config entirely: CLI parse failure.
  CHECK(run("fit") != 0);
}

TEST_CASE("fit: non-convergence exits 4 and still writes a partial report") {
  WorkDir wd("noconv");
  json cfg = fit_config(shared_data(), wd.path.string());
  cfg["fit"]["max_iterations"] = 1;
  const std::string cfg_path = (wd.path / "cfg.json").string();
  spit(cfg_path, cfg.dump(2));
  CHECK(run("fit --config " + cfg_path) == 4);
  json out = json::parse(slurp((wd.path / "fit.json").string()));
  CHECK(out.at("converged") == false);
  CHECK(out.contains("estimates"));
}

TEST_CASE("envelope: deterministic bands, sorted order statistics") {
  WorkDir wd("envelope");
  json cfg = fit_config(shared_data(), wd.path.string());
  cfg["envelope"] = {{"replicates", 19}, {"refit", false}};
  const std::string cfg_path = (wd.path / "cfg.json").string();
  spit(cfg_path, cfg.dump(2));
  REQUIRE(run("envelope --config " + cfg_path) == 0);

  const std::string csv1 = slurp((wd.path / "envelope.csv").string());
  REQUIRE(run("envelope --config " + cfg_path) == 0);
  CHECK(slurp((wd.path / "envelope.csv").string()) == csv1);

  // Parse and verify ordering invariants.
  std::istringstream in(csv1);
  std::string line;
  std::getline(in, line);
  CHECK(line == "order_stat,observed,lower,median,upper");
  double prev_obs = -1e300;
  int rows = 0;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tok;
    std::vector<double> f;
    while (std::getline(ls, tok, ',')) f.push_back(std::stod(tok));
    REQUIRE(f.size() == 5);
    CHECK(f[1] >= prev_obs);
    prev_obs = f[1];
    CHECK(f[2] <= f[3]);
    CHECK(f[3] <= f[4]);
    ++rows;
  }
  CHECK(rows == 500);

  json out = json::parse(slurp((wd.path / "envelope.json").string()));
  CHECK(out.at("n_replicates") == 19);
  CHECK(out.at("omega_lo").get<double>() < 0.0);
  CHECK(out.at("omega_hi").get<double>() > 0.0);

  // A different seed moves the bands.
  cfg["seed"] = 18;
  spit(cfg_path, cfg.dump(2));
  REQUIRE(run("envelope --config " + cfg_path) == 0);
  CHECK(slurp((wd.path / "envelope.csv").string()) != csv1);
}

TEST_CASE("influence: per-scheme outputs with unit-norm directions") {
  WorkDir wd("influence");
  json cfg = fit_config(shared_data(), wd.path.string());
  cfg["influence"] = {{"schemes", {"case_weights", "response", "covariate"}},
                      {"covariate_mean", "w"},
                      {"covariate_dispersion", "z"},
                      {"deletion_sets", json::array({json::array({1})})}};
  const std::string cfg_path = (wd.path / "cfg.json").string();
  spit(cfg_path, cfg.dump(2));
  REQUIRE(run("influence --config " + cfg_path) == 0);

  json out = json::parse(slurp((wd.path / "influence.json").string()));
  REQUIRE(out.at("schemes").size() == 3);
  for (const char* name : {"case_weights", "response", "covariate"}) {
    const json& sch = out.at("schemes").at(name);
    CHECK(sch.at("theta").at("c_max").get<double>() > 0.0);
    CHECK(sch.at("theta").at("threshold").get<double>() > 0.0);
    CHECK(sch.contains("beta_only"));
    CHECK(sch.contains("gamma_only"));
  }
  CHECK(out.at("deletions").size() == 1);

  for (const char* name : {"case_weights", "response", "covariate"}) {
    const std::string csv =
        slurp((wd.path / (std::string("influence_") + name + ".csv")).string());
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);  // header
    double norm2 = 0.0;
    int rows = 0;
    while (std::getline(in, line)) {
      std::istringstream ls(line);
      std::string tok;
      std::vector<std::string> f;
      while (std::getline(ls, tok, ',')) f.push_back(tok);
      REQUIRE(f.size() >= 3);
      const double imax = std::stod(f[1]);
      const double ct = std::stod(f[2]);
      norm2 += imax * imax;
      CHECK(ct >= 0.0);
      ++rows;
    }
    CHECK(rows == 500);
    CAPTURE(name);
    CHECK(std::abs(std::sqrt(norm2) - 1.0) < 1e-8);
  }
}

TEST_CASE("mc-study: small run writes per-scenario QQ data and lambda") {
  WorkDir wd("mc");
  json cfg = {{"seed", 5},
              {"out_dir", wd.path.string()},
              {"mc_study",
               {{"scenarios", json::array({{{"name", "central"},
                                            {"beta", {-1.7, -1.8, 1.2, -1.3}},
                                            {"gamma", {-1.3, -1.6}},
                                            {"n", 40},
                                            {"replicates", 20}}})}}}};
  const std::string cfg_path = (wd.path / "cfg.json").string();
  spit(cfg_path, cfg.dump(2));
  REQUIRE(run("mc-study --config " + cfg_path) == 0);

  json out = json::parse(slurp((wd.path / "mc_summary.json").string()));
  REQUIRE(out.at("scenarios").size() == 1);
  const auto& sc = out.at("scenarios")[0];
  CHECK(sc.at("name") == "central");
  CHECK(sc.at("lambda").get<double>() > 1.0);
  CHECK(sc.at("replicates") == 20);

  const std::string csv = slurp((wd.path / "mc_central.csv").string());
  CHECK(csv.rfind("order_stat,", 0) == 0);
  std::istringstream in(csv);
  std::string line;
  int rows = -1;  // discount header
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 40);
}
