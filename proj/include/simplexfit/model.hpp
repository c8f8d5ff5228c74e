#ifndef SIMPLEXFIT_MODEL_HPP
#define SIMPLEXFIT_MODEL_HPP

#include <Eigen/Core>
#include <map>
#include <string>
#include <vector>

#include "simplexfit/dataset.hpp"
#include "simplexfit/formula.hpp"
#include "simplexfit/links.hpp"

namespace simplexfit::model {

// Mean and dispersion submodels: formulas, links, parameter order, and
// optional pinned starting values for parameters a linear reduction cannot
// identify.
struct ModelSpec {
  formula::ExpressionTree mean_formula;
  formula::ExpressionTree dispersion_formula;
  links::MeanLink mean_link = links::MeanLink::Logit;
  links::DispLink dispersion_link = links::DispLink::Log;
  std::vector<std::string> beta_names;
  std::vector<std::string> gamma_names;
  std::map<std::string, double> pinned_starts;

  std::size_t k() const { return beta_names.size(); }
  std::size_t q() const { return gamma_names.size(); }

  // beta/gamma name lists must be disjoint and cover exactly the parameters
  // referenced by their formulas; throws ConfigError otherwise.
  void validate() const;

  std::map<std::string, double> beta_map(const Eigen::VectorXd& beta) const;
  std::map<std::string, double> gamma_map(const Eigen::VectorXd& gamma) const;
};

// Every per-observation quantity at a given (beta, gamma): predictors,
// means, dispersions, the deviance, and the diagonal weight families the
// score / information / residual / influence formulas consume.
struct DesignState {
  Eigen::VectorXd y;
  Eigen::VectorXd eta, zeta, mu, sigma2;
  Eigen::VectorXd dev;       // d(y_t; mu_t)
  Eigen::VectorXd a;         // d/(2 sigma2^2) - 1/(2 sigma2)
  Eigen::VectorXd u;         // {d + 1/(mu^2(1-mu)^2)} / (mu(1-mu))
  Eigen::VectorXd du_dmu;    // exact derivative of u_t in mu_t
  Eigen::VectorXd qvec;      // -sigma2 * d2l/deta2
  Eigen::VectorXd v;         // sigma2 {3 sigma2/(mu(1-mu)) + 1/(mu^3(1-mu)^3)}
  Eigen::VectorXd w;         // v / (sigma2 g'(mu)^2), Fisher weight for beta
  Eigen::VectorXd d_fisher;  // 1 / (2 sigma2^2 h'(sigma2)^2), Fisher weight for gamma
  Eigen::VectorXd nu;        // -d2l/dzeta2 (observed)
  Eigen::VectorXd m;         // d/dy { u (y-mu) }, response-perturbation weight
  Eigen::VectorXd b;         // (dd/dy) / (2 sigma2), response-perturbation weight
  Eigen::VectorXd svec;      // 1/sigma2          (diag S)
  Eigen::VectorXd tvec;      // 1/g'(mu)          (diag T)
  Eigen::VectorXd hvec;      // 1/h'(sigma2)      (diag H)
  Eigen::VectorXd gpp_over_gp, hpp, hp;
  Eigen::VectorXd ymu;       // y - mu            (diag E)
  Eigen::MatrixXd Xt;        // n x k, d eta / d beta
  Eigen::MatrixXd Zt;        // n x q, d zeta / d gamma
  std::vector<Eigen::MatrixXd> Xbb;  // n of k x k, d2 eta_t / dbeta dbeta
  std::vector<Eigen::MatrixXd> Zgg;  // n of q x q
  Eigen::VectorXd b_beta;    // s t u (y-mu) per observation
  Eigen::VectorXd b_gamma;   // h a per observation

  Eigen::Index n() const { return y.size(); }
  Eigen::Index k() const { return Xt.cols(); }
  Eigen::Index q() const { return Zt.cols(); }
};

double link_eval_forward(const ModelSpec& spec, double mu);

// Precompiled derivative trees plus per-row bindings; assemble() is then a
// pure function of (beta, gamma). Used by everything that evaluates the same
// model repeatedly (fitting, envelopes, Monte Carlo).
class CompiledModel {
 public:
  CompiledModel(const ModelSpec& spec, const Dataset& data);

  DesignState assemble(const Eigen::VectorXd& beta, const Eigen::VectorXd& gamma) const;

  const ModelSpec& spec() const { return spec_; }
  const Dataset& data() const { return data_; }

 private:
  ModelSpec spec_;
  Dataset data_;
  formula::CompiledFormula mean_f_, disp_f_;
};

// One-shot convenience wrapper around CompiledModel::assemble.
DesignState assemble(const ModelSpec& spec, const Dataset& data, const Eigen::VectorXd& beta,
                     const Eigen::VectorXd& gamma);

double log_likelihood(const DesignState& state);

}  // namespace simplexfit::model

#endif
