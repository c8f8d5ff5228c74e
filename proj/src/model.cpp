#include "simplexfit/model.hpp"

#include <cmath>
#include <set>

#include "simplexfit/errors.hpp"

namespace simplexfit::model {

using links::LinkMode;

void ModelSpec::validate() const {
  std::set<std::string> betas(beta_names.begin(), beta_names.end());
  std::set<std::string> gammas(gamma_names.begin(), gamma_names.end());
  if (betas.size() != beta_names.size() || gammas.size() != gamma_names.size())
    throw ConfigError("duplicate parameter name in model spec");
  for (const auto& name : betas)
    if (gammas.count(name))
      throw ConfigError("parameter '" + name + "' appears in both submodels");
  if (mean_formula.parameters() != betas)
    throw ConfigError("beta_names must cover exactly the parameters of the mean formula");
  if (dispersion_formula.parameters() != gammas)
    throw ConfigError("gamma_names must cover exactly the parameters of the dispersion formula");
}

std::map<std::string, double> ModelSpec::beta_map(const Eigen::VectorXd& beta) const {
  std::map<std::string, double> m;
  for (std::size_t i = 0; i < beta_names.size(); ++i) m[beta_names[i]] = beta[static_cast<Eigen::Index>(i)];
  return m;
}

std::map<std::string, double> ModelSpec::gamma_map(const Eigen::VectorXd& gamma) const {
  std::map<std::string, double> m;
  for (std::size_t j = 0; j < gamma_names.size(); ++j) m[gamma_names[j]] = gamma[static_cast<Eigen::Index>(j)];
  return m;
}

CompiledModel::CompiledModel(const ModelSpec& spec, const Dataset& data)
    : spec_(spec),
      data_(data),
      mean_f_(spec.mean_formula, spec.beta_names),
      disp_f_(spec.dispersion_formula, spec.gamma_names) {
  spec_.validate();
  for (const auto& name : spec_.mean_formula.covariates())
    if (!data_.has_column(name))
      throw DataError("mean formula covariate '" + name + "' not in dataset");
  for (const auto& name : spec_.dispersion_formula.covariates())
    if (!data_.has_column(name))
      throw DataError("dispersion formula covariate '" + name + "' not in dataset");
}

DesignState CompiledModel::assemble(const Eigen::VectorXd& beta,
                                    const Eigen::VectorXd& gamma) const {
  const auto n = static_cast<Eigen::Index>(data_.n_rows());
  const auto k = static_cast<Eigen::Index>(spec_.k());
  const auto q = static_cast<Eigen::Index>(spec_.q());
  if (beta.size() != k || gamma.size() != q)
    throw NumericalError("parameter vector length mismatch");
  if (!beta.allFinite() || !gamma.allFinite())
    throw NumericalError("non-finite parameters passed to assemble");

  const auto bmap = spec_.beta_map(beta);
  const auto gmap = spec_.gamma_map(gamma);
  const auto& yv = data_.response();

  DesignState st;
  st.y.resize(n);
  st.eta.resize(n); st.zeta.resize(n); st.mu.resize(n); st.sigma2.resize(n);
  st.dev.resize(n); st.a.resize(n); st.u.resize(n); st.du_dmu.resize(n);
  st.qvec.resize(n); st.v.resize(n); st.w.resize(n); st.d_fisher.resize(n);
  st.nu.resize(n); st.m.resize(n); st.b.resize(n);
  st.svec.resize(n); st.tvec.resize(n); st.hvec.resize(n);
  st.gpp_over_gp.resize(n); st.hpp.resize(n); st.hp.resize(n);
  st.ymu.resize(n);
  st.Xt.resize(n, k); st.Zt.resize(n, q);
  st.Xbb.resize(static_cast<std::size_t>(n));
  st.Zgg.resize(static_cast<std::size_t>(n));
  st.b_beta.resize(n); st.b_gamma.resize(n);

  for (Eigen::Index t = 0; t < n; ++t) {
    const auto ts = static_cast<std::size_t>(t);
    const auto& row = data_.row(ts);
    try {
      const auto mb = mean_f_.eval(bmap, row);
      const auto db = disp_f_.eval(gmap, row);
      const double eta = mb.value;
      const double zeta = db.value;
      const double mu = links::link_eval(spec_.mean_link, LinkMode::Inverse, eta);
      const double s2 = links::link_eval(spec_.dispersion_link, LinkMode::Inverse, zeta);
      const double y = yv[ts];

      const double om = 1.0 - mu;
      const double mm = mu * om;
      const double c = 1.0 / (mm * mm);          // 1 / (mu^2 (1-mu)^2)
      const double r = y - mu;
      const double yy = y * (1.0 - y);
      const double d = r * r * c / yy;

      const double a = d / (2.0 * s2 * s2) - 1.0 / (2.0 * s2);
      const double u = (d + c) / mm;
      const double dd_dmu = -2.0 * u * r;
      const double cprime = 2.0 * (2.0 * mu - 1.0) * c / mm;
      const double du = (2.0 * mu - 1.0) * c * (d + c) + (dd_dmu + cprime) / mm;

      const double gp = links::link_eval(spec_.mean_link, LinkMode::D1, mu);
      const double gpp = links::link_eval(spec_.mean_link, LinkMode::D2, mu);
      const double hp = links::link_eval(spec_.dispersion_link, LinkMode::D1, s2);
      const double hpp = links::link_eval(spec_.dispersion_link, LinkMode::D2, s2);

      const double qt = (u - r * du + r * u * gpp / gp) / (gp * gp);
      const double v = s2 * (3.0 * s2 / mm + 1.0 / (mm * mm * mm));
      const double w = v / (s2 * gp * gp);
      const double dfish = 1.0 / (2.0 * s2 * s2 * hp * hp);
      // observed gamma curvature: -d2l/dzeta2
      const double nut = (d / (s2 * s2 * s2) - 1.0 / (2.0 * s2 * s2)) / (hp * hp) +
                         a * hpp / (hp * hp * hp);
      const double dd_dy = c * (2.0 * r * yy - r * r * (1.0 - 2.0 * y)) / (yy * yy);
      const double mt = u + r * dd_dy / mm;
      const double bt = dd_dy / (2.0 * s2);

      st.y[t] = y;
      st.eta[t] = eta; st.zeta[t] = zeta; st.mu[t] = mu; st.sigma2[t] = s2;
      st.dev[t] = d; st.a[t] = a; st.u[t] = u; st.du_dmu[t] = du;
      st.qvec[t] = qt; st.v[t] = v; st.w[t] = w; st.d_fisher[t] = dfish;
      st.nu[t] = nut; st.m[t] = mt; st.b[t] = bt;
      st.svec[t] = 1.0 / s2; st.tvec[t] = 1.0 / gp; st.hvec[t] = 1.0 / hp;
      st.gpp_over_gp[t] = gpp / gp; st.hpp[t] = hpp; st.hp[t] = hp;
      st.ymu[t] = r;
      st.Xt.row(t) = mb.grad_params.transpose();
      st.Zt.row(t) = db.grad_params.transpose();
      st.Xbb[ts] = mb.hess_params;
      st.Zgg[ts] = db.hess_params;
      st.b_beta[t] = r * u / (s2 * gp);
      st.b_gamma[t] = a / hp;
    } catch (const DomainError& e) {
      throw NumericalError("invalid model state at observation " + std::to_string(t + 1) +
                           ": " + e.what());
    }
  }
  for (Eigen::Index t = 0; t < n; ++t) {
    const bool ok = std::isfinite(st.qvec[t]) && std::isfinite(st.nu[t]) && std::isfinite(st.w[t]) &&
                    std::isfinite(st.m[t]) && std::isfinite(st.b[t]) && std::isfinite(st.u[t]);
    if (!ok)
      throw NumericalError("non-finite weight family at observation " + std::to_string(t + 1));
  }
  return st;
}

DesignState assemble(const ModelSpec& spec, const Dataset& data, const Eigen::VectorXd& beta,
                     const Eigen::VectorXd& gamma) {
  return CompiledModel(spec, data).assemble(beta, gamma);
}

double log_likelihood(const DesignState& st) {
  constexpr double kLog2Pi = 1.8378770664093454836;
  double ll = 0.0;
  for (Eigen::Index t = 0; t < st.n(); ++t) {
    const double y = st.y[t];
    ll += -0.5 * kLog2Pi - 0.5 * std::log(st.sigma2[t]) - 1.5 * std::log(y * (1.0 - y)) -
          st.dev[t] / (2.0 * st.sigma2[t]);
  }
  return ll;
}

double link_eval_forward(const ModelSpec& spec, double mu) {
  return links::link_eval(spec.mean_link, LinkMode::Forward, mu);
}

}  // namespace simplexfit::model
