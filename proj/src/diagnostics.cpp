#include "simplexfit/diagnostics.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "simplexfit/dist.hpp"
#include "simplexfit/errors.hpp"
#include "simplexfit/formula.hpp"

namespace simplexfit::diagnostics {

namespace {

void require_converged(const estimate::FittedModel& fit, const char* op) {
  if (!fit.converged) throw FitError(std::string(op) + " refuses a non-converged fit");
}

// Residuals and hat matrix straight from a design state (shared between the
// fitted-data path and envelope replicates evaluated at fixed parameters).
ResidualReport residuals_from_state(const model::DesignState& s) {
  const Eigen::Index n = s.n();
  const Eigen::VectorXd sw = s.svec.cwiseProduct(s.w);
  const Eigen::MatrixXd A = sw.cwiseSqrt().asDiagonal() * s.Xt;
  Eigen::MatrixXd M = s.Xt.transpose() * sw.asDiagonal() * s.Xt;
  M = ((M + M.transpose()) / 2.0).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M);
  const double emax = es.eigenvalues().maxCoeff();
  if (!(emax > 0.0) || es.eigenvalues().minCoeff() <= 1e-12 * emax)
    throw NumericalError("singular weighted design in residual computation");
  const Eigen::MatrixXd Minv = es.eigenvectors() *
                               es.eigenvalues().cwiseInverse().asDiagonal() *
                               es.eigenvectors().transpose();

  ResidualReport out;
  out.h_star = A * Minv * A.transpose();
  out.h_star = ((out.h_star + out.h_star.transpose()) / 2.0).eval();
  out.h_star_diag = out.h_star.diagonal();
  out.r_beta.resize(n);
  out.working_z.resize(n);
  for (Eigen::Index t = 0; t < n; ++t) {
    const double one_minus_h = 1.0 - out.h_star_diag(t);
    if (one_minus_h <= 1e-10)
      throw NumericalError("weighted residual undefined: leverage of observation " +
                           std::to_string(t + 1) + " is numerically 1");
    out.r_beta(t) = s.u(t) * s.ymu(t) / std::sqrt(s.v(t) * one_minus_h);
    // Working variable z = X beta + W^-1 U T (y - mu); the X beta term is
    // added by the caller, which knows the coefficient vector.
    out.working_z(t) = s.u(t) * s.tvec(t) / s.w(t) * s.ymu(t);
  }
  return out;
}

double empirical_quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] * (1.0 - frac) + v[hi] * frac;
}

struct CurvatureCore {
  Eigen::MatrixXd full, beta_only, gamma_only;  // A in B = Delta' A Delta
};

CurvatureCore curvature_cores(const model::DesignState& s) {
  const Eigen::Index k = s.k(), q = s.q();
  const Eigen::MatrixXd J = estimate::observed_information(s);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  const double emax = es.eigenvalues().cwiseAbs().maxCoeff();
  const double emin = es.eigenvalues().cwiseAbs().minCoeff();
  if (!(emax > 0.0) || emin == 0.0 || emax / emin > 1e12 || es.eigenvalues().minCoeff() <= 0.0)
    throw NumericalError("singular observed information: influence curvatures are undefined");
  const Eigen::MatrixXd Jinv = es.eigenvectors() * es.eigenvalues().cwiseInverse().asDiagonal() *
                               es.eigenvectors().transpose();

  auto block_inverse = [](const Eigen::MatrixXd& B, const char* label) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> e(B);
    const double mx = e.eigenvalues().maxCoeff();
    if (!(mx > 0.0) || e.eigenvalues().minCoeff() <= 1e-12 * mx)
      throw NumericalError(std::string("singular observed information (") + label + " block)");
    return Eigen::MatrixXd(e.eigenvectors() * e.eigenvalues().cwiseInverse().asDiagonal() *
                           e.eigenvectors().transpose());
  };

  CurvatureCore core;
  core.full = Jinv;
  core.beta_only = Jinv;
  core.beta_only.bottomRightCorner(q, q) -= block_inverse(J.bottomRightCorner(q, q), "gamma");
  core.gamma_only = Jinv;
  core.gamma_only.topLeftCorner(k, k) -= block_inverse(J.topLeftCorner(k, k), "beta");
  return core;
}

CurvatureSet curvature_set(const Eigen::MatrixXd& delta, const Eigen::MatrixXd& core) {
  const Eigen::Index n = delta.cols();
  CurvatureSet out;
  out.c_t.resize(n);

  if (n <= 2000) {
    Eigen::MatrixXd B = delta.transpose() * core * delta;
    B = ((B + B.transpose()) / 2.0).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(B);
    Eigen::Index arg = 0;
    es.eigenvalues().maxCoeff(&arg);
    out.c_max = 2.0 * es.eigenvalues()(arg);
    out.i_max = es.eigenvectors().col(arg);
    out.c_t = 2.0 * B.diagonal().cwiseAbs();
  } else {
    // Large n: power iteration for the top eigenpair; B is never formed.
    Eigen::VectorXd v = Eigen::VectorXd::Ones(n) / std::sqrt(static_cast<double>(n));
    double lambda = 0.0;
    for (int it = 0; it < 1000; ++it) {
      Eigen::VectorXd w = delta.transpose() * (core * (delta * v));
      const double norm = w.norm();
      if (norm == 0.0) break;
      w /= norm;
      const double next = w.dot(delta.transpose() * (core * (delta * w)));
      const bool done = std::abs(next - lambda) <= 1e-12 * std::max(1.0, std::abs(next));
      lambda = next;
      v = w;
      if (done) break;
    }
    out.c_max = 2.0 * lambda;
    out.i_max = v;
    for (Eigen::Index t = 0; t < n; ++t) {
      const Eigen::VectorXd col = delta.col(t);
      out.c_t(t) = 2.0 * std::abs(col.dot(core * col));
    }
  }

  out.i_max /= out.i_max.norm();
  Eigen::Index imx = 0;
  out.i_max.cwiseAbs().maxCoeff(&imx);
  if (out.i_max(imx) < 0.0) out.i_max = -out.i_max;

  out.threshold = 2.0 * out.c_t.mean();
  for (Eigen::Index t = 0; t < n; ++t)
    if (out.c_t(t) > out.threshold) out.flagged.push_back(static_cast<std::size_t>(t));
  return out;
}

// Per-observation covariate sensitivities of one submodel under the
// covariate perturbation scheme.
struct CovariateTerms {
  Eigen::VectorXd d_delta;          // scaled first derivative in delta_t
  Eigen::MatrixXd mixed;            // n x p, scaled d2 predictor / dparam ddelta_t
};

CovariateTerms covariate_terms(const formula::ExpressionTree& tree,
                               const std::vector<std::string>& param_names,
                               const Eigen::VectorXd& coefs, const Dataset& data,
                               const std::string& cov_name, const char* submodel) {
  const std::size_t n = data.n_rows();
  const std::size_t p = param_names.size();
  CovariateTerms out;
  out.d_delta = Eigen::VectorXd::Zero(n);
  out.mixed = Eigen::MatrixXd::Zero(n, p);
  if (cov_name.empty()) return out;
  if (tree.covariates().count(cov_name) == 0)
    throw ConfigError("covariate '" + cov_name + "' does not appear in the " + submodel +
                      " formula");
  const std::vector<double>& col = data.column(cov_name);
  double mean = 0.0;
  for (double v : col) mean += v;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double v : col) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (!(sd > 0.0))
    throw DataError("covariate '" + cov_name + "' has zero sample variance; the perturbation "
                    "scale is undefined");

  formula::CompiledFormula cf(tree, param_names, cov_name);
  std::map<std::string, double> pm;
  for (std::size_t i = 0; i < p; ++i) pm.emplace(param_names[i], coefs(i));
  for (std::size_t t = 0; t < n; ++t) {
    formula::DerivativeBundle d = cf.eval(pm, data.row(t));
    out.d_delta(t) = sd * d.d_covariate;
    out.mixed.row(t) = sd * d.mixed_param_covariate.transpose();
  }
  return out;
}

Eigen::MatrixXd build_delta(const estimate::FittedModel& fit, const Scheme& scheme) {
  const model::DesignState& s = fit.terminal_state;
  const Eigen::Index n = s.n(), k = s.k(), q = s.q();
  Eigen::MatrixXd delta(k + q, n);

  switch (scheme.kind) {
    case Scheme::Kind::CaseWeights:
      delta.topRows(k) = s.Xt.transpose() * s.b_beta.asDiagonal();
      delta.bottomRows(q) = s.Zt.transpose() * s.b_gamma.asDiagonal();
      break;
    case Scheme::Kind::Response: {
      Eigen::VectorXd sy(n);
      for (Eigen::Index t = 0; t < n; ++t) sy(t) = std::sqrt(dist::variance_function(s.mu(t)));
      const Eigen::VectorXd top_w =
          s.svec.cwiseProduct(s.tvec).cwiseProduct(s.m).cwiseProduct(sy);
      const Eigen::VectorXd bot_w =
          s.svec.cwiseProduct(s.hvec).cwiseProduct(s.b).cwiseProduct(sy);
      delta.topRows(k) = s.Xt.transpose() * top_w.asDiagonal();
      delta.bottomRows(q) = s.Zt.transpose() * bot_w.asDiagonal();
      break;
    }
    case Scheme::Kind::Covariate: {
      if (scheme.covariate_mean.empty() && scheme.covariate_dispersion.empty())
        throw ConfigError("covariate scheme requires a covariate name in at least one submodel");
      const CovariateTerms xm =
          covariate_terms(fit.spec.mean_formula, fit.spec.beta_names, fit.beta_hat, fit.data,
                          scheme.covariate_mean, "mean");
      const CovariateTerms zm =
          covariate_terms(fit.spec.dispersion_formula, fit.spec.gamma_names, fit.gamma_hat,
                          fit.data, scheme.covariate_dispersion, "dispersion");
      const Eigen::VectorXd cross = s.svec.cwiseProduct(s.svec)
                                        .cwiseProduct(s.hvec)
                                        .cwiseProduct(s.tvec)
                                        .cwiseProduct(s.u)
                                        .cwiseProduct(s.ymu);
      for (Eigen::Index t = 0; t < n; ++t) {
        delta.col(t).head(k) = -(cross(t) * zm.d_delta(t) + s.svec(t) * s.qvec(t) * xm.d_delta(t)) *
                                   s.Xt.row(t).transpose() +
                               s.b_beta(t) * xm.mixed.row(t).transpose();
        delta.col(t).tail(q) = -(cross(t) * xm.d_delta(t) + s.nu(t) * zm.d_delta(t)) *
                                   s.Zt.row(t).transpose() +
                               s.b_gamma(t) * zm.mixed.row(t).transpose();
      }
      break;
    }
  }
  return delta;
}

}  // namespace

ResidualReport weighted_residuals(const estimate::FittedModel& fit) {
  require_converged(fit, "weighted_residuals");
  ResidualReport out = residuals_from_state(fit.terminal_state);
  out.working_z += fit.terminal_state.Xt * fit.beta_hat;
  return out;
}

EnvelopeBands simulated_envelope(const estimate::FittedModel& fit, int n_rep, std::uint64_t seed,
                                 bool refit) {
  require_converged(fit, "simulated_envelope");
  if (n_rep < 19) throw ConfigError("simulated_envelope requires n_rep >= 19");

  const model::DesignState& s = fit.terminal_state;
  const Eigen::Index n = s.n();

  EnvelopeBands out;
  out.seed = seed;
  out.n_replicates = n_rep;
  {
    ResidualReport base = weighted_residuals(fit);
    out.observed = base.r_beta;
    std::sort(out.observed.data(), out.observed.data() + n);
  }

  // Samplers are a pure function of the fitted (mu, sigma2); built once and
  // shared across replicates.
  std::vector<dist::Sampler> samplers;
  samplers.reserve(n);
  for (Eigen::Index t = 0; t < n; ++t)
    samplers.emplace_back(dist::SimplexParams(s.mu(t), s.sigma2(t)));

  model::CompiledModel compiled(fit.spec, fit.data);
  std::vector<Eigen::VectorXd> sorted_reps;
  std::vector<double> pooled;
  sorted_reps.reserve(n_rep);
  pooled.reserve(static_cast<std::size_t>(n_rep) * n);

  for (int rep = 0; rep < n_rep; ++rep) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(rep)));
    std::vector<double> ystar(n);
    for (Eigen::Index t = 0; t < n; ++t) ystar[t] = samplers[t].draw(rng);
    try {
      Eigen::VectorXd r;
      if (refit) {
        estimate::FittedModel f = estimate::fit(fit.spec, fit.data.with_response(ystar),
                                                fit.options);
        if (!f.converged) {
          ++out.n_skipped;
          continue;
        }
        r = weighted_residuals(f).r_beta;
      } else {
        model::CompiledModel local(fit.spec, fit.data.with_response(ystar));
        r = residuals_from_state(local.assemble(fit.beta_hat, fit.gamma_hat)).r_beta;
      }
      std::sort(r.data(), r.data() + r.size());
      pooled.insert(pooled.end(), r.data(), r.data() + r.size());
      sorted_reps.push_back(std::move(r));
    } catch (const std::runtime_error&) {
      ++out.n_skipped;
    }
  }

  if (out.n_skipped * 10 > n_rep)
    throw FitError("simulated_envelope: more than 10% of replicates failed to refit (" +
                   std::to_string(out.n_skipped) + " of " + std::to_string(n_rep) + ")");

  out.lower.resize(n);
  out.median.resize(n);
  out.upper.resize(n);
  const std::size_t m = sorted_reps.size();
  std::vector<double> slot(m);
  for (Eigen::Index t = 0; t < n; ++t) {
    for (std::size_t i = 0; i < m; ++i) slot[i] = sorted_reps[i](t);
    std::sort(slot.begin(), slot.end());
    out.lower(t) = slot.front();
    out.upper(t) = slot.back();
    out.median(t) = (m % 2 == 1) ? slot[m / 2] : 0.5 * (slot[m / 2 - 1] + slot[m / 2]);
  }
  out.omega_lo = empirical_quantile(pooled, 0.025);
  out.omega_hi = empirical_quantile(std::move(pooled), 0.975);
  return out;
}

InfluenceReport influence(const estimate::FittedModel& fit, const Scheme& scheme) {
  require_converged(fit, "influence");
  InfluenceReport out;
  out.scheme = scheme;
  out.delta = build_delta(fit, scheme);
  const CurvatureCore core = curvature_cores(fit.terminal_state);
  out.full = curvature_set(out.delta, core.full);
  out.beta_only = curvature_set(out.delta, core.beta_only);
  out.gamma_only = curvature_set(out.delta, core.gamma_only);
  return out;
}

const CurvatureSet& curvature_for_subset(const InfluenceReport& report, Subset subset) {
  switch (subset) {
    case Subset::BetaOnly:
      return report.beta_only;
    case Subset::GammaOnly:
      return report.gamma_only;
    case Subset::Theta:
    default:
      return report.full;
  }
}

DeletionReport delete_and_refit(const estimate::FittedModel& fit,
                                const std::vector<std::size_t>& cases) {
  require_converged(fit, "delete_and_refit");
  std::set<std::size_t> uniq(cases.begin(), cases.end());
  for (std::size_t c : uniq)
    if (c >= fit.data.n_rows())
      throw DataError("deletion case index " + std::to_string(c + 1) + " is out of range");
  if (fit.data.n_rows() - uniq.size() <= fit.spec.k() + fit.spec.q())
    throw DataError("too few observations remain after deletion");

  DeletionReport out;
  out.cases.assign(uniq.begin(), uniq.end());
  out.refit = estimate::fit(fit.spec, fit.data.without_rows(out.cases), fit.options);
  if (!out.refit.converged)
    throw FitError("deletion refit did not converge for the requested case set");

  const std::vector<estimate::InferenceRow> old_rows = estimate::inference_table(fit);
  const std::vector<estimate::InferenceRow> new_rows = estimate::inference_table(out.refit);
  for (std::size_t i = 0; i < old_rows.size(); ++i) {
    DeletionRow r;
    r.name = old_rows[i].name;
    r.estimate_old = old_rows[i].estimate;
    r.estimate_new = new_rows[i].estimate;
    r.pct_change_estimate =
        100.0 * (r.estimate_new - r.estimate_old) / std::abs(r.estimate_old);
    r.se_old = old_rows[i].se;
    r.se_new = new_rows[i].se;
    r.pct_change_se = 100.0 * (r.se_new - r.se_old) / std::abs(r.se_old);
    r.p_new = new_rows[i].p;
    out.rows.push_back(std::move(r));
  }
  return out;
}

}  // namespace simplexfit::diagnostics
