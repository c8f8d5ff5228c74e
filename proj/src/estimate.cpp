#include "simplexfit/estimate.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "simplexfit/dist.hpp"
#include "simplexfit/errors.hpp"
#include "simplexfit/formula.hpp"
#include "simplexfit/links.hpp"

namespace simplexfit::estimate {

namespace {

// Solve A x = b for symmetric A via eigendecomposition, with the ridge
// fallback the starting-value scheme documents. Returns true if the ridge
// was needed.
bool solve_ls_normal(Eigen::MatrixXd A, const Eigen::VectorXd& b, Eigen::VectorXd& x) {
  const Eigen::Index p = A.rows();
  bool ridged = false;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
  const double emax = es.eigenvalues().cwiseAbs().maxCoeff();
  if (!(emax > 0.0) || es.eigenvalues().minCoeff() <= 1e-12 * emax) {
    const double ridge = 1e-8 * std::max(A.trace(), 1.0) / static_cast<double>(p);
    A.diagonal().array() += ridge;
    es.compute(A);
    ridged = true;
  }
  x = es.eigenvectors() *
      (es.eigenvalues().cwiseInverse().asDiagonal() * (es.eigenvectors().transpose() * b));
  return ridged;
}

// Symmetric positive-definite solve for the scoring steps and covariance;
// raises NumericalError on a singular or indefinite block.
Eigen::MatrixXd spd_inverse(const Eigen::MatrixXd& A, const char* label) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
  const double emax = es.eigenvalues().maxCoeff();
  const double emin = es.eigenvalues().minCoeff();
  if (!(emax > 0.0) || emin <= 1e-12 * emax)
    throw NumericalError(std::string("singular information (") + label + " block)");
  return es.eigenvectors() * es.eigenvalues().cwiseInverse().asDiagonal() *
         es.eigenvectors().transpose();
}

struct SubmodelStart {
  Eigen::VectorXd coef;  // full-length, pinned entries filled with their pins
  std::vector<std::string> notes;
};

// Step 1 of the two-step scheme for one submodel: substitute pinned
// parameters, require the remainder to be affine in the free parameters,
// and regress the link-transformed target on the induced linear design.
SubmodelStart linear_start(const formula::ExpressionTree& tree,
                           const std::vector<std::string>& param_names,
                           const std::map<std::string, double>& pins, const Dataset& data,
                           const Eigen::VectorXd& target, const char* label) {
  SubmodelStart out;
  const std::size_t k = param_names.size();
  std::map<std::string, double> active_pins;
  std::set<std::string> free_set;
  std::vector<std::string> free_names;
  for (const auto& name : param_names) {
    auto it = pins.find(name);
    if (it != pins.end()) {
      active_pins.emplace(name, it->second);
    } else {
      free_set.insert(name);
      free_names.push_back(name);
    }
  }

  const formula::NodePtr pinned = formula::substitute_parameters(tree.root(), active_pins);
  std::vector<formula::NodePtr> grads;
  grads.reserve(free_names.size());
  for (const auto& name : free_names) {
    formula::NodePtr g = formula::derivative(pinned, name, formula::Node::Kind::Parameter);
    if (formula::references_any(g, free_set, formula::Node::Kind::Parameter))
      throw FitError(std::string("pinned value missing: the ") + label + " predictor is not "
                     "linear in parameter '" + name +
                     "'; supply a pinned start for every parameter the linear reduction "
                     "cannot identify");
    grads.push_back(std::move(g));
  }

  const std::size_t n = data.n_rows();
  const std::size_t p = free_names.size();
  Eigen::MatrixXd X(n, p);
  Eigen::VectorXd r(n);
  std::map<std::string, double> zero_params;
  for (const auto& name : free_names) zero_params.emplace(name, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    formula::Bindings b{&zero_params, &data.row(t)};
    r(t) = target(t) - formula::evaluate(pinned, b);
    for (std::size_t j = 0; j < p; ++j) X(t, j) = formula::evaluate(grads[j], b);
  }

  Eigen::VectorXd sol = Eigen::VectorXd::Zero(p);
  if (p > 0) {
    if (solve_ls_normal(X.transpose() * X, X.transpose() * r, sol))
      out.notes.push_back(std::string("starting values: singular linear design for the ") +
                          label + " submodel, ridge fallback applied");
  }
  out.coef.resize(k);
  std::size_t j = 0;
  for (std::size_t i = 0; i < k; ++i) {
    auto it = pins.find(param_names[i]);
    out.coef(i) = (it != pins.end()) ? it->second : sol(j++);
  }
  return out;
}

// Step 2: one Gauss-Newton correction through the full nonlinear gradient.
// `as_printed` drops the addition of the step-1 coefficients (the degenerate
// variant kept only for comparison).
Eigen::VectorXd nonlinear_step(const formula::CompiledFormula& cf,
                               const std::vector<std::string>& param_names, const Dataset& data,
                               const Eigen::VectorXd& target, const Eigen::VectorXd& coef_l,
                               bool as_printed, std::vector<std::string>& notes,
                               const char* label) {
  const std::size_t n = data.n_rows();
  const std::size_t k = param_names.size();
  std::map<std::string, double> pm;
  for (std::size_t i = 0; i < k; ++i) pm.emplace(param_names[i], coef_l(i));
  Eigen::MatrixXd X(n, k);
  Eigen::VectorXd r(n);
  for (std::size_t t = 0; t < n; ++t) {
    formula::DerivativeBundle d = cf.eval(pm, data.row(t));
    r(t) = target(t) - d.value;
    X.row(t) = d.grad_params.transpose();
  }
  Eigen::VectorXd theta;
  if (solve_ls_normal(X.transpose() * X, X.transpose() * r, theta))
    notes.push_back(std::string("starting values: singular linearized design for the ") + label +
                    " submodel, ridge fallback applied");
  return as_printed ? theta : Eigen::VectorXd(coef_l + theta);
}

struct BlockInfo {
  Eigen::MatrixXd Kbb, Kgg;
};

BlockInfo fisher_blocks(const model::DesignState& s) {
  const Eigen::VectorXd wb = s.svec.cwiseProduct(s.w);
  BlockInfo out;
  out.Kbb = s.Xt.transpose() * wb.asDiagonal() * s.Xt;
  out.Kgg = s.Zt.transpose() * s.d_fisher.asDiagonal() * s.Zt;
  out.Kbb = ((out.Kbb + out.Kbb.transpose()) / 2.0).eval();
  out.Kgg = ((out.Kgg + out.Kgg.transpose()) / 2.0).eval();
  return out;
}

}  // namespace

StartingValues starting_values(const model::ModelSpec& spec, const Dataset& data,
                               bool as_printed) {
  spec.validate();
  StartingValues out;
  const std::size_t n = data.n_rows();
  const std::vector<double>& y = data.response();

  // Mean submodel: regress g(y).
  Eigen::VectorXd gy(n);
  for (std::size_t t = 0; t < n; ++t)
    gy(t) = links::link_eval(spec.mean_link, links::LinkMode::Forward, y[t]);
  SubmodelStart beta_l =
      linear_start(spec.mean_formula, spec.beta_names, spec.pinned_starts, data, gy, "mean");
  out.notes = beta_l.notes;
  formula::CompiledFormula mean_cf(spec.mean_formula, spec.beta_names);
  Eigen::VectorXd beta_nl =
      nonlinear_step(mean_cf, spec.beta_names, data, gy, beta_l.coef, as_printed, out.notes,
                     "mean");

  // Dispersion submodel: pseudo-observations d(y_t; mu_check_t), floored to
  // keep h applicable when some y_t sits numerically on its fitted mean.
  auto pseudo_target = [&](const Eigen::VectorXd& beta) {
    std::map<std::string, double> pm;
    for (std::size_t i = 0; i < spec.beta_names.size(); ++i) pm.emplace(spec.beta_names[i], beta(i));
    Eigen::VectorXd hz(n);
    for (std::size_t t = 0; t < n; ++t) {
      const double eta = mean_cf.value(pm, data.row(t));
      const double mu = links::link_eval(spec.mean_link, links::LinkMode::Inverse, eta);
      const double s2 = std::max(dist::deviance(y[t], mu), 1e-12);
      hz(t) = links::link_eval(spec.dispersion_link, links::LinkMode::Forward, s2);
    }
    return hz;
  };

  SubmodelStart gamma_l = linear_start(spec.dispersion_formula, spec.gamma_names,
                                       spec.pinned_starts, data, pseudo_target(beta_l.coef),
                                       "dispersion");
  out.notes.insert(out.notes.end(), gamma_l.notes.begin(), gamma_l.notes.end());
  formula::CompiledFormula disp_cf(spec.dispersion_formula, spec.gamma_names);
  out.gamma0 = nonlinear_step(disp_cf, spec.gamma_names, data, pseudo_target(beta_nl),
                              gamma_l.coef, as_printed, out.notes, "dispersion");
  out.beta0 = std::move(beta_nl);

  if (!out.beta0.allFinite() || !out.gamma0.allFinite())
    throw FitError("starting values are not finite");
  return out;
}

Eigen::VectorXd score(const model::DesignState& state) {
  Eigen::VectorXd u(state.k() + state.q());
  u.head(state.k()) = state.Xt.transpose() * state.b_beta;
  u.tail(state.q()) = state.Zt.transpose() * state.b_gamma;
  return u;
}

Eigen::MatrixXd fisher_information(const model::DesignState& state) {
  const BlockInfo blocks = fisher_blocks(state);
  const Eigen::Index k = state.k(), q = state.q();
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(k + q, k + q);
  K.topLeftCorner(k, k) = blocks.Kbb;
  K.bottomRightCorner(q, q) = blocks.Kgg;
  return K;
}

Eigen::MatrixXd observed_information(const model::DesignState& state) {
  const Eigen::Index n = state.n(), k = state.k(), q = state.q();

  Eigen::MatrixXd lbb =
      -(state.Xt.transpose() * state.svec.cwiseProduct(state.qvec).asDiagonal() * state.Xt);
  for (Eigen::Index t = 0; t < n; ++t) lbb += state.b_beta(t) * state.Xbb[t];

  const Eigen::VectorXd cross = state.svec.cwiseProduct(state.svec)
                                    .cwiseProduct(state.hvec)
                                    .cwiseProduct(state.tvec)
                                    .cwiseProduct(state.u)
                                    .cwiseProduct(state.ymu);
  Eigen::MatrixXd lbg = -(state.Xt.transpose() * cross.asDiagonal() * state.Zt);

  Eigen::MatrixXd lgg = -(state.Zt.transpose() * state.nu.asDiagonal() * state.Zt);
  for (Eigen::Index t = 0; t < n; ++t) lgg += state.b_gamma(t) * state.Zgg[t];

  Eigen::MatrixXd J(k + q, k + q);
  J.topLeftCorner(k, k) = -lbb;
  J.topRightCorner(k, q) = -lbg;
  J.bottomLeftCorner(q, k) = -lbg.transpose();
  J.bottomRightCorner(q, q) = -lgg;
  return ((J + J.transpose()) / 2.0).eval();
}

FittedModel fit(const model::ModelSpec& spec, const Dataset& data, const FitOptions& opts) {
  spec.validate();
  if (opts.max_iterations < 1 || !(opts.grad_tolerance > 0.0) || opts.step_halving_max < 1)
    throw ConfigError("invalid fit options: tolerances must be positive, max_iterations >= 1");
  const std::size_t k = spec.k(), q = spec.q();
  if (data.n_rows() <= k + q)
    throw DataError("too few observations: n must exceed the parameter count");

  FittedModel out;
  out.spec = spec;
  out.data = data;
  out.options = opts;

  Eigen::VectorXd beta, gamma;
  if (opts.starting_mode == FitOptions::StartingMode::UserSupplied) {
    if (static_cast<std::size_t>(opts.beta0.size()) != k ||
        static_cast<std::size_t>(opts.gamma0.size()) != q)
      throw ConfigError("user-supplied starting values have the wrong length");
    beta = opts.beta0;
    gamma = opts.gamma0;
  } else {
    StartingValues sv = starting_values(spec, data, opts.starting_as_printed);
    beta = sv.beta0;
    gamma = sv.gamma0;
    out.notes = sv.notes;
  }

  model::CompiledModel compiled(spec, data);
  model::DesignState state;
  try {
    state = compiled.assemble(beta, gamma);
  } catch (const NumericalError& e) {
    throw FitError(std::string("model invalid at the starting values: ") + e.what());
  }
  double ll = model::log_likelihood(state);

  // Evaluate a candidate point; domain violations act as -inf likelihood so
  // step halving backs off instead of aborting.
  auto try_point = [&](const Eigen::VectorXd& b, const Eigen::VectorXd& g,
                       model::DesignState& st, double& ll_out) {
    try {
      st = compiled.assemble(b, g);
      ll_out = model::log_likelihood(st);
      return std::isfinite(ll_out);
    } catch (const NumericalError&) {
      return false;
    }
  };

  bool quasi_newton = opts.algorithm == FitOptions::Algorithm::QuasiNewton;
  int stalls = 0;
  Eigen::MatrixXd Binv;  // BFGS inverse-Hessian approximation of -l
  Eigen::VectorXd prev_theta, prev_grad;
  bool have_prev = false;

  Eigen::VectorXd sc = score(state);
  out.converged = sc.cwiseAbs().maxCoeff() <= opts.grad_tolerance;

  int iter = 0;
  for (; iter < opts.max_iterations && !out.converged; ++iter) {
    std::string phase = quasi_newton ? "quasi_newton" : "fisher_scoring";
    Eigen::VectorXd dir(k + q);
    if (!quasi_newton) {
      const BlockInfo bl = fisher_blocks(state);
      dir.head(k) = spd_inverse(bl.Kbb, "beta") * sc.head(k);
      dir.tail(q) = spd_inverse(bl.Kgg, "gamma") * sc.tail(q);
    } else {
      if (Binv.size() == 0)
        Binv = Eigen::MatrixXd::Identity(k + q, k + q) / std::max(1.0, std::abs(ll));
      if (have_prev) {
        // BFGS update on f = -l: gradient of f is -score.
        Eigen::VectorXd theta(k + q);
        theta.head(k) = beta;
        theta.tail(q) = gamma;
        const Eigen::VectorXd s_vec = theta - prev_theta;
        const Eigen::VectorXd y_vec = (-sc) - prev_grad;
        const double sy = s_vec.dot(y_vec);
        if (sy > 1e-12 * s_vec.norm() * y_vec.norm()) {
          const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(k + q, k + q);
          const Eigen::MatrixXd V = I - (s_vec * y_vec.transpose()) / sy;
          Binv = V * Binv * V.transpose() + (s_vec * s_vec.transpose()) / sy;
        }
      }
      dir = Binv * sc;  // -Binv * grad(-l)
    }

    double step = 1.0;
    int halvings = 0;
    bool accepted = false;
    model::DesignState cand_state;
    double cand_ll = 0.0;
    // Near the optimum the log-likelihood is flat to machine precision, so
    // acceptance tolerates fp-level decreases; progress is then judged by
    // the gradient instead.
    const double ll_slack = 1e-11 * (1.0 + std::abs(ll));
    for (; halvings <= opts.step_halving_max; ++halvings) {
      const Eigen::VectorXd nb = beta + step * dir.head(k);
      const Eigen::VectorXd ng = gamma + step * dir.tail(q);
      if (try_point(nb, ng, cand_state, cand_ll) && cand_ll >= ll - ll_slack) {
        beta = nb;
        gamma = ng;
        accepted = true;
        break;
      }
      step /= 2.0;
    }

    if (accepted) {
      prev_theta.resize(k + q);
      prev_theta.head(k) = beta - step * dir.head(k);  // pre-step point
      prev_theta.tail(q) = gamma - step * dir.tail(q);
      prev_grad = -sc;
      have_prev = quasi_newton;
      state = std::move(cand_state);
      const double g_old = sc.cwiseAbs().maxCoeff();
      sc = score(state);
      const bool progressed = cand_ll > ll + 1e-12 * (1.0 + std::abs(ll)) ||
                              sc.cwiseAbs().maxCoeff() < 0.9 * g_old;
      ll = std::max(ll, cand_ll);
      stalls = progressed ? 0 : stalls + 1;
    } else {
      ++stalls;
      have_prev = false;
      phase += " (stalled)";
    }

    if (!quasi_newton && stalls >= 3 && opts.algorithm == FitOptions::Algorithm::Hybrid) {
      quasi_newton = true;
      stalls = 0;
      have_prev = false;
      phase += " -> quasi_newton";
    }

    out.trace.push_back({iter + 1, ll, sc.cwiseAbs().maxCoeff(), halvings, phase});
    out.converged = sc.cwiseAbs().maxCoeff() <= opts.grad_tolerance;
    if (!accepted && stalls >= 3 && (quasi_newton || opts.algorithm != FitOptions::Algorithm::Hybrid))
      break;  // no direction makes progress; report non-convergence
  }

  // Polish: a few extra scoring steps after convergence pin the optimum well
  // below the tolerance, making the fit insensitive to observation order.
  if (out.converged) {
    for (int extra = 0; extra < 4; ++extra) {
      const double g0 = sc.cwiseAbs().maxCoeff();
      if (g0 == 0.0) break;
      try {
        const BlockInfo bl = fisher_blocks(state);
        Eigen::VectorXd dir(k + q);
        dir.head(k) = spd_inverse(bl.Kbb, "beta") * sc.head(k);
        dir.tail(q) = spd_inverse(bl.Kgg, "gamma") * sc.tail(q);
        model::DesignState st;
        double ll2 = 0.0;
        if (!try_point(beta + dir.head(k), gamma + dir.tail(q), st, ll2)) break;
        const Eigen::VectorXd sc2 = score(st);
        if (sc2.cwiseAbs().maxCoeff() >= g0) break;
        beta += dir.head(k);
        gamma += dir.tail(q);
        state = std::move(st);
        ll = ll2;
        sc = sc2;
      } catch (const NumericalError&) {
        break;
      }
    }
  }

  out.beta_hat = beta;
  out.gamma_hat = gamma;
  out.loglik = ll;
  out.iterations = iter;
  out.terminal_state = std::move(state);

  const BlockInfo bl = fisher_blocks(out.terminal_state);
  out.cov = Eigen::MatrixXd::Zero(k + q, k + q);
  out.cov.topLeftCorner(k, k) = spd_inverse(bl.Kbb, "beta");
  out.cov.bottomRightCorner(q, q) = spd_inverse(bl.Kgg, "gamma");
  return out;
}

std::vector<InferenceRow> inference_table(const FittedModel& fit) {
  if (!fit.converged) throw FitError("inference_table refuses a non-converged fit");
  std::vector<InferenceRow> rows;
  const std::size_t k = fit.spec.k(), q = fit.spec.q();
  for (std::size_t i = 0; i < k + q; ++i) {
    InferenceRow r;
    r.name = i < k ? fit.spec.beta_names[i] : fit.spec.gamma_names[i - k];
    r.estimate = i < k ? fit.beta_hat(i) : fit.gamma_hat(i - k);
    r.se = std::sqrt(fit.cov(i, i));
    r.z = r.estimate / r.se;
    r.p = std::erfc(std::abs(r.z) / std::sqrt(2.0));
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace simplexfit::estimate
