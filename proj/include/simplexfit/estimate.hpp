#ifndef SIMPLEXFIT_ESTIMATE_HPP
#define SIMPLEXFIT_ESTIMATE_HPP

#include <Eigen/Core>
#include <optional>
#include <string>
#include <vector>

#include "simplexfit/dataset.hpp"
#include "simplexfit/model.hpp"

namespace simplexfit::estimate {

struct FitOptions {
  enum class Algorithm { FisherScoring, QuasiNewton, Hybrid };
  enum class StartingMode { TwoStep, UserSupplied };

  int max_iterations = 200;
  double grad_tolerance = 1e-7;  // on max |score|
  int step_halving_max = 20;
  Algorithm algorithm = Algorithm::Hybrid;
  StartingMode starting_mode = StartingMode::TwoStep;
  Eigen::VectorXd beta0, gamma0;  // used when starting_mode == UserSupplied
  bool starting_as_printed = false;  // comparison switch: drop the linear offset
                                     // in the second starting-value step
};

struct IterationRecord {
  int iteration;
  double loglik;
  double max_abs_score;
  int halvings;
  std::string phase;  // "fisher_scoring" or "quasi_newton" (plus notes)
};

struct FittedModel {
  Eigen::VectorXd beta_hat, gamma_hat;
  Eigen::MatrixXd cov;  // (k+q)x(k+q), exactly block diagonal
  double loglik = 0.0;
  bool converged = false;
  int iterations = 0;
  std::vector<IterationRecord> trace;
  std::vector<std::string> notes;  // e.g. ridge fallback in starting values
  model::DesignState terminal_state;
  // carried along so diagnostics can refit / simulate without extra plumbing
  model::ModelSpec spec;
  Dataset data;
  FitOptions options;
};

struct StartingValues {
  Eigen::VectorXd beta0, gamma0;
  std::vector<std::string> notes;
};

// Two-step scheme: linear least squares of g(y) on the linearized design
// (pinned parameters substituted numerically), then a one-step Gauss-Newton
// correction through the full nonlinear gradient; same again for the
// dispersion submodel on the pseudo-observations d(y_t; mu_check_t).
StartingValues starting_values(const model::ModelSpec& spec, const Dataset& data,
                               bool as_printed = false);

// (U_beta; U_gamma) with U_beta = Xt' S U T (y-mu), U_gamma = Zt' H a.
Eigen::VectorXd score(const model::DesignState& state);

// Block-diagonal expected information: K_bb = Xt' S W Xt, K_gg = Zt' D Zt;
// the beta x gamma block is exactly zero.
Eigen::MatrixXd fisher_information(const model::DesignState& state);

// Observed information -l'' including the bracket-product fold of the
// predictor second derivatives; symmetric by construction.
Eigen::MatrixXd observed_information(const model::DesignState& state);

FittedModel fit(const model::ModelSpec& spec, const Dataset& data, const FitOptions& opts = {});

struct InferenceRow {
  std::string name;
  double estimate, se, z, p;
};

// Wald table from the Eq.-style block covariance; refuses non-converged fits.
std::vector<InferenceRow> inference_table(const FittedModel& fit);

}  // namespace simplexfit::estimate

#endif
