#ifndef SIMPLEXFIT_DIAGNOSTICS_HPP
#define SIMPLEXFIT_DIAGNOSTICS_HPP

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "simplexfit/estimate.hpp"

namespace simplexfit::diagnostics {

struct ResidualReport {
  Eigen::VectorXd r_beta;       // weighted residuals
  Eigen::VectorXd h_star_diag;  // hat diagonal of H*, each in [0,1)
  Eigen::VectorXd working_z;    // scoring working variable
  Eigen::MatrixXd h_star;       // full H* (n x n), kept for the invariants
};

struct EnvelopeBands {
  Eigen::VectorXd observed;  // sorted observed residuals
  Eigen::VectorXd lower, median, upper;  // per order statistic
  double omega_lo = 0.0, omega_hi = 0.0;  // pooled 0.025 / 0.975 quantiles
  int n_replicates = 0;
  int n_skipped = 0;
  std::uint64_t seed = 0;
};

// Weighted residuals r_t = u_t (y_t - mu_t) / sqrt(v_t (1 - h*_tt)),
// hat matrix H* = S^1/2 W^1/2 X (X' S W X)^-1 X' W^1/2 S^1/2, and the
// working variable z of the scoring regression.
ResidualReport weighted_residuals(const estimate::FittedModel& fit);

// Order-statistic bands from n_rep model-based response simulations;
// refit = true refits each replicate before computing its residuals.
EnvelopeBands simulated_envelope(const estimate::FittedModel& fit, int n_rep, std::uint64_t seed,
                                 bool refit = true);

struct Scheme {
  enum class Kind { CaseWeights, Response, Covariate };
  Kind kind = Kind::CaseWeights;
  // Covariate scheme: names of the perturbed covariate in each submodel.
  // Either may be empty (that submodel's derivative terms are zero), but
  // not both.
  std::string covariate_mean, covariate_dispersion;

  static Scheme case_weights() { return {}; }
  static Scheme response() { return {Kind::Response, "", ""}; }
  static Scheme covariate(std::string mean_name, std::string disp_name) {
    return {Kind::Covariate, std::move(mean_name), std::move(disp_name)};
  }
};

enum class Subset { Theta, BetaOnly, GammaOnly };

struct CurvatureSet {
  double c_max = 0.0;        // 2 * top eigenvalue of the curvature core
  Eigen::VectorXd i_max;     // unit-norm direction of largest curvature
  Eigen::VectorXd c_t;       // total local influence per observation
  double threshold = 0.0;    // 2 * mean(c_t)
  std::vector<std::size_t> flagged;  // c_t > threshold (0-based)
};

struct InfluenceReport {
  Scheme scheme;
  Eigen::MatrixXd delta;  // (k+q) x n
  CurvatureSet full;      // subset = theta
  CurvatureSet beta_only;
  CurvatureSet gamma_only;
};

InfluenceReport influence(const estimate::FittedModel& fit, const Scheme& scheme);

const CurvatureSet& curvature_for_subset(const InfluenceReport& report, Subset subset);

struct DeletionRow {
  std::string name;
  double estimate_old = 0.0, estimate_new = 0.0;
  double pct_change_estimate = 0.0;
  double se_old = 0.0, se_new = 0.0;
  double pct_change_se = 0.0;
  double p_new = 0.0;
};

struct DeletionReport {
  std::vector<std::size_t> cases;  // 0-based deleted indices
  std::vector<DeletionRow> rows;
  estimate::FittedModel refit;
};

DeletionReport delete_and_refit(const estimate::FittedModel& fit,
                                const std::vector<std::size_t>& cases);

}  // namespace simplexfit::diagnostics

#endif
