#pragma once

#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "twinace/moments.hpp"
#include "twinace/solver.hpp"
#include "twinace/twin_data.hpp"

namespace twinace {

enum class EstimatorKind { nace, gee2_nace, falconer, gee2_falconer };

const char* to_string(EstimatorKind kind);
EstimatorKind estimator_from_string(std::string_view name);

/// Variance proportions; e2 is defined as 1 - h2 - c2, so the three always
/// sum to one. Estimates outside [0,1] are flagged, never truncated.
struct AceProportions {
  double h2 = std::numeric_limits<double>::quiet_NaN();
  double c2 = std::numeric_limits<double>::quiet_NaN();
  double e2 = std::numeric_limits<double>::quiet_NaN();

  static AceProportions from_h2_c2(double h2, double c2) {
    return {h2, c2, 1.0 - h2 - c2};
  }
  bool in_range() const {
    return h2 >= 0.0 && h2 <= 1.0 && c2 >= 0.0 && c2 <= 1.0 && e2 >= 0.0 && e2 <= 1.0;
  }
};

struct Interval {
  double lo = std::numeric_limits<double>::quiet_NaN();
  double hi = std::numeric_limits<double>::quiet_NaN();

  bool contains(double value) const { return value >= lo && value <= hi; }
};

struct GroupCorrelations {
  double r_mz = 0.0;
  double r_dz = 0.0;
  std::size_t n_mz = 0;
  std::size_t n_dz = 0;
};

/// Product-moment correlation with per-coordinate means subtracted.
double pearson(std::span<const std::pair<double, double>> values);

/// Within-pair correlations per zygosity group: textbook Pearson r, or the
/// pooled-moment ratio cov_z / sigma2_z (the GEE2-Falconer closed form).
GroupCorrelations group_correlations(const TwinDataset& data, bool pooled);

/// Falconer's equations: h2 = 2(r_mz - r_dz), c2 = 2 r_dz - r_mz.
AceProportions falconer_point(const GroupCorrelations& r);

/// Large-sample SEs of the classical Falconer estimators, from the asymptotic
/// variance (1 - r^2)^2 / n of a sample correlation with n counted as
/// individual twins (2 per pair).
std::pair<double, double> falconer_se(const GroupCorrelations& r);

enum class CenterPolicy { none, global, per_zygosity };

struct FitOptions {
  VarianceLink var_link = VarianceLink::identity;
  CorrLink corr_link = CorrLink::identity;
  CenterPolicy centering = CenterPolicy::per_zygosity;
  /// Mean-level covariates regressed out of the trait before variance fitting.
  std::vector<std::string> mean_covariates;
  /// Classical Falconer: use the pooled-moment correlation instead of Pearson r.
  bool pooled_corr = false;
  SolverConfig solver{};
};

struct LevelEstimate {
  std::string label;
  double covariate_value = 0.0;
  AceProportions proportions;
  double se_h2 = std::numeric_limits<double>::quiet_NaN();
  double se_c2 = std::numeric_limits<double>::quiet_NaN();
  Interval ci_h2;
  Interval ci_c2;
  bool out_of_range = false;
};

struct FitDiagnostics {
  bool converged = true;
  int iterations = 0;
  double final_update_norm = 0.0;
  std::size_t n_mz = 0;
  std::size_t n_dz = 0;
  double mz_dz_variance_ratio = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::string> warnings;
};

struct FitResult {
  EstimatorKind estimator = EstimatorKind::nace;
  Eigen::VectorXd alpha_hat;   // empty for classical Falconer
  Eigen::MatrixXd cov_alpha;   // empty for classical Falconer
  AceProportions proportions;  // overall estimates; NaN for covariate fits
  double se_h2 = std::numeric_limits<double>::quiet_NaN();
  double se_c2 = std::numeric_limits<double>::quiet_NaN();
  Interval ci_h2;
  Interval ci_c2;
  bool out_of_range = false;
  std::optional<GroupCorrelations> correlations;
  std::vector<LevelEstimate> levels; // covariate fits only
  FitDiagnostics diagnostics;
  MomentModel model;           // model behind GEE2 fits
  std::string var_covariate;   // covariate fits only
  bool quadratic_age = false;
  double age_center = 0.0;
};

/// Full pipeline fit: residualizes mean covariates when given, centers per
/// the policy, then dispatches to the requested estimator. Non-convergence is
/// reported via diagnostics, not an exception.
FitResult fit(const TwinDataset& data, EstimatorKind estimator, const FitOptions& options = {});

struct VarianceCovariateOptions {
  FitOptions base{};
  std::string covariate;
  /// Use the quadratic-age design (1, z, age, age2c, age*z, age2c*z) where
  /// age2c is the centered squared age.
  bool quadratic_age = false;
  /// Centering constant for age2c; defaults to the sample mean of pair ages.
  std::optional<double> age_center;
  /// Covariate values to report; defaults to the distinct observed values.
  std::vector<double> report_levels;
  std::map<double, std::string> level_labels;
};

/// Joint GEE2 fit with the variance (and, for Falconer, correlation)
/// predictors extended by the covariate; per-level proportions with
/// delta-method SEs. Only GEE2 estimators support covariate effects.
FitResult fit_with_variance_covariates(const TwinDataset& data, EstimatorKind estimator,
                                       const VarianceCovariateOptions& options);

/// A differentiable function of alpha evaluated at the estimate: its value
/// and gradient, for delta-method standard errors and Wald contrasts.
struct DerivedQuantity {
  double value = 0.0;
  Eigen::VectorXd gradient;
};

DerivedQuantity h2_quantity(const MomentModel& model, const Eigen::VectorXd& alpha,
                            const Eigen::VectorXd& x = {});
DerivedQuantity c2_quantity(const MomentModel& model, const Eigen::VectorXd& alpha,
                            const Eigen::VectorXd& x = {});

/// Design covariate values for a reporting level of a covariate fit.
Eigen::VectorXd covariate_point(const FitResult& fit, double level);

struct WaldContrast {
  double estimate = 0.0;
  double se = 0.0;
  double z = 0.0;
  double p = 1.0;
};

/// Wald test of a - b = 0 where both quantities derive from one joint fit;
/// the delta-method SE uses the full joint covariance.
WaldContrast wald_contrast(const Eigen::MatrixXd& cov_alpha, const DerivedQuantity& a,
                           const DerivedQuantity& b);

/// Serializes a FitResult to the JSON document described in the README.
std::string fit_result_to_json(const FitResult& result);

} // namespace twinace
