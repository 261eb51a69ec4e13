#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "twinace/twin_data.hpp"

namespace twinace {

// ---------------------------------------------------------------------------
// Link functions for variance and correlation predictors
// ---------------------------------------------------------------------------

enum class VarianceLink { identity, log };
enum class CorrLink { identity, fisher_z };

double var_link_inverse(VarianceLink link, double eta);       // g^{-1}
double var_link_forward(VarianceLink link, double value);     // g
double var_link_inverse_deriv(VarianceLink link, double eta); // d g^{-1}/d eta
double corr_link_inverse(CorrLink link, double eta);          // h^{-1}
double corr_link_forward(CorrLink link, double rho);          // h
double corr_link_inverse_deriv(CorrLink link, double eta);    // d h^{-1}/d eta

// ---------------------------------------------------------------------------
// Parameter vectors
// ---------------------------------------------------------------------------

/// Variance components shared by MZ and DZ pairs: alpha = (s2_a, s2_c, s2_e).
struct AceParams {
  double sigma2_a = 0.0;
  double sigma2_c = 0.0;
  double sigma2_e = 0.0;

  double total() const { return sigma2_a + sigma2_c + sigma2_e; }
  Eigen::Vector3d vector() const { return {sigma2_a, sigma2_c, sigma2_e}; }
};

/// Per-component intercept + slope on one pair-level covariate,
/// g(s2_a) = a0 + a1 x and likewise for C and E.
struct AceCovariateParams {
  double a0 = 0.0, a1 = 0.0;
  double c0 = 0.0, c1 = 0.0;
  double e0 = 0.0, e1 = 0.0;
  VarianceLink link = VarianceLink::identity;

  AceParams at(double x) const;
};

/// Distinct MZ/DZ variance and correlation parameters,
/// g(sigma2_z) = v0 + v1 z and h(rho_z) = p0 + p1 z with z = 1 for MZ.
struct FalconerParams {
  double v0 = 0.0, v1 = 0.0;
  double p0 = 0.0, p1 = 0.0;
  VarianceLink var_link = VarianceLink::identity;
  CorrLink corr_link = CorrLink::identity;

  double sigma2(Zygosity z) const;
  double rho(Zygosity z) const;
  Eigen::Vector4d vector() const { return {v0, v1, p0, p1}; }
};

// ---------------------------------------------------------------------------
// Moment model: what the GEE2 solver iterates on
// ---------------------------------------------------------------------------

enum class Parameterization { nace, falconer };
enum class WorkingCov { normal, identity };

/// Describes the second-moment structure handed to the solver: the
/// parameterization of Gamma_z, the working covariance of gamma_z, the link
/// functions, and which pair-level covariates enter the variance predictors.
///
/// Parameter layout:
///   nace:     alpha = (a-block, c-block, e-block), each block of length
///             1 + #covariates over the design (1, x1, ..., xk).
///   falconer: alpha = (v-block, p-block), each block over the design
///             (1, z, x1, ..., xk, x1*z, ..., xk*z); covariate-zygosity
///             interactions are always included.
struct MomentModel {
  Parameterization parameterization = Parameterization::nace;
  WorkingCov working_cov = WorkingCov::normal;
  VarianceLink var_link = VarianceLink::identity;
  CorrLink corr_link = CorrLink::identity;
  std::vector<std::string> covariates;
  /// Positive scalar multiplying the working covariance. Point estimates are
  /// invariant to it; exposed for experiments and the scaling-invariance test.
  double omega_scale = 1.0;

  int predictor_dim() const;
  int param_dim() const;

  static MomentModel nace(std::vector<std::string> covariates = {},
                          VarianceLink var_link = VarianceLink::identity);
  static MomentModel falconer(std::vector<std::string> covariates = {},
                              VarianceLink var_link = VarianceLink::identity,
                              CorrLink corr_link = CorrLink::identity);
};

// ---------------------------------------------------------------------------
// Moment builders
// ---------------------------------------------------------------------------

/// Vectorized sample second moments gamma = (y1^2, y2^2, y1*y2).
/// The pair is assumed centered by the caller.
Eigen::Vector3d gamma_sample(const TwinPair& pair);

/// Gamma_z = (T, T, w_z s2_a + s2_c) with T = s2_a + s2_c + s2_e.
Eigen::Vector3d gamma_pop_nace(const AceParams& alpha, Zygosity z);

/// Gamma_z = (sigma2_z, sigma2_z, sigma2_z rho_z). Throws DomainError if an
/// identity correlation link yields |rho| >= 1 or a variance is not positive.
Eigen::Vector3d gamma_pop_falconer(const FalconerParams& params, Zygosity z);

/// Covariate values for a pair in model order (quadratic-age designs are
/// materialized as explicit covariates before the model is built).
Eigen::VectorXd model_covariates(const MomentModel& model, const TwinPair& pair);

/// Per-predictor design vector: nace (1, x...), falconer (1, z, x..., x*z...).
Eigen::VectorXd design_vector(const MomentModel& model, Zygosity z, const Eigen::VectorXd& x);

Eigen::Vector3d gamma_pop(const MomentModel& model, const Eigen::VectorXd& alpha,
                          Zygosity z, const Eigen::VectorXd& x = {});

/// Analytic Jacobian D_z = d Gamma_z / d alpha^T, 3 x q.
Eigen::MatrixXd jacobian(const MomentModel& model, const Eigen::VectorXd& alpha,
                         Zygosity z, const Eigen::VectorXd& x = {});

/// Working covariance of gamma_z: the normal form built from (T, C) = (Gamma_1,
/// Gamma_3), or the 3x3 identity. Throws DomainError when the normal form is
/// not positive definite at the given parameters.
Eigen::Matrix3d working_cov(const MomentModel& model, const Eigen::VectorXd& alpha,
                            Zygosity z, const Eigen::VectorXd& x = {});

/// Non-throwing bundle used by the solver; `valid` is false when the moment
/// structure cannot be evaluated at alpha (step-rejection signal).
struct MomentEval {
  Eigen::Vector3d gamma = Eigen::Vector3d::Zero();
  Eigen::MatrixXd jac;           // 3 x q
  Eigen::Matrix3d omega_inverse = Eigen::Matrix3d::Identity();
  bool valid = false;
};

MomentEval eval_moments(const MomentModel& model, const Eigen::VectorXd& alpha,
                        Zygosity z, const Eigen::VectorXd& x);

} // namespace twinace
