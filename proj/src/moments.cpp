#include "twinace/moments.hpp"

#include <cmath>

namespace twinace {

// ---------------------------------------------------------------------------
// Links
// ---------------------------------------------------------------------------

double var_link_inverse(VarianceLink link, double eta) {
  return link == VarianceLink::identity ? eta : std::exp(eta);
}

double var_link_forward(VarianceLink link, double value) {
  if (link == VarianceLink::identity) return value;
  if (value <= 0.0) throw DomainError("log variance link requires a positive value");
  return std::log(value);
}

double var_link_inverse_deriv(VarianceLink link, double eta) {
  return link == VarianceLink::identity ? 1.0 : std::exp(eta);
}

double corr_link_inverse(CorrLink link, double eta) {
  return link == CorrLink::identity ? eta : std::tanh(eta);
}

double corr_link_forward(CorrLink link, double rho) {
  if (link == CorrLink::identity) return rho;
  if (rho <= -1.0 || rho >= 1.0) throw DomainError("Fisher-z link requires |rho| < 1");
  return std::atanh(rho);
}

double corr_link_inverse_deriv(CorrLink link, double eta) {
  if (link == CorrLink::identity) return 1.0;
  const double t = std::tanh(eta);
  return 1.0 - t * t;
}

// ---------------------------------------------------------------------------
// Parameter vectors
// ---------------------------------------------------------------------------

AceParams AceCovariateParams::at(double x) const {
  return AceParams{var_link_inverse(link, a0 + a1 * x),
                   var_link_inverse(link, c0 + c1 * x),
                   var_link_inverse(link, e0 + e1 * x)};
}

double FalconerParams::sigma2(Zygosity z) const {
  const double ind = z == Zygosity::MZ ? 1.0 : 0.0;
  return var_link_inverse(var_link, v0 + v1 * ind);
}

double FalconerParams::rho(Zygosity z) const {
  const double ind = z == Zygosity::MZ ? 1.0 : 0.0;
  return corr_link_inverse(corr_link, p0 + p1 * ind);
}

// ---------------------------------------------------------------------------
// MomentModel
// ---------------------------------------------------------------------------

int MomentModel::predictor_dim() const {
  const int k = static_cast<int>(covariates.size());
  return parameterization == Parameterization::nace ? 1 + k : 2 + 2 * k;
}

int MomentModel::param_dim() const {
  return parameterization == Parameterization::nace ? 3 * predictor_dim()
                                                    : 2 * predictor_dim();
}

MomentModel MomentModel::nace(std::vector<std::string> covariates, VarianceLink var_link) {
  MomentModel m;
  m.parameterization = Parameterization::nace;
  m.working_cov = WorkingCov::normal;
  m.var_link = var_link;
  m.covariates = std::move(covariates);
  return m;
}

MomentModel MomentModel::falconer(std::vector<std::string> covariates,
                                  VarianceLink var_link, CorrLink corr_link) {
  MomentModel m;
  m.parameterization = Parameterization::falconer;
  m.working_cov = WorkingCov::identity;
  m.var_link = var_link;
  m.corr_link = corr_link;
  m.covariates = std::move(covariates);
  return m;
}

// ---------------------------------------------------------------------------
// Moment builders
// ---------------------------------------------------------------------------

Eigen::Vector3d gamma_sample(const TwinPair& pair) {
  return {pair.y1 * pair.y1, pair.y2 * pair.y2, pair.y1 * pair.y2};
}

Eigen::Vector3d gamma_pop_nace(const AceParams& alpha, Zygosity z) {
  const double total = alpha.total();
  const double cov = kinship_weight(z) * alpha.sigma2_a + alpha.sigma2_c;
  return {total, total, cov};
}

Eigen::Vector3d gamma_pop_falconer(const FalconerParams& params, Zygosity z) {
  const double sigma2 = params.sigma2(z);
  const double rho = params.rho(z);
  if (!(sigma2 > 0.0)) throw DomainError("Falconer variance must be positive");
  if (params.corr_link == CorrLink::identity && std::abs(rho) >= 1.0) {
    throw DomainError("identity correlation link produced |rho| >= 1");
  }
  return {sigma2, sigma2, sigma2 * rho};
}

Eigen::VectorXd model_covariates(const MomentModel& model, const TwinPair& pair) {
  Eigen::VectorXd x(static_cast<Eigen::Index>(model.covariates.size()));
  for (std::size_t k = 0; k < model.covariates.size(); ++k) {
    x[static_cast<Eigen::Index>(k)] = pair.covariate(model.covariates[k]);
  }
  return x;
}

Eigen::VectorXd design_vector(const MomentModel& model, Zygosity z, const Eigen::VectorXd& x) {
  const Eigen::Index k = x.size();
  if (model.parameterization == Parameterization::nace) {
    Eigen::VectorXd d(1 + k);
    d[0] = 1.0;
    d.tail(k) = x;
    return d;
  }
  const double ind = z == Zygosity::MZ ? 1.0 : 0.0;
  Eigen::VectorXd d(2 + 2 * k);
  d[0] = 1.0;
  d[1] = ind;
  d.segment(2, k) = x;
  d.segment(2 + k, k) = ind * x;
  return d;
}

namespace {

struct NaceMoments {
  double s2a, s2c, s2e;       // component values at this covariate point
  double da, dc, de;          // inverse-link derivatives at the predictors
};

NaceMoments nace_components(const MomentModel& model, const Eigen::VectorXd& alpha,
                            const Eigen::VectorXd& d) {
  const Eigen::Index m = d.size();
  const double eta_a = d.dot(alpha.segment(0, m));
  const double eta_c = d.dot(alpha.segment(m, m));
  const double eta_e = d.dot(alpha.segment(2 * m, m));
  return {var_link_inverse(model.var_link, eta_a),
          var_link_inverse(model.var_link, eta_c),
          var_link_inverse(model.var_link, eta_e),
          var_link_inverse_deriv(model.var_link, eta_a),
          var_link_inverse_deriv(model.var_link, eta_c),
          var_link_inverse_deriv(model.var_link, eta_e)};
}

struct FalconerMoments {
  double sigma2, rho;
  double dsigma2, drho; // inverse-link derivatives
};

FalconerMoments falconer_components(const MomentModel& model, const Eigen::VectorXd& alpha,
                                    const Eigen::VectorXd& d) {
  const Eigen::Index m = d.size();
  const double eta_v = d.dot(alpha.segment(0, m));
  const double eta_p = d.dot(alpha.segment(m, m));
  return {var_link_inverse(model.var_link, eta_v),
          corr_link_inverse(model.corr_link, eta_p),
          var_link_inverse_deriv(model.var_link, eta_v),
          corr_link_inverse_deriv(model.corr_link, eta_p)};
}

void check_dims(const MomentModel& model, const Eigen::VectorXd& alpha,
                const Eigen::VectorXd& x) {
  if (alpha.size() != model.param_dim()) {
    throw UsageError("parameter vector has length " + std::to_string(alpha.size()) +
                     ", model expects " + std::to_string(model.param_dim()));
  }
  if (x.size() != static_cast<Eigen::Index>(model.covariates.size())) {
    throw UsageError("covariate vector has length " + std::to_string(x.size()) +
                     ", model expects " + std::to_string(model.covariates.size()));
  }
}

/// Normal working covariance of (y1^2, y2^2, y1 y2) given marginal variance T
/// and within-pair covariance C.
Eigen::Matrix3d normal_working_cov(double total, double cov) {
  Eigen::Matrix3d omega;
  omega << 2 * total * total, 2 * cov * cov, 2 * total * cov,
           2 * cov * cov, 2 * total * total, 2 * total * cov,
           2 * total * cov, 2 * total * cov, cov * cov + total * total;
  return omega;
}

} // namespace

Eigen::Vector3d gamma_pop(const MomentModel& model, const Eigen::VectorXd& alpha,
                          Zygosity z, const Eigen::VectorXd& x) {
  check_dims(model, alpha, x);
  const Eigen::VectorXd d = design_vector(model, z, x);
  if (model.parameterization == Parameterization::nace) {
    const NaceMoments nm = nace_components(model, alpha, d);
    const double total = nm.s2a + nm.s2c + nm.s2e;
    const double cov = kinship_weight(z) * nm.s2a + nm.s2c;
    return {total, total, cov};
  }
  const FalconerMoments fm = falconer_components(model, alpha, d);
  if (model.corr_link == CorrLink::identity && std::abs(fm.rho) >= 1.0) {
    throw DomainError("identity correlation link produced |rho| >= 1");
  }
  return {fm.sigma2, fm.sigma2, fm.sigma2 * fm.rho};
}

Eigen::MatrixXd jacobian(const MomentModel& model, const Eigen::VectorXd& alpha,
                         Zygosity z, const Eigen::VectorXd& x) {
  check_dims(model, alpha, x);
  const Eigen::VectorXd d = design_vector(model, z, x);
  const Eigen::Index m = d.size();
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(3, model.param_dim());

  if (model.parameterization == Parameterization::nace) {
    const NaceMoments nm = nace_components(model, alpha, d);
    const double w = kinship_weight(z);
    // Gamma_1 = Gamma_2 = s2a + s2c + s2e ; Gamma_3 = w s2a + s2c
    jac.block(0, 0, 1, m) = nm.da * d.transpose();
    jac.block(0, m, 1, m) = nm.dc * d.transpose();
    jac.block(0, 2 * m, 1, m) = nm.de * d.transpose();
    jac.row(1) = jac.row(0);
    jac.block(2, 0, 1, m) = w * nm.da * d.transpose();
    jac.block(2, m, 1, m) = nm.dc * d.transpose();
    return jac;
  }

  const FalconerMoments fm = falconer_components(model, alpha, d);
  // Gamma_1 = Gamma_2 = sigma2 ; Gamma_3 = sigma2 * rho
  jac.block(0, 0, 1, m) = fm.dsigma2 * d.transpose();
  jac.row(1) = jac.row(0);
  jac.block(2, 0, 1, m) = fm.rho * fm.dsigma2 * d.transpose();
  jac.block(2, m, 1, m) = fm.sigma2 * fm.drho * d.transpose();
  return jac;
}

Eigen::Matrix3d working_cov(const MomentModel& model, const Eigen::VectorXd& alpha,
                            Zygosity z, const Eigen::VectorXd& x) {
  if (model.working_cov == WorkingCov::identity) {
    return model.omega_scale * Eigen::Matrix3d::Identity();
  }
  const Eigen::Vector3d gamma = gamma_pop(model, alpha, z, x);
  const double total = gamma[0];
  const double cov = gamma[2];
  if (!(total > 0.0) || !(total * total > cov * cov)) {
    throw DomainError("normal working covariance is not positive definite");
  }
  return model.omega_scale * normal_working_cov(total, cov);
}

MomentEval eval_moments(const MomentModel& model, const Eigen::VectorXd& alpha,
                        Zygosity z, const Eigen::VectorXd& x) {
  MomentEval out;
  out.jac.resize(3, model.param_dim());

  const Eigen::VectorXd d = design_vector(model, z, x);
  double total = 0.0;
  double cov = 0.0;

  if (model.parameterization == Parameterization::nace) {
    const NaceMoments nm = nace_components(model, alpha, d);
    total = nm.s2a + nm.s2c + nm.s2e;
    cov = kinship_weight(z) * nm.s2a + nm.s2c;
    const Eigen::Index m = d.size();
    out.jac.setZero();
    out.jac.block(0, 0, 1, m) = nm.da * d.transpose();
    out.jac.block(0, m, 1, m) = nm.dc * d.transpose();
    out.jac.block(0, 2 * m, 1, m) = nm.de * d.transpose();
    out.jac.row(1) = out.jac.row(0);
    out.jac.block(2, 0, 1, m) = kinship_weight(z) * nm.da * d.transpose();
    out.jac.block(2, m, 1, m) = nm.dc * d.transpose();
  } else {
    const FalconerMoments fm = falconer_components(model, alpha, d);
    if (model.corr_link == CorrLink::identity && std::abs(fm.rho) >= 1.0) return out;
    total = fm.sigma2;
    cov = fm.sigma2 * fm.rho;
    const Eigen::Index m = d.size();
    out.jac.setZero();
    out.jac.block(0, 0, 1, m) = fm.dsigma2 * d.transpose();
    out.jac.row(1) = out.jac.row(0);
    out.jac.block(2, 0, 1, m) = fm.rho * fm.dsigma2 * d.transpose();
    out.jac.block(2, m, 1, m) = fm.sigma2 * fm.drho * d.transpose();
  }

  out.gamma = {total, total, cov};
  if (!out.gamma.allFinite() || !out.jac.allFinite()) return out;

  if (model.working_cov == WorkingCov::identity) {
    out.omega_inverse = Eigen::Matrix3d::Identity() / model.omega_scale;
  } else {
    if (!(total > 0.0) || !(total * total > cov * cov)) return out;
    const Eigen::Matrix3d omega = model.omega_scale * normal_working_cov(total, cov);
    Eigen::LLT<Eigen::Matrix3d> llt(omega);
    if (llt.info() != Eigen::Success) return out;
    out.omega_inverse = llt.solve(Eigen::Matrix3d::Identity());
  }
  if (!out.omega_inverse.allFinite()) return out;

  out.valid = true;
  return out;
}

} // namespace twinace
