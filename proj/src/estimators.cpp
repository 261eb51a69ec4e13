#include "twinace/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include <json.hpp>

namespace twinace {

namespace {
constexpr double kWaldZ = 1.96;
const double kNaN = std::numeric_limits<double>::quiet_NaN();
} // namespace

const char* to_string(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::nace: return "NACE";
    case EstimatorKind::gee2_nace: return "GEE2-NACE";
    case EstimatorKind::falconer: return "Falconer";
    case EstimatorKind::gee2_falconer: return "GEE2-Falconer";
  }
  return "?";
}

EstimatorKind estimator_from_string(std::string_view name) {
  std::string s(name);
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  std::replace(s.begin(), s.end(), '_', '-');
  if (s == "nace") return EstimatorKind::nace;
  if (s == "gee2-nace") return EstimatorKind::gee2_nace;
  if (s == "falconer") return EstimatorKind::falconer;
  if (s == "gee2-falconer") return EstimatorKind::gee2_falconer;
  throw UsageError("unknown estimator \"" + std::string(name) + "\"");
}

// ---------------------------------------------------------------------------
// Correlations and the classical Falconer estimator
// ---------------------------------------------------------------------------

double pearson(std::span<const std::pair<double, double>> values) {
  const std::size_t n = values.size();
  if (n < 2) throw InsufficientDataError("pearson: need at least 2 pairs");
  double m1 = 0.0, m2 = 0.0;
  for (const auto& [a, b] : values) {
    m1 += a;
    m2 += b;
  }
  m1 /= static_cast<double>(n);
  m2 /= static_cast<double>(n);
  double s11 = 0.0, s22 = 0.0, s12 = 0.0;
  for (const auto& [a, b] : values) {
    s11 += (a - m1) * (a - m1);
    s22 += (b - m2) * (b - m2);
    s12 += (a - m1) * (b - m2);
  }
  if (!(s11 > 0.0) || !(s22 > 0.0)) {
    throw DegenerateDataError("pearson: a coordinate has zero variance");
  }
  return s12 / std::sqrt(s11 * s22);
}

GroupCorrelations group_correlations(const TwinDataset& data, bool pooled) {
  GroupCorrelations out;
  if (pooled) {
    const PooledMoments pm = pooled_moments(data);
    if (pm.mz.n == 0 || pm.dz.n == 0) {
      throw InsufficientDataError("group_correlations: both zygosity groups required");
    }
    if (!(pm.mz.sigma2 > 0.0) || !(pm.dz.sigma2 > 0.0)) {
      throw DegenerateDataError("group_correlations: zero pooled variance in a group");
    }
    out.r_mz = pm.mz.rho();
    out.r_dz = pm.dz.rho();
    out.n_mz = pm.mz.n;
    out.n_dz = pm.dz.n;
    return out;
  }
  for (Zygosity z : {Zygosity::MZ, Zygosity::DZ}) {
    std::vector<std::pair<double, double>> values;
    for (const TwinPair& pair : data.pairs) {
      if (pair.zygosity == z) values.emplace_back(pair.y1, pair.y2);
    }
    if (values.empty()) {
      throw InsufficientDataError("group_correlations: both zygosity groups required");
    }
    const double r = pearson(values);
    if (z == Zygosity::MZ) {
      out.r_mz = r;
      out.n_mz = values.size();
    } else {
      out.r_dz = r;
      out.n_dz = values.size();
    }
  }
  return out;
}

AceProportions falconer_point(const GroupCorrelations& r) {
  return AceProportions::from_h2_c2(2.0 * (r.r_mz - r.r_dz), 2.0 * r.r_dz - r.r_mz);
}

std::pair<double, double> falconer_se(const GroupCorrelations& r) {
  if (r.n_mz == 0 || r.n_dz == 0) {
    throw InsufficientDataError("falconer_se: both group sizes must be positive");
  }
  // correlation-variance denominators count individual twins (2 per pair)
  const double vmz = (1.0 - r.r_mz * r.r_mz) * (1.0 - r.r_mz * r.r_mz) /
                     (2.0 * static_cast<double>(r.n_mz));
  const double vdz = (1.0 - r.r_dz * r.r_dz) * (1.0 - r.r_dz * r.r_dz) /
                     (2.0 * static_cast<double>(r.n_dz));
  const double se_h2 = std::sqrt(4.0 * (vmz + vdz));
  const double se_c2 = std::sqrt(4.0 * vdz + vmz);
  return {se_h2, se_c2};
}

// ---------------------------------------------------------------------------
// Delta-method quantities
// ---------------------------------------------------------------------------

namespace {

DerivedQuantity nace_proportion(const MomentModel& model, const Eigen::VectorXd& alpha,
                                const Eigen::VectorXd& x, bool want_h2) {
  const Eigen::VectorXd d = design_vector(model, Zygosity::MZ, x); // (1, x...)
  const Eigen::Index m = d.size();
  const double eta_a = d.dot(alpha.segment(0, m));
  const double eta_c = d.dot(alpha.segment(m, m));
  const double eta_e = d.dot(alpha.segment(2 * m, m));
  const double s2a = var_link_inverse(model.var_link, eta_a);
  const double s2c = var_link_inverse(model.var_link, eta_c);
  const double s2e = var_link_inverse(model.var_link, eta_e);
  const double da = var_link_inverse_deriv(model.var_link, eta_a);
  const double dc = var_link_inverse_deriv(model.var_link, eta_c);
  const double de = var_link_inverse_deriv(model.var_link, eta_e);
  const double total = s2a + s2c + s2e;
  const double num = want_h2 ? s2a : s2c;

  DerivedQuantity q;
  q.value = num / total;
  q.gradient = Eigen::VectorXd::Zero(alpha.size());
  // d(num/total)/d(component) then chain through the inverse link and design
  const double dnum_a = want_h2 ? 1.0 : 0.0;
  const double dnum_c = want_h2 ? 0.0 : 1.0;
  const double t2 = total * total;
  const double g_a = (dnum_a * total - num) / t2;
  const double g_c = (dnum_c * total - num) / t2;
  const double g_e = -num / t2;
  q.gradient.segment(0, m) = g_a * da * d;
  q.gradient.segment(m, m) = g_c * dc * d;
  q.gradient.segment(2 * m, m) = g_e * de * d;
  return q;
}

DerivedQuantity falconer_proportion(const MomentModel& model, const Eigen::VectorXd& alpha,
                                    const Eigen::VectorXd& x, bool want_h2) {
  const Eigen::VectorXd d_mz = design_vector(model, Zygosity::MZ, x);
  const Eigen::VectorXd d_dz = design_vector(model, Zygosity::DZ, x);
  const Eigen::Index m = d_mz.size();
  const double eta_mz = d_mz.dot(alpha.segment(m, m));
  const double eta_dz = d_dz.dot(alpha.segment(m, m));
  const double rho_mz = corr_link_inverse(model.corr_link, eta_mz);
  const double rho_dz = corr_link_inverse(model.corr_link, eta_dz);
  const double dh_mz = corr_link_inverse_deriv(model.corr_link, eta_mz);
  const double dh_dz = corr_link_inverse_deriv(model.corr_link, eta_dz);

  DerivedQuantity q;
  q.gradient = Eigen::VectorXd::Zero(alpha.size());
  if (want_h2) {
    q.value = 2.0 * (rho_mz - rho_dz);
    q.gradient.segment(m, m) = 2.0 * (dh_mz * d_mz - dh_dz * d_dz);
  } else {
    q.value = 2.0 * rho_dz - rho_mz;
    q.gradient.segment(m, m) = 2.0 * dh_dz * d_dz - dh_mz * d_mz;
  }
  return q;
}

} // namespace

DerivedQuantity h2_quantity(const MomentModel& model, const Eigen::VectorXd& alpha,
                            const Eigen::VectorXd& x) {
  return model.parameterization == Parameterization::nace
             ? nace_proportion(model, alpha, x, true)
             : falconer_proportion(model, alpha, x, true);
}

DerivedQuantity c2_quantity(const MomentModel& model, const Eigen::VectorXd& alpha,
                            const Eigen::VectorXd& x) {
  return model.parameterization == Parameterization::nace
             ? nace_proportion(model, alpha, x, false)
             : falconer_proportion(model, alpha, x, false);
}

WaldContrast wald_contrast(const Eigen::MatrixXd& cov_alpha, const DerivedQuantity& a,
                           const DerivedQuantity& b) {
  if (a.gradient.size() != b.gradient.size() ||
      a.gradient.size() != cov_alpha.rows() || cov_alpha.rows() != cov_alpha.cols()) {
    throw UsageError("wald_contrast: mismatched parameter vectors");
  }
  WaldContrast out;
  out.estimate = a.value - b.value;
  const Eigen::VectorXd g = a.gradient - b.gradient;
  const double var = g.dot(cov_alpha * g);
  out.se = std::sqrt(std::max(var, 0.0));
  if (out.se > 0.0) {
    out.z = out.estimate / out.se;
    out.p = std::erfc(std::abs(out.z) / std::sqrt(2.0));
  } else {
    out.z = out.estimate == 0.0 ? 0.0
            : (out.estimate > 0.0 ? std::numeric_limits<double>::infinity()
                                  : -std::numeric_limits<double>::infinity());
    out.p = out.estimate == 0.0 ? 1.0 : 0.0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fit pipeline
// ---------------------------------------------------------------------------

namespace {

TwinDataset apply_pipeline(const TwinDataset& data, const FitOptions& options) {
  TwinDataset processed = data;
  if (!options.mean_covariates.empty()) {
    processed = residualize(processed, options.mean_covariates).first;
  }
  switch (options.centering) {
    case CenterPolicy::none: break;
    case CenterPolicy::global: processed = center(processed, CenterMode::global); break;
    case CenterPolicy::per_zygosity:
      processed = center(processed, CenterMode::per_zygosity);
      break;
  }
  return processed;
}

void require_both_groups(const TwinDataset& data) {
  if (data.n_mz() == 0 || data.n_dz() == 0) {
    throw InsufficientDataError("fit: both MZ and DZ pairs are required");
  }
}

FitDiagnostics base_diagnostics(const TwinDataset& processed) {
  FitDiagnostics d;
  d.n_mz = processed.n_mz();
  d.n_dz = processed.n_dz();
  const PooledMoments pm = pooled_moments(processed);
  if (pm.dz.sigma2 > 0.0) d.mz_dz_variance_ratio = pm.mz.sigma2 / pm.dz.sigma2;
  return d;
}

void fill_overall(FitResult& result, const AceProportions& props, double se_h2,
                  double se_c2) {
  result.proportions = props;
  result.se_h2 = se_h2;
  result.se_c2 = se_c2;
  result.ci_h2 = {props.h2 - kWaldZ * se_h2, props.h2 + kWaldZ * se_h2};
  result.ci_c2 = {props.c2 - kWaldZ * se_c2, props.c2 + kWaldZ * se_c2};
  result.out_of_range = !props.in_range();
  if (result.out_of_range) {
    result.diagnostics.warnings.push_back("proportion estimates fall outside [0, 1]");
  }
}

FitResult fit_classical_falconer(const TwinDataset& processed, const FitOptions& options) {
  FitResult result;
  result.estimator = EstimatorKind::falconer;
  result.diagnostics = base_diagnostics(processed);
  const GroupCorrelations r = group_correlations(processed, options.pooled_corr);
  result.correlations = r;
  const auto [se_h2, se_c2] = falconer_se(r);
  fill_overall(result, falconer_point(r), se_h2, se_c2);
  return result;
}

FitResult fit_gee2(const TwinDataset& processed, EstimatorKind kind,
                   const MomentModel& model, const FitOptions& options) {
  FitResult result;
  result.estimator = kind;
  result.model = model;
  result.diagnostics = base_diagnostics(processed);

  const Eigen::VectorXd alpha0 = default_start(processed, model);
  const SolveOutcome outcome = solve(processed, model, alpha0, options.solver);
  result.alpha_hat = outcome.alpha_hat;
  result.diagnostics.converged = outcome.converged;
  result.diagnostics.iterations = outcome.iterations;
  result.diagnostics.final_update_norm = outcome.final_update_norm;

  if (!outcome.converged) {
    result.diagnostics.warnings.push_back("solver did not converge");
    const DerivedQuantity h2 = h2_quantity(model, outcome.alpha_hat);
    const DerivedQuantity c2 = c2_quantity(model, outcome.alpha_hat);
    result.proportions = AceProportions::from_h2_c2(h2.value, c2.value);
    result.out_of_range = !result.proportions.in_range();
    return result;
  }

  result.cov_alpha = kind == EstimatorKind::nace
                         ? model_based_cov(outcome, outcome.n_pairs)
                         : sandwich_cov(outcome, outcome.n_pairs);

  const DerivedQuantity h2 = h2_quantity(model, outcome.alpha_hat);
  const DerivedQuantity c2 = c2_quantity(model, outcome.alpha_hat);
  const double se_h2 = std::sqrt(std::max(h2.gradient.dot(result.cov_alpha * h2.gradient), 0.0));
  const double se_c2 = std::sqrt(std::max(c2.gradient.dot(result.cov_alpha * c2.gradient), 0.0));
  fill_overall(result, AceProportions::from_h2_c2(h2.value, c2.value), se_h2, se_c2);

  if (model.parameterization == Parameterization::falconer) {
    // model-implied within-pair correlations, for display
    const Eigen::VectorXd x0 = Eigen::VectorXd::Zero(0);
    const Eigen::VectorXd d_mz = design_vector(model, Zygosity::MZ, x0);
    const Eigen::VectorXd d_dz = design_vector(model, Zygosity::DZ, x0);
    const Eigen::Index m = d_mz.size();
    GroupCorrelations r;
    r.r_mz = corr_link_inverse(model.corr_link, d_mz.dot(outcome.alpha_hat.segment(m, m)));
    r.r_dz = corr_link_inverse(model.corr_link, d_dz.dot(outcome.alpha_hat.segment(m, m)));
    r.n_mz = result.diagnostics.n_mz;
    r.n_dz = result.diagnostics.n_dz;
    result.correlations = r;
  }

  // flag negative variance components (NACE path reports, never projects)
  if (model.parameterization == Parameterization::nace &&
      model.var_link == VarianceLink::identity) {
    const Eigen::Index m = model.predictor_dim();
    for (int comp = 0; comp < 3; ++comp) {
      if (outcome.alpha_hat[comp * m] < 0.0) {
        result.diagnostics.warnings.push_back("negative variance component estimate");
        break;
      }
    }
  }
  return result;
}

} // namespace

FitResult fit(const TwinDataset& data, EstimatorKind estimator, const FitOptions& options) {
  require_both_groups(data);
  const TwinDataset processed = apply_pipeline(data, options);

  switch (estimator) {
    case EstimatorKind::falconer:
      return fit_classical_falconer(processed, options);
    case EstimatorKind::nace:
    case EstimatorKind::gee2_nace:
      return fit_gee2(processed, estimator, MomentModel::nace({}, options.var_link), options);
    case EstimatorKind::gee2_falconer:
      return fit_gee2(processed, estimator,
                      MomentModel::falconer({}, options.var_link, options.corr_link), options);
  }
  throw UsageError("fit: unknown estimator");
}

// ---------------------------------------------------------------------------
// Variance-level covariate fits
// ---------------------------------------------------------------------------

namespace {

std::string level_label(const VarianceCovariateOptions& options, double level) {
  auto it = options.level_labels.find(level);
  if (it != options.level_labels.end()) return it->second;
  std::ostringstream oss;
  oss << options.covariate << "=" << level;
  return oss.str();
}

} // namespace

Eigen::VectorXd covariate_point(const FitResult& fit, double level) {
  if (fit.var_covariate.empty()) {
    throw UsageError("covariate_point: fit has no variance covariate");
  }
  if (!fit.quadratic_age) {
    Eigen::VectorXd x(1);
    x[0] = level;
    return x;
  }
  Eigen::VectorXd x(2);
  x[0] = level;
  x[1] = (level - fit.age_center) * (level - fit.age_center);
  return x;
}

FitResult fit_with_variance_covariates(const TwinDataset& data, EstimatorKind estimator,
                                       const VarianceCovariateOptions& options) {
  if (estimator != EstimatorKind::gee2_nace && estimator != EstimatorKind::gee2_falconer) {
    throw UsageError("variance covariate effects require a GEE2 estimator");
  }
  if (!data.has_covariate(options.covariate)) {
    throw SchemaError("dataset has no covariate \"" + options.covariate + "\"");
  }
  require_both_groups(data);
  TwinDataset processed = apply_pipeline(data, options.base);

  double age_center = 0.0;
  std::vector<std::string> design_covs{options.covariate};
  if (options.quadratic_age) {
    if (options.age_center) {
      age_center = *options.age_center;
    } else {
      double sum = 0.0;
      for (const TwinPair& pair : processed.pairs) sum += pair.covariate(options.covariate);
      age_center = sum / static_cast<double>(processed.pairs.size());
    }
    const std::string sq_name = options.covariate + "2c";
    for (TwinPair& pair : processed.pairs) {
      const double a = pair.covariate(options.covariate);
      pair.covariates[sq_name] = (a - age_center) * (a - age_center);
    }
    if (!processed.has_covariate(sq_name)) processed.covariate_names.push_back(sq_name);
    design_covs.push_back(sq_name);
  }

  const MomentModel model =
      estimator == EstimatorKind::gee2_nace
          ? MomentModel::nace(design_covs, options.base.var_link)
          : MomentModel::falconer(design_covs, options.base.var_link, options.base.corr_link);

  FitResult result = fit_gee2(processed, estimator, model, options.base);
  result.var_covariate = options.covariate;
  result.quadratic_age = options.quadratic_age;
  result.age_center = age_center;
  // the overall block does not apply to covariate fits
  result.proportions = AceProportions{};
  result.se_h2 = result.se_c2 = kNaN;
  result.ci_h2 = result.ci_c2 = Interval{};
  result.out_of_range = false;
  result.correlations.reset();

  if (!result.diagnostics.converged) return result;

  std::vector<double> levels = options.report_levels;
  if (levels.empty()) {
    std::set<double> distinct;
    for (const TwinPair& pair : processed.pairs) distinct.insert(pair.covariate(options.covariate));
    if (distinct.size() > 32) {
      throw UsageError("covariate \"" + options.covariate +
                       "\" has more than 32 distinct values; pass report_levels");
    }
    levels.assign(distinct.begin(), distinct.end());
  }

  bool any_out = false;
  for (double level : levels) {
    LevelEstimate le;
    le.label = level_label(options, level);
    le.covariate_value = level;
    const Eigen::VectorXd x = covariate_point(result, level);
    const DerivedQuantity h2 = h2_quantity(model, result.alpha_hat, x);
    const DerivedQuantity c2 = c2_quantity(model, result.alpha_hat, x);
    le.proportions = AceProportions::from_h2_c2(h2.value, c2.value);
    le.se_h2 = std::sqrt(std::max(h2.gradient.dot(result.cov_alpha * h2.gradient), 0.0));
    le.se_c2 = std::sqrt(std::max(c2.gradient.dot(result.cov_alpha * c2.gradient), 0.0));
    le.ci_h2 = {le.proportions.h2 - kWaldZ * le.se_h2, le.proportions.h2 + kWaldZ * le.se_h2};
    le.ci_c2 = {le.proportions.c2 - kWaldZ * le.se_c2, le.proportions.c2 + kWaldZ * le.se_c2};
    le.out_of_range = !le.proportions.in_range();
    any_out = any_out || le.out_of_range;
    result.levels.push_back(std::move(le));
  }
  if (any_out) {
    result.diagnostics.warnings.push_back("some level estimates fall outside [0, 1]");
  }
  return result;
}

// ---------------------------------------------------------------------------
// JSON serialization
// ---------------------------------------------------------------------------

std::string fit_result_to_json(const FitResult& result) {
  using nlohmann::json;
  auto num = [](double v) -> json {
    if (std::isfinite(v)) return v;
    return nullptr;
  };

  json j;
  j["estimator"] = to_string(result.estimator);
  j["alpha"] = json::array();
  for (Eigen::Index i = 0; i < result.alpha_hat.size(); ++i) j["alpha"].push_back(result.alpha_hat[i]);
  j["cov_alpha"] = json::array();
  for (Eigen::Index r = 0; r < result.cov_alpha.rows(); ++r) {
    for (Eigen::Index c = 0; c < result.cov_alpha.cols(); ++c) {
      j["cov_alpha"].push_back(result.cov_alpha(r, c));
    }
  }
  j["h2"] = num(result.proportions.h2);
  j["c2"] = num(result.proportions.c2);
  j["e2"] = num(result.proportions.e2);
  j["se_h2"] = num(result.se_h2);
  j["se_c2"] = num(result.se_c2);
  j["ci_h2"] = json::array({num(result.ci_h2.lo), num(result.ci_h2.hi)});
  j["ci_c2"] = json::array({num(result.ci_c2.lo), num(result.ci_c2.hi)});
  j["out_of_range"] = result.out_of_range;
  if (result.correlations) {
    j["r_mz"] = result.correlations->r_mz;
    j["r_dz"] = result.correlations->r_dz;
  }
  if (!result.levels.empty()) {
    j["levels"] = json::array();
    for (const LevelEstimate& le : result.levels) {
      json jl;
      jl["label"] = le.label;
      jl["value"] = le.covariate_value;
      jl["h2"] = num(le.proportions.h2);
      jl["c2"] = num(le.proportions.c2);
      jl["e2"] = num(le.proportions.e2);
      jl["se_h2"] = num(le.se_h2);
      jl["se_c2"] = num(le.se_c2);
      jl["ci_h2"] = json::array({num(le.ci_h2.lo), num(le.ci_h2.hi)});
      jl["ci_c2"] = json::array({num(le.ci_c2.lo), num(le.ci_c2.hi)});
      jl["out_of_range"] = le.out_of_range;
      j["levels"].push_back(std::move(jl));
    }
  }
  json diag;
  diag["converged"] = result.diagnostics.converged;
  diag["iterations"] = result.diagnostics.iterations;
  diag["final_update_norm"] = num(result.diagnostics.final_update_norm);
  diag["n_mz"] = result.diagnostics.n_mz;
  diag["n_dz"] = result.diagnostics.n_dz;
  diag["mz_dz_variance_ratio"] = num(result.diagnostics.mz_dz_variance_ratio);
  diag["warnings"] = result.diagnostics.warnings;
  j["diagnostics"] = std::move(diag);
  return j.dump(2);
}

} // namespace twinace
