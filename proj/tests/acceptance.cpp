// Acceptance suite: prints one PASS/FAIL line per criterion and exits
// non-zero if any fails. Tolerances are pinned in code.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "twinace/estimators.hpp"
#include "twinace/simulators.hpp"
#include "twinace/solver.hpp"
#include "twinace/study.hpp"

using namespace twinace;

namespace {

struct Checker {
  bool pass = true;
  std::string detail;

  void expect(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

const StudyRow& row_for(const StudySummary& summary, const std::string& estimator,
                        const std::string& level = "") {
  for (const StudyRow& row : summary.rows) {
    if (row.estimator == estimator && row.level == level) return row;
  }
  throw std::runtime_error("missing summary row " + estimator + "/" + level);
}

std::string g6(double v) { return format_g6(v); }

bool in_window(double value, double lo, double hi) { return value >= lo && value <= hi; }

// --------------------------------------------------------------------------
// Criteria 1 and 2: heavy-tailed t and overdispersed-count studies
// --------------------------------------------------------------------------

Checker criterion_heavy_tailed_study() {
  StudyConfig config;
  config.scenario.scenario = Scenario::mvt;
  config.scenario.seed = 1;
  config.estimators = {EstimatorKind::nace, EstimatorKind::gee2_nace,
                       EstimatorKind::falconer, EstimatorKind::gee2_falconer};
  config.replicates = 1000;
  const StudySummary summary = run_study(config);

  Checker c;
  for (const char* name : {"NACE", "GEE2-NACE", "Falconer", "GEE2-Falconer"}) {
    const StudyRow& row = row_for(summary, name);
    c.expect(in_window(row.mean_h2, 0.49, 0.51),
             std::string(name) + " mean h2=" + g6(row.mean_h2) + " outside [0.49,0.51]");
    c.expect(in_window(row.mean_c2, 0.29, 0.31),
             std::string(name) + " mean c2=" + g6(row.mean_c2) + " outside [0.29,0.31]");
    c.expect(row.n_failed == 0, std::string(name) + " had non-convergent replicates");
  }
  c.expect(row_for(summary, "NACE").coverage_h2 <= 0.80,
           "NACE h2 coverage " + g6(row_for(summary, "NACE").coverage_h2) + " > 0.80");
  c.expect(row_for(summary, "Falconer").coverage_h2 <= 0.65,
           "Falconer h2 coverage " + g6(row_for(summary, "Falconer").coverage_h2) + " > 0.65");
  for (const char* name : {"GEE2-NACE", "GEE2-Falconer"}) {
    const StudyRow& row = row_for(summary, name);
    c.expect(in_window(row.coverage_h2, 0.92, 0.97),
             std::string(name) + " h2 coverage=" + g6(row.coverage_h2) + " outside [0.92,0.97]");
    c.expect(in_window(row.coverage_c2, 0.92, 0.97),
             std::string(name) + " c2 coverage=" + g6(row.coverage_c2) + " outside [0.92,0.97]");
    c.expect(std::abs(row.mean_se_h2 - row.true_se_h2) < 0.015,
             std::string(name) + " mean SE(h2)=" + g6(row.mean_se_h2) + " vs true " +
                 g6(row.true_se_h2));
    c.expect(std::abs(row.mean_se_c2 - row.true_se_c2) < 0.015,
             std::string(name) + " mean SE(c2)=" + g6(row.mean_se_c2) + " vs true " +
                 g6(row.true_se_c2));
  }
  return c;
}

Checker criterion_count_study() {
  StudyConfig config;
  config.scenario.scenario = Scenario::blgp;
  config.scenario.seed = 20260812;
  config.estimators = {EstimatorKind::nace, EstimatorKind::gee2_nace,
                       EstimatorKind::falconer, EstimatorKind::gee2_falconer};
  config.replicates = 1000;
  const StudySummary summary = run_study(config);

  Checker c;
  for (const char* name : {"NACE", "GEE2-NACE", "Falconer", "GEE2-Falconer"}) {
    const StudyRow& row = row_for(summary, name);
    c.expect(std::abs(row.mean_h2 - 0.5) < 0.015,
             std::string(name) + " mean h2=" + g6(row.mean_h2) + " off 0.5 by >0.015");
    c.expect(std::abs(row.mean_c2 - 0.3) < 0.015,
             std::string(name) + " mean c2=" + g6(row.mean_c2) + " off 0.3 by >0.015");
  }
  c.expect(row_for(summary, "NACE").coverage_h2 <= 0.72,
           "NACE h2 coverage " + g6(row_for(summary, "NACE").coverage_h2) + " > 0.72");
  c.expect(row_for(summary, "Falconer").coverage_h2 <= 0.62,
           "Falconer h2 coverage " + g6(row_for(summary, "Falconer").coverage_h2) + " > 0.62");
  for (const char* name : {"GEE2-NACE", "GEE2-Falconer"}) {
    const StudyRow& row = row_for(summary, name);
    c.expect(in_window(row.coverage_h2, 0.92, 0.97),
             std::string(name) + " h2 coverage=" + g6(row.coverage_h2) + " outside [0.92,0.97]");
    c.expect(in_window(row.coverage_c2, 0.92, 0.97),
             std::string(name) + " c2 coverage=" + g6(row.coverage_c2) + " outside [0.92,0.97]");
  }
  return c;
}

// --------------------------------------------------------------------------
// Criterion 3: NACE bias under unequal group variances
// --------------------------------------------------------------------------

Checker criterion_unequal_variance_study() {
  StudyConfig config;
  config.scenario.scenario = Scenario::unequal_var_normal;
  config.scenario.seed = 20260813;
  config.estimators = {EstimatorKind::nace, EstimatorKind::falconer};
  config.replicates = 1000;
  const StudySummary summary = run_study(config);

  Checker c;
  const StudyRow& nace = row_for(summary, "NACE");
  const StudyRow& falc = row_for(summary, "Falconer");
  c.expect(in_window(nace.mean_h2, 0.69, 0.71),
           "NACE mean h2=" + g6(nace.mean_h2) + " outside [0.69,0.71]");
  c.expect(in_window(nace.mean_c2, 0.14, 0.16),
           "NACE mean c2=" + g6(nace.mean_c2) + " outside [0.14,0.16]");
  c.expect(in_window(falc.mean_h2, 0.49, 0.51),
           "Falconer mean h2=" + g6(falc.mean_h2) + " outside [0.49,0.51]");
  c.expect(in_window(falc.mean_c2, 0.29, 0.31),
           "Falconer mean c2=" + g6(falc.mean_c2) + " outside [0.29,0.31]");
  return c;
}

// --------------------------------------------------------------------------
// Criterion 4: sex-varying heritability
// --------------------------------------------------------------------------

Checker criterion_sex_study() {
  StudyConfig config;
  config.scenario.scenario = Scenario::sex_normal;
  config.scenario.n_mz = 450;
  config.scenario.n_dz = 450;
  config.scenario.seed = 20260814;
  config.estimators = {EstimatorKind::gee2_nace, EstimatorKind::gee2_falconer};
  config.replicates = 1000;
  const StudySummary summary = run_study(config);

  Checker c;
  for (const char* name : {"GEE2-NACE", "GEE2-Falconer"}) {
    const StudyRow& male = row_for(summary, name, "male");
    const StudyRow& female = row_for(summary, name, "female");
    c.expect(in_window(male.mean_h2, 0.59, 0.61),
             std::string(name) + " mean male h2=" + g6(male.mean_h2) + " outside [0.59,0.61]");
    c.expect(in_window(female.mean_h2, 0.29, 0.31),
             std::string(name) + " mean female h2=" + g6(female.mean_h2) +
                 " outside [0.29,0.31]");
    c.expect(in_window(male.coverage_h2, 0.92, 0.97),
             std::string(name) + " male h2 coverage=" + g6(male.coverage_h2) +
                 " outside [0.92,0.97]");
    c.expect(in_window(female.coverage_h2, 0.92, 0.97),
             std::string(name) + " female h2 coverage=" + g6(female.coverage_h2) +
                 " outside [0.92,0.97]");
  }
  return c;
}

// --------------------------------------------------------------------------
// Criterion 5: solver equals the direct likelihood maximizer
// --------------------------------------------------------------------------

Checker criterion_nace_oracle() {
  const auto start = std::chrono::steady_clock::now();
  Checker c;
  for (int rep = 0; rep < 20; ++rep) {
    ScenarioConfig scen;
    scen.scenario = Scenario::unequal_var_normal;
    scen.mz_components = {0.5, 0.3, 0.2};
    scen.dz_components = {0.5, 0.3, 0.2};
    scen.n_mz = 200;
    scen.n_dz = 200;
    scen.seed = derive_seed(20260815, static_cast<std::uint64_t>(rep));
    const TwinDataset data = simulate(scen);

    const MomentModel model = MomentModel::nace();
    const SolveOutcome outcome = solve(data, model, default_start(data, model));
    c.expect(outcome.converged, "solver failed to converge on dataset " + std::to_string(rep));
    const auto mle = test::maximize_nace_loglik(
        data, {outcome.alpha_hat[0] + 0.04, outcome.alpha_hat[1] - 0.03,
               outcome.alpha_hat[2] + 0.02});
    for (int k = 0; k < 3; ++k) {
      const double diff = std::abs(outcome.alpha_hat[k] - mle[static_cast<std::size_t>(k)]);
      c.expect(diff < 1e-4, "dataset " + std::to_string(rep) + " component " +
                                std::to_string(k) + " differs by " + g6(diff));
    }
  }
  c.expect(seconds_since(start) < 10.0, "oracle comparison exceeded 10 s");
  return c;
}

// --------------------------------------------------------------------------
// Criterion 6: pooled-moment closed form
// --------------------------------------------------------------------------

Checker criterion_closed_form() {
  Checker c;
  std::mt19937_64 seeds(20260816);
  std::normal_distribution<double> gauss;
  for (int rep = 0; rep < 100; ++rep) {
    Rng rng(seeds());
    TwinDataset data;
    std::uniform_int_distribution<int> size_dist(20, 150);
    const int n_mz = size_dist(rng);
    const int n_dz = size_dist(rng);
    std::uniform_real_distribution<double> rho_dist(-0.4, 0.9);
    const double rho_mz = rho_dist(rng);
    const double rho_dz = rho_dist(rng);
    for (int i = 0; i < n_mz + n_dz; ++i) {
      const bool mz = i < n_mz;
      const double rho = mz ? rho_mz : rho_dz;
      const double u1 = gauss(rng);
      const double u2 = gauss(rng);
      TwinPair pair;
      pair.zygosity = mz ? Zygosity::MZ : Zygosity::DZ;
      pair.y1 = 1.3 * u1;
      pair.y2 = 1.3 * (rho * u1 + std::sqrt(1.0 - rho * rho) * u2);
      data.pairs.push_back(pair);
    }

    // the pipeline centers per zygosity; the oracle sees the same values
    const TwinDataset processed = center(data, CenterMode::per_zygosity);
    const auto cf = test::closed_form_falconer(processed);
    const double h2_cf = 2.0 * (cf.rho_mz - cf.rho_dz);
    const double c2_cf = 2.0 * cf.rho_dz - cf.rho_mz;

    const FitResult gee2 = fit(data, EstimatorKind::gee2_falconer);
    c.expect(gee2.diagnostics.converged, "GEE2-Falconer failed on dataset " + std::to_string(rep));
    c.expect(std::abs(gee2.proportions.h2 - h2_cf) < 1e-10,
             "GEE2-Falconer h2 differs from closed form by " +
                 g6(std::abs(gee2.proportions.h2 - h2_cf)));
    c.expect(std::abs(gee2.proportions.c2 - c2_cf) < 1e-10,
             "GEE2-Falconer c2 differs from closed form by " +
                 g6(std::abs(gee2.proportions.c2 - c2_cf)));

    FitOptions pooled;
    pooled.pooled_corr = true;
    const FitResult falc = fit(data, EstimatorKind::falconer, pooled);
    c.expect(std::abs(falc.proportions.h2 - h2_cf) < 1e-14,
             "pooled-corr Falconer h2 differs from closed form");
    c.expect(std::abs(falc.proportions.c2 - c2_cf) < 1e-14,
             "pooled-corr Falconer c2 differs from closed form");
  }
  return c;
}

// --------------------------------------------------------------------------
// Criterion 7: property suite
// --------------------------------------------------------------------------

Checker criterion_properties() {
  const auto start = std::chrono::steady_clock::now();
  Checker c;
  std::mt19937_64 rng(20260817);
  std::uniform_real_distribution<double> unif(0.05, 1.5);

  // Jacobians vs central finite differences, every model family
  const std::vector<MomentModel> models = {
      MomentModel::nace(), MomentModel::nace({"sex"}, VarianceLink::log),
      MomentModel::falconer(),
      MomentModel::falconer({"age", "age2c"}, VarianceLink::log, CorrLink::fisher_z)};
  for (const MomentModel& model : models) {
    const bool bounded_rho = model.parameterization == Parameterization::falconer &&
                             model.corr_link == CorrLink::identity;
    for (int draw = 0; draw < 25; ++draw) {
      Eigen::VectorXd alpha(model.param_dim());
      for (Eigen::Index i = 0; i < alpha.size(); ++i) alpha[i] = unif(rng) - 0.4;
      if (model.parameterization == Parameterization::nace &&
          model.var_link == VarianceLink::identity) {
        alpha = alpha.array() + 0.7;
      }
      if (bounded_rho) {
        // keep sigma2_z positive and |rho_z| < 1 at both zygosities
        alpha[0] = 0.5 + unif(rng);
        alpha[1] = 0.3 * (unif(rng) - 0.7);
        alpha[2] = 0.55 * (unif(rng) - 0.7);
        alpha[3] = 0.55 * (unif(rng) - 0.7);
      }
      Eigen::VectorXd x(model.covariates.size());
      for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = unif(rng);
      for (Zygosity z : {Zygosity::MZ, Zygosity::DZ}) {
        const Eigen::MatrixXd analytic = jacobian(model, alpha, z, x);
        Eigen::MatrixXd fd(3, alpha.size());
        const double step = 1e-6;
        for (Eigen::Index j = 0; j < alpha.size(); ++j) {
          Eigen::VectorXd hi = alpha, lo = alpha;
          hi[j] += step;
          lo[j] -= step;
          fd.col(j) = (gamma_pop(model, hi, z, x) - gamma_pop(model, lo, z, x)) / (2 * step);
        }
        const double scale = std::max(1.0, analytic.cwiseAbs().maxCoeff());
        c.expect((analytic - fd).cwiseAbs().maxCoeff() / scale < 1e-6,
                 "jacobian FD mismatch");
      }
      // delta-method gradients
      Eigen::VectorXd gx = x;
      for (bool want_h2 : {true, false}) {
        const DerivedQuantity q = want_h2 ? h2_quantity(model, alpha, gx)
                                          : c2_quantity(model, alpha, gx);
        Eigen::VectorXd fd(alpha.size());
        const double step = 1e-6;
        for (Eigen::Index j = 0; j < alpha.size(); ++j) {
          Eigen::VectorXd hi = alpha, lo = alpha;
          hi[j] += step;
          lo[j] -= step;
          const double fhi = want_h2 ? h2_quantity(model, hi, gx).value
                                     : c2_quantity(model, hi, gx).value;
          const double flo = want_h2 ? h2_quantity(model, lo, gx).value
                                     : c2_quantity(model, lo, gx).value;
          fd[j] = (fhi - flo) / (2 * step);
        }
        const double scale = std::max(1.0, q.gradient.cwiseAbs().maxCoeff());
        c.expect((q.gradient - fd).cwiseAbs().maxCoeff() / scale < 1e-6,
                 "delta gradient FD mismatch");
      }
    }
  }

  // solver-level properties on a simulated dataset
  ScenarioConfig scen;
  scen.scenario = Scenario::mvt;
  scen.n_mz = 400;
  scen.n_dz = 400;
  scen.seed = 20260818;
  const TwinDataset data = simulate(scen);

  for (Parameterization param : {Parameterization::nace, Parameterization::falconer}) {
    const MomentModel model =
        param == Parameterization::nace ? MomentModel::nace() : MomentModel::falconer();
    const SolveOutcome outcome = solve(data, model, default_start(data, model));
    c.expect(outcome.converged, "property solve did not converge");
    const double psi_scale = outcome.psi.cwiseAbs().maxCoeff();
    c.expect((outcome.psi - outcome.psi.transpose()).cwiseAbs().maxCoeff() <
                 1e-10 * psi_scale, "Psi asymmetric");
    const double meat_scale = std::max(1.0, outcome.meat.cwiseAbs().maxCoeff());
    c.expect((outcome.meat - outcome.meat.transpose()).cwiseAbs().maxCoeff() <
                 1e-10 * meat_scale, "meat asymmetric");
    for (const Eigen::MatrixXd& cov : {sandwich_cov(outcome, outcome.n_pairs),
                                       model_based_cov(outcome, outcome.n_pairs)}) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
      c.expect(eig.eigenvalues().minCoeff() >= -1e-10 * cov.trace(), "covariance not PSD");
    }
    // omega scaling leaves alpha_hat unchanged
    MomentModel scaled = model;
    scaled.omega_scale = 2.25;
    const SolveOutcome outcome2 = solve(data, scaled, default_start(data, scaled));
    c.expect((outcome.alpha_hat - outcome2.alpha_hat).cwiseAbs().maxCoeff() < 1e-10,
             "alpha_hat changed under omega scaling");
  }

  // proportions sum to one; scale equivariance; twin-label symmetry
  TwinDataset scaled_data = data;
  for (TwinPair& pair : scaled_data.pairs) {
    pair.y1 *= 3.0;
    pair.y2 *= 3.0;
  }
  TwinDataset swapped_data = data;
  for (TwinPair& pair : swapped_data.pairs) std::swap(pair.y1, pair.y2);
  for (EstimatorKind kind : {EstimatorKind::nace, EstimatorKind::gee2_nace,
                             EstimatorKind::falconer, EstimatorKind::gee2_falconer}) {
    const FitResult base = fit(data, kind);
    c.expect(std::abs(base.proportions.h2 + base.proportions.c2 + base.proportions.e2 -
                      1.0) < 1e-12, "proportions do not sum to 1");
    const FitResult scaled_fit = fit(scaled_data, kind);
    c.expect(std::abs(scaled_fit.proportions.h2 - base.proportions.h2) < 1e-8 &&
                 std::abs(scaled_fit.se_h2 - base.se_h2) < 1e-8 &&
                 std::abs(scaled_fit.proportions.c2 - base.proportions.c2) < 1e-8 &&
                 std::abs(scaled_fit.se_c2 - base.se_c2) < 1e-8,
             std::string(to_string(kind)) + " not scale equivariant");
    const FitResult swapped_fit = fit(swapped_data, kind);
    c.expect(std::abs(swapped_fit.proportions.h2 - base.proportions.h2) < 1e-10 &&
                 std::abs(swapped_fit.proportions.c2 - base.proportions.c2) < 1e-10,
             std::string(to_string(kind)) + " not label symmetric");
  }

  // LGP pmf normalization and sampler moments
  for (double theta : {0.2, 0.8, 1.7, 3.0}) {
    for (double lambda : {0.05, 0.35, 0.5}) {
      double total = 0.0;
      for (int y = 0; y <= 500; ++y) total += lgp_pmf(theta, lambda, y);
      c.expect(std::abs(total - 1.0) < 1e-9, "lgp pmf normalization failed");
    }
  }
  {
    Rng lgp_rng(20260819);
    const double theta = 0.55, lambda = 0.35;
    const int n = 400000;
    double sum = 0.0, sum_sq = 0.0;
    for (int i = 0; i < n; ++i) {
      const double y = lgp_sample(theta, lambda, lgp_rng);
      sum += y;
      sum_sq += y * y;
    }
    const double mean = sum / n;
    const double var = sum_sq / n - mean * mean;
    const double true_mean = theta / (1 - lambda);
    const double true_var = theta / std::pow(1 - lambda, 3.0);
    c.expect(std::abs(mean - true_mean) < 4.0 * std::sqrt(true_var / n),
             "lgp sample mean off target");
    // rough bound on Var(sample variance) via the observed fourth moment
    Rng again(20260819);
    double m4 = 0.0;
    for (int i = 0; i < n; ++i) {
      const double d = lgp_sample(theta, lambda, again) - true_mean;
      m4 += d * d * d * d;
    }
    m4 /= n;
    c.expect(std::abs(var - true_var) < 4.0 * std::sqrt((m4 - true_var * true_var) / n),
             "lgp sample variance off target");
  }

  c.expect(seconds_since(start) < 60.0, "property suite exceeded 60 s");
  return c;
}

// --------------------------------------------------------------------------
// Criterion 8: Wald contrast size under a constant-h2 age scenario
// --------------------------------------------------------------------------

Checker criterion_wald_size() {
  StudyConfig config;
  config.scenario.scenario = Scenario::age_falconer;
  config.scenario.seed = 20260820;
  config.scenario.age_v = {1.0, 0.0, 0.0, 0.0, 0.0, 0.0};
  config.scenario.age_p = {0.55, 0.25, 0.0, 0.0, 0.0, 0.0}; // no true age effect
  config.estimators = {EstimatorKind::gee2_falconer};
  config.replicates = 1000;
  config.contrast_ages = {{17.0, 29.0}};
  const StudySummary summary = run_study(config);

  Checker c;
  const StudyRow& row = row_for(summary, "GEE2-Falconer", "age=17");
  c.expect(row.n_failed == 0, "non-convergent replicates");
  c.expect(in_window(row.contrast_reject_rate, 0.03, 0.08),
           "rejection rate " + g6(row.contrast_reject_rate) + " outside [0.03,0.08]");
  return c;
}

} // namespace

int main() {
  struct Entry {
    const char* name;
    Checker (*run)();
  };
  const std::vector<Entry> criteria = {
      {"1 heavy-tailed t study (coverage and SE calibration)", criterion_heavy_tailed_study},
      {"2 overdispersed count study (coverage and SE calibration)", criterion_count_study},
      {"3 unequal-variance study (NACE bias, Falconer unbiased)", criterion_unequal_variance_study},
      {"4 sex-varying heritability study", criterion_sex_study},
      {"5 NACE oracle equivalence (direct likelihood maximizer)", criterion_nace_oracle},
      {"6 Closed-form equivalence (pooled moments)", criterion_closed_form},
      {"7 Property suite", criterion_properties},
      {"8 Wald-contrast size check", criterion_wald_size},
  };

  int failures = 0;
  for (const Entry& entry : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Checker result;
    try {
      result = entry.run();
    } catch (const std::exception& e) {
      result.pass = false;
      result.detail = std::string("exception: ") + e.what();
    }
    const double elapsed = seconds_since(start);
    std::printf("%s criterion %s (%.1fs)%s%s\n", result.pass ? "PASS" : "FAIL", entry.name,
                elapsed, result.detail.empty() ? "" : " -- ", result.detail.c_str());
    std::fflush(stdout);
    if (!result.pass) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
