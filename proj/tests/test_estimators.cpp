#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "twinace/estimators.hpp"
#include "twinace/simulators.hpp"

using namespace twinace;
using Eigen::VectorXd;

namespace {

TwinDataset mvt_data(std::uint64_t seed, int n = 700) {
  ScenarioConfig scen;
  scen.scenario = Scenario::mvt;
  scen.n_mz = n;
  scen.n_dz = n;
  scen.seed = seed;
  return simulate(scen);
}

/// Central finite difference of a proportion map through the model.
VectorXd fd_gradient(const MomentModel& model, const VectorXd& alpha, const VectorXd& x,
                     bool want_h2, double step = 1e-6) {
  VectorXd grad(alpha.size());
  for (Eigen::Index j = 0; j < alpha.size(); ++j) {
    VectorXd hi = alpha, lo = alpha;
    hi[j] += step;
    lo[j] -= step;
    const double fhi = want_h2 ? h2_quantity(model, hi, x).value : c2_quantity(model, hi, x).value;
    const double flo = want_h2 ? h2_quantity(model, lo, x).value : c2_quantity(model, lo, x).value;
    grad[j] = (fhi - flo) / (2.0 * step);
  }
  return grad;
}

} // namespace

TEST_CASE("pearson") {
  using P = std::pair<double, double>;
  const std::vector<P> increasing = {{1, 2}, {2, 3}, {3, 4}};
  CHECK(pearson(increasing) == doctest::Approx(1.0));
  const std::vector<P> opposite = {{1, -1}, {-1, 1}};
  CHECK(pearson(opposite) == doctest::Approx(-1.0));
  const std::vector<P> cross = {{1, 0}, {0, 1}, {-1, 0}, {0, -1}};
  CHECK(pearson(cross) == doctest::Approx(0.0));
  const std::vector<P> flat = {{1, 2}, {1, 3}};
  CHECK_THROWS_AS(pearson(flat), DegenerateDataError);
  const std::vector<P> single = {{1, 2}};
  CHECK_THROWS_AS(pearson(single), InsufficientDataError);
}

TEST_CASE("falconer_point") {
  CHECK(falconer_point({0.8, 0.55, 700, 700}).h2 == doctest::Approx(0.5));
  CHECK(falconer_point({0.8, 0.55, 700, 700}).c2 == doctest::Approx(0.3));
  CHECK(falconer_point({0.8, 0.55, 700, 700}).e2 == doctest::Approx(0.2));
  const AceProportions zero = falconer_point({0.0, 0.0, 10, 10});
  CHECK(zero.h2 == 0.0);
  CHECK(zero.c2 == 0.0);
  CHECK(zero.e2 == 1.0);
  // out-of-range results are reported, not clamped
  const AceProportions odd = falconer_point({0.2, 0.4, 10, 10});
  CHECK(odd.h2 == doctest::Approx(-0.4));
  CHECK(odd.c2 == doctest::Approx(0.6));
  CHECK_FALSE(odd.in_range());
}

TEST_CASE("falconer_se") {
  const auto [zero_h2, zero_c2] = falconer_se({1.0, 1.0, 100, 100});
  CHECK(zero_h2 == 0.0);
  CHECK(zero_c2 == 0.0);

  const auto [se_h2, se_c2] = falconer_se({0.8, 0.55, 700, 700});
  CHECK(se_h2 == doctest::Approx(0.04195597182080962).epsilon(1e-12));
  CHECK(se_c2 == doctest::Approx(0.03850440605585659).epsilon(1e-12));

  const auto [big_h2, big_c2] = falconer_se({0.8, 0.55, 1400, 1400});
  CHECK(se_h2 / big_h2 == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
  CHECK(se_c2 / big_c2 == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
}

TEST_CASE("fit: estimator dispatch and invariants") {
  const TwinDataset data = mvt_data(123);

  const FitResult nace = fit(data, EstimatorKind::nace);
  const FitResult gee2_nace = fit(data, EstimatorKind::gee2_nace);
  const FitResult falc = fit(data, EstimatorKind::falconer);
  const FitResult gee2_falc = fit(data, EstimatorKind::gee2_falconer);

  SUBCASE("every fit sums to one and lands near the truth") {
    for (const FitResult* r : {&nace, &gee2_nace, &falc, &gee2_falc}) {
      REQUIRE(r->diagnostics.converged);
      CHECK(r->proportions.h2 + r->proportions.c2 + r->proportions.e2 == doctest::Approx(1.0));
      CHECK(r->proportions.h2 == doctest::Approx(0.5).epsilon(0.35));
      CHECK(r->ci_h2.lo == doctest::Approx(r->proportions.h2 - 1.96 * r->se_h2));
      CHECK(r->ci_h2.hi == doctest::Approx(r->proportions.h2 + 1.96 * r->se_h2));
      CHECK(r->se_h2 >= 0.0);
    }
  }
  SUBCASE("NACE and GEE2-NACE share the point estimate; SEs differ") {
    CHECK((nace.alpha_hat - gee2_nace.alpha_hat).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(nace.proportions.h2 == doctest::Approx(gee2_nace.proportions.h2).epsilon(1e-12));
    // heavy-tailed data: the sandwich SE should exceed the model-based one
    CHECK(gee2_nace.se_h2 > nace.se_h2);
  }
  SUBCASE("GEE2-Falconer matches classical Falconer closely at n=700") {
    CHECK(std::abs(gee2_falc.proportions.h2 - falc.proportions.h2) < 0.02);
    CHECK(std::abs(gee2_falc.proportions.c2 - falc.proportions.c2) < 0.02);
  }
  SUBCASE("with the pooled correlation convention the match is exact") {
    FitOptions options;
    options.pooled_corr = true;
    const FitResult pooled = fit(data, EstimatorKind::falconer, options);
    CHECK(std::abs(gee2_falc.proportions.h2 - pooled.proportions.h2) < 1e-10);
    CHECK(std::abs(gee2_falc.proportions.c2 - pooled.proportions.c2) < 1e-10);
  }
  SUBCASE("diagnostics carry the group sizes and variance ratio") {
    CHECK(nace.diagnostics.n_mz == 700);
    CHECK(nace.diagnostics.n_dz == 700);
    CHECK(nace.diagnostics.mz_dz_variance_ratio == doctest::Approx(1.0).epsilon(0.2));
  }
  SUBCASE("missing zygosity group is rejected") {
    TwinDataset mz_only;
    for (int i = 0; i < 10; ++i) mz_only.pairs.push_back(TwinPair{1.0 * i, 0.5, Zygosity::MZ, {}});
    CHECK_THROWS_AS(fit(mz_only, EstimatorKind::falconer), InsufficientDataError);
  }
}

TEST_CASE("NACE point estimates match the likelihood-maximizer oracle") {
  const TwinDataset raw = mvt_data(55, 200);
  const FitResult result = fit(raw, EstimatorKind::nace);
  REQUIRE(result.diagnostics.converged);
  // oracle works on the same pipeline-processed data
  const TwinDataset processed = center(raw, CenterMode::per_zygosity);
  const auto mle = test::maximize_nace_loglik(
      processed, {result.alpha_hat[0], result.alpha_hat[1] + 0.03, result.alpha_hat[2]});
  const double total = mle[0] + mle[1] + mle[2];
  CHECK(result.proportions.h2 == doctest::Approx(mle[0] / total).epsilon(5e-4));
}

TEST_CASE("delta-method gradients match finite differences") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> unif(0.1, 0.5);
  SUBCASE("nace, plain and with a covariate") {
    for (const MomentModel& model :
         {MomentModel::nace(), MomentModel::nace({"sex"}, VarianceLink::log)}) {
      for (int rep = 0; rep < 20; ++rep) {
        VectorXd alpha(model.param_dim());
        for (Eigen::Index i = 0; i < alpha.size(); ++i) alpha[i] = unif(rng);
        VectorXd x(model.covariates.size());
        for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = unif(rng) > 0.3 ? 1.0 : 0.0;
        for (bool want_h2 : {true, false}) {
          const DerivedQuantity q = want_h2 ? h2_quantity(model, alpha, x)
                                            : c2_quantity(model, alpha, x);
          const VectorXd fd = fd_gradient(model, alpha, x, want_h2);
          const double scale = std::max(1.0, q.gradient.cwiseAbs().maxCoeff());
          CHECK((q.gradient - fd).cwiseAbs().maxCoeff() / scale < 1e-6);
        }
      }
    }
  }
  SUBCASE("falconer with links and covariates") {
    for (const MomentModel& model :
         {MomentModel::falconer(),
          MomentModel::falconer({"sex"}, VarianceLink::log, CorrLink::fisher_z)}) {
      for (int rep = 0; rep < 20; ++rep) {
        VectorXd alpha(model.param_dim());
        for (Eigen::Index i = 0; i < alpha.size(); ++i) alpha[i] = unif(rng) - 0.2;
        VectorXd x(model.covariates.size());
        for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = 1.0;
        for (bool want_h2 : {true, false}) {
          const DerivedQuantity q = want_h2 ? h2_quantity(model, alpha, x)
                                            : c2_quantity(model, alpha, x);
          const VectorXd fd = fd_gradient(model, alpha, x, want_h2);
          const double scale = std::max(1.0, q.gradient.cwiseAbs().maxCoeff());
          CHECK((q.gradient - fd).cwiseAbs().maxCoeff() / scale < 1e-6);
        }
      }
    }
  }
}

TEST_CASE("scale equivariance and twin-label symmetry") {
  const TwinDataset data = mvt_data(321, 300);

  TwinDataset scaled = data;
  for (TwinPair& pair : scaled.pairs) {
    pair.y1 *= 2.5;
    pair.y2 *= 2.5;
  }
  TwinDataset swapped = data;
  for (TwinPair& pair : swapped.pairs) std::swap(pair.y1, pair.y2);

  for (EstimatorKind kind : {EstimatorKind::nace, EstimatorKind::gee2_nace,
                             EstimatorKind::falconer, EstimatorKind::gee2_falconer}) {
    const FitResult base = fit(data, kind);
    const FitResult after_scale = fit(scaled, kind);
    const FitResult after_swap = fit(swapped, kind);
    REQUIRE(base.diagnostics.converged);
    CHECK(std::abs(after_scale.proportions.h2 - base.proportions.h2) < 1e-8);
    CHECK(std::abs(after_scale.proportions.c2 - base.proportions.c2) < 1e-8);
    CHECK(std::abs(after_scale.se_h2 - base.se_h2) < 1e-8);
    CHECK(std::abs(after_scale.se_c2 - base.se_c2) < 1e-8);
    CHECK(std::abs(after_swap.proportions.h2 - base.proportions.h2) < 1e-10);
    CHECK(std::abs(after_swap.proportions.c2 - base.proportions.c2) < 1e-10);
  }
}

TEST_CASE("variance covariate fits") {
  ScenarioConfig scen;
  scen.scenario = Scenario::sex_normal;
  scen.n_mz = 450;
  scen.n_dz = 450;
  scen.seed = 2468;
  const TwinDataset data = simulate(scen);

  SUBCASE("sex-specific GEE2-Falconer factorizes into per-sex fits") {
    // center once so the joint fit and the subset oracle see identical values
    const TwinDataset processed = center(data, CenterMode::per_zygosity);
    FitOptions no_recenter;
    no_recenter.centering = CenterPolicy::none;

    VarianceCovariateOptions options;
    options.base = no_recenter;
    options.covariate = "sex";
    options.level_labels = {{0.0, "female"}, {1.0, "male"}};
    const FitResult joint =
        fit_with_variance_covariates(processed, EstimatorKind::gee2_falconer, options);
    REQUIRE(joint.diagnostics.converged);
    REQUIRE(joint.levels.size() == 2);
    CHECK(joint.levels[0].label == "female");
    CHECK(joint.levels[1].label == "male");

    // oracle: the saturated interaction model factorizes into subset fits
    for (double sex : {0.0, 1.0}) {
      TwinDataset subset;
      for (const TwinPair& pair : processed.pairs) {
        if (pair.covariate("sex") == sex) subset.pairs.push_back(pair);
      }
      const FitResult separate = fit(subset, EstimatorKind::gee2_falconer, no_recenter);
      const LevelEstimate& level = joint.levels[sex == 0.0 ? 0 : 1];
      CHECK(std::abs(level.proportions.h2 - separate.proportions.h2) < 1e-8);
      CHECK(std::abs(level.proportions.c2 - separate.proportions.c2) < 1e-8);
    }
  }
  SUBCASE("sex-specific GEE2-NACE recovers the generating components") {
    VarianceCovariateOptions options;
    options.covariate = "sex";
    const FitResult joint = fit_with_variance_covariates(data, EstimatorKind::gee2_nace, options);
    REQUIRE(joint.diagnostics.converged);
    REQUIRE(joint.levels.size() == 2);
    // truth: female h2 = 0.3, male h2 = 0.6; SEs around 0.07 at 450/cell
    CHECK(std::abs(joint.levels[0].proportions.h2 - 0.3) < 4.0 * joint.levels[0].se_h2);
    CHECK(std::abs(joint.levels[1].proportions.h2 - 0.6) < 4.0 * joint.levels[1].se_h2);
    CHECK(joint.levels[0].proportions.h2 + joint.levels[0].proportions.c2 +
              joint.levels[0].proportions.e2 == doctest::Approx(1.0));
  }
  SUBCASE("constant covariate is a singular design") {
    TwinDataset constant = data;
    for (TwinPair& pair : constant.pairs) pair.covariates["sex"] = 1.0;
    VarianceCovariateOptions options;
    options.covariate = "sex";
    CHECK_THROWS_AS(fit_with_variance_covariates(constant, EstimatorKind::gee2_nace, options),
                    SingularityError);
  }
  SUBCASE("classical estimators cannot take variance covariates") {
    VarianceCovariateOptions options;
    options.covariate = "sex";
    CHECK_THROWS_AS(fit_with_variance_covariates(data, EstimatorKind::falconer, options),
                    UsageError);
  }
}

TEST_CASE("quadratic age design") {
  ScenarioConfig scen;
  scen.scenario = Scenario::age_falconer;
  scen.n_mz = 4000;
  scen.n_dz = 4000;
  scen.seed = 99;
  scen.age_p = {0.50, 0.22, 0.004, -0.001, 0.002, 0.0005};
  const TwinDataset data = simulate(scen);

  VarianceCovariateOptions options;
  options.covariate = "age";
  options.quadratic_age = true;
  options.age_center = age_grid_center(scen);
  const FitResult result = fit_with_variance_covariates(data, EstimatorKind::gee2_falconer, options);
  REQUIRE(result.diagnostics.converged);
  REQUIRE(result.levels.size() == scen.age_grid.size());

  for (std::size_t i = 0; i < scen.age_grid.size(); ++i) {
    const double age = scen.age_grid[i];
    const AceProportions truth = true_proportions_at(scen, age);
    CHECK(std::abs(result.levels[i].proportions.h2 - truth.h2) <
          4.0 * result.levels[i].se_h2);
  }
}

TEST_CASE("wald_contrast") {
  SUBCASE("a quantity against itself") {
    DerivedQuantity q{0.4, Eigen::Vector2d(1.0, -1.0)};
    const Eigen::MatrixXd cov = Eigen::Matrix2d::Identity() * 0.01;
    const WaldContrast wc = wald_contrast(cov, q, q);
    CHECK(wc.estimate == 0.0);
    CHECK(wc.se == 0.0);
    CHECK(wc.z == 0.0);
    CHECK(wc.p == 1.0);
  }
  SUBCASE("independent blocks add in quadrature") {
    DerivedQuantity a{0.5, Eigen::Vector4d(1, 0, 0, 0)};
    DerivedQuantity b{0.3, Eigen::Vector4d(0, 0, 1, 0)};
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(4, 4);
    cov.diagonal() << 0.04, 0.01, 0.09, 0.01;
    const WaldContrast wc = wald_contrast(cov, a, b);
    CHECK(wc.estimate == doctest::Approx(0.2));
    CHECK(wc.se == doctest::Approx(std::sqrt(0.04 + 0.09)).epsilon(1e-12));
    CHECK(wc.z == doctest::Approx(0.2 / std::sqrt(0.13)).epsilon(1e-12));
  }
  SUBCASE("mismatched gradients are a usage error") {
    DerivedQuantity a{0.5, Eigen::Vector3d(1, 0, 0)};
    DerivedQuantity b{0.3, Eigen::Vector4d(0, 0, 1, 0)};
    CHECK_THROWS_AS(wald_contrast(Eigen::Matrix3d::Identity(), a, b), UsageError);
  }
}

TEST_CASE("fit result serializes to JSON") {
  const TwinDataset data = mvt_data(777, 120);
  const FitResult result = fit(data, EstimatorKind::gee2_falconer);
  const std::string json = fit_result_to_json(result);
  CHECK(json.find("\"estimator\": \"GEE2-Falconer\"") != std::string::npos);
  CHECK(json.find("\"h2\"") != std::string::npos);
  CHECK(json.find("\"cov_alpha\"") != std::string::npos);
  CHECK(json.find("\"diagnostics\"") != std::string::npos);
}
