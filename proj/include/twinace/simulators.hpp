#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "twinace/estimators.hpp"
#include "twinace/moments.hpp"
#include "twinace/twin_data.hpp"

namespace twinace {

using Rng = std::mt19937_64;

/// Stream seed for replicate `index` of a study seeded with `base`
/// (SplitMix64 mix, so replicates are decoupled and parallelizable).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

enum class Scenario { mvt, blgp, unequal_var_normal, sex_normal, age_falconer };

const char* to_string(Scenario s);
Scenario scenario_from_string(std::string_view name);

struct ScenarioConfig {
  Scenario scenario = Scenario::mvt;
  /// Pair counts; for sex_normal these are counts per sex-by-zygosity cell.
  int n_mz = 700;
  int n_dz = 700;
  std::uint64_t seed = 0;

  // mvt and blgp
  AceParams alpha{0.5, 0.3, 0.2};
  double df = 4.5;      // mvt degrees of freedom, > 2
  double lambda = 0.35; // blgp dispersion, in (0, 1)

  // unequal_var_normal: per-group components (proportions must match)
  AceParams mz_components{0.3, 0.18, 0.12};
  AceParams dz_components{0.5, 0.3, 0.2};

  // sex_normal: identity-link component effects; sex = 1 for male pairs
  AceCovariateParams sex_effects{0.3, 0.3, 0.4, -0.2, 0.3, -0.1, VarianceLink::identity};

  // age_falconer: design (1, z, age, age2c, age*z, age2c*z) per predictor,
  // age2c centered at the grid mean
  std::array<double, 6> age_v{{1.0, 0.0, 0.0, 0.0, 0.0, 0.0}};
  std::array<double, 6> age_p{{0.55, 0.25, 0.0, 0.0, 0.0, 0.0}};
  VarianceLink age_var_link = VarianceLink::identity;
  CorrLink age_corr_link = CorrLink::identity;
  std::vector<double> age_grid{17.0, 20.0, 24.0, 29.0};
};

/// Validates the scenario parameters; throws ConfigError with the reason.
void validate(const ScenarioConfig& config);

/// Dispatches to the scenario generator. Deterministic in (config, seed).
TwinDataset simulate(const ScenarioConfig& config);

TwinDataset simulate_mvt(const ScenarioConfig& config);
TwinDataset simulate_blgp(const ScenarioConfig& config);
TwinDataset simulate_unequal_var_normal(const ScenarioConfig& config);
TwinDataset simulate_sex_normal(const ScenarioConfig& config);
TwinDataset simulate_age_falconer(const ScenarioConfig& config);

/// True proportions implied by the scenario parameters. Scenarios with
/// covariate-varying components take the covariate level (sex 0/1 or age).
AceProportions true_proportions(const ScenarioConfig& config);
AceProportions true_proportions_at(const ScenarioConfig& config, double level);

/// Age-grid mean used to center the squared-age covariate in age_falconer.
double age_grid_center(const ScenarioConfig& config);

// ---------------------------------------------------------------------------
// Lagrangian (generalized) Poisson distribution
// ---------------------------------------------------------------------------

/// P(Y = y) = theta (theta + lambda y)^{y-1} exp(-theta - lambda y) / y!
double lgp_pmf(double theta, double lambda, int y);
double lgp_log_pmf(double theta, double lambda, int y);

/// Inverse-CDF draw over the pmf, capped once the cumulative mass reaches
/// 1 - 1e-12; throws SamplingError if the cap is exceeded.
int lgp_sample(double theta, double lambda, Rng& rng);

} // namespace twinace
