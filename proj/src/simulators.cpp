#include "twinace/simulators.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace twinace {

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  // SplitMix64 over base + golden-ratio steps per index
  std::uint64_t x = base + 0x9E3779B97F4A7C15ULL * (index + 1);
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ULL;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBULL;
  x ^= x >> 31;
  return x;
}

const char* to_string(Scenario s) {
  switch (s) {
    case Scenario::mvt: return "mvt";
    case Scenario::blgp: return "blgp";
    case Scenario::unequal_var_normal: return "unequal_var_normal";
    case Scenario::sex_normal: return "sex_normal";
    case Scenario::age_falconer: return "age_falconer";
  }
  return "?";
}

Scenario scenario_from_string(std::string_view name) {
  std::string s(name);
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  std::replace(s.begin(), s.end(), '-', '_');
  if (s == "mvt") return Scenario::mvt;
  if (s == "blgp") return Scenario::blgp;
  if (s == "unequal_var_normal" || s == "unequal_var") return Scenario::unequal_var_normal;
  if (s == "sex_normal" || s == "sex") return Scenario::sex_normal;
  if (s == "age_falconer" || s == "age") return Scenario::age_falconer;
  throw ConfigError("unknown scenario \"" + std::string(name) + "\"");
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

namespace {

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

struct AgePoint {
  double sigma2_mz, sigma2_dz, rho_mz, rho_dz;
};

AgePoint age_point(const ScenarioConfig& config, double age) {
  const double center = age_grid_center(config);
  const double age2c = (age - center) * (age - center);
  auto predictor = [&](const std::array<double, 6>& coef, double z) {
    return coef[0] + coef[1] * z + coef[2] * age + coef[3] * age2c +
           coef[4] * age * z + coef[5] * age2c * z;
  };
  AgePoint out;
  out.sigma2_mz = var_link_inverse(config.age_var_link, predictor(config.age_v, 1.0));
  out.sigma2_dz = var_link_inverse(config.age_var_link, predictor(config.age_v, 0.0));
  out.rho_mz = corr_link_inverse(config.age_corr_link, predictor(config.age_p, 1.0));
  out.rho_dz = corr_link_inverse(config.age_corr_link, predictor(config.age_p, 0.0));
  return out;
}

} // namespace

double age_grid_center(const ScenarioConfig& config) {
  return std::accumulate(config.age_grid.begin(), config.age_grid.end(), 0.0) /
         static_cast<double>(config.age_grid.size());
}

void validate(const ScenarioConfig& config) {
  require(config.n_mz >= 1 && config.n_dz >= 1, "pair counts must be >= 1");
  switch (config.scenario) {
    case Scenario::mvt:
      require(config.df > 2.0, "mvt requires df > 2 for a finite covariance");
      require(config.alpha.total() > 0.0, "total variance must be positive");
      require(config.alpha.sigma2_a >= 0.0 && config.alpha.sigma2_c >= 0.0 &&
                  config.alpha.sigma2_e >= 0.0,
              "variance components must be nonnegative");
      break;
    case Scenario::blgp: {
      require(config.lambda > 0.0 && config.lambda < 1.0,
              "blgp requires lambda in (0, 1); the additive construction is invalid "
              "for under-dispersion");
      const AceParams& a = config.alpha;
      require(a.sigma2_a + a.sigma2_c > 0.0 && a.sigma2_e > 0.0 &&
                  0.5 * a.sigma2_a + a.sigma2_c > 0.0 && 0.5 * a.sigma2_a + a.sigma2_e > 0.0,
              "blgp component rates must be positive");
      break;
    }
    case Scenario::unequal_var_normal: {
      const AceParams& mz = config.mz_components;
      const AceParams& dz = config.dz_components;
      require(mz.total() > 0.0 && dz.total() > 0.0, "group totals must be positive");
      const double h2_mz = mz.sigma2_a / mz.total();
      const double h2_dz = dz.sigma2_a / dz.total();
      const double c2_mz = mz.sigma2_c / mz.total();
      const double c2_dz = dz.sigma2_c / dz.total();
      require(std::abs(h2_mz - h2_dz) <= 1e-9 && std::abs(c2_mz - c2_dz) <= 1e-9,
              "unequal_var_normal represents equal proportions across groups; "
              "MZ and DZ component sets imply different (h2, c2)");
      break;
    }
    case Scenario::sex_normal:
      for (double sex : {0.0, 1.0}) {
        const AceParams a = config.sex_effects.at(sex);
        require(a.sigma2_a > 0.0 && a.sigma2_c > 0.0 && a.sigma2_e > 0.0,
                "sex_normal components must be positive for both sexes");
      }
      break;
    case Scenario::age_falconer: {
      require(!config.age_grid.empty(), "age grid must be non-empty");
      std::string bad;
      for (double age : config.age_grid) {
        const AgePoint pt = age_point(config, age);
        const bool ok = pt.sigma2_mz > 0.0 && pt.sigma2_dz > 0.0 &&
                        std::abs(pt.rho_mz) < 1.0 && std::abs(pt.rho_dz) < 1.0;
        if (!ok) bad += (bad.empty() ? "" : ", ") + std::to_string(age);
      }
      require(bad.empty(),
              "age_falconer link ranges violated at grid ages: " + bad);
      break;
    }
  }
}

// ---------------------------------------------------------------------------
// Samplers
// ---------------------------------------------------------------------------

namespace {

/// (y1, y2) from a zero-mean bivariate normal with common variance `total`
/// and covariance `cov`.
std::pair<double, double> bivariate_normal(double total, double cov, Rng& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double u1 = gauss(rng);
  const double u2 = gauss(rng);
  const double sd = std::sqrt(total);
  const double b = cov / sd;
  const double resid = std::sqrt(std::max(total - b * b, 0.0));
  return {sd * u1, b * u1 + resid * u2};
}

} // namespace

TwinDataset simulate(const ScenarioConfig& config) {
  validate(config);
  switch (config.scenario) {
    case Scenario::mvt: return simulate_mvt(config);
    case Scenario::blgp: return simulate_blgp(config);
    case Scenario::unequal_var_normal: return simulate_unequal_var_normal(config);
    case Scenario::sex_normal: return simulate_sex_normal(config);
    case Scenario::age_falconer: return simulate_age_falconer(config);
  }
  throw ConfigError("unknown scenario");
}

TwinDataset simulate_mvt(const ScenarioConfig& config) {
  validate(config);
  Rng rng(config.seed);
  std::gamma_distribution<double> chisq(config.df / 2.0, 2.0);

  TwinDataset data;
  data.pairs.reserve(static_cast<std::size_t>(config.n_mz + config.n_dz));
  for (Zygosity z : {Zygosity::MZ, Zygosity::DZ}) {
    const Eigen::Vector3d gamma = gamma_pop_nace(config.alpha, z);
    const int n = z == Zygosity::MZ ? config.n_mz : config.n_dz;
    for (int i = 0; i < n; ++i) {
      auto [z1, z2] = bivariate_normal(gamma[0], gamma[2], rng);
      const double g = chisq(rng);
      const double scale = std::sqrt(config.df / g);
      data.pairs.push_back(TwinPair{z1 * scale, z2 * scale, z, {}});
    }
  }
  return data;
}

// ---------------------------------------------------------------------------
// Lagrangian Poisson
// ---------------------------------------------------------------------------

double lgp_log_pmf(double theta, double lambda, int y) {
  if (theta <= 0.0) throw DomainError("lgp: theta must be positive");
  if (lambda < 0.0 || lambda >= 1.0) throw DomainError("lgp: lambda must be in [0, 1)");
  if (y < 0) return -std::numeric_limits<double>::infinity();
  const double rate = theta + lambda * static_cast<double>(y);
  return std::log(theta) + (y - 1) * std::log(rate) - rate - std::lgamma(y + 1.0);
}

double lgp_pmf(double theta, double lambda, int y) {
  return y < 0 ? 0.0 : std::exp(lgp_log_pmf(theta, lambda, y));
}

int lgp_sample(double theta, double lambda, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double u = unif(rng);
  constexpr double kTail = 1e-12;
  constexpr int kHardCap = 1000000;
  double cumulative = 0.0;
  for (int y = 0; y <= kHardCap; ++y) {
    cumulative += lgp_pmf(theta, lambda, y);
    if (u <= cumulative) return y;
    if (cumulative >= 1.0 - kTail) break;
  }
  throw SamplingError("lgp_sample: cumulative tail cap exceeded (theta=" +
                      std::to_string(theta) + ", lambda=" + std::to_string(lambda) + ")");
}

TwinDataset simulate_blgp(const ScenarioConfig& config) {
  validate(config);
  Rng rng(config.seed);
  const AceParams& a = config.alpha;
  const double lam = config.lambda;

  TwinDataset data;
  data.pairs.reserve(static_cast<std::size_t>(config.n_mz + config.n_dz));
  for (Zygosity z : {Zygosity::MZ, Zygosity::DZ}) {
    const bool mz = z == Zygosity::MZ;
    const double shared = mz ? a.sigma2_a + a.sigma2_c : 0.5 * a.sigma2_a + a.sigma2_c;
    const double unique = mz ? a.sigma2_e : 0.5 * a.sigma2_a + a.sigma2_e;
    const int n = mz ? config.n_mz : config.n_dz;
    for (int i = 0; i < n; ++i) {
      const int q0 = lgp_sample(shared, lam, rng);
      const int q1 = lgp_sample(unique, lam, rng);
      const int q2 = lgp_sample(unique, lam, rng);
      data.pairs.push_back(TwinPair{static_cast<double>(q0 + q1),
                                    static_cast<double>(q0 + q2), z, {}});
    }
  }
  return data;
}

TwinDataset simulate_unequal_var_normal(const ScenarioConfig& config) {
  validate(config);
  Rng rng(config.seed);
  TwinDataset data;
  data.pairs.reserve(static_cast<std::size_t>(config.n_mz + config.n_dz));
  for (Zygosity z : {Zygosity::MZ, Zygosity::DZ}) {
    const AceParams& comp = z == Zygosity::MZ ? config.mz_components : config.dz_components;
    const Eigen::Vector3d gamma = gamma_pop_nace(comp, z);
    const int n = z == Zygosity::MZ ? config.n_mz : config.n_dz;
    for (int i = 0; i < n; ++i) {
      auto [y1, y2] = bivariate_normal(gamma[0], gamma[2], rng);
      data.pairs.push_back(TwinPair{y1, y2, z, {}});
    }
  }
  return data;
}

TwinDataset simulate_sex_normal(const ScenarioConfig& config) {
  validate(config);
  Rng rng(config.seed);
  TwinDataset data;
  data.covariate_names = {"sex"};
  data.pairs.reserve(static_cast<std::size_t>(2 * (config.n_mz + config.n_dz)));
  for (Zygosity z : {Zygosity::MZ, Zygosity::DZ}) {
    const int n = z == Zygosity::MZ ? config.n_mz : config.n_dz;
    for (double sex : {1.0, 0.0}) { // male cell first, then female
      const AceParams comp = config.sex_effects.at(sex);
      const Eigen::Vector3d gamma = gamma_pop_nace(comp, z);
      for (int i = 0; i < n; ++i) {
        auto [y1, y2] = bivariate_normal(gamma[0], gamma[2], rng);
        data.pairs.push_back(TwinPair{y1, y2, z, {{"sex", sex}}});
      }
    }
  }
  return data;
}

TwinDataset simulate_age_falconer(const ScenarioConfig& config) {
  validate(config);
  Rng rng(config.seed);
  const double center = age_grid_center(config);
  std::uniform_int_distribution<std::size_t> pick(0, config.age_grid.size() - 1);

  TwinDataset data;
  data.covariate_names = {"age", "age2c"};
  data.pairs.reserve(static_cast<std::size_t>(config.n_mz + config.n_dz));
  for (Zygosity z : {Zygosity::MZ, Zygosity::DZ}) {
    const int n = z == Zygosity::MZ ? config.n_mz : config.n_dz;
    for (int i = 0; i < n; ++i) {
      const double age = config.age_grid[pick(rng)];
      const AgePoint pt = age_point(config, age);
      const double sigma2 = z == Zygosity::MZ ? pt.sigma2_mz : pt.sigma2_dz;
      const double rho = z == Zygosity::MZ ? pt.rho_mz : pt.rho_dz;
      auto [y1, y2] = bivariate_normal(sigma2, sigma2 * rho, rng);
      const double age2c = (age - center) * (age - center);
      data.pairs.push_back(TwinPair{y1, y2, z, {{"age", age}, {"age2c", age2c}}});
    }
  }
  return data;
}

// ---------------------------------------------------------------------------
// Scenario truths
// ---------------------------------------------------------------------------

AceProportions true_proportions(const ScenarioConfig& config) {
  switch (config.scenario) {
    case Scenario::mvt:
    case Scenario::blgp: {
      const double total = config.alpha.total();
      return AceProportions::from_h2_c2(config.alpha.sigma2_a / total,
                                        config.alpha.sigma2_c / total);
    }
    case Scenario::unequal_var_normal: {
      const double total = config.mz_components.total();
      return AceProportions::from_h2_c2(config.mz_components.sigma2_a / total,
                                        config.mz_components.sigma2_c / total);
    }
    case Scenario::sex_normal:
    case Scenario::age_falconer:
      throw UsageError("scenario truth varies with a covariate; use true_proportions_at");
  }
  throw ConfigError("unknown scenario");
}

AceProportions true_proportions_at(const ScenarioConfig& config, double level) {
  switch (config.scenario) {
    case Scenario::sex_normal: {
      const AceParams comp = config.sex_effects.at(level);
      return AceProportions::from_h2_c2(comp.sigma2_a / comp.total(),
                                        comp.sigma2_c / comp.total());
    }
    case Scenario::age_falconer: {
      const AgePoint pt = age_point(config, level);
      return AceProportions::from_h2_c2(2.0 * (pt.rho_mz - pt.rho_dz),
                                        2.0 * pt.rho_dz - pt.rho_mz);
    }
    default:
      return true_proportions(config);
  }
}

} // namespace twinace
