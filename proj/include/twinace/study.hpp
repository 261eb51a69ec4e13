#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "twinace/estimators.hpp"
#include "twinace/simulators.hpp"
#include "twinace/twin_data.hpp"

namespace twinace {

struct StudyConfig {
  ScenarioConfig scenario;
  std::vector<EstimatorKind> estimators;
  int replicates = 1000;
  /// Worker threads; 0 means hardware concurrency. Results are identical for
  /// any width (replicates are aggregated in index order).
  int parallelism = 0;
  FitOptions fit_options{};
  /// age_falconer only: Wald test of h2(a) - h2(b) = 0 per replicate.
  std::optional<std::pair<double, double>> contrast_ages;
  bool keep_replicates = false;
};

struct StudyRow {
  std::string estimator;
  std::string level; // empty for overall fits
  double truth_h2 = 0.0;
  double truth_c2 = 0.0;
  int n_used = 0;
  int n_failed = 0;
  double mean_h2, true_se_h2, mean_se_h2, coverage_h2, sem_h2;
  double mean_c2, true_se_c2, mean_se_c2, coverage_c2, sem_c2;
  /// Rejection rate of the configured Wald contrast at the 0.05 level.
  double contrast_reject_rate = std::numeric_limits<double>::quiet_NaN();
};

struct ReplicateRecord {
  int replicate = 0;
  std::string estimator;
  std::string level;
  bool converged = false;
  double h2, se_h2, c2, se_c2;
  double contrast_p = std::numeric_limits<double>::quiet_NaN();
};

struct StudySummary {
  std::vector<StudyRow> rows;
  std::vector<ReplicateRecord> replicates; // populated when keep_replicates
};

/// Runs the Monte Carlo study: per replicate, simulate with the derived seed,
/// fit every estimator through the standard pipeline, and record estimates,
/// SEs and CI-covers-truth flags. Non-converged fits are excluded from the
/// means and counted. Deterministic in (config, seed) for any parallelism.
StudySummary run_study(const StudyConfig& config);

std::string summary_to_markdown(const StudySummary& summary);
std::string summary_to_csv(const StudySummary& summary);
std::string replicates_to_csv(const StudySummary& summary);

/// Per-age profile rows (mean estimates and CI bounds across replicates) for
/// age-varying studies; plot-ready CSV.
std::string age_profile_to_csv(const StudySummary& summary);

/// Fixed 6-significant-digit formatting used by all study outputs; NaN
/// renders as "NA".
std::string format_g6(double value);

// ---------------------------------------------------------------------------
// Dataset writer (schema matches read_csv: y1,y2,zygosity,<covariates...>)
// ---------------------------------------------------------------------------

/// Writes trait and covariate values with shortest round-trip formatting, so
/// read_csv reproduces them bit-exactly.
void write_csv(const TwinDataset& data, const std::string& path);

// ---------------------------------------------------------------------------
// JSON study configuration (keys mirror StudyConfig / ScenarioConfig)
// ---------------------------------------------------------------------------

StudyConfig study_config_from_json(const std::string& json_text);
ScenarioConfig scenario_config_from_json(const std::string& json_text);

} // namespace twinace
