#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "twinace/errors.hpp"

namespace twinace {

enum class Zygosity { MZ, DZ };

/// Kinship weight w_z: fraction of the genome shared within a pair.
constexpr double kinship_weight(Zygosity z) {
  return z == Zygosity::MZ ? 1.0 : 0.5;
}

const char* to_string(Zygosity z);

/// Parses "MZ"/"DZ" case-insensitively. Throws ParseError on anything else.
Zygosity zygosity_from_token(std::string_view token);

/// One twin pair: both trait values plus pair-level covariates (both twins
/// share every covariate value, e.g. sex or the pair's age).
struct TwinPair {
  double y1 = 0.0;
  double y2 = 0.0;
  Zygosity zygosity = Zygosity::MZ;
  std::map<std::string, double> covariates;

  double covariate(const std::string& name) const;
};

struct TwinDataset {
  std::vector<TwinPair> pairs;
  std::vector<std::string> covariate_names;
  /// Incomplete rows dropped at ingestion (complete-case handling).
  std::size_t skipped_rows = 0;

  std::size_t size() const { return pairs.size(); }
  std::size_t n_mz() const;
  std::size_t n_dz() const;
  bool has_covariate(const std::string& name) const;
};

/// Column layout for read_csv. Covariate cells must be numeric after the
/// optional per-column token recodes are applied (e.g. {"sex", {{"M",1},{"F",0}}}).
struct CsvSpec {
  std::string y1_col;
  std::string y2_col;
  std::string zygosity_col;
  std::vector<std::string> covariate_cols;
  std::map<std::string, std::map<std::string, double>> recodes;
};

/// Reads a header-first comma-separated file. One TwinPair per row, row order
/// preserved. Rows with an empty required cell are skipped and counted;
/// malformed cells raise ParseError with the 1-based data row number.
TwinDataset read_csv(const std::string& path, const CsvSpec& spec);

/// OLS fit of the stacked individual trait values on intercept + covariates.
struct ResidualizationModel {
  Eigen::VectorXd coefficients; // intercept first, then one per covariate
  std::vector<std::string> covariate_names;

  double fitted(const TwinPair& pair) const;
};

/// Regresses the trait on intercept + the named covariates (both twins enter
/// as separate rows sharing the pair's covariates) and returns the dataset of
/// residuals together with the fitted model.
std::pair<TwinDataset, ResidualizationModel>
residualize(const TwinDataset& data, const std::vector<std::string>& covariates);

/// residualize() over every covariate in the dataset.
std::pair<TwinDataset, ResidualizationModel> residualize(const TwinDataset& data);

/// Applies a previously fitted model to new data.
TwinDataset apply_residualization(const TwinDataset& data, const ResidualizationModel& model);

enum class CenterMode { global, per_zygosity };

/// Subtracts the grand mean (global) or the per-zygosity-group mean from
/// every trait value. Pair-level means pool both twins.
TwinDataset center(const TwinDataset& data, CenterMode mode);

} // namespace twinace
