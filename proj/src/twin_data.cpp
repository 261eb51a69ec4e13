#include "twinace/twin_data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace twinace {

const char* to_string(Zygosity z) { return z == Zygosity::MZ ? "MZ" : "DZ"; }

Zygosity zygosity_from_token(std::string_view token) {
  auto eq = [&](std::string_view ref) {
    if (token.size() != ref.size()) return false;
    for (std::size_t i = 0; i < ref.size(); ++i) {
      if (std::toupper(static_cast<unsigned char>(token[i])) != ref[i]) return false;
    }
    return true;
  };
  if (eq("MZ")) return Zygosity::MZ;
  if (eq("DZ")) return Zygosity::DZ;
  throw ParseError("unknown zygosity token \"" + std::string(token) + "\"");
}

double TwinPair::covariate(const std::string& name) const {
  auto it = covariates.find(name);
  if (it == covariates.end()) {
    throw SchemaError("pair is missing covariate \"" + name + "\"");
  }
  return it->second;
}

std::size_t TwinDataset::n_mz() const {
  return static_cast<std::size_t>(std::count_if(
      pairs.begin(), pairs.end(),
      [](const TwinPair& p) { return p.zygosity == Zygosity::MZ; }));
}

std::size_t TwinDataset::n_dz() const { return pairs.size() - n_mz(); }

bool TwinDataset::has_covariate(const std::string& name) const {
  return std::find(covariate_names.begin(), covariate_names.end(), name) !=
         covariate_names.end();
}

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return out;
}

double parse_number(std::string_view cell, const std::string& column, std::size_t row) {
  cell = trim(cell);
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
  if (ec != std::errc{} || ptr != cell.data() + cell.size()) {
    throw ParseError("row " + std::to_string(row) + ": cell \"" + std::string(cell) +
                     "\" in column \"" + column + "\" is not numeric");
  }
  return value;
}

} // namespace

TwinDataset read_csv(const std::string& path, const CsvSpec& spec) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open CSV file \"" + path + "\"");

  std::string header_line;
  if (!std::getline(in, header_line)) throw ParseError("empty file \"" + path + "\": header row required");
  if (!header_line.empty() && header_line.back() == '\r') header_line.pop_back();

  const auto header_fields = split_fields(header_line);
  std::map<std::string, std::size_t, std::less<>> col_index;
  for (std::size_t i = 0; i < header_fields.size(); ++i) {
    col_index.emplace(std::string(trim(header_fields[i])), i);
  }
  auto require_col = [&](const std::string& name) {
    auto it = col_index.find(name);
    if (it == col_index.end()) throw SchemaError("missing column \"" + name + "\" in \"" + path + "\"");
    return it->second;
  };

  const std::size_t iy1 = require_col(spec.y1_col);
  const std::size_t iy2 = require_col(spec.y2_col);
  const std::size_t izyg = require_col(spec.zygosity_col);
  std::vector<std::size_t> icov;
  icov.reserve(spec.covariate_cols.size());
  for (const auto& name : spec.covariate_cols) icov.push_back(require_col(name));

  TwinDataset data;
  data.covariate_names = spec.covariate_cols;

  auto recode_or_parse = [&](std::string_view cell, const std::string& column,
                             std::size_t row) {
    auto rec = spec.recodes.find(column);
    if (rec != spec.recodes.end()) {
      std::string token(trim(cell));
      std::transform(token.begin(), token.end(), token.begin(),
                     [](unsigned char c) { return std::toupper(c); });
      for (const auto& [tok, value] : rec->second) {
        std::string ref = tok;
        std::transform(ref.begin(), ref.end(), ref.begin(),
                       [](unsigned char c) { return std::toupper(c); });
        if (token == ref) return value;
      }
    }
    return parse_number(cell, column, row);
  };

  std::string line;
  std::size_t row = 0; // 1-based data row number
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != header_fields.size()) {
      throw ParseError("row " + std::to_string(row) + ": expected " +
                       std::to_string(header_fields.size()) + " fields, found " +
                       std::to_string(fields.size()));
    }

    bool missing = trim(fields[iy1]).empty() || trim(fields[iy2]).empty() ||
                   trim(fields[izyg]).empty();
    for (std::size_t c : icov) missing = missing || trim(fields[c]).empty();
    if (missing) { // complete-case: drop the pair
      ++data.skipped_rows;
      continue;
    }

    TwinPair pair;
    pair.y1 = parse_number(fields[iy1], spec.y1_col, row);
    pair.y2 = parse_number(fields[iy2], spec.y2_col, row);
    if (!std::isfinite(pair.y1) || !std::isfinite(pair.y2)) {
      throw ParseError("row " + std::to_string(row) + ": non-finite trait value");
    }
    try {
      pair.zygosity = zygosity_from_token(trim(fields[izyg]));
    } catch (const ParseError& e) {
      throw ParseError("row " + std::to_string(row) + ": " + e.what());
    }
    for (std::size_t k = 0; k < icov.size(); ++k) {
      pair.covariates[spec.covariate_cols[k]] =
          recode_or_parse(fields[icov[k]], spec.covariate_cols[k], row);
    }
    data.pairs.push_back(std::move(pair));
  }
  return data;
}

// ---------------------------------------------------------------------------
// Residualization (mean-level covariate adjustment)
// ---------------------------------------------------------------------------

double ResidualizationModel::fitted(const TwinPair& pair) const {
  double value = coefficients[0];
  for (std::size_t k = 0; k < covariate_names.size(); ++k) {
    value += coefficients[static_cast<Eigen::Index>(k + 1)] * pair.covariate(covariate_names[k]);
  }
  return value;
}

std::pair<TwinDataset, ResidualizationModel>
residualize(const TwinDataset& data, const std::vector<std::string>& covariates) {
  const std::size_t n_obs = 2 * data.pairs.size();
  const std::size_t p = covariates.size() + 1;
  if (n_obs < covariates.size() + 2) {
    throw InsufficientDataError("residualize: need at least " +
                                std::to_string(covariates.size() + 2) +
                                " individual observations, have " + std::to_string(n_obs));
  }

  Eigen::MatrixXd design(n_obs, p);
  Eigen::VectorXd y(n_obs);
  for (std::size_t i = 0; i < data.pairs.size(); ++i) {
    const TwinPair& pair = data.pairs[i];
    for (int twin = 0; twin < 2; ++twin) {
      const Eigen::Index r = static_cast<Eigen::Index>(2 * i + twin);
      design(r, 0) = 1.0;
      for (std::size_t k = 0; k < covariates.size(); ++k) {
        design(r, static_cast<Eigen::Index>(k + 1)) = pair.covariate(covariates[k]);
      }
      y(r) = twin == 0 ? pair.y1 : pair.y2;
    }
  }

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  qr.setThreshold(1e-10);
  if (qr.rank() < static_cast<Eigen::Index>(p)) {
    // the pivot order puts dependent columns last
    std::string names;
    const auto& perm = qr.colsPermutation().indices();
    for (Eigen::Index j = qr.rank(); j < static_cast<Eigen::Index>(p); ++j) {
      const Eigen::Index col = perm[j];
      if (!names.empty()) names += ", ";
      names += col == 0 ? "(intercept)" : covariates[static_cast<std::size_t>(col - 1)];
    }
    throw SingularityError("residualize: design is rank deficient; collinear columns: " + names);
  }

  ResidualizationModel model;
  model.coefficients = qr.solve(y);
  model.covariate_names = covariates;
  return {apply_residualization(data, model), model};
}

std::pair<TwinDataset, ResidualizationModel> residualize(const TwinDataset& data) {
  return residualize(data, data.covariate_names);
}

TwinDataset apply_residualization(const TwinDataset& data, const ResidualizationModel& model) {
  TwinDataset out = data;
  for (TwinPair& pair : out.pairs) {
    const double fit = model.fitted(pair);
    pair.y1 -= fit;
    pair.y2 -= fit;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Centering
// ---------------------------------------------------------------------------

TwinDataset center(const TwinDataset& data, CenterMode mode) {
  auto group_mean = [&](auto include) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const TwinPair& pair : data.pairs) {
      if (!include(pair)) continue;
      sum += pair.y1 + pair.y2;
      n += 2;
    }
    if (n == 0) throw InsufficientDataError("center: empty group");
    return sum / static_cast<double>(n);
  };

  TwinDataset out = data;
  if (mode == CenterMode::global) {
    const double mean = group_mean([](const TwinPair&) { return true; });
    for (TwinPair& pair : out.pairs) {
      pair.y1 -= mean;
      pair.y2 -= mean;
    }
  } else {
    for (Zygosity z : {Zygosity::MZ, Zygosity::DZ}) {
      const bool present = std::any_of(data.pairs.begin(), data.pairs.end(),
                                       [&](const TwinPair& p) { return p.zygosity == z; });
      if (!present) throw InsufficientDataError(std::string("center: no ") + to_string(z) + " pairs");
      const double mean = group_mean([&](const TwinPair& p) { return p.zygosity == z; });
      for (TwinPair& pair : out.pairs) {
        if (pair.zygosity != z) continue;
        pair.y1 -= mean;
        pair.y2 -= mean;
      }
    }
  }
  return out;
}

} // namespace twinace
