#include "twinace/study.hpp"

#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace twinace {

namespace {

const double kNaN = std::numeric_limits<double>::quiet_NaN();

bool covariate_scenario(Scenario s) {
  return s == Scenario::sex_normal || s == Scenario::age_falconer;
}

struct RowKey {
  std::string estimator;
  std::string level;
  double level_value = 0.0;
  double truth_h2 = 0.0;
  double truth_c2 = 0.0;
};

/// One replicate's estimates for one summary row.
struct CellRecord {
  bool converged = false;
  double h2 = 0.0, se_h2 = 0.0, c2 = 0.0, se_c2 = 0.0;
  double contrast_p = std::numeric_limits<double>::quiet_NaN();
};

std::vector<RowKey> plan_rows(const StudyConfig& config) {
  std::vector<RowKey> rows;
  for (EstimatorKind kind : config.estimators) {
    if (config.scenario.scenario == Scenario::sex_normal) {
      for (double level : {0.0, 1.0}) {
        const AceProportions truth = true_proportions_at(config.scenario, level);
        rows.push_back({to_string(kind), level == 1.0 ? "male" : "female", level,
                        truth.h2, truth.c2});
      }
    } else if (config.scenario.scenario == Scenario::age_falconer) {
      for (double age : config.scenario.age_grid) {
        const AceProportions truth = true_proportions_at(config.scenario, age);
        std::ostringstream label;
        label << "age=" << age;
        rows.push_back({to_string(kind), label.str(), age, truth.h2, truth.c2});
      }
    } else {
      const AceProportions truth = true_proportions(config.scenario);
      rows.push_back({to_string(kind), "", 0.0, truth.h2, truth.c2});
    }
  }
  return rows;
}

void validate_study(const StudyConfig& config) {
  if (config.replicates < 1) throw ConfigError("replicates must be >= 1");
  if (config.estimators.empty()) throw ConfigError("at least one estimator is required");
  validate(config.scenario);
  if (covariate_scenario(config.scenario.scenario)) {
    for (EstimatorKind kind : config.estimators) {
      if (kind != EstimatorKind::gee2_nace && kind != EstimatorKind::gee2_falconer) {
        throw ConfigError(std::string("estimator ") + to_string(kind) +
                          " cannot estimate covariate-varying components; this scenario "
                          "requires GEE2 estimators");
      }
    }
  }
  if (config.contrast_ages && config.scenario.scenario != Scenario::age_falconer) {
    throw ConfigError("contrast_ages applies to the age_falconer scenario only");
  }
}

/// All CellRecords for one replicate, in plan_rows order.
std::vector<CellRecord> run_replicate(const StudyConfig& config, int replicate,
                                      const std::vector<RowKey>& rows) {
  ScenarioConfig scen = config.scenario;
  scen.seed = derive_seed(config.scenario.seed, static_cast<std::uint64_t>(replicate));
  const TwinDataset data = simulate(scen);

  std::vector<CellRecord> records(rows.size());
  std::size_t row_index = 0;

  for (EstimatorKind kind : config.estimators) {
    if (covariate_scenario(scen.scenario)) {
      const bool sex = scen.scenario == Scenario::sex_normal;
      const std::size_t n_levels = sex ? 2 : scen.age_grid.size();
      VarianceCovariateOptions options;
      options.base = config.fit_options;
      options.covariate = sex ? "sex" : "age";
      options.quadratic_age = !sex;
      if (!sex) options.age_center = age_grid_center(scen);
      options.report_levels = sex ? std::vector<double>{0.0, 1.0} : scen.age_grid;
      try {
        const FitResult fit = fit_with_variance_covariates(data, kind, options);
        double contrast_p = kNaN;
        if (fit.diagnostics.converged && config.contrast_ages) {
          const auto [age_a, age_b] = *config.contrast_ages;
          const DerivedQuantity qa =
              h2_quantity(fit.model, fit.alpha_hat, covariate_point(fit, age_a));
          const DerivedQuantity qb =
              h2_quantity(fit.model, fit.alpha_hat, covariate_point(fit, age_b));
          contrast_p = wald_contrast(fit.cov_alpha, qa, qb).p;
        }
        for (std::size_t l = 0; l < n_levels; ++l) {
          CellRecord& rec = records[row_index + l];
          rec.converged = fit.diagnostics.converged;
          if (rec.converged) {
            const LevelEstimate& le = fit.levels[l];
            rec.h2 = le.proportions.h2;
            rec.se_h2 = le.se_h2;
            rec.c2 = le.proportions.c2;
            rec.se_c2 = le.se_c2;
            rec.contrast_p = contrast_p;
          }
        }
      } catch (const Error&) {
        // leave records non-converged; counted as failures
      }
      row_index += n_levels;
    } else {
      try {
        const FitResult fit = twinace::fit(data, kind, config.fit_options);
        CellRecord& rec = records[row_index];
        rec.converged = fit.diagnostics.converged;
        if (rec.converged) {
          rec.h2 = fit.proportions.h2;
          rec.se_h2 = fit.se_h2;
          rec.c2 = fit.proportions.c2;
          rec.se_c2 = fit.se_c2;
        }
      } catch (const Error&) {
      }
      row_index += 1;
    }
  }
  return records;
}

} // namespace

StudySummary run_study(const StudyConfig& config) {
  validate_study(config);
  const std::vector<RowKey> rows = plan_rows(config);
  const int replicates = config.replicates;

  std::vector<std::vector<CellRecord>> results(static_cast<std::size_t>(replicates));
  unsigned width = config.parallelism > 0
                       ? static_cast<unsigned>(config.parallelism)
                       : std::max(1u, std::thread::hardware_concurrency());
  width = std::min<unsigned>(width, static_cast<unsigned>(replicates));

  if (width <= 1) {
    for (int r = 0; r < replicates; ++r) results[static_cast<std::size_t>(r)] = run_replicate(config, r, rows);
  } else {
    std::atomic<int> next{0};
    auto worker = [&]() {
      while (true) {
        const int r = next.fetch_add(1);
        if (r >= replicates) break;
        results[static_cast<std::size_t>(r)] = run_replicate(config, r, rows);
      }
    };
    std::vector<std::thread> pool;
    pool.reserve(width);
    for (unsigned t = 0; t < width; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }

  StudySummary summary;
  for (std::size_t row = 0; row < rows.size(); ++row) {
    const RowKey& key = rows[row];
    StudyRow out;
    out.estimator = key.estimator;
    out.level = key.level;
    out.truth_h2 = key.truth_h2;
    out.truth_c2 = key.truth_c2;

    std::vector<double> h2s, se_h2s, c2s, se_c2s;
    int covered_h2 = 0, covered_c2 = 0, rejections = 0, with_contrast = 0;
    for (int r = 0; r < replicates; ++r) {
      const CellRecord& rec = results[static_cast<std::size_t>(r)][row];
      if (!rec.converged) {
        ++out.n_failed;
        continue;
      }
      h2s.push_back(rec.h2);
      se_h2s.push_back(rec.se_h2);
      c2s.push_back(rec.c2);
      se_c2s.push_back(rec.se_c2);
      if (key.truth_h2 >= rec.h2 - 1.96 * rec.se_h2 && key.truth_h2 <= rec.h2 + 1.96 * rec.se_h2) ++covered_h2;
      if (key.truth_c2 >= rec.c2 - 1.96 * rec.se_c2 && key.truth_c2 <= rec.c2 + 1.96 * rec.se_c2) ++covered_c2;
      if (std::isfinite(rec.contrast_p)) {
        ++with_contrast;
        if (rec.contrast_p < 0.05) ++rejections;
      }
    }
    out.n_used = static_cast<int>(h2s.size());

    auto mean = [](const std::vector<double>& v) {
      if (v.empty()) return kNaN;
      double s = 0.0;
      for (double x : v) s += x;
      return s / static_cast<double>(v.size());
    };
    auto sd = [&](const std::vector<double>& v) {
      if (v.size() < 2) return kNaN;
      const double m = mean(v);
      double s = 0.0;
      for (double x : v) s += (x - m) * (x - m);
      return std::sqrt(s / static_cast<double>(v.size() - 1));
    };

    out.mean_h2 = mean(h2s);
    out.true_se_h2 = sd(h2s);
    out.mean_se_h2 = mean(se_h2s);
    out.coverage_h2 = out.n_used > 0 ? static_cast<double>(covered_h2) / out.n_used : kNaN;
    out.sem_h2 = out.n_used > 0 ? out.true_se_h2 / std::sqrt(static_cast<double>(out.n_used)) : kNaN;
    out.mean_c2 = mean(c2s);
    out.true_se_c2 = sd(c2s);
    out.mean_se_c2 = mean(se_c2s);
    out.coverage_c2 = out.n_used > 0 ? static_cast<double>(covered_c2) / out.n_used : kNaN;
    out.sem_c2 = out.n_used > 0 ? out.true_se_c2 / std::sqrt(static_cast<double>(out.n_used)) : kNaN;
    if (with_contrast > 0) {
      out.contrast_reject_rate = static_cast<double>(rejections) / with_contrast;
    }
    summary.rows.push_back(std::move(out));
  }

  if (config.keep_replicates) {
    for (int r = 0; r < replicates; ++r) {
      for (std::size_t row = 0; row < rows.size(); ++row) {
        const CellRecord& rec = results[static_cast<std::size_t>(r)][row];
        ReplicateRecord rr;
        rr.replicate = r;
        rr.estimator = rows[row].estimator;
        rr.level = rows[row].level;
        rr.converged = rec.converged;
        rr.h2 = rec.converged ? rec.h2 : kNaN;
        rr.se_h2 = rec.converged ? rec.se_h2 : kNaN;
        rr.c2 = rec.converged ? rec.c2 : kNaN;
        rr.se_c2 = rec.converged ? rec.se_c2 : kNaN;
        rr.contrast_p = rec.contrast_p;
        summary.replicates.push_back(std::move(rr));
      }
    }
  }
  return summary;
}

// ---------------------------------------------------------------------------
// Formatting
// ---------------------------------------------------------------------------

std::string format_g6(double value) {
  if (!std::isfinite(value)) return "NA";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", value);
  return buf;
}

std::string summary_to_markdown(const StudySummary& summary) {
  std::ostringstream out;
  out << "| Estimator | Level | mean h2 (SE, mean SE) | mean c2 (SE, mean SE) | "
         "Coverage (h2, c2) | Failed |\n";
  out << "|---|---|---|---|---|---|\n";
  for (const StudyRow& row : summary.rows) {
    out << "| " << row.estimator << " | " << (row.level.empty() ? "-" : row.level) << " | "
        << format_g6(row.mean_h2) << " (" << format_g6(row.true_se_h2) << ", "
        << format_g6(row.mean_se_h2) << ") | " << format_g6(row.mean_c2) << " ("
        << format_g6(row.true_se_c2) << ", " << format_g6(row.mean_se_c2) << ") | ("
        << format_g6(row.coverage_h2) << ", " << format_g6(row.coverage_c2) << ") | "
        << row.n_failed << " |\n";
  }
  return out.str();
}

std::string summary_to_csv(const StudySummary& summary) {
  std::ostringstream out;
  out << "estimator,level,truth_h2,truth_c2,n_used,n_failed,"
         "mean_h2,true_se_h2,mean_se_h2,coverage_h2,sem_h2,"
         "mean_c2,true_se_c2,mean_se_c2,coverage_c2,sem_c2,contrast_reject_rate\n";
  for (const StudyRow& row : summary.rows) {
    out << row.estimator << ',' << row.level << ',' << format_g6(row.truth_h2) << ','
        << format_g6(row.truth_c2) << ',' << row.n_used << ',' << row.n_failed << ','
        << format_g6(row.mean_h2) << ',' << format_g6(row.true_se_h2) << ','
        << format_g6(row.mean_se_h2) << ',' << format_g6(row.coverage_h2) << ','
        << format_g6(row.sem_h2) << ',' << format_g6(row.mean_c2) << ','
        << format_g6(row.true_se_c2) << ',' << format_g6(row.mean_se_c2) << ','
        << format_g6(row.coverage_c2) << ',' << format_g6(row.sem_c2) << ','
        << format_g6(row.contrast_reject_rate) << '\n';
  }
  return out.str();
}

std::string replicates_to_csv(const StudySummary& summary) {
  std::ostringstream out;
  out << "replicate,estimator,level,converged,h2,se_h2,c2,se_c2,contrast_p\n";
  for (const ReplicateRecord& rec : summary.replicates) {
    out << rec.replicate << ',' << rec.estimator << ',' << rec.level << ','
        << (rec.converged ? 1 : 0) << ',' << format_g6(rec.h2) << ','
        << format_g6(rec.se_h2) << ',' << format_g6(rec.c2) << ','
        << format_g6(rec.se_c2) << ',' << format_g6(rec.contrast_p) << '\n';
  }
  return out.str();
}

std::string age_profile_to_csv(const StudySummary& summary) {
  std::ostringstream out;
  out << "estimator,age,mean_h2,mean_c2,mean_e2,ci_h2_lo,ci_h2_hi,ci_c2_lo,ci_c2_hi\n";
  for (const StudyRow& row : summary.rows) {
    if (row.level.rfind("age=", 0) != 0) continue;
    const std::string age = row.level.substr(4);
    const double e2 = 1.0 - row.mean_h2 - row.mean_c2;
    out << row.estimator << ',' << age << ',' << format_g6(row.mean_h2) << ','
        << format_g6(row.mean_c2) << ',' << format_g6(e2) << ','
        << format_g6(row.mean_h2 - 1.96 * row.mean_se_h2) << ','
        << format_g6(row.mean_h2 + 1.96 * row.mean_se_h2) << ','
        << format_g6(row.mean_c2 - 1.96 * row.mean_se_c2) << ','
        << format_g6(row.mean_c2 + 1.96 * row.mean_se_c2) << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Dataset writer
// ---------------------------------------------------------------------------

namespace {

std::string shortest(double value) {
  char buf[40];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  if (ec != std::errc{}) return "nan";
  return std::string(buf, ptr);
}

} // namespace

void write_csv(const TwinDataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open \"" + path + "\" for writing");
  out << "y1,y2,zygosity";
  for (const std::string& name : data.covariate_names) out << ',' << name;
  out << '\n';
  for (const TwinPair& pair : data.pairs) {
    out << shortest(pair.y1) << ',' << shortest(pair.y2) << ',' << to_string(pair.zygosity);
    for (const std::string& name : data.covariate_names) {
      out << ',' << shortest(pair.covariate(name));
    }
    out << '\n';
  }
  if (!out) throw IoError("write to \"" + path + "\" failed");
}

// ---------------------------------------------------------------------------
// JSON configuration
// ---------------------------------------------------------------------------

namespace {

using nlohmann::json;

ScenarioConfig scenario_from_json(const json& j) {
  ScenarioConfig config;
  if (j.contains("kind")) config.scenario = scenario_from_string(j.at("kind").get<std::string>());
  if (j.contains("n_mz")) config.n_mz = j.at("n_mz").get<int>();
  if (j.contains("n_dz")) config.n_dz = j.at("n_dz").get<int>();
  if (j.contains("seed")) config.seed = j.at("seed").get<std::uint64_t>();
  auto read_alpha = [&](const char* key, AceParams& into) {
    if (!j.contains(key)) return;
    const auto& a = j.at(key);
    into = AceParams{a.at(0).get<double>(), a.at(1).get<double>(), a.at(2).get<double>()};
  };
  read_alpha("alpha", config.alpha);
  read_alpha("mz_components", config.mz_components);
  read_alpha("dz_components", config.dz_components);
  if (j.contains("df")) config.df = j.at("df").get<double>();
  if (j.contains("lambda")) config.lambda = j.at("lambda").get<double>();
  if (j.contains("sex_effects")) {
    const auto& s = j.at("sex_effects");
    config.sex_effects.a0 = s.at(0).get<double>();
    config.sex_effects.a1 = s.at(1).get<double>();
    config.sex_effects.c0 = s.at(2).get<double>();
    config.sex_effects.c1 = s.at(3).get<double>();
    config.sex_effects.e0 = s.at(4).get<double>();
    config.sex_effects.e1 = s.at(5).get<double>();
  }
  auto read_six = [&](const char* key, std::array<double, 6>& into) {
    if (!j.contains(key)) return;
    const auto& a = j.at(key);
    for (std::size_t i = 0; i < 6; ++i) into[i] = a.at(i).get<double>();
  };
  read_six("age_v", config.age_v);
  read_six("age_p", config.age_p);
  if (j.contains("age_grid")) {
    config.age_grid = j.at("age_grid").get<std::vector<double>>();
  }
  return config;
}

} // namespace

ScenarioConfig scenario_config_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid scenario JSON: ") + e.what());
  }
  return scenario_from_json(j);
}

StudyConfig study_config_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid study JSON: ") + e.what());
  }
  StudyConfig config;
  try {
    if (j.contains("scenario")) config.scenario = scenario_from_json(j.at("scenario"));
    if (j.contains("estimators")) {
      for (const auto& name : j.at("estimators")) {
        config.estimators.push_back(estimator_from_string(name.get<std::string>()));
      }
    }
    if (j.contains("replicates")) config.replicates = j.at("replicates").get<int>();
    if (j.contains("parallelism")) config.parallelism = j.at("parallelism").get<int>();
    if (j.contains("keep_replicates")) config.keep_replicates = j.at("keep_replicates").get<bool>();
    if (j.contains("contrast_ages")) {
      const auto& c = j.at("contrast_ages");
      config.contrast_ages = std::make_pair(c.at(0).get<double>(), c.at(1).get<double>());
    }
    if (j.contains("pooled_corr")) config.fit_options.pooled_corr = j.at("pooled_corr").get<bool>();
    if (j.contains("centering")) {
      const std::string c = j.at("centering").get<std::string>();
      if (c == "none") config.fit_options.centering = CenterPolicy::none;
      else if (c == "global") config.fit_options.centering = CenterPolicy::global;
      else if (c == "per_zygosity") config.fit_options.centering = CenterPolicy::per_zygosity;
      else throw ConfigError("unknown centering \"" + c + "\"");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid study JSON: ") + e.what());
  }
  return config;
}

} // namespace twinace
