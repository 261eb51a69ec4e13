// Command-line interface: fit | simulate | study.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "twinace/estimators.hpp"
#include "twinace/simulators.hpp"
#include "twinace/study.hpp"

namespace {

using namespace twinace;

constexpr int kExitOk = 0;
constexpr int kExitInputError = 1;
constexpr int kExitNonConvergence = 2;

// --------------------------------------------------------------------------
// fit
// --------------------------------------------------------------------------

struct FitArgs {
  std::string csv_path;
  std::string y1_col = "y1";
  std::string y2_col = "y2";
  std::string zygosity_col = "zygosity";
  std::string estimator = "gee2-falconer";
  std::vector<std::string> mean_covariates;
  std::string var_covariate;
  bool age_design = false;
  std::optional<double> age_center;
  std::string var_link = "identity";
  std::string corr_link = "identity";
  std::string centering = "per-zygosity";
  bool pooled_corr = false;
  bool ridge = false;
  std::vector<std::string> recodes;
  std::string json_path;
};

VarianceLink parse_var_link(const std::string& name) {
  if (name == "identity") return VarianceLink::identity;
  if (name == "log") return VarianceLink::log;
  throw UsageError("unknown variance link \"" + name + "\"");
}

CorrLink parse_corr_link(const std::string& name) {
  if (name == "identity") return CorrLink::identity;
  if (name == "fisher-z" || name == "fisher_z") return CorrLink::fisher_z;
  throw UsageError("unknown correlation link \"" + name + "\"");
}

CenterPolicy parse_centering(const std::string& name) {
  if (name == "none") return CenterPolicy::none;
  if (name == "global") return CenterPolicy::global;
  if (name == "per-zygosity" || name == "per_zygosity") return CenterPolicy::per_zygosity;
  throw UsageError("unknown centering mode \"" + name + "\"");
}

/// "col=tok:val,tok:val" -> recode map entry
void parse_recode(const std::string& text,
                  std::map<std::string, std::map<std::string, double>>& into) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) throw UsageError("recode must look like col=TOKEN:VALUE[,...]");
  const std::string column = text.substr(0, eq);
  std::stringstream rest(text.substr(eq + 1));
  std::string item;
  while (std::getline(rest, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw UsageError("recode must look like col=TOKEN:VALUE[,...]");
    into[column][item.substr(0, colon)] = std::stod(item.substr(colon + 1));
  }
}

void print_fit_row(const FitResult& result) {
  auto row = [](const std::string& name, const AceProportions& p, double se_h2,
                double se_c2, const Interval& ci_h2, const Interval& ci_c2, bool flag) {
    std::printf("%-22s %8.4f (%.4f) [%7.4f, %7.4f] %8.4f (%.4f) [%7.4f, %7.4f] %8.4f%s\n",
                name.c_str(), p.h2, se_h2, ci_h2.lo, ci_h2.hi, p.c2, se_c2, ci_c2.lo,
                ci_c2.hi, p.e2, flag ? "  *out-of-range" : "");
  };
  if (result.levels.empty()) {
    row(to_string(result.estimator), result.proportions, result.se_h2, result.se_c2,
        result.ci_h2, result.ci_c2, result.out_of_range);
  } else {
    for (const LevelEstimate& level : result.levels) {
      row(std::string(to_string(result.estimator)) + " " + level.label, level.proportions,
          level.se_h2, level.se_c2, level.ci_h2, level.ci_c2, level.out_of_range);
    }
  }
  if (result.alpha_hat.size() > 0) {
    const double scale = std::max(result.alpha_hat.cwiseAbs().maxCoeff(), 1e-300);
    std::printf("%-22s %s in %d iterations (last update: abs %.3g, rel %.3g)\n",
                to_string(result.estimator),
                result.diagnostics.converged ? "converged" : "DID NOT CONVERGE",
                result.diagnostics.iterations, result.diagnostics.final_update_norm,
                result.diagnostics.final_update_norm / scale);
  }
}

int run_fit(const FitArgs& args) {
  CsvSpec spec;
  spec.y1_col = args.y1_col;
  spec.y2_col = args.y2_col;
  spec.zygosity_col = args.zygosity_col;
  for (const std::string& r : args.recodes) parse_recode(r, spec.recodes);
  spec.covariate_cols = args.mean_covariates;
  if (!args.var_covariate.empty() &&
      std::find(spec.covariate_cols.begin(), spec.covariate_cols.end(),
                args.var_covariate) == spec.covariate_cols.end()) {
    spec.covariate_cols.push_back(args.var_covariate);
  }

  const TwinDataset data = read_csv(args.csv_path, spec);
  if (data.skipped_rows > 0) {
    std::fprintf(stderr, "note: dropped %zu incomplete rows\n", data.skipped_rows);
  }

  FitOptions options;
  options.var_link = parse_var_link(args.var_link);
  options.corr_link = parse_corr_link(args.corr_link);
  options.centering = parse_centering(args.centering);
  options.mean_covariates = args.mean_covariates;
  options.pooled_corr = args.pooled_corr;
  if (args.ridge) options.solver.ridge = 1e-10;

  std::vector<EstimatorKind> kinds;
  if (args.estimator == "all") {
    kinds = {EstimatorKind::nace, EstimatorKind::gee2_nace, EstimatorKind::falconer,
             EstimatorKind::gee2_falconer};
  } else {
    kinds = {estimator_from_string(args.estimator)};
  }

  std::printf("%-22s %8s %8s %18s %8s %8s %18s %8s\n", "estimator", "h2", "(SE)",
              "95% CI", "c2", "(SE)", "95% CI", "e2");
  bool all_converged = true;
  std::vector<FitResult> results;
  for (EstimatorKind kind : kinds) {
    FitResult result;
    if (!args.var_covariate.empty() &&
        (kind == EstimatorKind::gee2_nace || kind == EstimatorKind::gee2_falconer)) {
      VarianceCovariateOptions vco;
      vco.base = options;
      vco.covariate = args.var_covariate;
      vco.quadratic_age = args.age_design;
      vco.age_center = args.age_center;
      if (args.var_covariate == "sex") vco.level_labels = {{0.0, "sex=0"}, {1.0, "sex=1"}};
      result = fit_with_variance_covariates(data, kind, vco);
    } else if (!args.var_covariate.empty()) {
      std::fprintf(stderr, "note: %s ignores --var-covariate (classical estimator)\n",
                   to_string(kind));
      result = fit(data, kind, options);
    } else {
      result = fit(data, kind, options);
    }
    print_fit_row(result);
    all_converged = all_converged && result.diagnostics.converged;
    results.push_back(std::move(result));
  }

  const FitDiagnostics& d = results.front().diagnostics;
  std::printf("\nN_MZ=%zu N_DZ=%zu MZ/DZ variance ratio=%.4f centering=%s\n", d.n_mz,
              d.n_dz, d.mz_dz_variance_ratio, args.centering.c_str());

  if (!args.json_path.empty()) {
    std::ofstream out(args.json_path);
    if (!out) throw IoError("cannot write \"" + args.json_path + "\"");
    if (results.size() == 1) {
      out << fit_result_to_json(results.front()) << '\n';
    } else {
      out << "[\n";
      for (std::size_t i = 0; i < results.size(); ++i) {
        out << fit_result_to_json(results[i]) << (i + 1 < results.size() ? ",\n" : "\n");
      }
      out << "]\n";
    }
  }
  return all_converged ? kExitOk : kExitNonConvergence;
}

// --------------------------------------------------------------------------
// simulate
// --------------------------------------------------------------------------

struct SimulateArgs {
  std::string scenario = "mvt";
  std::string out_path;
  std::uint64_t seed = 0;
  int n_mz = 700;
  int n_dz = 700;
  std::vector<double> alpha{0.5, 0.3, 0.2};
  double df = 4.5;
  double lambda = 0.35;
  std::vector<double> mz_components{0.3, 0.18, 0.12};
  std::vector<double> dz_components{0.5, 0.3, 0.2};
  std::vector<double> sex_effects{0.3, 0.3, 0.4, -0.2, 0.3, -0.1};
  std::vector<double> age_v{1.0, 0.0, 0.0, 0.0, 0.0, 0.0};
  std::vector<double> age_p{0.55, 0.25, 0.0, 0.0, 0.0, 0.0};
  std::vector<double> age_grid{17.0, 20.0, 24.0, 29.0};
};

AceParams to_ace(const std::vector<double>& v, const char* what) {
  if (v.size() != 3) throw ConfigError(std::string(what) + " needs exactly 3 values");
  return AceParams{v[0], v[1], v[2]};
}

ScenarioConfig to_scenario(const SimulateArgs& args) {
  ScenarioConfig scen;
  scen.scenario = scenario_from_string(args.scenario);
  scen.n_mz = args.n_mz;
  scen.n_dz = args.n_dz;
  scen.seed = args.seed;
  scen.alpha = to_ace(args.alpha, "--alpha");
  scen.df = args.df;
  scen.lambda = args.lambda;
  scen.mz_components = to_ace(args.mz_components, "--mz-components");
  scen.dz_components = to_ace(args.dz_components, "--dz-components");
  if (args.sex_effects.size() != 6) throw ConfigError("--sex-effects needs 6 values");
  scen.sex_effects = {args.sex_effects[0], args.sex_effects[1], args.sex_effects[2],
                      args.sex_effects[3], args.sex_effects[4], args.sex_effects[5],
                      VarianceLink::identity};
  if (args.age_v.size() != 6 || args.age_p.size() != 6) {
    throw ConfigError("--age-v and --age-p need 6 values each");
  }
  for (std::size_t i = 0; i < 6; ++i) {
    scen.age_v[i] = args.age_v[i];
    scen.age_p[i] = args.age_p[i];
  }
  scen.age_grid = args.age_grid;
  return scen;
}

int run_simulate(const SimulateArgs& args) {
  const ScenarioConfig scen = to_scenario(args);
  const TwinDataset data = simulate(scen);
  write_csv(data, args.out_path);

  std::printf("wrote %zu pairs (%zu MZ, %zu DZ) to %s\n", data.pairs.size(), data.n_mz(),
              data.n_dz(), args.out_path.c_str());
  for (Zygosity z : {Zygosity::MZ, Zygosity::DZ}) {
    double mean = 0.0, n = 0.0;
    for (const TwinPair& pair : data.pairs) {
      if (pair.zygosity != z) continue;
      mean += pair.y1 + pair.y2;
      n += 2.0;
    }
    mean /= n;
    double var = 0.0, cov = 0.0;
    for (const TwinPair& pair : data.pairs) {
      if (pair.zygosity != z) continue;
      var += (pair.y1 - mean) * (pair.y1 - mean) + (pair.y2 - mean) * (pair.y2 - mean);
      cov += (pair.y1 - mean) * (pair.y2 - mean);
    }
    var /= n;
    cov /= n / 2.0;
    std::printf("%s: mean=%s var=%s corr=%s\n", to_string(z), format_g6(mean).c_str(),
                format_g6(var).c_str(), format_g6(cov / var).c_str());
  }
  return kExitOk;
}

// --------------------------------------------------------------------------
// study
// --------------------------------------------------------------------------

struct StudyArgs {
  std::string config_path;
  SimulateArgs scenario{};
  std::vector<std::string> estimators{"nace", "gee2-nace", "falconer", "gee2-falconer"};
  int replicates = -1; // -1: keep config/default
  int parallelism = 0;
  bool per_replicate = false;
  bool pooled_corr = false;
  std::vector<double> contrast_ages;
  std::string out_prefix;
};

int run_study_cmd(const StudyArgs& args) {
  StudyConfig config;
  if (!args.config_path.empty()) {
    std::ifstream in(args.config_path);
    if (!in) throw IoError("cannot open study config \"" + args.config_path + "\"");
    std::stringstream buffer;
    buffer << in.rdbuf();
    config = study_config_from_json(buffer.str());
  } else {
    config.scenario = to_scenario(args.scenario);
    config.estimators.clear();
    for (const std::string& name : args.estimators) {
      config.estimators.push_back(estimator_from_string(name));
    }
    config.replicates = 1000;
  }
  if (args.replicates > 0) config.replicates = args.replicates;
  if (args.parallelism > 0) config.parallelism = args.parallelism;
  if (args.per_replicate) config.keep_replicates = true;
  if (args.pooled_corr) config.fit_options.pooled_corr = true;
  if (!args.contrast_ages.empty()) {
    if (args.contrast_ages.size() != 2) throw ConfigError("--contrast-ages needs 2 values");
    config.contrast_ages = {{args.contrast_ages[0], args.contrast_ages[1]}};
  }

  const StudySummary summary = run_study(config);
  std::printf("%s", summary_to_markdown(summary).c_str());

  if (!args.out_prefix.empty()) {
    auto dump = [](const std::string& path, const std::string& content) {
      std::ofstream out(path);
      if (!out) throw IoError("cannot write \"" + path + "\"");
      out << content;
    };
    dump(args.out_prefix + "_summary.md", summary_to_markdown(summary));
    dump(args.out_prefix + "_summary.csv", summary_to_csv(summary));
    if (config.keep_replicates) {
      dump(args.out_prefix + "_replicates.csv", replicates_to_csv(summary));
    }
    if (config.scenario.scenario == Scenario::age_falconer) {
      dump(args.out_prefix + "_age_profile.csv", age_profile_to_csv(summary));
    }
  }
  return kExitOk;
}

void add_scenario_flags(CLI::App* cmd, SimulateArgs& args) {
  cmd->add_option("--scenario", args.scenario,
                  "mvt | blgp | unequal-var | sex | age-falconer");
  cmd->add_option("--seed", args.seed, "RNG seed");
  cmd->add_option("--n-mz", args.n_mz, "MZ pairs (per sex cell for the sex scenario)");
  cmd->add_option("--n-dz", args.n_dz, "DZ pairs (per sex cell for the sex scenario)");
  cmd->add_option("--alpha", args.alpha, "sigma2_A,sigma2_C,sigma2_E")
      ->delimiter(',')->expected(3);
  cmd->add_option("--df", args.df, "t degrees of freedom (mvt)");
  cmd->add_option("--lambda", args.lambda, "LGP dispersion in (0,1) (blgp)");
  cmd->add_option("--mz-components", args.mz_components, "MZ sigma2_A,C,E (unequal-var)")
      ->delimiter(',')->expected(3);
  cmd->add_option("--dz-components", args.dz_components, "DZ sigma2_A,C,E (unequal-var)")
      ->delimiter(',')->expected(3);
  cmd->add_option("--sex-effects", args.sex_effects, "a0,a1,c0,c1,e0,e1 (sex scenario)")
      ->delimiter(',')->expected(6);
  cmd->add_option("--age-v", args.age_v, "variance coefficients v0..v5 (age scenario)")
      ->delimiter(',')->expected(6);
  cmd->add_option("--age-p", args.age_p, "correlation coefficients p0..p5 (age scenario)")
      ->delimiter(',')->expected(6);
  cmd->add_option("--age-grid", args.age_grid, "ages sampled uniformly (age scenario)")
      ->delimiter(',');
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Twin ACE heritability estimation (NACE, Falconer, GEE2 variants)"};
  app.require_subcommand(1);

  FitArgs fit_args;
  CLI::App* fit_cmd = app.add_subcommand("fit", "Fit estimators to a twin CSV");
  fit_cmd->add_option("--csv", fit_args.csv_path, "input CSV path")->required();
  fit_cmd->add_option("--y1", fit_args.y1_col, "first trait column");
  fit_cmd->add_option("--y2", fit_args.y2_col, "second trait column");
  fit_cmd->add_option("--zygosity", fit_args.zygosity_col, "zygosity column (MZ/DZ)");
  fit_cmd->add_option("--estimator", fit_args.estimator,
                      "nace | gee2-nace | falconer | gee2-falconer | all");
  fit_cmd->add_option("--covariates", fit_args.mean_covariates,
                      "mean-level covariates to residualize out")->delimiter(',');
  fit_cmd->add_option("--var-covariate", fit_args.var_covariate,
                      "pair-level covariate for variance-level effects (GEE2 only)");
  fit_cmd->add_flag("--age-design", fit_args.age_design,
                    "quadratic-age variance design for --var-covariate");
  double age_center_value = 0.0;
  CLI::Option* age_center_opt =
      fit_cmd->add_option("--age-center", age_center_value,
                          "centering constant for the squared age (default: sample mean)");
  fit_cmd->add_option("--var-link", fit_args.var_link, "identity | log");
  fit_cmd->add_option("--corr-link", fit_args.corr_link, "identity | fisher-z");
  fit_cmd->add_option("--center", fit_args.centering, "none | global | per-zygosity");
  fit_cmd->add_flag("--pooled-corr", fit_args.pooled_corr,
                    "classical Falconer uses pooled-moment correlations");
  fit_cmd->add_flag("--ridge", fit_args.ridge, "enable a 1e-10*trace ridge in the solver");
  fit_cmd->add_option("--recode", fit_args.recodes,
                      "token recode, e.g. sex=M:1,F:0 (repeatable)");
  fit_cmd->add_option("--json", fit_args.json_path, "write the fit result as JSON");

  SimulateArgs sim_args;
  CLI::App* sim_cmd = app.add_subcommand("simulate", "Write a simulated twin CSV");
  add_scenario_flags(sim_cmd, sim_args);
  sim_cmd->add_option("--out", sim_args.out_path, "output CSV path")->required();

  StudyArgs study_args;
  CLI::App* study_cmd = app.add_subcommand("study", "Run a Monte Carlo coverage study");
  study_cmd->add_option("--config", study_args.config_path, "study config JSON");
  add_scenario_flags(study_cmd, study_args.scenario);
  study_cmd->add_option("--estimators", study_args.estimators, "estimators to compare")
      ->delimiter(',');
  study_cmd->add_option("--replicates", study_args.replicates, "number of replicates");
  study_cmd->add_option("--parallel", study_args.parallelism, "worker threads");
  study_cmd->add_flag("--per-replicate", study_args.per_replicate,
                      "keep and write per-replicate estimates");
  study_cmd->add_flag("--pooled-corr", study_args.pooled_corr,
                      "classical Falconer uses pooled-moment correlations");
  study_cmd->add_option("--contrast-ages", study_args.contrast_ages,
                        "two ages for the h2 Wald contrast (age scenario)")
      ->delimiter(',');
  study_cmd->add_option("--out-prefix", study_args.out_prefix,
                        "write <prefix>_summary.{md,csv} and friends");

  CLI11_PARSE(app, argc, argv);

  try {
    if (fit_cmd->parsed()) {
      if (*age_center_opt) fit_args.age_center = age_center_value;
      return run_fit(fit_args);
    }
    if (sim_cmd->parsed()) return run_simulate(sim_args);
    if (study_cmd->parsed()) return run_study_cmd(study_args);
  } catch (const twinace::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInputError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInputError;
  }
  return kExitInputError;
}
