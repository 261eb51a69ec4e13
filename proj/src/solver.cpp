#include "twinace/solver.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <utility>
#include <vector>

namespace twinace {

namespace {

/// Pairs sharing (zygosity, covariate values) have identical D and Omega, so
/// the estimating equations and the sandwich pieces only need per-cell sums
/// of gamma and gamma gamma'. Cells are kept in a deterministic (sorted)
/// order so accumulation is bit-reproducible.
struct Cell {
  Zygosity z = Zygosity::MZ;
  Eigen::VectorXd x;
  std::size_t n = 0;
  Eigen::Vector3d s1 = Eigen::Vector3d::Zero();        // sum gamma_i
  Eigen::Matrix3d s2 = Eigen::Matrix3d::Zero();        // sum gamma_i gamma_i'
};

std::vector<Cell> build_cells(const TwinDataset& data, const MomentModel& model) {
  using Key = std::pair<int, std::vector<double>>;
  std::map<Key, std::size_t> index;
  std::vector<Cell> cells;

  for (const TwinPair& pair : data.pairs) {
    const Eigen::VectorXd x = model_covariates(model, pair);
    Key key{pair.zygosity == Zygosity::MZ ? 0 : 1,
            std::vector<double>(x.data(), x.data() + x.size())};
    auto [it, inserted] = index.try_emplace(key, cells.size());
    if (inserted) {
      Cell cell;
      cell.z = pair.zygosity;
      cell.x = x;
      cells.push_back(std::move(cell));
    }
    Cell& cell = cells[it->second];
    const Eigen::Vector3d g = gamma_sample(pair);
    cell.n += 1;
    cell.s1 += g;
    cell.s2 += g * g.transpose();
  }

  // sorted-key order, so results do not depend on row order of equal cells
  std::vector<Cell> ordered;
  ordered.reserve(cells.size());
  for (const auto& [key, idx] : index) ordered.push_back(cells[idx]);
  return ordered;
}

bool eval_all(const MomentModel& model, const Eigen::VectorXd& alpha,
              const std::vector<Cell>& cells, std::vector<MomentEval>& evals) {
  evals.resize(cells.size());
  for (std::size_t c = 0; c < cells.size(); ++c) {
    evals[c] = eval_moments(model, alpha, cells[c].z, cells[c].x);
    if (!evals[c].valid) return false;
  }
  return true;
}

/// Solves J delta = u with a rank check; throws SingularityError (with a
/// condition estimate) when J is numerically singular even after the ridge.
Eigen::VectorXd solve_normal_equations(Eigen::MatrixXd J, const Eigen::VectorXd& u,
                                       double ridge) {
  if (ridge > 0.0) {
    J.diagonal().array() += ridge * J.trace();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(J, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const double smax = svd.singularValues()[0];
  const double smin = svd.singularValues()[svd.singularValues().size() - 1];
  if (!(smax > 0.0) || smin <= smax * 1e-13) {
    const double cond = smin > 0.0 ? smax / smin : std::numeric_limits<double>::infinity();
    throw SingularityError(
        "estimating-equation system is singular (condition estimate " +
        std::to_string(cond) + "); the variance design may be rank deficient");
  }
  return svd.solve(u);
}

Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& m) {
  return 0.5 * (m + m.transpose());
}

Eigen::MatrixXd invert_psi(const Eigen::MatrixXd& psi) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(psi, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const double smax = svd.singularValues()[0];
  const double smin = svd.singularValues()[svd.singularValues().size() - 1];
  if (!(smax > 0.0) || smin <= smax * 1e-13) {
    throw SingularityError("Psi is singular; covariance of alpha is not identified");
  }
  return svd.solve(Eigen::MatrixXd::Identity(psi.rows(), psi.cols()));
}

} // namespace

SolveOutcome solve(const TwinDataset& data, const MomentModel& model,
                   const Eigen::VectorXd& alpha0, const SolverConfig& config) {
  if (config.max_iter < 1 || !(config.tol > 0.0) || config.ridge < 0.0 ||
      config.step_halving_max < 0) {
    throw UsageError("solve: invalid SolverConfig (need max_iter >= 1, tol > 0, ridge >= 0)");
  }
  if (data.pairs.empty()) throw InsufficientDataError("solve: dataset is empty");
  if (alpha0.size() != model.param_dim()) {
    throw UsageError("solve: starting vector has length " + std::to_string(alpha0.size()) +
                     ", model expects " + std::to_string(model.param_dim()));
  }
  if (model.parameterization == Parameterization::falconer &&
      (data.n_mz() == 0 || data.n_dz() == 0)) {
    throw InsufficientDataError("solve: Falconer models need both zygosity groups");
  }

  const std::vector<Cell> cells = build_cells(data, model);
  const int q = model.param_dim();
  const auto n_pairs = data.pairs.size();

  SolveOutcome out;
  out.n_pairs = n_pairs;
  out.alpha_hat = alpha0;

  std::vector<MomentEval> evals;
  if (!eval_all(model, alpha0, cells, evals)) {
    throw DomainError("solve: moment structure is invalid at the starting values");
  }

  Eigen::VectorXd alpha = alpha0;
  for (int iter = 1; iter <= config.max_iter; ++iter) {
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(q, q);
    Eigen::VectorXd u = Eigen::VectorXd::Zero(q);
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const Cell& cell = cells[c];
      const MomentEval& ev = evals[c];
      const Eigen::MatrixXd dto = ev.jac.transpose() * ev.omega_inverse; // q x 3
      J.noalias() += static_cast<double>(cell.n) * dto * ev.jac;
      u.noalias() += dto * (cell.s1 - static_cast<double>(cell.n) * ev.gamma);
    }

    const Eigen::VectorXd delta = solve_normal_equations(J, u, config.ridge);

    // step halving on invalid moment structures
    double step = 1.0;
    Eigen::VectorXd candidate = alpha + delta;
    std::vector<MomentEval> cand_evals;
    int halvings = 0;
    while (!eval_all(model, candidate, cells, cand_evals)) {
      if (++halvings > config.step_halving_max) break;
      step *= 0.5;
      candidate = alpha + step * delta;
    }
    if (halvings > config.step_halving_max) {
      out.iterations = iter;
      out.converged = false;
      break;
    }

    alpha = candidate;
    evals = std::move(cand_evals);
    out.iterations = iter;
    out.final_update_norm = (step * delta).cwiseAbs().maxCoeff();
    if (out.final_update_norm <= config.tol) {
      out.converged = true;
      break;
    }
  }
  out.alpha_hat = alpha;

  // Psi, meat and score at the final iterate
  Eigen::MatrixXd psi = Eigen::MatrixXd::Zero(q, q);
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(q, q);
  Eigen::VectorXd score = Eigen::VectorXd::Zero(q);
  for (std::size_t c = 0; c < cells.size(); ++c) {
    const Cell& cell = cells[c];
    const MomentEval& ev = evals[c];
    const double n = static_cast<double>(cell.n);
    const Eigen::MatrixXd dto = ev.jac.transpose() * ev.omega_inverse; // q x 3
    psi.noalias() += n * dto * ev.jac;
    score.noalias() += dto * (cell.s1 - n * ev.gamma);
    // sum_i f_i f_i' = S2 - S1 Gamma' - Gamma S1' + n Gamma Gamma'
    const Eigen::Matrix3d ff = cell.s2 - cell.s1 * ev.gamma.transpose() -
                               ev.gamma * cell.s1.transpose() +
                               n * ev.gamma * ev.gamma.transpose();
    meat.noalias() += dto * ff * dto.transpose();
  }
  out.psi = symmetrize(psi / static_cast<double>(n_pairs));
  out.meat = symmetrize(meat);
  out.score = score;
  return out;
}

Eigen::MatrixXd sandwich_cov(const SolveOutcome& outcome, std::size_t n_pairs) {
  const Eigen::MatrixXd psi_inv = invert_psi(outcome.psi);
  const double n = static_cast<double>(n_pairs);
  return symmetrize(psi_inv * outcome.meat * psi_inv / (n * n));
}

Eigen::MatrixXd model_based_cov(const SolveOutcome& outcome, std::size_t n_pairs) {
  return symmetrize(invert_psi(outcome.psi) / static_cast<double>(n_pairs));
}

PooledMoments pooled_moments(const TwinDataset& data) {
  PooledMoments out;
  for (Zygosity z : {Zygosity::MZ, Zygosity::DZ}) {
    double sum_sq = 0.0;
    double sum_cross = 0.0;
    std::size_t n = 0;
    for (const TwinPair& pair : data.pairs) {
      if (pair.zygosity != z) continue;
      sum_sq += pair.y1 * pair.y1 + pair.y2 * pair.y2;
      sum_cross += pair.y1 * pair.y2;
      ++n;
    }
    GroupMoments g;
    g.n = n;
    if (n > 0) {
      g.sigma2 = sum_sq / (2.0 * static_cast<double>(n));
      g.cov = sum_cross / static_cast<double>(n);
    }
    (z == Zygosity::MZ ? out.mz : out.dz) = g;
  }
  return out;
}

Eigen::VectorXd default_start(const TwinDataset& data, const MomentModel& model) {
  if (data.pairs.empty()) throw InsufficientDataError("default_start: dataset is empty");
  const PooledMoments pm = pooled_moments(data);
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(model.param_dim());
  const int m = model.predictor_dim();

  if (model.parameterization == Parameterization::nace) {
    double sum_sq = 0.0;
    for (const TwinPair& pair : data.pairs) sum_sq += pair.y1 * pair.y1 + pair.y2 * pair.y2;
    const double pooled_var = sum_sq / (2.0 * static_cast<double>(data.pairs.size()));
    if (!(pooled_var > 0.0) || !std::isfinite(pooled_var)) {
      throw DegenerateDataError("default_start: pooled trait variance is not positive");
    }
    const double third = var_link_forward(model.var_link, pooled_var / 3.0);
    alpha[0] = third;
    alpha[m] = third;
    alpha[2 * m] = third;
    return alpha;
  }

  if (pm.mz.n == 0 || pm.dz.n == 0) {
    throw InsufficientDataError("default_start: Falconer models need both zygosity groups");
  }
  if (!(pm.mz.sigma2 > 0.0) || !(pm.dz.sigma2 > 0.0)) {
    throw DegenerateDataError("default_start: a zygosity group has non-positive pooled variance");
  }
  auto clamp_rho = [](double r) { return std::clamp(r, -0.999, 0.999); };
  const double v_dz = var_link_forward(model.var_link, pm.dz.sigma2);
  const double v_mz = var_link_forward(model.var_link, pm.mz.sigma2);
  const double p_dz = corr_link_forward(model.corr_link, clamp_rho(pm.dz.rho()));
  const double p_mz = corr_link_forward(model.corr_link, clamp_rho(pm.mz.rho()));
  alpha[0] = v_dz;
  alpha[1] = v_mz - v_dz;
  alpha[m] = p_dz;
  alpha[m + 1] = p_mz - p_dz;
  return alpha;
}

} // namespace twinace
