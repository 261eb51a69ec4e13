#pragma once

#include <cstddef>
#include <limits>

#include <Eigen/Dense>

#include "twinace/moments.hpp"
#include "twinace/twin_data.hpp"

namespace twinace {

struct SolverConfig {
  int max_iter = 100;
  /// Convergence threshold on the max absolute parameter change per update.
  double tol = 1e-8;
  int step_halving_max = 20;
  /// Diagonal regularizer as a fraction of trace(J); 0 means exact solves.
  double ridge = 0.0;
};

struct SolveOutcome {
  Eigen::VectorXd alpha_hat;
  int iterations = 0;
  bool converged = false;
  double final_update_norm = std::numeric_limits<double>::infinity();
  /// Psi = N^{-1} sum_i D_i' Omega_i^{-1} D_i, evaluated at alpha_hat.
  Eigen::MatrixXd psi;
  /// Empirical middle term sum_i D_i' Omega_i^{-1} f_i f_i' Omega_i^{-1} D_i.
  Eigen::MatrixXd meat;
  /// Estimating function sum_i D_i' Omega_i^{-1} f_i at alpha_hat.
  Eigen::VectorXd score;
  std::size_t n_pairs = 0;
};

/// Iterates the Gauss-Newton update
///   alpha <- alpha + (sum D'O^{-1}D)^{-1} (sum D'O^{-1}f)
/// with D, Omega, f recomputed at the current iterate, until the max absolute
/// parameter change falls below tol. Steps that land on an invalid moment
/// structure (non-finite Gamma, non-PD normal Omega, |rho| >= 1 under an
/// identity correlation link) are halved up to step_halving_max times.
/// Non-convergence is reported through the outcome, not an exception.
SolveOutcome solve(const TwinDataset& data, const MomentModel& model,
                   const Eigen::VectorXd& alpha0, const SolverConfig& config = {});

/// Robust covariance N^{-2} Psi^{-1} (meat) Psi^{-1}.
Eigen::MatrixXd sandwich_cov(const SolveOutcome& outcome, std::size_t n_pairs);

/// Model-based covariance N^{-1} Psi^{-1} (the classical-NACE covariance when
/// the model uses the normal working covariance).
Eigen::MatrixXd model_based_cov(const SolveOutcome& outcome, std::size_t n_pairs);

// ---------------------------------------------------------------------------
// Pooled per-zygosity second moments (data assumed centered)
// ---------------------------------------------------------------------------

struct GroupMoments {
  double sigma2 = std::numeric_limits<double>::quiet_NaN(); // (sum y1^2 + sum y2^2) / (2n)
  double cov = std::numeric_limits<double>::quiet_NaN();    // sum y1 y2 / n
  std::size_t n = 0;

  double rho() const { return cov / sigma2; }
};

struct PooledMoments {
  GroupMoments mz;
  GroupMoments dz;
};

PooledMoments pooled_moments(const TwinDataset& data);

/// Consistent starting values: NACE starts at equal thirds of the pooled
/// sample variance; Falconer starts at the pooled-moment closed form mapped
/// through the links (so linear cases converge in one step). Covariate
/// coefficients start at zero.
Eigen::VectorXd default_start(const TwinDataset& data, const MomentModel& model);

} // namespace twinace
