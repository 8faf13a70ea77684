#pragma once

// Maximum-likelihood fitting of SdeModel parameters from one trajectory.
//
// For each consecutive pair (x_t, x_{t+1}) the EM transition is Gaussian with
// mean m_t = x_t + τF(x_t) and diagonal covariance Σ_t = τ·diag(L(x_t)² + ε).
// The loss is the negative log-likelihood up to constants:
//
//   Σ_t ||x_{t+1} − m_t||²_{Σ_t⁻¹} + Σ_t log|Σ_t|
//
// In identity-covariance mode Σ_t ≡ I and the loss is the plain sum of squared
// one-step prediction errors (the deterministic baseline).

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sdeid/integrate.hpp"
#include "sdeid/model.hpp"

namespace sdeid {

enum class CovarianceMode { Likelihood, Identity };

struct LossBreakdown {
  double total = 0.0;
  double mahalanobis = 0.0;
  double logdet = 0.0;
  double per_pair_mean = 0.0;
  std::size_t pairs = 0;
  /// Contribution of each state component (row) to total. Rows share no
  /// parameters, so each is minimized independently.
  std::vector<double> row_total;
};

/// Same shape as the model parameters. Entries of frozen rows stay zero.
struct ModelGradient {
  Matrix a1, a2, a3, b;
  std::optional<std::vector<double>> bias;

  static ModelGradient zeros_like(const SdeModel& model);
  /// Flattened in the order a1, a2, a3, b, bias.
  std::vector<double> flatten() const;
};

/// Parallel kernels. Pairs are reduced in fixed-size chunks merged in order,
/// so results are bitwise identical for any thread count.
LossBreakdown nll_loss(const SdeModel& model, const Trajectory& traj,
                       CovarianceMode mode = CovarianceMode::Likelihood);
/// Gradient of LossBreakdown::total (the sum over pairs).
ModelGradient nll_gradient(const SdeModel& model, const Trajectory& traj,
                           CovarianceMode mode = CovarianceMode::Likelihood,
                           const std::vector<bool>* frozen_diffusion_rows = nullptr);
/// Loss and gradient in one pass, optionally restricted to a subset of pair indices.
LossBreakdown nll_loss_and_gradient(const SdeModel& model, const Trajectory& traj,
                                    CovarianceMode mode, ModelGradient& grad,
                                    const std::vector<bool>* frozen_diffusion_rows = nullptr,
                                    std::span<const std::size_t> pair_subset = {});

/// Straight serial loops, kept as the reference for the parallel kernels.
LossBreakdown nll_loss_reference(const SdeModel& model, const Trajectory& traj,
                                 CovarianceMode mode = CovarianceMode::Likelihood);
ModelGradient nll_gradient_reference(const SdeModel& model, const Trajectory& traj,
                                     CovarianceMode mode = CovarianceMode::Likelihood);

/// Flattened parameter vector (a1, a2, a3, b, bias) and its inverse.
std::vector<double> flatten_parameters(const SdeModel& model);
SdeModel unflatten_parameters(const SdeModel& shape, std::span<const double> params);

struct BlockError {
  std::string block;  // "a1", "a2", "a3", "b", "bias"
  double max_relative_error = 0.0;
  bool exceeds = false;
};

struct GradientCheckReport {
  std::vector<BlockError> blocks;
  double max_relative_error = 0.0;
  bool passed = true;
};

/// Central differences with step `step` scaled by max(1, |θ|). Relative error
/// is |analytic − numeric| / max(|analytic|, |numeric|, 1).
GradientCheckReport check_gradient(const SdeModel& model, const Trajectory& traj, double step,
                                   double tolerance,
                                   CovarianceMode mode = CovarianceMode::Likelihood);

struct TrainConfig {
  double learning_rate = 1e-3;
  /// Learning rate reached at max_iters under exponential decay; equal to
  /// learning_rate (the default) means a constant rate.
  std::optional<double> learning_rate_final;
  std::size_t max_iters = 5000;
  /// Pair minibatch size; nullopt means full batch.
  std::optional<std::size_t> batch;
  double tolerance = 1e-8;
  std::size_t plateau_window = 100;
  double init_scale = 0.05;
  std::uint64_t seed = 0;
  bool fit_diffusion = true;
  /// When false A2 and A3 are held at zero and the drift is linear.
  bool bilinear_drift = true;
  bool affine_diffusion = false;
  double variance_floor = DiffusionParams::kDefaultVarianceFloor;
  /// Floor continuation: when set, the variance floor decays geometrically
  /// from this value to variance_floor over the first floor_anneal_fraction
  /// of max_iters. Best-iterate tracking and early stopping start afterwards.
  std::optional<double> variance_floor_start;
  double floor_anneal_fraction = 0.5;
  /// Likelihood fits only: iterations of an identity-covariance drift fit
  /// whose result initializes the drift (0 disables the warm-up).
  std::size_t warmup_iters = 0;
  double warmup_learning_rate = 0.1;
  double warmup_learning_rate_final = 1e-3;
  /// Rows of B (and bias) held at zero.
  std::vector<bool> freeze_zero_diffusion_rows;

  // Adam moments.
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;

  void validate() const;
};

nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct LossRecord {
  std::size_t iter;
  double total;        // per-pair mean
  double mahalanobis;  // per-pair mean
  double logdet;       // per-pair mean
};

enum class FitStatus { Converged, MaxIterations, Diverged };

struct FitResult {
  /// Row-wise best iterate: row i carries the parameters from the iteration
  /// with the lowest row-i loss, so its loss is at most every loss recorded
  /// once the variance floor has reached its final value.
  SdeModel model;
  std::vector<LossRecord> history;
  FitStatus status = FitStatus::MaxIterations;
  std::string message;
  double best_loss = 0.0;  // per-pair mean loss of `model`
  std::vector<LossRecord> warmup_history;
};

/// Adam on the per-pair mean loss. With fit_diffusion = false the covariance
/// is the identity and the returned model has a zero diffusion block.
FitResult fit(const Trajectory& traj, const TrainConfig& cfg);

void write_loss_history_csv(const std::vector<LossRecord>& history, const std::string& path);

const char* to_string(FitStatus status);

}  // namespace sdeid
