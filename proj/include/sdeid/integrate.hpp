#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sdeid/core.hpp"
#include "sdeid/model.hpp"

namespace sdeid {

/// Anything that can be integrated with Euler-Maruyama: a drift field and a
/// per-component noise scale multiplying independent Brownian increments.
class Dynamics {
 public:
  virtual ~Dynamics() = default;
  virtual std::size_t dim() const = 0;
  virtual void drift(std::span<const double> x, std::span<double> out) const = 0;
  virtual void noise_scale(std::span<const double> x, std::span<double> out) const = 0;
  /// When true a single Brownian increment drives every component.
  virtual bool shared_noise() const { return false; }
};

class ModelDynamics final : public Dynamics {
 public:
  explicit ModelDynamics(const SdeModel& model) : model_(model) {}
  std::size_t dim() const override { return model_.dim(); }
  void drift(std::span<const double> x, std::span<double> out) const override;
  void noise_scale(std::span<const double> x, std::span<double> out) const override;

 private:
  const SdeModel& model_;
};

/// Uniformly sampled path, stored flat (state k occupies [k*dim, (k+1)*dim)).
struct Trajectory {
  double tau = 0.0;
  double start_time = 0.0;
  std::size_t dim = 0;
  std::vector<double> data;

  std::size_t size() const { return dim == 0 ? 0 : data.size() / dim; }
  std::size_t pairs() const { return size() < 2 ? 0 : size() - 1; }
  std::span<const double> state(std::size_t k) const { return {data.data() + k * dim, dim}; }
  std::span<double> state(std::size_t k) { return {data.data() + k * dim, dim}; }
  double time(std::size_t k) const { return start_time + static_cast<double>(k) * tau; }

  /// Throws StructuralError unless tau > 0, dim > 0, data is whole states and finite.
  void validate(std::size_t min_states = 1) const;
};

struct SimConfig {
  std::size_t steps = 1;
  double tau = 1e-3;
  std::uint64_t seed = 0;
  StateVector initial_state;
  std::size_t burn_in = 0;

  void validate() const;
};

/// Integration produced a non-finite state.
class DivergenceError : public NumericalError {
 public:
  DivergenceError(std::size_t step, const std::string& what)
      : NumericalError(what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

/// x + tau*drift + noise_scale ⊙ dbeta. Throws DivergenceError(step) on a
/// non-finite result.
StateVector em_step(std::span<const double> drift, std::span<const double> noise_scale,
                    std::span<const double> x, double tau, std::span<const double> dbeta,
                    std::size_t step = 0);

/// Records cfg.steps + 1 states after discarding cfg.burn_in steps. The
/// Brownian stream is seeded directly with cfg.seed.
Trajectory simulate(const Dynamics& dynamics, const SimConfig& cfg);
Trajectory simulate(const SdeModel& model, const SimConfig& cfg);

struct EnsembleFailure {
  std::size_t index;
  std::size_t step;
  std::string message;
};

struct Ensemble {
  std::vector<Trajectory> trajectories;  // successful members, ascending index
  std::vector<std::size_t> indices;
  std::vector<EnsembleFailure> failures;
};

/// Member k is simulate() with seed stream_seed(cfg.seed, k). Runs members in
/// parallel; output does not depend on the thread count.
Ensemble simulate_ensemble(const Dynamics& dynamics, const SimConfig& cfg, std::size_t n_traj);

/// Mean/variance per component over an ensemble, at recorded times.
struct MomentCurve {
  enum class Kind { Theoretical, Empirical };
  std::vector<double> times;
  std::vector<std::vector<double>> mean;
  std::vector<std::vector<double>> variance;
  Kind kind = Kind::Empirical;
};

/// Streams an ensemble without storing paths and returns per-time moments
/// (unbiased variance) every `stride` recorded steps. Diverged members are
/// skipped and counted in `failures` when non-null. Parallel with a
/// fixed-order merge, so results are thread-count independent.
MomentCurve ensemble_moments(const Dynamics& dynamics, const SimConfig& cfg, std::size_t n_traj,
                             std::size_t stride, std::size_t* failures = nullptr);

/// Serial reference for ensemble_moments: stores all paths, two-pass moments.
MomentCurve ensemble_moments_reference(const Dynamics& dynamics, const SimConfig& cfg,
                                       std::size_t n_traj, std::size_t stride);

// CSV: header `t,x0,...,x{d-1}`, one row per state, 17 significant digits.
void write_trajectory_csv(const Trajectory& traj, const std::string& path);
std::string trajectory_to_csv(const Trajectory& traj);
Trajectory read_trajectory_csv(const std::string& path);
Trajectory parse_trajectory_csv(const std::string& text);

}  // namespace sdeid
