#pragma once

// Multi-run experiment protocols: simulate fresh data per run, fit the
// stochastic and deterministic models, score them against the ground truth
// and write reports, curves and plots.

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sdeid/baselines.hpp"
#include "sdeid/eval.hpp"
#include "sdeid/integrate.hpp"
#include "sdeid/systems.hpp"
#include "sdeid/train.hpp"

namespace sdeid {

enum class Method { Sde, Det, GradMatch };
const char* to_string(Method m);
Method method_from_string(const std::string& name);

struct SystemSpec {
  std::string name = "gbm";  // "gbm" or "slorenz"
  GbmSystem gbm;
  SLorenzSystem slorenz;

  std::size_t dim() const { return name == "gbm" ? 1 : 3; }
  /// Simulation defaults for this system (initial state, burn-in).
  SimConfig default_sim(std::size_t steps, double tau, std::uint64_t seed) const;
  /// Ground truth in the learned model class.
  SdeModel truth(bool affine) const;
  std::unique_ptr<Dynamics> dynamics() const;
  void validate() const;
};

SystemSpec system_spec_from_json(const nlohmann::json& j);
nlohmann::json system_spec_to_json(const SystemSpec& s);

/// Long simulations of learned models used to judge attractor topology.
struct AttractorSpec {
  bool enabled = false;
  std::size_t steps = 40000;
  std::size_t burn_in = 20000;
  std::uint64_t seed = 31;
  TopologyOptions topology{1.0, 0.10, 5};
  bool svg = true;
};

/// Ensemble moment curves of the true system and the first run's fits.
struct MomentsSpec {
  bool enabled = false;
  std::size_t n_traj = 10000;
  std::size_t stride = 10;
  std::uint64_t seed = 41;
};

struct GradMatchSpec {
  /// 1: single-trajectory k-NN reading; more: aligned-ensemble reading.
  std::size_t n_traj = 1;
  GradientMatchOptions options;
  /// Steps simulated from the field (0 disables the simulation).
  std::size_t simulate_steps = 0;
};

struct ExperimentSpec {
  std::string name = "experiment";
  SystemSpec system;
  SimConfig sim;
  TrainConfig train;
  /// Settings for the deterministic fit; defaults to `train` with the
  /// diffusion block disabled.
  std::optional<TrainConfig> train_det;
  std::size_t runs = 1;
  std::string outputs = "out";
  std::vector<Method> methods{Method::Sde, Method::Det};
  AttractorSpec attractor;
  MomentsSpec moments;
  GradMatchSpec gradmatch;

  bool has(Method m) const;
  TrainConfig config_for(Method m) const;
  /// Data simulation settings for run r.
  SimConfig run_sim(std::size_t r) const;
  void validate() const;
};

ExperimentSpec experiment_spec_from_json(const nlohmann::json& j);
nlohmann::json experiment_spec_to_json(const ExperimentSpec& spec);
ExperimentSpec load_experiment_spec(const std::string& path);

SimConfig sim_config_from_json(const nlohmann::json& j, const SimConfig& defaults);
nlohmann::json sim_config_to_json(const SimConfig& cfg);

struct RunOutcome {
  SdeModel model;
  FitStatus status = FitStatus::MaxIterations;
  std::string message;
  double best_loss = 0.0;
  std::vector<LossRecord> history;
  RmseReport rmse;
  std::optional<TopologyVerdict> topology;
  /// Simulation of the learned model diverged before the topology check.
  bool simulation_diverged = false;
};

struct GradMatchOutcome {
  std::size_t anchors = 0;
  std::size_t dropped_anchors = 0;
  std::size_t extrapolated_queries = 0;
  std::optional<TopologyVerdict> topology;
  bool simulation_diverged = false;
};

struct ExperimentResult {
  ExperimentSpec spec;
  SdeModel truth;
  std::vector<RunOutcome> sde, det;  // one per run, ordered by run index
  std::vector<GradMatchOutcome> gradmatch;
  std::vector<TopologyVerdict> truth_topology;
  std::optional<MomentCurve> theoretical, true_empirical, sde_empirical, det_empirical;

  const std::vector<RunOutcome>& outcomes(Method m) const;
  double mean_drift_rmse(Method m) const;
  /// Share of runs whose learned-model simulation visits both lobes.
  double lobe_rate(Method m) const;
  double truth_lobe_rate() const;
  nlohmann::json summary() const;
};

struct RunOptions {
  bool write_outputs = true;
  /// Per-run loss histories and models under outputs/runs.
  bool write_runs = true;
};

/// Executes all runs (in parallel across runs) and, when requested, writes
/// summary.json plus per-run artifacts under spec.outputs.
ExperimentResult run_experiment(const ExperimentSpec& spec, const RunOptions& options = {});

/// Topology of a long simulation of `model` from the attractor settings.
/// Returns nullopt when the simulation diverges.
std::optional<TopologyVerdict> learned_topology(const SdeModel& model, const AttractorSpec& att,
                                                const SimConfig& base, std::size_t run,
                                                Trajectory* out = nullptr);

}  // namespace sdeid
