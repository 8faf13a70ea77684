#pragma once

// Nonparametric gradient-matching estimator of drift and squared diffusion,
// and EM simulation driven by such an estimate. The deterministic parametric
// baseline is fit() with TrainConfig::fit_diffusion = false.

#include <limits>
#include <string>
#include <vector>

#include "sdeid/integrate.hpp"

namespace sdeid {

struct SupportPoint {
  StateVector state;
  std::vector<double> drift;             // increment mean / τ
  std::vector<double> diffusion_squared; // increment variance / τ
};

struct NonparametricField {
  std::vector<SupportPoint> support_points;
  double tau = 0.0;
  std::size_t neighbor_count = 20;
  /// Queries farther than this from every anchor count as extrapolation.
  double extrapolation_radius = std::numeric_limits<double>::infinity();

  std::size_t dim() const { return support_points.empty() ? 0 : support_points.front().state.size(); }
  void validate() const;
};

struct GradientMatchOptions {
  /// Neighborhood size for the single-trajectory reading.
  std::size_t neighbor_count = 20;
  /// Neighbors beyond this distance are excluded; anchors left with fewer
  /// than two samples are dropped.
  double neighborhood_radius = std::numeric_limits<double>::infinity();
};

struct GradientMatchResult {
  NonparametricField field;
  std::size_t dropped_anchors = 0;
};

/// One trajectory: every state with a successor is an anchor and its
/// estimates average the increments of its k nearest states (Euclidean).
/// Several aligned trajectories: anchor t_j is the ensemble-mean state and its
/// estimates average the increments across realizations at t_j.
GradientMatchResult gradient_match(const std::vector<Trajectory>& trajectories,
                                   const GradientMatchOptions& options = {});

struct FieldQuery {
  std::vector<double> drift;
  std::vector<double> diffusion_squared;
  double nearest_distance = 0.0;
};

/// k-nearest-anchor average (k = field.neighbor_count, ties by anchor index).
FieldQuery query_field(const NonparametricField& field, std::span<const double> x);

class FieldDynamics final : public Dynamics {
 public:
  explicit FieldDynamics(const NonparametricField& field);
  std::size_t dim() const override { return field_.dim(); }
  void drift(std::span<const double> x, std::span<double> out) const override;
  void noise_scale(std::span<const double> x, std::span<double> out) const override;

 private:
  const NonparametricField& field_;
};

struct NonparametricSimulation {
  Trajectory trajectory;
  std::size_t extrapolated_queries = 0;
};

NonparametricSimulation simulate_nonparametric(const NonparametricField& field,
                                               const SimConfig& cfg);

// CSV: header `x0..,f0..,l2_0..`; metadata line `# tau=..,k=..` first.
void write_field_csv(const NonparametricField& field, const std::string& path);
NonparametricField read_field_csv(const std::string& path);

}  // namespace sdeid
