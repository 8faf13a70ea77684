#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "sdeid/integrate.hpp"
#include "sdeid/model.hpp"

namespace sdeid {

/// Label of one effective coefficient.
struct CoefficientLabel {
  enum class Kind { Linear, Quadratic, Diffusion, DiffusionBias };
  Kind kind = Kind::Linear;
  std::size_t row = 0;
  std::size_t j = 0;
  std::size_t k = 0;  // quadratic only

  /// "linear[i,j]", "quadratic[i,{j,k}]", "diffusion[i,j]", "bias[i]"
  std::string str() const;
  static CoefficientLabel parse(const std::string& text);
  bool is_drift() const { return kind == Kind::Linear || kind == Kind::Quadratic; }
};

double coefficient_value(const EffectiveCoefficients& coeffs, const CoefficientLabel& label);

/// Every labelled coefficient of a d-dimensional model, drift block first.
std::vector<CoefficientLabel> coefficient_labels(std::size_t d, bool with_bias);

struct RmseReport {
  double global_rmse = 0.0;
  double drift_rmse = 0.0;
  double diffusion_rmse = 0.0;
  std::map<std::string, double> per_coefficient;  // absolute error
  double nonzero_coeff_rmse = 0.0;  // over coefficients nonzero in the truth
  double zero_coeff_max_abs = 0.0;  // over coefficients zero in the truth
  std::size_t coefficient_count = 0;
};

RmseReport coefficient_rmse(const SdeModel& fitted, const SdeModel& truth);

/// RMSE between canonical forms; the metric underlying coefficient_rmse.
double coefficient_distance(const SdeModel& a, const SdeModel& b);

struct ParameterStatistics {
  double mean = 0.0;
  double variance = 0.0;  // unbiased
  std::size_t count = 0;
};

ParameterStatistics parameter_statistics(const std::vector<SdeModel>& models,
                                         const CoefficientLabel& label);

struct MomentErrors {
  std::vector<double> times;
  std::vector<std::vector<double>> mean_abs, mean_rel, variance_abs, variance_rel;
};

/// Throws StructuralError when the grids differ.
MomentErrors moment_comparison(const MomentCurve& theoretical, const MomentCurve& empirical);

struct TopologyOptions {
  double margin = 1.0;
  double min_fraction = 0.10;
  std::size_t min_crossings = 5;
};

struct TopologyVerdict {
  bool both_lobes = false;
  double negative_fraction = 0.0;  // share of states with x < −margin
  double positive_fraction = 0.0;  // share of states with x > +margin
  std::size_t crossings = 0;       // lobe switches, ignoring the margin band
  std::vector<double> quadratic_variation;
};

TopologyVerdict attractor_topology(const Trajectory& traj, const TopologyOptions& options = {});

/// (rmse_baseline − rmse_method) / rmse_baseline. Throws NumericalError when
/// the baseline RMSE is zero.
double gain_rate(double rmse_method, double rmse_baseline);

nlohmann::json to_json(const RmseReport& report);
nlohmann::json to_json(const TopologyVerdict& verdict);
nlohmann::json to_json(const ParameterStatistics& stats);

/// Per-coefficient error bars: `coefficient,method,baseline,gain`, drift
/// coefficients only; the gain cell is empty when the baseline error is zero.
std::string coefficient_bars_csv(const std::map<std::string, double>& method,
                                 const std::map<std::string, double>& baseline);

std::string moment_curves_csv(const std::vector<std::pair<std::string, const MomentCurve*>>& curves);

}  // namespace sdeid
