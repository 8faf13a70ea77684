#pragma once

// Parametric SDE with bilinear drift and linear (optionally affine) diagonal
// diffusion:
//
//   dx = (A1 x + (A2 x) ⊙ (A3 x)) dt + diag(B x + bias) dβ
//
// with s = d independent Brownian components.

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sdeid/core.hpp"

namespace sdeid {

struct DriftParams {
  Matrix a1;
  Matrix a2;
  Matrix a3;

  static DriftParams zeros(std::size_t d) { return {Matrix(d, d), Matrix(d, d), Matrix(d, d)}; }
  std::size_t parameter_count() const { return a1.rows() * a1.cols() * 3; }
};

struct DiffusionParams {
  static constexpr double kDefaultVarianceFloor = 1e-6;

  Matrix b;
  std::optional<std::vector<double>> bias;  // affine extension, off by default
  double variance_floor = kDefaultVarianceFloor;

  static DiffusionParams zeros(std::size_t d, bool affine = false);
};

class SdeModel {
 public:
  SdeModel() = default;
  /// Validates shapes and finiteness; throws StructuralError.
  SdeModel(DriftParams drift, DiffusionParams diffusion);

  static SdeModel zeros(std::size_t d, bool affine = false);

  std::size_t dim() const { return drift_.a1.rows(); }
  std::size_t noise_dim() const { return dim(); }
  bool affine() const { return diffusion_.bias.has_value(); }

  const DriftParams& drift() const { return drift_; }
  const DiffusionParams& diffusion() const { return diffusion_; }

 private:
  DriftParams drift_;
  DiffusionParams diffusion_;
};

/// Mean and diagonal covariance of x_{t+1} | x_t under one EM step.
struct GaussianTransition {
  StateVector mean;
  std::vector<double> variance;
};

/// Identifiable polynomial form of the model. The A2/A3 factorization is only
/// defined up to per-row rescaling and B only up to per-row sign; this form
/// is invariant to both.
struct EffectiveCoefficients {
  std::size_t dim = 0;
  Matrix linear;                         // linear(i, j): coefficient of x_j in F_i
  std::vector<std::vector<double>> quadratic;  // quadratic[i][pair_index(j, k)], j <= k
  Matrix diffusion_linear;               // sign-canonical rows of B
  std::optional<std::vector<double>> diffusion_bias;  // same row sign as diffusion_linear

  /// Index of unordered pair {j, k} within a row, ordered (0,0),(0,1),..,(0,d-1),(1,1),...
  static std::size_t pair_index(std::size_t d, std::size_t j, std::size_t k);
  static std::size_t pair_count(std::size_t d) { return d * (d + 1) / 2; }
};

StateVector drift_eval(const SdeModel& model, std::span<const double> x);
std::vector<double> diffusion_eval(const SdeModel& model, std::span<const double> x);
GaussianTransition transition_density(const SdeModel& model, std::span<const double> x,
                                      double tau);
EffectiveCoefficients effective_coefficients(const SdeModel& model);

// JSON schema:
//   { "dim": d, "a1": [[..]], "a2": [[..]], "a3": [[..]], "b": [[..]],
//     "bias": [..] (optional), "variance_floor": eps }
nlohmann::json model_to_json(const SdeModel& model);
SdeModel model_from_json(const nlohmann::json& j);
void save_model(const SdeModel& model, const std::string& path);
SdeModel load_model(const std::string& path);

}  // namespace sdeid
