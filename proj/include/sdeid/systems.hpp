#pragma once

// Ground-truth reference systems: geometric Brownian motion and the
// stochastic Lorenz-63 system.

#include <vector>

#include "sdeid/integrate.hpp"
#include "sdeid/model.hpp"

namespace sdeid {

/// dx = mu x dt + sigma x dβ
struct GbmSystem {
  double mu = 0.5;
  double sigma = 1.0;
  double x0 = 1.0;

  void validate() const;
};

/// Lorenz-63 with state-dependent noise on y and z:
///   dx = (σy − (σ + 2/γ)x) dt
///   dy = ((ρ − z)x − (1 + 2/γ)y) dt + (ρ − z)/√γ dβ
///   dz = (xy − (β + 4/γ)z) dt + y/√γ dβ
struct SLorenzSystem {
  double sigma = 10.0;
  double rho = 28.0;
  double beta = 8.0 / 3.0;
  double gamma = 10.0;
  bool shared_noise = false;

  void validate() const;
};

MomentCurve gbm_theoretical_moments(const GbmSystem& sys, std::span<const double> times);
SdeModel gbm_as_model(const GbmSystem& sys);

StateVector slorenz_drift(const SLorenzSystem& sys, std::span<const double> x);
std::vector<double> slorenz_diffusion(const SLorenzSystem& sys, std::span<const double> x);
/// Deterministic Lorenz-63 drift (σ(y−x), x(ρ−z)−y, xy−βz).
StateVector lorenz63_drift(double sigma, double rho, double beta, std::span<const double> x);

struct EmbeddedModel {
  SdeModel model;
  /// True when the model class cannot represent the system exactly
  /// (non-affine diffusion drops the constant ρ/√γ in the y row).
  bool approximate = false;
};

EmbeddedModel slorenz_as_model(const SLorenzSystem& sys, bool affine);

class SLorenzDynamics final : public Dynamics {
 public:
  explicit SLorenzDynamics(SLorenzSystem sys) : sys_(sys) { sys_.validate(); }
  std::size_t dim() const override { return 3; }
  void drift(std::span<const double> x, std::span<double> out) const override;
  void noise_scale(std::span<const double> x, std::span<double> out) const override;
  bool shared_noise() const override { return sys_.shared_noise; }

 private:
  SLorenzSystem sys_;
};

/// Default SL simulation settings: start (1,1,1), burn-in 5000 steps.
SimConfig slorenz_sim_config(std::size_t steps, double tau, std::uint64_t seed);
/// Default GBM simulation settings: x0 from the system, no burn-in.
SimConfig gbm_sim_config(const GbmSystem& sys, std::size_t steps, double tau, std::uint64_t seed);

}  // namespace sdeid
