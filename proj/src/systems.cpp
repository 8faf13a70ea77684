#include "sdeid/systems.hpp"

#include <cmath>

namespace sdeid {

void GbmSystem::validate() const {
  if (!(sigma >= 0.0)) throw StructuralError("GBM sigma must be nonnegative");
  if (!(x0 > 0.0)) throw StructuralError("GBM x0 must be positive");
  if (!std::isfinite(mu)) throw StructuralError("GBM mu must be finite");
}

void SLorenzSystem::validate() const {
  if (!(gamma > 0.0)) throw StructuralError("stochastic Lorenz gamma must be positive");
}

MomentCurve gbm_theoretical_moments(const GbmSystem& sys, std::span<const double> times) {
  sys.validate();
  MomentCurve c;
  c.kind = MomentCurve::Kind::Theoretical;
  for (double t : times) {
    if (!(t >= 0.0)) throw StructuralError("moment times must be nonnegative");
    const double growth = std::exp(sys.mu * t);
    c.times.push_back(t);
    c.mean.push_back({sys.x0 * growth});
    // expm1 keeps the small-t variance accurate.
    c.variance.push_back({sys.x0 * sys.x0 * growth * growth * std::expm1(sys.sigma * sys.sigma * t)});
  }
  return c;
}

SdeModel gbm_as_model(const GbmSystem& sys) {
  sys.validate();
  DriftParams drift = DriftParams::zeros(1);
  drift.a1(0, 0) = sys.mu;
  DiffusionParams diffusion = DiffusionParams::zeros(1);
  diffusion.b(0, 0) = sys.sigma;
  return SdeModel(std::move(drift), std::move(diffusion));
}

namespace {

void require3(std::span<const double> x) {
  if (x.size() != 3) throw StructuralError("stochastic Lorenz state must have dimension 3");
}

}  // namespace

StateVector slorenz_drift(const SLorenzSystem& s, std::span<const double> x) {
  require3(x);
  return {s.sigma * x[1] - (s.sigma + 2.0 / s.gamma) * x[0],
          (s.rho - x[2]) * x[0] - (1.0 + 2.0 / s.gamma) * x[1],
          x[0] * x[1] - (s.beta + 4.0 / s.gamma) * x[2]};
}

std::vector<double> slorenz_diffusion(const SLorenzSystem& s, std::span<const double> x) {
  require3(x);
  const double scale = 1.0 / std::sqrt(s.gamma);
  return {0.0, (s.rho - x[2]) * scale, x[1] * scale};
}

StateVector lorenz63_drift(double sigma, double rho, double beta, std::span<const double> x) {
  require3(x);
  return {sigma * (x[1] - x[0]), x[0] * (rho - x[2]) - x[1], x[0] * x[1] - beta * x[2]};
}

EmbeddedModel slorenz_as_model(const SLorenzSystem& s, bool affine) {
  s.validate();
  DriftParams drift = DriftParams::zeros(3);
  drift.a1 = Matrix::from_rows({{-(s.sigma + 2.0 / s.gamma), s.sigma, 0.0},
                                {s.rho, -(1.0 + 2.0 / s.gamma), 0.0},
                                {0.0, 0.0, -(s.beta + 4.0 / s.gamma)}});
  // y row: −x·z ; z row: +x·y
  drift.a2(1, 0) = -1.0;
  drift.a3(1, 2) = 1.0;
  drift.a2(2, 0) = 1.0;
  drift.a3(2, 1) = 1.0;

  const double scale = 1.0 / std::sqrt(s.gamma);
  DiffusionParams diffusion = DiffusionParams::zeros(3, affine);
  diffusion.b(1, 2) = -scale;
  diffusion.b(2, 1) = scale;
  if (affine) (*diffusion.bias)[1] = s.rho * scale;
  return {SdeModel(std::move(drift), std::move(diffusion)), !affine};
}

void SLorenzDynamics::drift(std::span<const double> x, std::span<double> out) const {
  const auto f = slorenz_drift(sys_, x);
  std::copy(f.begin(), f.end(), out.begin());
}

void SLorenzDynamics::noise_scale(std::span<const double> x, std::span<double> out) const {
  const auto l = slorenz_diffusion(sys_, x);
  std::copy(l.begin(), l.end(), out.begin());
}

SimConfig slorenz_sim_config(std::size_t steps, double tau, std::uint64_t seed) {
  return SimConfig{steps, tau, seed, {1.0, 1.0, 1.0}, 5000};
}

SimConfig gbm_sim_config(const GbmSystem& sys, std::size_t steps, double tau, std::uint64_t seed) {
  return SimConfig{steps, tau, seed, {sys.x0}, 0};
}

}  // namespace sdeid
