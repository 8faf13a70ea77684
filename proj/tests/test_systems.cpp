#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "sdeid/systems.hpp"

using namespace sdeid;
using testing::rel_err;

namespace {

std::vector<double> random_state(NormalSampler& rng, double half_width) {
  return {half_width * (2.0 * rng.uniform() - 1.0), half_width * (2.0 * rng.uniform() - 1.0),
          half_width * (2.0 * rng.uniform() - 1.0)};
}

}  // namespace

TEST_SUITE("systems") {

TEST_CASE("GBM theoretical moments") {
  const GbmSystem g{0.5, 1.0, 1.0};
  const std::vector<double> times{0.0, 1.0};
  const MomentCurve c = gbm_theoretical_moments(g, times);
  CHECK(c.kind == MomentCurve::Kind::Theoretical);
  CHECK(c.mean[0][0] == 1.0);
  CHECK(c.variance[0][0] == 0.0);
  CHECK(c.mean[1][0] == doctest::Approx(1.64872).epsilon(1e-5));
  CHECK(c.variance[1][0] == doctest::Approx(4.67077).epsilon(1e-5));

  const MomentCurve still = gbm_theoretical_moments(GbmSystem{0.5, 0.0, 2.0}, times);
  CHECK(still.variance[1][0] == 0.0);
  CHECK(still.mean[1][0] == doctest::Approx(2.0 * std::exp(0.5)));
}

TEST_CASE("GBM variance is nonnegative and increasing in t") {
  std::vector<double> grid;
  for (int k = 0; k <= 200; ++k) grid.push_back(0.01 * k);
  for (double mu : {0.0, 0.5, 2.0})
    for (double sigma : {0.1, 1.0}) {
      const MomentCurve c = gbm_theoretical_moments(GbmSystem{mu, sigma, 1.0}, grid);
      CHECK(c.variance[0][0] >= 0.0);
      for (std::size_t k = 1; k < grid.size(); ++k) CHECK(c.variance[k][0] > c.variance[k - 1][0]);
    }
}

TEST_CASE("GBM validation") {
  CHECK_THROWS_AS(gbm_theoretical_moments(GbmSystem{0.5, -1.0, 1.0}, std::vector<double>{1.0}), StructuralError);
  CHECK_THROWS_AS(gbm_theoretical_moments(GbmSystem{0.5, 1.0, 1.0}, std::vector<double>{-1.0}), StructuralError);
  CHECK_THROWS_AS(gbm_as_model(GbmSystem{0.5, 1.0, 0.0}), StructuralError);
  const SdeModel m = gbm_as_model(GbmSystem{0.5, 1.0, 1.0});
  CHECK(m.drift().a1(0, 0) == 0.5);
  CHECK(m.diffusion().b(0, 0) == 1.0);
}

TEST_CASE("stochastic Lorenz drift and diffusion examples") {
  const SLorenzSystem s;
  const std::vector<double> one{1.0, 1.0, 1.0};
  const auto f = slorenz_drift(s, one);
  CHECK(f[0] == doctest::Approx(-0.2));
  CHECK(f[1] == doctest::Approx(25.8));
  CHECK(f[2] == doctest::Approx(1.0 - 8.0 / 3.0 - 0.4));
  const auto l = slorenz_diffusion(s, one);
  CHECK(l[0] == 0.0);
  CHECK(l[1] == doctest::Approx(8.5381).epsilon(1e-5));
  CHECK(l[2] == doctest::Approx(0.31623).epsilon(1e-5));

  CHECK(slorenz_diffusion(s, std::vector<double>{3.0, 2.0, 28.0})[1] == 0.0);

  SLorenzSystem quiet = s;
  quiet.gamma = 100.0;
  SLorenzSystem loud = s;
  loud.gamma = 1.0;
  const std::vector<double> x{1.5, -2.0, 7.0};
  const auto lq = slorenz_diffusion(quiet, x), ll = slorenz_diffusion(loud, x);
  CHECK(lq[1] * 10.0 == doctest::Approx(ll[1]));
  CHECK(lq[2] * 10.0 == doctest::Approx(ll[2]));

  CHECK_THROWS_AS(slorenz_drift(s, std::vector<double>{1.0, 2.0}), StructuralError);
  CHECK_THROWS_AS(SLorenzDynamics(SLorenzSystem{10, 28, 8.0 / 3.0, 0.0}), StructuralError);
}

TEST_CASE("property: large gamma recovers deterministic Lorenz-63") {
  SLorenzSystem s;
  s.gamma = 1e9;
  NormalSampler rng(3);
  for (int n = 0; n < 1000; ++n) {
    const auto x = random_state(rng, 30.0);
    const auto f = slorenz_drift(s, x), g = lorenz63_drift(10.0, 28.0, 8.0 / 3.0, x);
    const double scale = std::max({std::abs(g[0]), std::abs(g[1]), std::abs(g[2])});
    for (int i = 0; i < 3; ++i) CHECK(std::abs(f[i] - g[i]) <= 1e-8 * scale);
  }
}

TEST_CASE("property: affine embedding reproduces the system exactly") {
  NormalSampler rng(4);
  for (double gamma : {10.0, 50.0}) {
    SLorenzSystem s;
    s.gamma = gamma;
    const EmbeddedModel e = slorenz_as_model(s, true);
    CHECK_FALSE(e.approximate);
    for (int n = 0; n < 1000; ++n) {
      const auto x = random_state(rng, 40.0);
      const auto f = drift_eval(e.model, x), g = slorenz_drift(s, x);
      const auto l = diffusion_eval(e.model, x), m = slorenz_diffusion(s, x);
      for (int i = 0; i < 3; ++i) {
        CHECK(std::abs(f[i] - g[i]) <= 1e-12 * std::max(1.0, std::abs(g[i])));
        CHECK(std::abs(l[i] - m[i]) <= 1e-12 * std::max(1.0, std::abs(m[i])));
      }
    }
  }
}

TEST_CASE("non-affine embedding: exact drift, diffusion off by rho/sqrt(gamma) at z = 0") {
  const SLorenzSystem s;
  const EmbeddedModel e = slorenz_as_model(s, false);
  CHECK(e.approximate);
  CHECK_FALSE(e.model.affine());
  const std::vector<double> x{0.0, 0.0, s.rho};
  // the true y noise vanishes at z = rho while the bias-free model gives -rho/sqrt(gamma)
  CHECK(slorenz_diffusion(s, x)[1] == 0.0);
  CHECK(diffusion_eval(e.model, x)[1] == doctest::Approx(-s.rho / std::sqrt(s.gamma)));
  const std::vector<double> z0{0.0, 0.0, 0.0};
  CHECK(std::abs(diffusion_eval(e.model, z0)[1] - slorenz_diffusion(s, z0)[1]) ==
        doctest::Approx(s.rho / std::sqrt(s.gamma)));

  NormalSampler rng(5);
  for (int n = 0; n < 200; ++n) {
    const auto x = random_state(rng, 40.0);
    const auto f = drift_eval(e.model, x), g = slorenz_drift(s, x);
    for (int i = 0; i < 3; ++i) CHECK(std::abs(f[i] - g[i]) <= 1e-12 * std::max(1.0, std::abs(g[i])));
  }
}

TEST_CASE("effective truth coefficients") {
  SLorenzSystem s;
  s.gamma = 50.0;
  const auto c = effective_coefficients(slorenz_as_model(s, true).model);
  CHECK(c.linear(0, 0) == doctest::Approx(-10.04));
  CHECK(c.linear(0, 1) == 10.0);
  CHECK(c.linear(1, 0) == 28.0);
  CHECK(c.linear(1, 1) == doctest::Approx(-1.04));
  CHECK(c.linear(2, 2) == doctest::Approx(-(8.0 / 3.0 + 0.08)));
  const std::size_t xz = EffectiveCoefficients::pair_index(3, 0, 2);
  const std::size_t xy = EffectiveCoefficients::pair_index(3, 0, 1);
  CHECK(c.quadratic[1][xz] == -1.0);
  CHECK(c.quadratic[2][xy] == 1.0);
  double others = 0.0;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t p = 0; p < 6; ++p)
      if (!(i == 1 && p == xz) && !(i == 2 && p == xy)) others += std::abs(c.quadratic[i][p]);
  CHECK(others == 0.0);
}

TEST_CASE("default simulation settings") {
  const SimConfig sl = slorenz_sim_config(10000, 1e-3, 9);
  CHECK(sl.burn_in == 5000);
  CHECK(sl.initial_state == StateVector{1.0, 1.0, 1.0});
  const SimConfig g = gbm_sim_config(GbmSystem{0.5, 1.0, 2.0}, 3000, 1e-3, 9);
  CHECK(g.burn_in == 0);
  CHECK(g.initial_state == StateVector{2.0});
}

TEST_CASE("shared noise drives y and z with one increment") {
  SLorenzSystem s;
  s.shared_noise = true;
  const SLorenzDynamics dyn(s);
  CHECK(dyn.shared_noise());
  const Trajectory t = simulate(dyn, SimConfig{200, 1e-3, 1, {1.0, 1.0, 1.0}, 0});
  // with one increment the normalized noise parts of y and z coincide
  for (std::size_t k = 0; k < 200; ++k) {
    const auto x = t.state(k), y = t.state(k + 1);
    const auto f = slorenz_drift(s, x);
    const auto l = slorenz_diffusion(s, x);
    if (std::abs(l[1]) < 1e-3 || std::abs(l[2]) < 1e-3) continue;
    const double dy = (y[1] - x[1] - 1e-3 * f[1]) / l[1];
    const double dz = (y[2] - x[2] - 1e-3 * f[2]) / l[2];
    CHECK(dy == doctest::Approx(dz).epsilon(1e-6));
  }
  CHECK_FALSE(SLorenzDynamics(SLorenzSystem{}).shared_noise());
}

}  // TEST_SUITE
