#include <doctest.h>

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "helpers.hpp"
#include "sdeid/integrate.hpp"
#include "sdeid/systems.hpp"

using namespace sdeid;

namespace {

// dx = dβ
class UnitNoise final : public Dynamics {
 public:
  std::size_t dim() const override { return 1; }
  void drift(std::span<const double>, std::span<double> out) const override { out[0] = 0.0; }
  void noise_scale(std::span<const double>, std::span<double> out) const override { out[0] = 1.0; }
};

// Noise only at the exact origin, then explosive growth for positive states.
// Starting at 0, members whose first increment is positive overflow.
class SignSplit final : public Dynamics {
 public:
  std::size_t dim() const override { return 1; }
  void drift(std::span<const double> x, std::span<double> out) const override {
    out[0] = x[0] > 0.0 ? 1e3 * x[0] : 0.0;
  }
  void noise_scale(std::span<const double> x, std::span<double> out) const override {
    out[0] = x[0] == 0.0 ? 1.0 : 0.0;
  }
};

SdeModel gbm(double mu, double sigma) { return gbm_as_model(GbmSystem{mu, sigma, 1.0}); }

}  // namespace

TEST_SUITE("integrate") {

TEST_CASE("em_step examples") {
  const std::vector<double> x{1.0}, f{0.5}, s{1.0};
  CHECK(em_step(f, s, x, 1e-3, std::vector<double>{0.0})[0] == doctest::Approx(1.0005).epsilon(1e-15));
  CHECK(em_step(f, s, x, 1e-3, std::vector<double>{0.02})[0] == doctest::Approx(1.0205).epsilon(1e-15));
  const std::vector<double> z{0.0, 0.0}, y{3.0, -4.0};
  CHECK(em_step(z, z, y, 0.1, std::vector<double>{0.7, -0.2}) == y);
}

TEST_CASE("em_step reports divergence with the step index") {
  const std::vector<double> x{1e308}, f{1e308}, s{0.0};
  try {
    em_step(f, s, x, 10.0, std::vector<double>{0.0}, 17);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(e.step() == 17);
    CHECK(std::string(e.what()).find("17") != std::string::npos);
  }
}

TEST_CASE("simulate: length, start time and determinism") {
  SimConfig cfg{3000, 1e-3, 7, {1.0}, 0};
  const Trajectory a = simulate(gbm(0.5, 1.0), cfg), b = simulate(gbm(0.5, 1.0), cfg);
  CHECK(a.size() == 3001);
  CHECK(a.data == b.data);
  CHECK(a.state(0)[0] == 1.0);
  cfg.seed = 8;
  CHECK(simulate(gbm(0.5, 1.0), cfg).data != a.data);

  const Trajectory sl = simulate(SLorenzDynamics(SLorenzSystem{}), slorenz_sim_config(100, 1e-3, 1));
  CHECK(sl.size() == 101);
  CHECK(sl.start_time == doctest::Approx(5.0));
}

TEST_CASE("simulate: burn-in continues the same stream") {
  SimConfig full{150, 1e-3, 3, {1.0, 1.0, 1.0}, 0};
  SimConfig tail = full;
  tail.burn_in = 50;
  tail.steps = 100;
  const SLorenzDynamics dyn(SLorenzSystem{});
  const Trajectory a = simulate(dyn, full), b = simulate(dyn, tail);
  for (std::size_t k = 0; k <= 100; ++k)
    for (std::size_t i = 0; i < 3; ++i) CHECK(b.state(k)[i] == a.state(k + 50)[i]);
}

TEST_CASE("simulate: zero diffusion is the Euler recursion") {
  SimConfig cfg{1000, 1e-3, 99, {1.0}, 0};
  const Trajectory t = simulate(gbm(0.5, 0.0), cfg);
  double x = 1.0;
  for (std::size_t k = 0; k < t.size(); ++k) {
    CHECK(t.state(k)[0] == x);
    x = x + 1e-3 * (0.5 * x);
  }
  // with the closed form of the same recursion
  CHECK(t.state(1000)[0] == doctest::Approx(std::pow(1.0005, 1000)).epsilon(1e-12));

  const SdeModel lor = slorenz_as_model(SLorenzSystem{1e1, 28, 8.0 / 3.0, 1e12}, false).model;
  const SdeModel ode(lor.drift(), DiffusionParams::zeros(3));
  SimConfig c3{200, 1e-3, 4, {1.0, 2.0, 3.0}, 0};
  const Trajectory t3 = simulate(ode, c3);
  std::vector<double> y{1.0, 2.0, 3.0};
  for (std::size_t k = 0; k < t3.size(); ++k) {
    for (std::size_t i = 0; i < 3; ++i) CHECK(t3.state(k)[i] == y[i]);
    const auto f = drift_eval(ode, y);
    for (std::size_t i = 0; i < 3; ++i) y[i] = y[i] + 1e-3 * f[i];
  }
}

TEST_CASE("simulate: divergence aborts with the offending step") {
  SimConfig cfg{2000, 1e-2, 1, {1.0}, 0};
  DriftParams d = DriftParams::zeros(1);
  d.a2(0, 0) = 10.0;
  d.a3(0, 0) = 10.0;  // dx = 100 x² dt blows up near t = 0.01
  const SdeModel m(d, DiffusionParams::zeros(1));
  try {
    simulate(m, cfg);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(e.step() > 0);
    CHECK(e.step() < 2000);
  }
}

TEST_CASE("simulate: invalid configurations") {
  const SdeModel m = gbm(0.5, 1.0);
  CHECK_THROWS_AS(simulate(m, SimConfig{0, 1e-3, 1, {1.0}, 0}), StructuralError);
  CHECK_THROWS_AS(simulate(m, SimConfig{10, 0.0, 1, {1.0}, 0}), StructuralError);
  CHECK_THROWS_AS(simulate(m, SimConfig{10, 1e-3, 1, {1.0, 2.0}, 0}), StructuralError);
  CHECK_THROWS_AS(simulate(m, SimConfig{10, 1e-3, 1, {NAN}, 0}), StructuralError);
}

TEST_CASE("property: Brownian increments have mean 0 and variance tau") {
  const double tau = 1e-3;
  const std::size_t T = 20000;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Trajectory t = simulate(UnitNoise(), SimConfig{T, tau, seed, {0.0}, 0});
    double m = 0.0, v = 0.0;
    for (std::size_t k = 0; k < T; ++k) m += t.state(k + 1)[0] - t.state(k)[0];
    m /= static_cast<double>(T);
    for (std::size_t k = 0; k < T; ++k) {
      const double d = t.state(k + 1)[0] - t.state(k)[0] - m;
      v += d * d;
    }
    v /= static_cast<double>(T - 1);
    CHECK(std::abs(m) <= 4.0 / std::sqrt(static_cast<double>(T)) * std::sqrt(tau));
    CHECK(std::abs(v - tau) <= 0.1 * tau);
  }
}

TEST_CASE("ensemble: member k uses stream k") {
  SimConfig cfg{200, 1e-3, 77, {1.0}, 0};
  const SdeModel m = gbm(0.5, 1.0);
  const Ensemble e = simulate_ensemble(ModelDynamics(m), cfg, 3);
  REQUIRE(e.trajectories.size() == 3);
  SimConfig c0 = cfg;
  c0.seed = stream_seed(77, 0);
  CHECK(e.trajectories[0].data == simulate(m, c0).data);
  CHECK(e.trajectories[0].data != e.trajectories[1].data);
  const Ensemble one = simulate_ensemble(ModelDynamics(m), cfg, 1);
  CHECK(one.trajectories[0].data == e.trajectories[0].data);
  CHECK_THROWS_AS(simulate_ensemble(ModelDynamics(m), cfg, 0), StructuralError);
}

TEST_CASE("ensemble: divergent members are reported, the rest kept") {
  const Ensemble e = simulate_ensemble(SignSplit(), SimConfig{400, 1e-2, 5, {0.0}, 0}, 64);
  CHECK(e.failures.size() > 0);
  CHECK(e.trajectories.size() > 0);
  CHECK(e.failures.size() + e.trajectories.size() == 64);
  CHECK(e.indices.size() == e.trajectories.size());
  for (const auto& f : e.failures)
    CHECK(std::find(e.indices.begin(), e.indices.end(), f.index) == e.indices.end());
  for (const auto& t : e.trajectories) CHECK(t.state(t.size() - 1)[0] <= 0.0);
}

TEST_CASE("ensemble moments: parallel kernel matches the serial reference") {
  const SdeModel m = gbm(0.5, 1.0);
  const SimConfig cfg{500, 1e-3, 11, {1.0}, 0};
  const MomentCurve p = ensemble_moments(ModelDynamics(m), cfg, 300, 25);
  const MomentCurve r = ensemble_moments_reference(ModelDynamics(m), cfg, 300, 25);
  REQUIRE(p.times.size() == r.times.size());
  for (std::size_t k = 0; k < p.times.size(); ++k) {
    CHECK(p.times[k] == r.times[k]);
    CHECK(testing::rel_err(p.mean[k][0], r.mean[k][0]) < 1e-12);
    if (r.variance[k][0] > 0) CHECK(testing::rel_err(p.variance[k][0], r.variance[k][0]) < 1e-10);
  }
}

TEST_CASE("ensemble moments: thread count does not change the result") {
  const SdeModel m = gbm(0.5, 1.0);
  const SimConfig cfg{200, 1e-3, 12, {1.0}, 0};
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  const MomentCurve a = ensemble_moments(ModelDynamics(m), cfg, 500, 10);
  omp_set_num_threads(4);
  const MomentCurve b = ensemble_moments(ModelDynamics(m), cfg, 500, 10);
  omp_set_num_threads(saved);
  CHECK(a.mean == b.mean);
  CHECK(a.variance == b.variance);
}

TEST_CASE("GBM ensemble matches closed-form moments at t = 1") {
  const SimConfig cfg{1000, 1e-3, 2024, {1.0}, 0};
  const MomentCurve c = ensemble_moments(ModelDynamics(gbm(0.5, 1.0)), cfg, 10000, 1000);
  const double mean = std::exp(0.5), var = std::exp(1.0) * (std::exp(1.0) - 1.0);
  CHECK(c.times.back() == doctest::Approx(1.0));
  CHECK(std::abs(c.mean.back()[0] - mean) < 3.0 * std::sqrt(var / 10000.0));
  // sampling error of the variance from the lognormal fourth central moment
  auto raw = [](double k) { return std::exp(0.5 * k + 0.5 * k * k); };
  const double m4 = raw(4) - 4.0 * mean * raw(3) + 6.0 * mean * mean * raw(2) - 3.0 * std::pow(mean, 4);
  const double se_var = std::sqrt((m4 - var * var) / 10000.0);
  CHECK(std::abs(c.variance.back()[0] - var) < 3.0 * se_var);
}

TEST_CASE("property: weak error of the mean shrinks with tau") {
  // strong drift and mild noise so the discretization bias dominates sampling noise
  const SdeModel m = gbm(2.0, 0.1);
  const double exact = std::exp(2.0);
  auto err = [&](double tau, std::size_t steps) {
    const MomentCurve c = ensemble_moments(ModelDynamics(m), SimConfig{steps, tau, 31, {1.0}, 0}, 10000, steps);
    return std::abs(c.mean.back()[0] - exact);
  };
  const double coarse = err(1e-2, 100), fine = err(1e-3, 1000);
  CHECK(fine < coarse);
}

TEST_CASE("trajectory CSV round trip") {
  const Trajectory t = simulate(SLorenzDynamics(SLorenzSystem{}), slorenz_sim_config(50, 1e-3, 9));
  const std::string text = trajectory_to_csv(t);
  CHECK(text.rfind("t,x0,x1,x2\n", 0) == 0);
  const Trajectory r = parse_trajectory_csv(text);
  CHECK(r.data == t.data);
  CHECK(r.dim == 3);
  CHECK(r.tau == doctest::Approx(1e-3).epsilon(1e-9));
  CHECK(r.start_time == doctest::Approx(t.start_time));

  const auto dir = testing::scratch_dir("traj_csv");
  write_trajectory_csv(t, (dir / "t.csv").string());
  CHECK(read_trajectory_csv((dir / "t.csv").string()).data == t.data);
}

TEST_CASE("trajectory CSV errors") {
  CHECK_THROWS_AS(parse_trajectory_csv("t,x0\n0,1\n0.1,2\n0.5,3\n"), StructuralError);
  CHECK_THROWS_AS(parse_trajectory_csv("t,x0\n0,1\n0.1\n"), StructuralError);
  CHECK_THROWS_AS(parse_trajectory_csv("t,x0\n0,abc\n0.1,2\n"), StructuralError);
  CHECK_THROWS_AS(parse_trajectory_csv(""), StructuralError);
  CHECK_THROWS_AS(read_trajectory_csv("no/such/file.csv"), StructuralError);
}

}  // TEST_SUITE
