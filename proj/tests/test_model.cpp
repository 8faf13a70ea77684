#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "helpers.hpp"
#include "sdeid/model.hpp"
#include "sdeid/systems.hpp"

using namespace sdeid;
using testing::rel_err;

TEST_SUITE("model") {

TEST_CASE("drift_eval: pure linear GBM drift") {
  SdeModel m = SdeModel::zeros(1);
  DriftParams d = m.drift();
  d.a1(0, 0) = 0.5;
  m = SdeModel(d, m.diffusion());
  const std::vector<double> x{2.0};
  CHECK(drift_eval(m, x)[0] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("drift_eval: one bilinear term gives x_j * x_k") {
  DriftParams d = DriftParams::zeros(3);
  d.a2(1, 0) = 1.0;  // row 1 picks x0 ...
  d.a3(1, 2) = 1.0;  // ... times x2
  const SdeModel m(d, DiffusionParams::zeros(3));
  const std::vector<double> x{1.7, -0.3, 2.5};
  const auto f = drift_eval(m, x);
  CHECK(f[0] == 0.0);
  CHECK(f[1] == doctest::Approx(1.7 * 2.5));
  CHECK(f[2] == 0.0);
}

TEST_CASE("drift_eval: stochastic Lorenz truth at (1,1,1)") {
  const SdeModel m = slorenz_as_model(SLorenzSystem{}, false).model;
  const std::vector<double> x{1.0, 1.0, 1.0};
  const auto f = drift_eval(m, x);
  CHECK(f[0] == doctest::Approx(-0.2).epsilon(1e-12));
  CHECK(f[1] == doctest::Approx(25.8).epsilon(1e-12));
  CHECK(f[2] == doctest::Approx(1.0 - 8.0 / 3.0 - 0.4).epsilon(1e-12));
}

TEST_CASE("diffusion_eval examples") {
  SdeModel g = gbm_as_model(GbmSystem{0.5, 1.0, 1.0});
  CHECK(diffusion_eval(g, std::vector<double>{3.0})[0] == 3.0);

  const SdeModel z = SdeModel::zeros(3);
  for (double v : diffusion_eval(z, std::vector<double>{4.0, -2.0, 9.0})) CHECK(v == 0.0);

  const SdeModel sl = slorenz_as_model(SLorenzSystem{}, true).model;
  const auto l = diffusion_eval(sl, std::vector<double>{1.0, 1.0, 1.0});
  CHECK(l[0] == 0.0);
  CHECK(l[1] == doctest::Approx(27.0 / std::sqrt(10.0)).epsilon(1e-12));
  CHECK(l[1] == doctest::Approx(8.538).epsilon(1e-4));
  CHECK(l[2] == doctest::Approx(0.3162).epsilon(1e-4));
}

TEST_CASE("dimension mismatch is a structural error") {
  const SdeModel m = SdeModel::zeros(3);
  CHECK_THROWS_AS(drift_eval(m, std::vector<double>{1.0, 2.0}), StructuralError);
  CHECK_THROWS_AS(diffusion_eval(m, std::vector<double>{1.0}), StructuralError);
  CHECK_THROWS_AS(SdeModel(DriftParams::zeros(2), DiffusionParams::zeros(3)), StructuralError);
  DiffusionParams bad = DiffusionParams::zeros(2);
  bad.variance_floor = 0.0;
  CHECK_THROWS_AS(SdeModel(DriftParams::zeros(2), bad), StructuralError);
  bad.variance_floor = 1e-6;
  bad.bias = std::vector<double>{1.0};
  CHECK_THROWS_AS(SdeModel(DriftParams::zeros(2), bad), StructuralError);
}

TEST_CASE("transition_density examples") {
  const SdeModel g = gbm_as_model(GbmSystem{0.5, 1.0, 1.0});
  const auto tg = transition_density(g, std::vector<double>{1.0}, 1e-3);
  CHECK(tg.mean[0] == doctest::Approx(1.0005).epsilon(1e-14));
  // the default floor adds tau * 1e-6 to the floor-free value 1e-3
  CHECK(tg.variance[0] == doctest::Approx(1e-3 * (1.0 + 1e-6)).epsilon(1e-14));
  CHECK(std::abs(tg.variance[0] - 1e-3) < 1e-8);

  const SdeModel z = SdeModel::zeros(3);
  const std::vector<double> x{0.3, -1.0, 2.0};
  const auto tz = transition_density(z, x, 1.0);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(tz.mean[i] == x[i]);
    CHECK(tz.variance[i] == doctest::Approx(1e-6).epsilon(1e-15));
  }

  const SdeModel sl = slorenz_as_model(SLorenzSystem{}, false).model;
  const auto ts = transition_density(sl, std::vector<double>{3.0, -2.0, 20.0}, 1e-3);
  CHECK(ts.variance[0] == doctest::Approx(1e-9).epsilon(1e-15));

  CHECK_THROWS_AS(transition_density(z, x, 0.0), StructuralError);
  CHECK_THROWS_AS(transition_density(z, x, -1.0), StructuralError);
}

TEST_CASE("effective coefficients: single cross term and pair layout") {
  DriftParams d = DriftParams::zeros(3);
  d.a2(0, 0) = 1.0;
  d.a3(0, 1) = 1.0;
  const auto e = effective_coefficients(SdeModel(d, DiffusionParams::zeros(3)));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t p = 0; p < EffectiveCoefficients::pair_count(3); ++p)
      CHECK(e.quadratic[i][p] == (i == 0 && p == EffectiveCoefficients::pair_index(3, 0, 1) ? 1.0 : 0.0));
  CHECK(EffectiveCoefficients::pair_index(3, 0, 1) == EffectiveCoefficients::pair_index(3, 1, 0));
  CHECK(EffectiveCoefficients::pair_count(3) == 6);
  CHECK(EffectiveCoefficients::pair_index(3, 2, 2) == 5);
}

TEST_CASE("effective coefficients: diffusion row sign canonicalization") {
  DiffusionParams p = DiffusionParams::zeros(3);
  p.b(1, 0) = -1.0;
  p.b(1, 2) = 2.0;
  p.b(2, 1) = -0.0;
  const auto e = effective_coefficients(SdeModel(DriftParams::zeros(3), p));
  CHECK(e.diffusion_linear(1, 0) == 1.0);
  CHECK(e.diffusion_linear(1, 1) == 0.0);
  CHECK(e.diffusion_linear(1, 2) == -2.0);
}

TEST_CASE("effective coefficients: quadratic formula matches the definition") {
  const SdeModel m = testing::random_model(11, 3, false);
  const auto e = effective_coefficients(m);
  const auto& a2 = m.drift().a2;
  const auto& a3 = m.drift().a3;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = j; k < 3; ++k) {
        const double expect = j == k ? a2(i, j) * a3(i, j) : a2(i, j) * a3(i, k) + a2(i, k) * a3(i, j);
        CHECK(e.quadratic[i][EffectiveCoefficients::pair_index(3, j, k)] == doctest::Approx(expect).epsilon(1e-15));
      }
}

TEST_CASE("property: gauge invariance of drift and effective coefficients") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const SdeModel m = testing::random_model(100 + seed, 3, seed % 2 == 0);
    NormalSampler rng(seed);
    const std::size_t row = seed % 3;
    double c = 0.1 + 5.0 * rng.uniform();
    if (seed % 4 == 1) c = -c;
    DriftParams d = m.drift();
    for (std::size_t j = 0; j < 3; ++j) {
      d.a2(row, j) *= c;
      d.a3(row, j) /= c;
    }
    const SdeModel g(d, m.diffusion());
    const std::vector<double> x{3.0 * rng.uniform() - 1.5, 20.0 * rng.uniform(), -4.0 * rng.uniform()};
    const auto f0 = drift_eval(m, x), f1 = drift_eval(g, x);
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(f0[i] - f1[i]) <= 1e-12 * std::max(1.0, std::abs(f0[i])));
    const auto e0 = effective_coefficients(m), e1 = effective_coefficients(g);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t p = 0; p < 6; ++p)
        CHECK(std::abs(e0.quadratic[i][p] - e1.quadratic[i][p]) <= 1e-12 * std::max(1.0, std::abs(e0.quadratic[i][p])));
  }
}

TEST_CASE("property: negating a diffusion row leaves the transition unchanged exactly") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const bool affine = seed % 2 == 1;
    const SdeModel m = testing::random_model(200 + seed, 3, affine);
    DiffusionParams p = m.diffusion();
    const std::size_t row = seed % 3;
    for (std::size_t j = 0; j < 3; ++j) p.b(row, j) = -p.b(row, j);
    if (p.bias) (*p.bias)[row] = -(*p.bias)[row];
    const SdeModel n(m.drift(), p);
    NormalSampler rng(seed);
    const std::vector<double> x{rng.standard_normal(), rng.standard_normal(), rng.standard_normal()};
    const auto t0 = transition_density(m, x, 1e-2), t1 = transition_density(n, x, 1e-2);
    CHECK(t0.mean == t1.mean);
    CHECK(t0.variance == t1.variance);
    const auto e0 = effective_coefficients(m), e1 = effective_coefficients(n);
    CHECK(e0.diffusion_linear == e1.diffusion_linear);
    if (affine) CHECK(*e0.diffusion_bias == *e1.diffusion_bias);
  }
}

TEST_CASE("property: drift is a polynomial of degree two") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const SdeModel m = testing::random_model(300 + seed, 3, false);
    DriftParams lin = m.drift(), quad = m.drift();
    lin.a2 = Matrix(3, 3);
    lin.a3 = Matrix(3, 3);
    quad.a1 = Matrix(3, 3);
    const SdeModel ml(lin, m.diffusion()), mq(quad, m.diffusion());
    NormalSampler rng(seed);
    const std::vector<double> x{rng.standard_normal(), rng.standard_normal(), rng.standard_normal()};
    const double a = 4.0 * rng.uniform() - 2.0;
    const std::vector<double> ax{a * x[0], a * x[1], a * x[2]};
    const auto q = drift_eval(mq, x), qa = drift_eval(mq, ax);
    const auto l = drift_eval(ml, x), la = drift_eval(ml, ax);
    const auto f = drift_eval(m, x);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(std::abs(qa[i] - a * a * q[i]) <= 1e-10 * std::max(1e-12, std::abs(a * a * q[i])));
      CHECK(std::abs(la[i] - a * l[i]) <= 1e-10 * std::max(1e-12, std::abs(a * l[i])));
      CHECK(f[i] == doctest::Approx(l[i] + q[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("property: transition variance is strictly positive") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const SdeModel m = testing::random_model(400 + seed, 3, seed % 2 == 0);
    // a state on the null space of row 0 of B drives that row to the floor
    const auto& b = m.diffusion().b;
    const std::vector<double> x{b(0, 1), -b(0, 0), 0.0};
    const auto t = transition_density(m, x, 1e-3);
    for (double v : t.variance) CHECK(v >= 1e-3 * m.diffusion().variance_floor);
  }
}

TEST_CASE("JSON round trip is lossless") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const SdeModel m = testing::random_model(500 + seed, 1 + seed % 3, seed % 2 == 0, 1e3, 1e-4 * (1 + seed));
    const SdeModel r = model_from_json(nlohmann::json::parse(model_to_json(m).dump()));
    CHECK(r.drift().a1 == m.drift().a1);
    CHECK(r.drift().a2 == m.drift().a2);
    CHECK(r.drift().a3 == m.drift().a3);
    CHECK(r.diffusion().b == m.diffusion().b);
    CHECK(r.diffusion().bias == m.diffusion().bias);
    CHECK(r.diffusion().variance_floor == m.diffusion().variance_floor);
  }
  const auto dir = testing::scratch_dir("model_json");
  const SdeModel m = testing::random_model(9, 3, true);
  save_model(m, (dir / "m.json").string());
  const SdeModel r = load_model((dir / "m.json").string());
  CHECK(r.drift().a2 == m.drift().a2);
  CHECK(*r.diffusion().bias == *m.diffusion().bias);
}

TEST_CASE("malformed model files are structural errors") {
  CHECK_THROWS_AS(model_from_json(nlohmann::json::parse(R"({"dim": 2, "a1": [[1,2]]})")), StructuralError);
  CHECK_THROWS_AS(load_model("does/not/exist.json"), StructuralError);
  const auto dir = testing::scratch_dir("model_bad");
  {
    std::ofstream out(dir / "bad.json");
    out << "{ not json";
  }
  CHECK_THROWS_AS(load_model((dir / "bad.json").string()), StructuralError);
}

}  // TEST_SUITE
