#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>

#include "sdeid/integrate.hpp"
#include "sdeid/model.hpp"
#include "sdeid/rng.hpp"

namespace testing {

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300});
}

inline sdeid::Matrix random_matrix(sdeid::NormalSampler& rng, std::size_t d, double scale) {
  sdeid::Matrix m(d, d);
  for (double& v : m.data()) v = scale * (2.0 * rng.uniform() - 1.0);
  return m;
}

inline sdeid::SdeModel random_model(std::uint64_t seed, std::size_t d, bool affine, double scale = 0.5,
                                    double floor = 1e-6) {
  sdeid::NormalSampler rng(seed);
  sdeid::DriftParams drift{random_matrix(rng, d, scale), random_matrix(rng, d, scale), random_matrix(rng, d, scale)};
  sdeid::DiffusionParams diff;
  diff.b = random_matrix(rng, d, scale);
  if (affine) {
    diff.bias = std::vector<double>(d);
    for (double& v : *diff.bias) v = scale * (2.0 * rng.uniform() - 1.0);
  }
  diff.variance_floor = floor;
  return sdeid::SdeModel(std::move(drift), std::move(diff));
}

/// Arbitrary (not model-generated) path with states uniform in [-1, 1]^d.
inline sdeid::Trajectory random_path(std::uint64_t seed, std::size_t d, std::size_t pairs, double tau) {
  sdeid::NormalSampler rng(seed);
  sdeid::Trajectory t;
  t.tau = tau;
  t.dim = d;
  t.data.resize((pairs + 1) * d);
  for (double& v : t.data) v = 2.0 * rng.uniform() - 1.0;
  return t;
}

/// Fresh scratch directory under the test working directory.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::current_path() / "scratch" / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testing
