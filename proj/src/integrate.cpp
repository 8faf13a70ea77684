#include "sdeid/integrate.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <omp.h>

#include "sdeid/rng.hpp"

namespace sdeid {

void ModelDynamics::drift(std::span<const double> x, std::span<double> out) const {
  const auto& p = model_.drift();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = dot(p.a1.row(i), x) + dot(p.a2.row(i), x) * dot(p.a3.row(i), x);
}

void ModelDynamics::noise_scale(std::span<const double> x, std::span<double> out) const {
  const auto& p = model_.diffusion();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = dot(p.b.row(i), x);
    if (p.bias) out[i] += (*p.bias)[i];
  }
}

void Trajectory::validate(std::size_t min_states) const {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw StructuralError("trajectory tau must be positive");
  if (dim == 0) throw StructuralError("trajectory dimension must be positive");
  if (data.size() % dim != 0) throw StructuralError("trajectory data is not a whole number of states");
  if (size() < min_states)
    throw StructuralError("trajectory has " + std::to_string(size()) + " states, need at least " +
                          std::to_string(min_states));
  if (!all_finite(data)) throw StructuralError("trajectory contains non-finite values");
}

void SimConfig::validate() const {
  if (steps < 1) throw StructuralError("steps must be at least 1");
  if (!(tau > 0.0) || !std::isfinite(tau)) throw StructuralError("tau must be positive");
  if (initial_state.empty()) throw StructuralError("initial state is empty");
  if (!all_finite(initial_state)) throw StructuralError("initial state must be finite");
}

StateVector em_step(std::span<const double> drift, std::span<const double> noise_scale,
                    std::span<const double> x, double tau, std::span<const double> dbeta,
                    std::size_t step) {
  StateVector next(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    next[i] = x[i] + tau * drift[i] + noise_scale[i] * dbeta[i];
    if (!std::isfinite(next[i]))
      throw DivergenceError(step, "integration diverged at step " + std::to_string(step));
  }
  return next;
}

namespace {

// Advances `x` in place; the hot loop behind simulate and ensemble_moments.
class EmIntegrator {
 public:
  EmIntegrator(const Dynamics& dynamics, double tau, std::uint64_t seed)
      : dyn_(dynamics), tau_(tau), sqrt_tau_(std::sqrt(tau)), sampler_(seed),
        f_(dynamics.dim()), l_(dynamics.dim()), db_(dynamics.dim()) {}

  void step(std::span<double> x, std::size_t index) {
    dyn_.drift(x, f_);
    dyn_.noise_scale(x, l_);
    if (dyn_.shared_noise()) {
      const double w = sqrt_tau_ * sampler_.standard_normal();
      for (double& v : db_) v = w;
    } else {
      for (double& v : db_) v = sqrt_tau_ * sampler_.standard_normal();
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] += tau_ * f_[i] + l_[i] * db_[i];
      if (!std::isfinite(x[i]))
        throw DivergenceError(index, "integration diverged at step " + std::to_string(index));
    }
  }

 private:
  const Dynamics& dyn_;
  double tau_;
  double sqrt_tau_;
  NormalSampler sampler_;
  std::vector<double> f_, l_, db_;
};

void check_config(const Dynamics& dynamics, const SimConfig& cfg) {
  cfg.validate();
  if (cfg.initial_state.size() != dynamics.dim())
    throw StructuralError("initial state has dimension " + std::to_string(cfg.initial_state.size()) +
                          ", dynamics expects " + std::to_string(dynamics.dim()));
}

}  // namespace

Trajectory simulate(const Dynamics& dynamics, const SimConfig& cfg) {
  check_config(dynamics, cfg);
  const std::size_t d = dynamics.dim();
  EmIntegrator em(dynamics, cfg.tau, cfg.seed);
  StateVector x = cfg.initial_state;
  for (std::size_t k = 0; k < cfg.burn_in; ++k) em.step(x, k + 1);

  Trajectory traj;
  traj.tau = cfg.tau;
  traj.dim = d;
  traj.start_time = static_cast<double>(cfg.burn_in) * cfg.tau;
  traj.data.resize((cfg.steps + 1) * d);
  std::copy(x.begin(), x.end(), traj.data.begin());
  for (std::size_t k = 1; k <= cfg.steps; ++k) {
    em.step(x, cfg.burn_in + k);
    std::copy(x.begin(), x.end(), traj.data.begin() + static_cast<std::ptrdiff_t>(k * d));
  }
  return traj;
}

Trajectory simulate(const SdeModel& model, const SimConfig& cfg) {
  return simulate(ModelDynamics(model), cfg);
}

Ensemble simulate_ensemble(const Dynamics& dynamics, const SimConfig& cfg, std::size_t n_traj) {
  if (n_traj < 1) throw StructuralError("n_traj must be at least 1");
  check_config(dynamics, cfg);
  std::vector<std::optional<Trajectory>> slots(n_traj);
  std::vector<std::optional<EnsembleFailure>> failed(n_traj);

#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(n_traj); ++k) {
    SimConfig member = cfg;
    member.seed = stream_seed(cfg.seed, static_cast<std::uint64_t>(k));
    try {
      slots[k] = simulate(dynamics, member);
    } catch (const DivergenceError& e) {
      failed[k] = EnsembleFailure{static_cast<std::size_t>(k), e.step(), e.what()};
    }
  }

  Ensemble out;
  for (std::size_t k = 0; k < n_traj; ++k) {
    if (slots[k]) {
      out.trajectories.push_back(std::move(*slots[k]));
      out.indices.push_back(k);
    } else {
      out.failures.push_back(*failed[k]);
    }
  }
  return out;
}

namespace {

// Running count/mean/M2 per (time, component), merged with Chan's formula.
struct MomentAccumulator {
  std::size_t count = 0;
  std::vector<double> mean;
  std::vector<double> m2;

  explicit MomentAccumulator(std::size_t n = 0) : mean(n, 0.0), m2(n, 0.0) {}

  void add_path(std::span<const double> values) {
    ++count;
    const double n = static_cast<double>(count);
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double delta = values[i] - mean[i];
      mean[i] += delta / n;
      m2[i] += delta * (values[i] - mean[i]);
    }
  }

  void merge(const MomentAccumulator& other) {
    if (other.count == 0) return;
    if (count == 0) {
      *this = other;
      return;
    }
    const double na = static_cast<double>(count), nb = static_cast<double>(other.count);
    const double n = na + nb;
    for (std::size_t i = 0; i < mean.size(); ++i) {
      const double delta = other.mean[i] - mean[i];
      mean[i] += delta * nb / n;
      m2[i] += other.m2[i] + delta * delta * na * nb / n;
    }
    count += other.count;
  }
};

std::vector<std::size_t> recorded_indices(std::size_t steps, std::size_t stride) {
  std::vector<std::size_t> idx;
  for (std::size_t k = 0; k <= steps; k += stride) idx.push_back(k);
  if (idx.back() != steps) idx.push_back(steps);
  return idx;
}

MomentCurve to_curve(const MomentAccumulator& acc, const std::vector<std::size_t>& idx,
                     const SimConfig& cfg, std::size_t d) {
  MomentCurve curve;
  curve.kind = MomentCurve::Kind::Empirical;
  const double start = static_cast<double>(cfg.burn_in) * cfg.tau;
  for (std::size_t r = 0; r < idx.size(); ++r) {
    curve.times.push_back(start + static_cast<double>(idx[r]) * cfg.tau);
    std::vector<double> m(d), v(d);
    for (std::size_t i = 0; i < d; ++i) {
      m[i] = acc.mean[r * d + i];
      v[i] = acc.count > 1 ? acc.m2[r * d + i] / static_cast<double>(acc.count - 1) : 0.0;
    }
    curve.mean.push_back(std::move(m));
    curve.variance.push_back(std::move(v));
  }
  return curve;
}

}  // namespace

MomentCurve ensemble_moments(const Dynamics& dynamics, const SimConfig& cfg, std::size_t n_traj,
                             std::size_t stride, std::size_t* failures) {
  if (n_traj < 1) throw StructuralError("n_traj must be at least 1");
  if (stride < 1) throw StructuralError("stride must be at least 1");
  check_config(dynamics, cfg);
  const std::size_t d = dynamics.dim();
  const auto idx = recorded_indices(cfg.steps, stride);

  // Fixed chunking of members keeps the merge order independent of threads.
  constexpr std::size_t kChunk = 64;
  const std::size_t n_chunks = (n_traj + kChunk - 1) / kChunk;
  std::vector<MomentAccumulator> partial(n_chunks, MomentAccumulator(idx.size() * d));
  std::vector<std::size_t> chunk_failures(n_chunks, 0);

#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(n_chunks); ++c) {
    std::vector<double> row(idx.size() * d);
    StateVector x(d);
    for (std::size_t k = c * kChunk; k < std::min(n_traj, (c + 1) * kChunk); ++k) {
      EmIntegrator em(dynamics, cfg.tau, stream_seed(cfg.seed, k));
      x = cfg.initial_state;
      try {
        for (std::size_t s = 0; s < cfg.burn_in; ++s) em.step(x, s + 1);
        std::size_t next = 0;
        for (std::size_t s = 0; s <= cfg.steps; ++s) {
          if (s > 0) em.step(x, cfg.burn_in + s);
          if (s == idx[next]) {
            std::copy(x.begin(), x.end(), row.begin() + static_cast<std::ptrdiff_t>(next * d));
            ++next;
          }
        }
        partial[c].add_path(row);
      } catch (const DivergenceError&) {
        ++chunk_failures[c];
      }
    }
  }

  MomentAccumulator total(idx.size() * d);
  std::size_t n_failed = 0;
  for (std::size_t c = 0; c < n_chunks; ++c) {
    total.merge(partial[c]);
    n_failed += chunk_failures[c];
  }
  if (failures) *failures = n_failed;
  return to_curve(total, idx, cfg, d);
}

MomentCurve ensemble_moments_reference(const Dynamics& dynamics, const SimConfig& cfg,
                                       std::size_t n_traj, std::size_t stride) {
  const Ensemble ens = simulate_ensemble(dynamics, cfg, n_traj);
  const std::size_t d = dynamics.dim();
  const auto idx = recorded_indices(cfg.steps, stride);
  MomentCurve curve;
  curve.kind = MomentCurve::Kind::Empirical;
  const double n = static_cast<double>(ens.trajectories.size());
  for (std::size_t r : idx) {
    std::vector<double> m(d, 0.0), v(d, 0.0);
    for (const auto& t : ens.trajectories)
      for (std::size_t i = 0; i < d; ++i) m[i] += t.state(r)[i];
    for (double& x : m) x /= n;
    for (const auto& t : ens.trajectories)
      for (std::size_t i = 0; i < d; ++i) v[i] += (t.state(r)[i] - m[i]) * (t.state(r)[i] - m[i]);
    for (double& x : v) x = n > 1 ? x / (n - 1) : 0.0;
    curve.times.push_back(ens.trajectories.front().time(r));
    curve.mean.push_back(std::move(m));
    curve.variance.push_back(std::move(v));
  }
  return curve;
}

std::string trajectory_to_csv(const Trajectory& traj) {
  std::string out = "t";
  for (std::size_t i = 0; i < traj.dim; ++i) out += ",x" + std::to_string(i);
  out += '\n';
  char buf[32];
  for (std::size_t k = 0; k < traj.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%.17g", traj.time(k));
    out += buf;
    for (double v : traj.state(k)) {
      std::snprintf(buf, sizeof buf, ",%.17g", v);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

void write_trajectory_csv(const Trajectory& traj, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write trajectory file: " + path);
  out << trajectory_to_csv(traj);
  if (!out) throw std::runtime_error("failed writing trajectory file: " + path);
}

Trajectory parse_trajectory_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw StructuralError("empty trajectory file");
  std::size_t columns = 1;
  for (char c : line) columns += c == ',';
  if (line.rfind("t,", 0) != 0 || columns < 2)
    throw StructuralError("trajectory header must be t,x0,...: got '" + line + "'");

  Trajectory traj;
  traj.dim = columns - 1;
  std::vector<double> times;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string cell;
    std::size_t col = 0;
    while (std::getline(fields, cell, ',')) {
      double v;
      try {
        std::size_t used = 0;
        v = std::stod(cell, &used);
        if (used != cell.size() && cell.find_first_not_of(" \r", used) != std::string::npos)
          throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw StructuralError("bad number '" + cell + "' on row " + std::to_string(row));
      }
      if (col == 0)
        times.push_back(v);
      else
        traj.data.push_back(v);
      ++col;
    }
    if (col != columns)
      throw StructuralError("row " + std::to_string(row) + " has " + std::to_string(col) +
                            " columns, expected " + std::to_string(columns));
  }
  if (times.empty()) throw StructuralError("trajectory has no rows");
  traj.start_time = times.front();
  if (times.size() >= 2) {
    traj.tau = times[1] - times[0];
    const double span = times.back() - times.front();
    const double expected = traj.tau * static_cast<double>(times.size() - 1);
    if (!(traj.tau > 0.0) || std::abs(span - expected) > 1e-6 * std::max(1.0, std::abs(span)))
      throw StructuralError("trajectory time grid is not uniform and increasing");
  } else {
    traj.tau = 1.0;
  }
  traj.validate();
  return traj;
}

Trajectory read_trajectory_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StructuralError("cannot open trajectory file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_trajectory_csv(buf.str());
}

}  // namespace sdeid
