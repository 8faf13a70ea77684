#include "sdeid/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "sdeid/rng.hpp"

namespace sdeid {

void NonparametricField::validate() const {
  if (support_points.empty()) throw StructuralError("nonparametric field has no support points");
  if (!(tau > 0.0)) throw StructuralError("nonparametric field tau must be positive");
  if (neighbor_count < 1) throw StructuralError("neighbor_count must be at least 1");
  const std::size_t d = dim();
  for (const auto& p : support_points) {
    if (p.state.size() != d || p.drift.size() != d || p.diffusion_squared.size() != d)
      throw StructuralError("support point dimensions disagree");
    for (double l2 : p.diffusion_squared)
      if (!(l2 >= 0.0)) throw StructuralError("squared diffusion estimates must be nonnegative");
  }
}

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

// Indices of the k nearest points among `count` candidates; ties break by index.
template <class PointAt>
std::vector<std::size_t> k_nearest(std::size_t count, std::size_t k, std::span<const double> x,
                                   PointAt&& point_at, std::vector<std::pair<double, std::size_t>>& scratch) {
  scratch.resize(count);
  for (std::size_t a = 0; a < count; ++a) scratch[a] = {squared_distance(point_at(a), x), a};
  k = std::min(k, count);
  std::nth_element(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(k - 1), scratch.end());
  std::sort(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(k));
  std::vector<std::size_t> idx(k);
  for (std::size_t q = 0; q < k; ++q) idx[q] = scratch[q].second;
  return idx;
}

// Mean increment / τ and unbiased increment variance / τ over a sample.
void increment_moments(const std::vector<std::span<const double>>& from,
                       const std::vector<std::span<const double>>& to, double tau, SupportPoint& out) {
  const std::size_t d = from.front().size();
  const double n = static_cast<double>(from.size());
  out.drift.assign(d, 0.0);
  out.diffusion_squared.assign(d, 0.0);
  for (std::size_t s = 0; s < from.size(); ++s)
    for (std::size_t i = 0; i < d; ++i) out.drift[i] += to[s][i] - from[s][i];
  for (double& m : out.drift) m /= n;
  for (std::size_t s = 0; s < from.size(); ++s)
    for (std::size_t i = 0; i < d; ++i) {
      const double r = to[s][i] - from[s][i] - out.drift[i];
      out.diffusion_squared[i] += r * r;
    }
  for (std::size_t i = 0; i < d; ++i) {
    out.drift[i] /= tau;
    out.diffusion_squared[i] /= (n - 1.0) * tau;
  }
}

GradientMatchResult match_single(const Trajectory& traj, const GradientMatchOptions& opt) {
  GradientMatchResult result;
  result.field.tau = traj.tau;
  result.field.neighbor_count = opt.neighbor_count;
  const std::size_t n = traj.pairs();
  const double r2 = opt.neighborhood_radius * opt.neighborhood_radius;
  std::vector<std::pair<double, std::size_t>> scratch;
  std::vector<std::span<const double>> from, to;
  for (std::size_t a = 0; a < n; ++a) {
    const auto anchor = traj.state(a);
    const auto nn = k_nearest(n, opt.neighbor_count, anchor, [&](std::size_t q) { return traj.state(q); }, scratch);
    from.clear();
    to.clear();
    for (std::size_t q : nn) {
      if (squared_distance(traj.state(q), anchor) > r2) continue;
      from.push_back(traj.state(q));
      to.push_back(traj.state(q + 1));
    }
    if (from.size() < 2) {
      ++result.dropped_anchors;
      continue;
    }
    SupportPoint p;
    p.state.assign(anchor.begin(), anchor.end());
    increment_moments(from, to, traj.tau, p);
    result.field.support_points.push_back(std::move(p));
  }
  return result;
}

GradientMatchResult match_ensemble(const std::vector<Trajectory>& trajs, const GradientMatchOptions& opt) {
  const auto& first = trajs.front();
  for (const auto& t : trajs)
    if (t.dim != first.dim || t.size() != first.size() || t.tau != first.tau || t.start_time != first.start_time)
      throw StructuralError("ensemble trajectories must share dimension, length, tau and start time");

  GradientMatchResult result;
  result.field.tau = first.tau;
  result.field.neighbor_count = opt.neighbor_count;
  std::vector<std::span<const double>> from, to;
  for (std::size_t j = 0; j < first.pairs(); ++j) {
    from.clear();
    to.clear();
    SupportPoint p;
    p.state.assign(first.dim, 0.0);
    for (const auto& t : trajs) {
      from.push_back(t.state(j));
      to.push_back(t.state(j + 1));
      for (std::size_t i = 0; i < first.dim; ++i) p.state[i] += t.state(j)[i];
    }
    for (double& v : p.state) v /= static_cast<double>(trajs.size());
    increment_moments(from, to, first.tau, p);
    result.field.support_points.push_back(std::move(p));
  }
  return result;
}

}  // namespace

GradientMatchResult gradient_match(const std::vector<Trajectory>& trajectories,
                                   const GradientMatchOptions& options) {
  if (trajectories.empty()) throw StructuralError("gradient matching needs at least one trajectory");
  if (options.neighbor_count < 1) throw StructuralError("neighbor_count must be at least 1");
  for (const auto& t : trajectories) t.validate(2);
  GradientMatchResult r = trajectories.size() == 1 ? match_single(trajectories.front(), options)
                                                   : match_ensemble(trajectories, options);
  if (std::isfinite(options.neighborhood_radius)) r.field.extrapolation_radius = options.neighborhood_radius;
  return r;
}

FieldQuery query_field(const NonparametricField& field, std::span<const double> x) {
  if (field.support_points.empty()) throw StructuralError("nonparametric field has no support points");
  if (x.size() != field.dim()) throw StructuralError("query state has the wrong dimension");
  std::vector<std::pair<double, std::size_t>> scratch;
  const auto nn = k_nearest(field.support_points.size(), field.neighbor_count, x,
                            [&](std::size_t a) { return std::span<const double>(field.support_points[a].state); },
                            scratch);
  FieldQuery q;
  q.drift.assign(x.size(), 0.0);
  q.diffusion_squared.assign(x.size(), 0.0);
  q.nearest_distance = std::sqrt(scratch.front().first);
  for (std::size_t a : nn) {
    const auto& p = field.support_points[a];
    for (std::size_t i = 0; i < x.size(); ++i) {
      q.drift[i] += p.drift[i];
      q.diffusion_squared[i] += p.diffusion_squared[i];
    }
  }
  const double k = static_cast<double>(nn.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    q.drift[i] /= k;
    q.diffusion_squared[i] /= k;
  }
  return q;
}

FieldDynamics::FieldDynamics(const NonparametricField& field) : field_(field) { field_.validate(); }

void FieldDynamics::drift(std::span<const double> x, std::span<double> out) const {
  const auto q = query_field(field_, x);
  std::copy(q.drift.begin(), q.drift.end(), out.begin());
}

void FieldDynamics::noise_scale(std::span<const double> x, std::span<double> out) const {
  const auto q = query_field(field_, x);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(q.diffusion_squared[i]);
}

namespace {

// Single-threaded: caches the query shared by drift() and noise_scale() and
// counts extrapolated queries.
class CountingFieldDynamics final : public Dynamics {
 public:
  explicit CountingFieldDynamics(const NonparametricField& field) : field_(field) {}
  std::size_t dim() const override { return field_.dim(); }
  void drift(std::span<const double> x, std::span<double> out) const override {
    refresh(x);
    std::copy(cache_.drift.begin(), cache_.drift.end(), out.begin());
  }
  void noise_scale(std::span<const double> x, std::span<double> out) const override {
    refresh(x);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(cache_.diffusion_squared[i]);
  }
  std::size_t extrapolated() const { return extrapolated_; }

 private:
  void refresh(std::span<const double> x) const {
    if (valid_ && std::equal(x.begin(), x.end(), cached_x_.begin())) return;
    cache_ = query_field(field_, x);
    cached_x_.assign(x.begin(), x.end());
    valid_ = true;
    if (cache_.nearest_distance > field_.extrapolation_radius) ++extrapolated_;
  }

  const NonparametricField& field_;
  mutable FieldQuery cache_;
  mutable std::vector<double> cached_x_;
  mutable bool valid_ = false;
  mutable std::size_t extrapolated_ = 0;
};

}  // namespace

NonparametricSimulation simulate_nonparametric(const NonparametricField& field, const SimConfig& cfg) {
  field.validate();
  CountingFieldDynamics dyn(field);
  NonparametricSimulation out;
  out.trajectory = simulate(dyn, cfg);
  out.extrapolated_queries = dyn.extrapolated();
  return out;
}

void write_field_csv(const NonparametricField& field, const std::string& path) {
  field.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write field file: " + path);
  char buf[64];
  std::snprintf(buf, sizeof buf, "# tau=%.17g,k=%zu,radius=", field.tau, field.neighbor_count);
  out << buf;
  if (std::isfinite(field.extrapolation_radius)) {
    std::snprintf(buf, sizeof buf, "%.17g", field.extrapolation_radius);
    out << buf;
  } else {
    out << "inf";
  }
  out << '\n';
  const std::size_t d = field.dim();
  std::string header;
  for (std::size_t i = 0; i < d; ++i) header += "x" + std::to_string(i) + ",";
  for (std::size_t i = 0; i < d; ++i) header += "f" + std::to_string(i) + ",";
  for (std::size_t i = 0; i < d; ++i) header += "l2_" + std::to_string(i) + (i + 1 < d ? "," : "");
  out << header << '\n';
  for (const auto& p : field.support_points) {
    std::string row;
    for (const auto* v : {&p.state, &p.drift, &p.diffusion_squared})
      for (double x : *v) {
        std::snprintf(buf, sizeof buf, "%.17g,", x);
        row += buf;
      }
    row.back() = '\n';
    out << row;
  }
}

NonparametricField read_field_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StructuralError("cannot open field file: " + path);
  NonparametricField field;
  std::string line;
  if (!std::getline(in, line) || line.rfind("# tau=", 0) != 0) throw StructuralError("field file lacks metadata line");
  {
    char radius[64] = {0};
    if (std::sscanf(line.c_str(), "# tau=%lf,k=%zu,radius=%63s", &field.tau, &field.neighbor_count, radius) != 3)
      throw StructuralError("malformed field metadata: " + line);
    field.extrapolation_radius = std::string(radius) == "inf" ? std::numeric_limits<double>::infinity()
                                                              : std::stod(radius);
  }
  if (!std::getline(in, line)) throw StructuralError("field file lacks header");
  std::size_t cols = 1;
  for (char c : line) cols += c == ',';
  if (cols % 3 != 0) throw StructuralError("field header must have 3*d columns");
  const std::size_t d = cols / 3;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> v;
    std::istringstream fields(line);
    std::string cell;
    while (std::getline(fields, cell, ',')) v.push_back(std::stod(cell));
    if (v.size() != cols) throw StructuralError("field row has the wrong number of columns");
    SupportPoint p;
    p.state.assign(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(d));
    p.drift.assign(v.begin() + static_cast<std::ptrdiff_t>(d), v.begin() + static_cast<std::ptrdiff_t>(2 * d));
    p.diffusion_squared.assign(v.begin() + static_cast<std::ptrdiff_t>(2 * d), v.end());
    field.support_points.push_back(std::move(p));
  }
  field.validate();
  return field;
}

}  // namespace sdeid
