#include "sdeid/eval.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <regex>

namespace sdeid {

std::string CoefficientLabel::str() const {
  const auto n = [](std::size_t v) { return std::to_string(v); };
  switch (kind) {
    case Kind::Linear: return "linear[" + n(row) + "," + n(j) + "]";
    case Kind::Quadratic: return "quadratic[" + n(row) + ",{" + n(j) + "," + n(k) + "}]";
    case Kind::Diffusion: return "diffusion[" + n(row) + "," + n(j) + "]";
    case Kind::DiffusionBias: return "bias[" + n(row) + "]";
  }
  return {};
}

CoefficientLabel CoefficientLabel::parse(const std::string& text) {
  static const std::regex two(R"((linear|diffusion)\[(\d+),(\d+)\])");
  static const std::regex quad(R"(quadratic\[(\d+),\{(\d+),(\d+)\}\])");
  static const std::regex bias(R"(bias\[(\d+)\])");
  std::smatch m;
  const auto num = [&](std::size_t g) { return static_cast<std::size_t>(std::stoul(m[g].str())); };
  CoefficientLabel l;
  if (std::regex_match(text, m, two)) {
    l.kind = m[1].str() == "linear" ? Kind::Linear : Kind::Diffusion;
    l.row = num(2);
    l.j = num(3);
  } else if (std::regex_match(text, m, quad)) {
    l.kind = Kind::Quadratic;
    l.row = num(1);
    l.j = std::min(num(2), num(3));
    l.k = std::max(num(2), num(3));
  } else if (std::regex_match(text, m, bias)) {
    l.kind = Kind::DiffusionBias;
    l.row = num(1);
  } else {
    throw StructuralError("unrecognized coefficient label: " + text);
  }
  return l;
}

double coefficient_value(const EffectiveCoefficients& c, const CoefficientLabel& l) {
  if (l.row >= c.dim || l.j >= c.dim || l.k >= c.dim)
    throw StructuralError("coefficient label " + l.str() + " out of range for dimension " + std::to_string(c.dim));
  switch (l.kind) {
    case CoefficientLabel::Kind::Linear: return c.linear(l.row, l.j);
    case CoefficientLabel::Kind::Quadratic:
      return c.quadratic[l.row][EffectiveCoefficients::pair_index(c.dim, l.j, l.k)];
    case CoefficientLabel::Kind::Diffusion: return c.diffusion_linear(l.row, l.j);
    case CoefficientLabel::Kind::DiffusionBias: return c.diffusion_bias ? (*c.diffusion_bias)[l.row] : 0.0;
  }
  return 0.0;
}

std::vector<CoefficientLabel> coefficient_labels(std::size_t d, bool with_bias) {
  using K = CoefficientLabel::Kind;
  std::vector<CoefficientLabel> out;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) out.push_back({K::Linear, i, j, 0});
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t k = j; k < d; ++k) out.push_back({K::Quadratic, i, j, k});
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) out.push_back({K::Diffusion, i, j, 0});
  if (with_bias)
    for (std::size_t i = 0; i < d; ++i) out.push_back({K::DiffusionBias, i, 0, 0});
  return out;
}

namespace {

double rms(double sum_sq, std::size_t n) { return n == 0 ? 0.0 : std::sqrt(sum_sq / static_cast<double>(n)); }

}  // namespace

RmseReport coefficient_rmse(const SdeModel& fitted, const SdeModel& truth) {
  if (fitted.dim() != truth.dim()) throw StructuralError("models have different dimensions");
  const auto cf = effective_coefficients(fitted);
  const auto ct = effective_coefficients(truth);
  RmseReport r;
  double all = 0.0, drift = 0.0, diff = 0.0, nonzero = 0.0;
  std::size_t n_drift = 0, n_diff = 0, n_nonzero = 0;
  for (const auto& label : coefficient_labels(truth.dim(), fitted.affine() || truth.affine())) {
    const double t = coefficient_value(ct, label);
    const double e = coefficient_value(cf, label) - t;
    const double e2 = e * e;
    r.per_coefficient[label.str()] = std::abs(e);
    all += e2;
    ++r.coefficient_count;
    if (label.is_drift()) {
      drift += e2;
      ++n_drift;
    } else {
      diff += e2;
      ++n_diff;
    }
    if (t != 0.0) {
      nonzero += e2;
      ++n_nonzero;
    } else {
      r.zero_coeff_max_abs = std::max(r.zero_coeff_max_abs, std::abs(e));
    }
  }
  r.global_rmse = rms(all, r.coefficient_count);
  r.drift_rmse = rms(drift, n_drift);
  r.diffusion_rmse = rms(diff, n_diff);
  r.nonzero_coeff_rmse = rms(nonzero, n_nonzero);
  return r;
}

double coefficient_distance(const SdeModel& a, const SdeModel& b) { return coefficient_rmse(a, b).global_rmse; }

ParameterStatistics parameter_statistics(const std::vector<SdeModel>& models, const CoefficientLabel& label) {
  if (models.size() < 2) throw StructuralError("parameter statistics need at least two models");
  std::vector<double> values;
  for (const auto& m : models) values.push_back(coefficient_value(effective_coefficients(m), label));
  ParameterStatistics s;
  s.count = values.size();
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(s.count);
  for (double v : values) s.variance += (v - s.mean) * (v - s.mean);
  s.variance /= static_cast<double>(s.count - 1);
  return s;
}

MomentErrors moment_comparison(const MomentCurve& th, const MomentCurve& em) {
  if (th.times.size() != em.times.size()) throw StructuralError("moment curves have different grid lengths");
  for (std::size_t r = 0; r < th.times.size(); ++r) {
    if (std::abs(th.times[r] - em.times[r]) > 1e-12 * std::max(1.0, std::abs(th.times[r])))
      throw StructuralError("moment curves have different time grids at index " + std::to_string(r));
    if (th.mean[r].size() != em.mean[r].size()) throw StructuralError("moment curves have different dimensions");
  }
  const auto rel = [](double err, double ref) {
    if (ref != 0.0) return err / std::abs(ref);
    return err == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  };
  MomentErrors out;
  out.times = th.times;
  for (std::size_t r = 0; r < th.times.size(); ++r) {
    std::vector<double> ma, mr, va, vr;
    for (std::size_t i = 0; i < th.mean[r].size(); ++i) {
      const double dm = std::abs(em.mean[r][i] - th.mean[r][i]);
      const double dv = std::abs(em.variance[r][i] - th.variance[r][i]);
      ma.push_back(dm);
      mr.push_back(rel(dm, th.mean[r][i]));
      va.push_back(dv);
      vr.push_back(rel(dv, th.variance[r][i]));
    }
    out.mean_abs.push_back(std::move(ma));
    out.mean_rel.push_back(std::move(mr));
    out.variance_abs.push_back(std::move(va));
    out.variance_rel.push_back(std::move(vr));
  }
  return out;
}

TopologyVerdict attractor_topology(const Trajectory& traj, const TopologyOptions& opt) {
  if (traj.dim != 3) throw StructuralError("attractor topology needs a 3-dimensional trajectory");
  if (traj.size() == 0) throw StructuralError("attractor topology needs a non-empty trajectory");
  TopologyVerdict v;
  v.quadratic_variation.assign(3, 0.0);
  std::size_t neg = 0, pos = 0;
  int last = 0;
  for (std::size_t k = 0; k < traj.size(); ++k) {
    const double x = traj.state(k)[0];
    int lobe = 0;
    if (x < -opt.margin) {
      lobe = -1;
      ++neg;
    } else if (x > opt.margin) {
      lobe = 1;
      ++pos;
    }
    if (lobe != 0) {
      if (last != 0 && lobe != last) ++v.crossings;
      last = lobe;
    }
    if (k > 0)
      for (std::size_t i = 0; i < 3; ++i) {
        const double dx = traj.state(k)[i] - traj.state(k - 1)[i];
        v.quadratic_variation[i] += dx * dx;
      }
  }
  const double n = static_cast<double>(traj.size());
  v.negative_fraction = static_cast<double>(neg) / n;
  v.positive_fraction = static_cast<double>(pos) / n;
  v.both_lobes = v.negative_fraction >= opt.min_fraction && v.positive_fraction >= opt.min_fraction &&
                 v.crossings >= opt.min_crossings;
  return v;
}

double gain_rate(double rmse_method, double rmse_baseline) {
  if (rmse_baseline == 0.0) throw NumericalError("gain rate is undefined for a zero baseline RMSE");
  return (rmse_baseline - rmse_method) / rmse_baseline;
}

nlohmann::json to_json(const RmseReport& r) {
  return {{"global_rmse", r.global_rmse},
          {"drift_rmse", r.drift_rmse},
          {"diffusion_rmse", r.diffusion_rmse},
          {"nonzero_coeff_rmse", r.nonzero_coeff_rmse},
          {"zero_coeff_max_abs", r.zero_coeff_max_abs},
          {"coefficient_count", r.coefficient_count},
          {"per_coefficient", r.per_coefficient}};
}

nlohmann::json to_json(const TopologyVerdict& v) {
  return {{"both_lobes", v.both_lobes},
          {"lobe_fractions", {v.negative_fraction, v.positive_fraction}},
          {"crossings", v.crossings},
          {"quadratic_variation", v.quadratic_variation}};
}

nlohmann::json to_json(const ParameterStatistics& s) {
  return {{"mean", s.mean}, {"variance", s.variance}, {"count", s.count}};
}

std::string coefficient_bars_csv(const std::map<std::string, double>& method,
                                 const std::map<std::string, double>& baseline) {
  std::string out = "coefficient,method,baseline,gain\n";
  char buf[96];
  for (const auto& [label, b] : baseline) {
    const auto it = method.find(label);
    if (it == method.end() || !CoefficientLabel::parse(label).is_drift()) continue;
    out += "\"" + label + "\"";
    std::snprintf(buf, sizeof buf, ",%.17g,%.17g,", it->second, b);
    out += buf;
    if (b != 0.0) {
      std::snprintf(buf, sizeof buf, "%.17g", gain_rate(it->second, b));
      out += buf;
    }
    out += '\n';
  }
  return out;
}

std::string moment_curves_csv(const std::vector<std::pair<std::string, const MomentCurve*>>& curves) {
  if (curves.empty()) return {};
  const MomentCurve& grid = *curves.front().second;
  for (const auto& [name, c] : curves)
    if (c->times.size() != grid.times.size()) throw StructuralError("curve '" + name + "' has a different grid");
  std::string out = "t";
  const std::size_t d = grid.mean.empty() ? 0 : grid.mean.front().size();
  for (const auto& [name, c] : curves)
    for (std::size_t i = 0; i < d; ++i)
      out += "," + name + "_mean" + std::to_string(i) + "," + name + "_var" + std::to_string(i);
  out += '\n';
  char buf[32];
  for (std::size_t r = 0; r < grid.times.size(); ++r) {
    std::snprintf(buf, sizeof buf, "%.17g", grid.times[r]);
    out += buf;
    for (const auto& [name, c] : curves)
      for (std::size_t i = 0; i < d; ++i) {
        std::snprintf(buf, sizeof buf, ",%.17g", c->mean[r][i]);
        out += buf;
        std::snprintf(buf, sizeof buf, ",%.17g", c->variance[r][i]);
        out += buf;
      }
    out += '\n';
  }
  return out;
}

}  // namespace sdeid
