#include "sdeid/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <omp.h>

#include "sdeid/rng.hpp"

namespace sdeid {

ModelGradient ModelGradient::zeros_like(const SdeModel& model) {
  const std::size_t d = model.dim();
  ModelGradient g{Matrix(d, d), Matrix(d, d), Matrix(d, d), Matrix(d, d), std::nullopt};
  if (model.affine()) g.bias = std::vector<double>(d, 0.0);
  return g;
}

std::vector<double> ModelGradient::flatten() const {
  std::vector<double> out;
  for (const Matrix* m : {&a1, &a2, &a3, &b}) out.insert(out.end(), m->data().begin(), m->data().end());
  if (bias) out.insert(out.end(), bias->begin(), bias->end());
  return out;
}

std::vector<double> flatten_parameters(const SdeModel& model) {
  const auto& dr = model.drift();
  const auto& di = model.diffusion();
  std::vector<double> out;
  for (const Matrix* m : {&dr.a1, &dr.a2, &dr.a3, &di.b})
    out.insert(out.end(), m->data().begin(), m->data().end());
  if (di.bias) out.insert(out.end(), di.bias->begin(), di.bias->end());
  return out;
}

SdeModel unflatten_parameters(const SdeModel& shape, std::span<const double> params) {
  const std::size_t d = shape.dim();
  const std::size_t dd = d * d;
  const std::size_t expected = 4 * dd + (shape.affine() ? d : 0);
  if (params.size() != expected) throw StructuralError("parameter vector has the wrong length");
  auto take = [&](std::size_t block) {
    Matrix m(d, d);
    std::copy_n(params.begin() + static_cast<std::ptrdiff_t>(block * dd), dd, m.data().begin());
    return m;
  };
  DriftParams drift{take(0), take(1), take(2)};
  DiffusionParams diffusion;
  diffusion.b = take(3);
  diffusion.variance_floor = shape.diffusion().variance_floor;
  if (shape.affine())
    diffusion.bias = std::vector<double>(params.begin() + static_cast<std::ptrdiff_t>(4 * dd), params.end());
  return SdeModel(std::move(drift), std::move(diffusion));
}

namespace {

constexpr std::size_t kPairChunk = 512;

struct Partial {
  double mahalanobis = 0.0;
  double logdet = 0.0;
  std::vector<double> rows;
};

// Per-pair contribution for every row of the model, accumulated into `part`
// and, when `grad` is non-null, into the flat gradient (a1, a2, a3, b, bias).
template <bool WithGrad>
void accumulate_pair(const SdeModel& model, std::span<const double> x, std::span<const double> next,
                     double tau, CovarianceMode mode, const std::vector<bool>* frozen,
                     Partial& part, double* grad) {
  const std::size_t d = model.dim();
  const std::size_t dd = d * d;
  const auto& dr = model.drift();
  const auto& di = model.diffusion();
  const double eps = di.variance_floor;
  for (std::size_t i = 0; i < d; ++i) {
    const double u = dot(dr.a2.row(i), x);
    const double v = dot(dr.a3.row(i), x);
    const double f = dot(dr.a1.row(i), x) + u * v;
    const double r = next[i] - x[i] - tau * f;
    double d_f;
    double d_s = 0.0;
    if (mode == CovarianceMode::Identity) {
      part.mahalanobis += r * r;
      part.rows[i] += r * r;
      d_f = -2.0 * tau * r;
    } else {
      double s = dot(di.b.row(i), x);
      if (di.bias) s += (*di.bias)[i];
      const double var = tau * (s * s + eps);
      const double inv = 1.0 / var;
      const double log_var = std::log(var);
      part.mahalanobis += r * r * inv;
      part.logdet += log_var;
      part.rows[i] += r * r * inv + log_var;
      d_f = -2.0 * tau * r * inv;
      if (!(frozen && i < frozen->size() && (*frozen)[i]))
        d_s = 2.0 * tau * s * inv * (1.0 - r * r * inv);
    }
    if constexpr (WithGrad) {
      double* g1 = grad + i * d;
      double* g2 = grad + dd + i * d;
      double* g3 = grad + 2 * dd + i * d;
      double* gb = grad + 3 * dd + i * d;
      const double fv = d_f * v;
      const double fu = d_f * u;
      for (std::size_t j = 0; j < d; ++j) {
        g1[j] += d_f * x[j];
        g2[j] += fv * x[j];
        g3[j] += fu * x[j];
        gb[j] += d_s * x[j];
      }
      if (di.bias) grad[4 * dd + i] += d_s;
    }
  }
}

std::size_t gradient_size(const SdeModel& model) {
  const std::size_t d = model.dim();
  return 4 * d * d + (model.affine() ? d : 0);
}

void check_inputs(const SdeModel& model, const Trajectory& traj) {
  if (traj.dim == 0 || traj.size() < 2 || !(traj.tau > 0.0))
    throw StructuralError("loss needs a trajectory with at least two states and tau > 0");
  if (traj.dim != model.dim())
    throw StructuralError("trajectory dimension " + std::to_string(traj.dim) +
                          " does not match model dimension " + std::to_string(model.dim()));
}

[[noreturn]] void report_non_finite(const SdeModel& model, const Trajectory& traj, CovarianceMode mode,
                                    std::span<const std::size_t> subset) {
  const std::size_t n = subset.empty() ? traj.pairs() : subset.size();
  for (std::size_t q = 0; q < n; ++q) {
    const std::size_t t = subset.empty() ? q : subset[q];
    Partial p;
    p.rows.assign(model.dim(), 0.0);
    accumulate_pair<false>(model, traj.state(t), traj.state(t + 1), traj.tau, mode, nullptr, p, nullptr);
    if (!std::isfinite(p.mahalanobis) || !std::isfinite(p.logdet))
      throw NumericalError("non-finite loss at pair " + std::to_string(t) + " (states " +
                           std::to_string(t) + " -> " + std::to_string(t + 1) + ")");
  }
  throw NumericalError("non-finite loss from accumulated overflow");
}

template <bool WithGrad>
LossBreakdown run_kernel(const SdeModel& model, const Trajectory& traj, CovarianceMode mode,
                         std::vector<double>* grad, const std::vector<bool>* frozen,
                         std::span<const std::size_t> subset) {
  check_inputs(model, traj);
  const std::size_t n = subset.empty() ? traj.pairs() : subset.size();
  const std::size_t n_chunks = (n + kPairChunk - 1) / kPairChunk;
  const std::size_t gsize = WithGrad ? gradient_size(model) : 0;
  std::vector<Partial> parts(n_chunks);
  for (auto& p : parts) p.rows.assign(model.dim(), 0.0);
  std::vector<double> chunk_grads(n_chunks * gsize, 0.0);

  // Nested inside a parallel region (e.g. concurrent fits) this runs serially.
#pragma omp parallel for schedule(static) if (n_chunks > 1 && !omp_in_parallel())
  for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(n_chunks); ++c) {
    const std::size_t begin = static_cast<std::size_t>(c) * kPairChunk;
    const std::size_t end = std::min(n, begin + kPairChunk);
    double* g = WithGrad ? chunk_grads.data() + static_cast<std::size_t>(c) * gsize : nullptr;
    for (std::size_t q = begin; q < end; ++q) {
      const std::size_t t = subset.empty() ? q : subset[q];
      accumulate_pair<WithGrad>(model, traj.state(t), traj.state(t + 1), traj.tau, mode, frozen,
                                parts[c], g);
    }
  }

  LossBreakdown out;
  out.pairs = n;
  out.row_total.assign(model.dim(), 0.0);
  if constexpr (WithGrad) grad->assign(gsize, 0.0);
  for (std::size_t c = 0; c < n_chunks; ++c) {
    out.mahalanobis += parts[c].mahalanobis;
    out.logdet += parts[c].logdet;
    for (std::size_t i = 0; i < model.dim(); ++i) out.row_total[i] += parts[c].rows[i];
    if constexpr (WithGrad)
      for (std::size_t p = 0; p < gsize; ++p) (*grad)[p] += chunk_grads[c * gsize + p];
  }
  out.total = out.mahalanobis + out.logdet;
  out.per_pair_mean = out.total / static_cast<double>(n);
  if (!std::isfinite(out.total)) report_non_finite(model, traj, mode, subset);
  return out;
}

ModelGradient unflatten_gradient(const SdeModel& model, const std::vector<double>& flat) {
  ModelGradient g = ModelGradient::zeros_like(model);
  const std::size_t dd = model.dim() * model.dim();
  std::size_t off = 0;
  for (Matrix* m : {&g.a1, &g.a2, &g.a3, &g.b}) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), dd, m->data().begin());
    off += dd;
  }
  if (g.bias) std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off), flat.end(), g.bias->begin());
  return g;
}

}  // namespace

LossBreakdown nll_loss(const SdeModel& model, const Trajectory& traj, CovarianceMode mode) {
  return run_kernel<false>(model, traj, mode, nullptr, nullptr, {});
}

ModelGradient nll_gradient(const SdeModel& model, const Trajectory& traj, CovarianceMode mode,
                           const std::vector<bool>* frozen_diffusion_rows) {
  std::vector<double> flat;
  run_kernel<true>(model, traj, mode, &flat, frozen_diffusion_rows, {});
  return unflatten_gradient(model, flat);
}

LossBreakdown nll_loss_and_gradient(const SdeModel& model, const Trajectory& traj, CovarianceMode mode,
                                    ModelGradient& grad, const std::vector<bool>* frozen_diffusion_rows,
                                    std::span<const std::size_t> pair_subset) {
  std::vector<double> flat;
  const LossBreakdown loss = run_kernel<true>(model, traj, mode, &flat, frozen_diffusion_rows, pair_subset);
  grad = unflatten_gradient(model, flat);
  return loss;
}

LossBreakdown nll_loss_reference(const SdeModel& model, const Trajectory& traj, CovarianceMode mode) {
  check_inputs(model, traj);
  LossBreakdown out;
  out.pairs = traj.pairs();
  out.row_total.assign(traj.dim, 0.0);
  for (std::size_t t = 0; t + 1 < traj.size(); ++t) {
    const auto next = traj.state(t + 1);
    const GaussianTransition g = transition_density(model, traj.state(t), traj.tau);
    for (std::size_t i = 0; i < traj.dim; ++i) {
      const double r = next[i] - g.mean[i];
      if (mode == CovarianceMode::Identity) {
        out.mahalanobis += r * r;
        out.row_total[i] += r * r;
      } else {
        out.mahalanobis += r * r / g.variance[i];
        out.logdet += std::log(g.variance[i]);
        out.row_total[i] += r * r / g.variance[i] + std::log(g.variance[i]);
      }
    }
  }
  out.total = out.mahalanobis + out.logdet;
  out.per_pair_mean = out.total / static_cast<double>(out.pairs);
  return out;
}

ModelGradient nll_gradient_reference(const SdeModel& model, const Trajectory& traj, CovarianceMode mode) {
  check_inputs(model, traj);
  const std::size_t d = model.dim();
  const auto& dr = model.drift();
  const auto& di = model.diffusion();
  ModelGradient g = ModelGradient::zeros_like(model);
  for (std::size_t t = 0; t + 1 < traj.size(); ++t) {
    const auto x = traj.state(t);
    const auto next = traj.state(t + 1);
    const GaussianTransition tr = transition_density(model, x, traj.tau);
    const std::vector<double> scale = diffusion_eval(model, x);
    for (std::size_t i = 0; i < d; ++i) {
      const double r = next[i] - tr.mean[i];
      const double var = mode == CovarianceMode::Identity ? 1.0 : tr.variance[i];
      // ∂/∂F_i of r²/var, with r = next − x − τF
      const double d_f = -2.0 * traj.tau * r / var;
      // ∂/∂L_i of r²/var + log var, var = τ(L² + ε)
      const double d_l = mode == CovarianceMode::Identity
                             ? 0.0
                             : (1.0 / var - r * r / (var * var)) * 2.0 * traj.tau * scale[i];
      double u = 0.0, v = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        u += dr.a2(i, j) * x[j];
        v += dr.a3(i, j) * x[j];
      }
      for (std::size_t j = 0; j < d; ++j) {
        g.a1(i, j) += d_f * x[j];
        g.a2(i, j) += d_f * v * x[j];
        g.a3(i, j) += d_f * u * x[j];
        g.b(i, j) += d_l * x[j];
      }
      if (g.bias) (*g.bias)[i] += d_l;
    }
  }
  (void)di;
  return g;
}

GradientCheckReport check_gradient(const SdeModel& model, const Trajectory& traj, double step,
                                   double tolerance, CovarianceMode mode) {
  if (!(step > 0.0)) throw StructuralError("finite-difference step must be positive");
  const std::vector<double> analytic = nll_gradient(model, traj, mode).flatten();
  std::vector<double> theta = flatten_parameters(model);
  const std::size_t d = model.dim();
  const std::size_t dd = d * d;

  GradientCheckReport report;
  const char* names[] = {"a1", "a2", "a3", "b", "bias"};
  for (const char* name : names) {
    if (std::string(name) == "bias" && !model.affine()) continue;
    report.blocks.push_back({name, 0.0, false});
  }
  for (std::size_t p = 0; p < theta.size(); ++p) {
    const double saved = theta[p];
    const double h = step * std::max(1.0, std::abs(saved));
    theta[p] = saved + h;
    const double up = nll_loss(unflatten_parameters(model, theta), traj, mode).total;
    theta[p] = saved - h;
    const double down = nll_loss(unflatten_parameters(model, theta), traj, mode).total;
    theta[p] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double scale = std::max({std::abs(analytic[p]), std::abs(numeric), 1.0});
    const double rel = std::abs(analytic[p] - numeric) / scale;
    auto& block = report.blocks[std::min<std::size_t>(p / dd, 4)];
    block.max_relative_error = std::max(block.max_relative_error, rel);
  }
  for (auto& b : report.blocks) {
    b.exceeds = b.max_relative_error > tolerance;
    report.max_relative_error = std::max(report.max_relative_error, b.max_relative_error);
    report.passed = report.passed && !b.exceeds;
  }
  return report;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw StructuralError("learning_rate must be positive");
  if (learning_rate_final && !(*learning_rate_final > 0.0))
    throw StructuralError("learning_rate_final must be positive");
  if (max_iters < 1) throw StructuralError("max_iters must be at least 1");
  if (batch && *batch < 1) throw StructuralError("batch must be at least 1");
  if (!(init_scale > 0.0)) throw StructuralError("init_scale must be positive");
  if (!(variance_floor > 0.0)) throw StructuralError("variance_floor must be positive");
  if (plateau_window < 1) throw StructuralError("plateau_window must be at least 1");
  if (variance_floor_start && !(*variance_floor_start > 0.0))
    throw StructuralError("variance_floor_start must be positive");
  if (!(floor_anneal_fraction >= 0.0 && floor_anneal_fraction <= 1.0))
    throw StructuralError("floor_anneal_fraction must lie in [0, 1]");
  if (warmup_iters > 0 && !(warmup_learning_rate > 0.0 && warmup_learning_rate_final > 0.0))
    throw StructuralError("warm-up learning rates must be positive");
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
  nlohmann::json j;
  j["learning_rate"] = c.learning_rate;
  if (c.learning_rate_final) j["learning_rate_final"] = *c.learning_rate_final;
  j["max_iters"] = c.max_iters;
  if (c.batch)
    j["batch"] = *c.batch;
  else
    j["batch"] = "full";
  j["tolerance"] = c.tolerance;
  j["plateau_window"] = c.plateau_window;
  j["init_scale"] = c.init_scale;
  j["seed"] = c.seed;
  j["fit_diffusion"] = c.fit_diffusion;
  j["bilinear_drift"] = c.bilinear_drift;
  j["affine_diffusion"] = c.affine_diffusion;
  j["variance_floor"] = c.variance_floor;
  j["freeze_zero_diffusion_rows"] = c.freeze_zero_diffusion_rows;
  if (c.variance_floor_start) j["variance_floor_start"] = *c.variance_floor_start;
  j["floor_anneal_fraction"] = c.floor_anneal_fraction;
  j["warmup_iters"] = c.warmup_iters;
  j["warmup_learning_rate"] = c.warmup_learning_rate;
  j["warmup_learning_rate_final"] = c.warmup_learning_rate_final;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    if (j.contains("learning_rate_final") && !j["learning_rate_final"].is_null())
      c.learning_rate_final = j["learning_rate_final"].get<double>();
    c.max_iters = j.value("max_iters", c.max_iters);
    if (j.contains("batch")) {
      const auto& b = j["batch"];
      if (b.is_string()) {
        if (b.get<std::string>() != "full") throw StructuralError("batch must be 'full' or a positive integer");
      } else if (!b.is_null()) {
        c.batch = b.get<std::size_t>();
      }
    }
    c.tolerance = j.value("tolerance", c.tolerance);
    c.plateau_window = j.value("plateau_window", c.plateau_window);
    c.init_scale = j.value("init_scale", c.init_scale);
    c.seed = j.value("seed", c.seed);
    c.fit_diffusion = j.value("fit_diffusion", c.fit_diffusion);
    c.bilinear_drift = j.value("bilinear_drift", c.bilinear_drift);
    c.affine_diffusion = j.value("affine_diffusion", c.affine_diffusion);
    c.variance_floor = j.value("variance_floor", c.variance_floor);
    if (j.contains("variance_floor_start") && !j["variance_floor_start"].is_null())
      c.variance_floor_start = j["variance_floor_start"].get<double>();
    c.floor_anneal_fraction = j.value("floor_anneal_fraction", c.floor_anneal_fraction);
    c.warmup_iters = j.value("warmup_iters", c.warmup_iters);
    c.warmup_learning_rate = j.value("warmup_learning_rate", c.warmup_learning_rate);
    c.warmup_learning_rate_final = j.value("warmup_learning_rate_final", c.warmup_learning_rate_final);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    if (j.contains("freeze_zero_diffusion_rows"))
      c.freeze_zero_diffusion_rows = j["freeze_zero_diffusion_rows"].get<std::vector<bool>>();
  } catch (const nlohmann::json::exception& e) {
    throw StructuralError(std::string("malformed training config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

bool row_frozen(const TrainConfig& cfg, std::size_t i) {
  return i < cfg.freeze_zero_diffusion_rows.size() && cfg.freeze_zero_diffusion_rows[i];
}

SdeModel initial_model(std::size_t d, const TrainConfig& cfg) {
  NormalSampler rng(cfg.seed);
  auto draw = [&] { return cfg.init_scale * (2.0 * rng.uniform() - 1.0); };
  const bool affine = cfg.fit_diffusion && cfg.affine_diffusion;
  DriftParams drift = DriftParams::zeros(d);
  for (double& v : drift.a1.data()) v = draw();
  if (cfg.bilinear_drift)
    for (Matrix* m : {&drift.a2, &drift.a3})
      for (double& v : m->data()) v = draw();
  DiffusionParams diffusion = DiffusionParams::zeros(d, affine);
  diffusion.variance_floor = cfg.variance_floor;
  if (cfg.fit_diffusion) {
    for (std::size_t i = 0; i < d; ++i) {
      for (double& v : diffusion.b.row(i)) v = row_frozen(cfg, i) ? 0.0 : draw();
      if (affine) (*diffusion.bias)[i] = row_frozen(cfg, i) ? 0.0 : draw();
    }
  }
  return SdeModel(std::move(drift), std::move(diffusion));
}

void finish(FitResult& result, const std::vector<double>& best_theta, const std::vector<double>& best_row,
            std::size_t pairs) {
  result.model = unflatten_parameters(result.model, best_theta);
  double total = 0.0;
  for (double r : best_row) total += r;
  result.best_loss = total / static_cast<double>(pairs);
}

}  // namespace

FitResult fit(const Trajectory& traj, const TrainConfig& cfg) {
  cfg.validate();
  traj.validate(2);
  const std::size_t d = traj.dim;
  const CovarianceMode mode = cfg.fit_diffusion ? CovarianceMode::Likelihood : CovarianceMode::Identity;

  SdeModel model = initial_model(d, cfg);
  std::vector<LossRecord> warmup_history;
  if (cfg.fit_diffusion && cfg.warmup_iters > 0) {
    TrainConfig warm = cfg;
    warm.fit_diffusion = false;
    warm.warmup_iters = 0;
    warm.max_iters = cfg.warmup_iters;
    warm.learning_rate = cfg.warmup_learning_rate;
    warm.learning_rate_final = cfg.warmup_learning_rate_final;
    FitResult pre = fit(traj, warm);
    warmup_history = std::move(pre.history);
    if (pre.status == FitStatus::Diverged) {
      FitResult failed;
      failed.model = model;
      failed.status = FitStatus::Diverged;
      failed.message = "warm-up: " + pre.message;
      failed.warmup_history = std::move(warmup_history);
      return failed;
    }
    model = SdeModel(pre.model.drift(), model.diffusion());
  }
  std::vector<double> theta = flatten_parameters(model);
  std::vector<double> m(theta.size(), 0.0), v(theta.size(), 0.0);

  FitResult result;
  result.model = model;
  result.warmup_history = std::move(warmup_history);
  result.best_loss = std::numeric_limits<double>::infinity();
  std::vector<double> best_row(d, std::numeric_limits<double>::infinity());
  std::vector<double> best_theta = theta;
  const std::size_t dd = d * d;
  // flat indices owned by row i: a row of each of a1, a2, a3, b, then bias[i]
  auto row_indices = [&](std::size_t i) {
    std::vector<std::size_t> idx;
    for (std::size_t block = 0; block < 4; ++block)
      for (std::size_t j = 0; j < d; ++j) idx.push_back(block * dd + i * d + j);
    if (model.affine()) idx.push_back(4 * dd + i);
    return idx;
  };

  NormalSampler batch_rng(stream_seed(cfg.seed, 0xBA7C4));
  std::vector<std::size_t> order(traj.pairs());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const bool minibatch = cfg.batch && *cfg.batch < traj.pairs();
  const std::size_t batch_pairs = minibatch ? *cfg.batch : traj.pairs();

  const double lr_final = cfg.learning_rate_final.value_or(cfg.learning_rate);
  const double log_decay = std::log(lr_final / cfg.learning_rate);
  ModelGradient grad;
  double b1_pow = 1.0, b2_pow = 1.0;

  const double floor_target = model.diffusion().variance_floor;
  const bool annealing = cfg.fit_diffusion && cfg.variance_floor_start.has_value();
  const std::size_t anneal_iters =
      annealing ? static_cast<std::size_t>(cfg.floor_anneal_fraction * static_cast<double>(cfg.max_iters)) : 0;
  auto floor_at = [&](std::size_t it) {
    if (it >= anneal_iters) return floor_target;
    const double frac = static_cast<double>(it) / static_cast<double>(anneal_iters);
    return *cfg.variance_floor_start * std::pow(floor_target / *cfg.variance_floor_start, frac);
  };
  // running minimum of the per-pair loss, used by the plateau test
  std::vector<double> running_min;

  for (std::size_t it = 0;; ++it) {
    std::span<const std::size_t> subset;
    if (minibatch) {
      // partial Fisher-Yates: the first `batch` entries become the sample
      for (std::size_t q = 0; q < *cfg.batch; ++q) {
        const std::size_t r = q + static_cast<std::size_t>(batch_rng.uniform() * static_cast<double>(order.size() - q));
        std::swap(order[q], order[r]);
      }
      subset = std::span<const std::size_t>(order.data(), *cfg.batch);
    }

    LossBreakdown loss;
    try {
      if (annealing) {
        DiffusionParams diff = model.diffusion();
        diff.variance_floor = floor_at(it);
        model = SdeModel(model.drift(), diff);
      }
      model = unflatten_parameters(model, theta);
      loss = nll_loss_and_gradient(model, traj, mode, grad,
                                   cfg.freeze_zero_diffusion_rows.empty() ? nullptr : &cfg.freeze_zero_diffusion_rows,
                                   subset);
    } catch (const std::exception& e) {
      result.status = FitStatus::Diverged;
      result.message = std::string("iteration ") + std::to_string(it) + ": " + e.what();
      if (it > 0) finish(result, best_theta, best_row, batch_pairs);
      return result;
    }
    const double n = static_cast<double>(loss.pairs);
    result.history.push_back({it, loss.per_pair_mean, loss.mahalanobis / n, loss.logdet / n});
    const bool settled = it >= anneal_iters;
    if (settled) {
      for (std::size_t i = 0; i < d; ++i) {
        if (loss.row_total[i] < best_row[i]) {
          best_row[i] = loss.row_total[i];
          for (std::size_t p : row_indices(i)) best_theta[p] = theta[p];
        }
      }
    }
    running_min.push_back(settled ? std::min(running_min.empty() || it == anneal_iters
                                                 ? loss.per_pair_mean
                                                 : running_min.back(),
                                             loss.per_pair_mean)
                                  : loss.per_pair_mean);
    if (it == cfg.max_iters) {
      result.status = FitStatus::MaxIterations;
      break;
    }
    if (settled && it >= anneal_iters + cfg.plateau_window) {
      const double before = running_min[it - cfg.plateau_window];
      const double improvement = (before - running_min.back()) / std::max(std::abs(before), 1e-300);
      if (improvement < cfg.tolerance) {
        result.status = FitStatus::Converged;
        break;
      }
    }

    std::vector<double> g = grad.flatten();
    if (!cfg.bilinear_drift) std::fill_n(g.begin() + static_cast<std::ptrdiff_t>(d * d), 2 * d * d, 0.0);
    const double lr = cfg.learning_rate *
                      std::exp(log_decay * static_cast<double>(it) / static_cast<double>(cfg.max_iters));
    b1_pow *= cfg.beta1;
    b2_pow *= cfg.beta2;
    for (std::size_t p = 0; p < theta.size(); ++p) {
      const double gp = g[p] / n;
      m[p] = cfg.beta1 * m[p] + (1.0 - cfg.beta1) * gp;
      v[p] = cfg.beta2 * v[p] + (1.0 - cfg.beta2) * gp * gp;
      const double m_hat = m[p] / (1.0 - b1_pow);
      const double v_hat = v[p] / (1.0 - b2_pow);
      theta[p] -= lr * m_hat / (std::sqrt(v_hat) + cfg.adam_epsilon);
    }
  }
  finish(result, best_theta, best_row, batch_pairs);
  return result;
}

void write_loss_history_csv(const std::vector<LossRecord>& history, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write loss history: " + path);
  out << "iter,total,mahalanobis,logdet\n";
  char buf[128];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", r.iter, r.total, r.mahalanobis, r.logdet);
    out << buf;
  }
}

const char* to_string(FitStatus status) {
  switch (status) {
    case FitStatus::Converged: return "converged";
    case FitStatus::MaxIterations: return "max_iters";
    case FitStatus::Diverged: return "diverged";
  }
  return "unknown";
}

}  // namespace sdeid
