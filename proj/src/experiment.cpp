#include "sdeid/experiment.hpp"

#include <omp.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>

#include "sdeid/rng.hpp"
#include "sdeid/svg.hpp"

namespace sdeid {

namespace fs = std::filesystem;
using nlohmann::json;

const char* to_string(Method m) {
  switch (m) {
    case Method::Sde: return "sde";
    case Method::Det: return "det";
    case Method::GradMatch: return "gradmatch";
  }
  return "?";
}

Method method_from_string(const std::string& name) {
  if (name == "sde") return Method::Sde;
  if (name == "det") return Method::Det;
  if (name == "gradmatch") return Method::GradMatch;
  throw StructuralError("unknown method '" + name + "' (expected sde, det or gradmatch)");
}

// ---- system --------------------------------------------------------------

SimConfig SystemSpec::default_sim(std::size_t steps, double tau, std::uint64_t seed) const {
  return name == "gbm" ? gbm_sim_config(gbm, steps, tau, seed) : slorenz_sim_config(steps, tau, seed);
}

SdeModel SystemSpec::truth(bool affine) const {
  if (name == "gbm") return gbm_as_model(gbm);
  return slorenz_as_model(slorenz, affine).model;
}

std::unique_ptr<Dynamics> SystemSpec::dynamics() const {
  if (name == "gbm") {
    struct GbmDynamics final : Dynamics {
      explicit GbmDynamics(GbmSystem s) : model(gbm_as_model(s)), inner(model) {}
      std::size_t dim() const override { return 1; }
      void drift(std::span<const double> x, std::span<double> out) const override { inner.drift(x, out); }
      void noise_scale(std::span<const double> x, std::span<double> out) const override {
        inner.noise_scale(x, out);
      }
      SdeModel model;
      ModelDynamics inner;
    };
    return std::make_unique<GbmDynamics>(gbm);
  }
  return std::make_unique<SLorenzDynamics>(slorenz);
}

void SystemSpec::validate() const {
  if (name == "gbm") {
    gbm.validate();
  } else if (name == "slorenz") {
    slorenz.validate();
  } else {
    throw StructuralError("unknown system '" + name + "' (expected gbm or slorenz)");
  }
}

SystemSpec system_spec_from_json(const json& j) {
  SystemSpec s;
  if (j.is_string()) {
    s.name = j.get<std::string>();
  } else {
    s.name = j.at("name").get<std::string>();
    s.gbm.mu = j.value("mu", s.gbm.mu);
    s.gbm.sigma = j.value("sigma", s.gbm.sigma);
    s.gbm.x0 = j.value("x0", s.gbm.x0);
    if (s.name == "slorenz") s.slorenz.sigma = j.value("sigma", s.slorenz.sigma);
    s.slorenz.rho = j.value("rho", s.slorenz.rho);
    s.slorenz.beta = j.value("beta", s.slorenz.beta);
    s.slorenz.gamma = j.value("gamma", s.slorenz.gamma);
    s.slorenz.shared_noise = j.value("shared_noise", s.slorenz.shared_noise);
  }
  s.validate();
  return s;
}

json system_spec_to_json(const SystemSpec& s) {
  if (s.name == "gbm") return {{"name", "gbm"}, {"mu", s.gbm.mu}, {"sigma", s.gbm.sigma}, {"x0", s.gbm.x0}};
  return {{"name", "slorenz"},
          {"sigma", s.slorenz.sigma},
          {"rho", s.slorenz.rho},
          {"beta", s.slorenz.beta},
          {"gamma", s.slorenz.gamma},
          {"shared_noise", s.slorenz.shared_noise}};
}

// ---- spec ----------------------------------------------------------------

SimConfig sim_config_from_json(const json& j, const SimConfig& defaults) {
  SimConfig c = defaults;
  c.steps = j.value("steps", c.steps);
  c.tau = j.value("tau", c.tau);
  c.seed = j.value("seed", c.seed);
  c.burn_in = j.value("burn_in", c.burn_in);
  if (j.contains("initial_state")) c.initial_state = j["initial_state"].get<std::vector<double>>();
  return c;
}

json sim_config_to_json(const SimConfig& c) {
  return {{"steps", c.steps}, {"tau", c.tau}, {"seed", c.seed}, {"burn_in", c.burn_in},
          {"initial_state", c.initial_state}};
}

bool ExperimentSpec::has(Method m) const {
  return std::find(methods.begin(), methods.end(), m) != methods.end();
}

TrainConfig ExperimentSpec::config_for(Method m) const {
  if (m == Method::Det) {
    TrainConfig c = train_det.value_or(train);
    c.fit_diffusion = false;
    c.affine_diffusion = false;
    c.warmup_iters = 0;
    c.variance_floor_start.reset();
    return c;
  }
  TrainConfig c = train;
  c.fit_diffusion = true;
  return c;
}

SimConfig ExperimentSpec::run_sim(std::size_t r) const {
  SimConfig c = sim;
  c.seed = stream_seed(sim.seed, r);
  return c;
}

void ExperimentSpec::validate() const {
  system.validate();
  if (runs < 1) throw StructuralError("runs must be at least 1");
  if (methods.empty()) throw StructuralError("at least one method is required");
  sim.validate();
  if (sim.initial_state.size() != system.dim())
    throw StructuralError("initial state has dimension " + std::to_string(sim.initial_state.size()) +
                          ", system needs " + std::to_string(system.dim()));
  train.validate();
  if (train_det) train_det->validate();
  if (attractor.enabled && attractor.steps < 1) throw StructuralError("attractor steps must be at least 1");
  if (moments.enabled && moments.n_traj < 2) throw StructuralError("moments need at least 2 trajectories");
  if (moments.enabled && moments.stride < 1) throw StructuralError("moments stride must be at least 1");
  if (gradmatch.n_traj < 1) throw StructuralError("gradmatch needs at least one trajectory");
}

ExperimentSpec experiment_spec_from_json(const json& j) {
  ExperimentSpec s;
  s.name = j.value("name", s.name);
  s.system = system_spec_from_json(j.at("system"));
  const json sim = j.value("sim", json::object());
  SimConfig defaults = s.system.default_sim(sim.value("steps", std::size_t{1000}), sim.value("tau", 1e-3),
                                            sim.value("seed", std::uint64_t{0}));
  s.sim = sim_config_from_json(sim, defaults);
  if (j.contains("train")) s.train = train_config_from_json(j["train"]);
  if (j.contains("train_det")) s.train_det = train_config_from_json(j["train_det"]);
  s.runs = j.value("runs", s.runs);
  s.outputs = j.value("outputs", s.outputs);
  if (j.contains("methods")) {
    s.methods.clear();
    for (const auto& m : j["methods"]) s.methods.push_back(method_from_string(m.get<std::string>()));
  }
  if (j.contains("attractor")) {
    const json& a = j["attractor"];
    s.attractor.enabled = a.value("enabled", true);
    s.attractor.steps = a.value("steps", s.attractor.steps);
    s.attractor.burn_in = a.value("burn_in", s.attractor.burn_in);
    s.attractor.seed = a.value("seed", s.attractor.seed);
    s.attractor.topology.margin = a.value("margin", s.attractor.topology.margin);
    s.attractor.topology.min_fraction = a.value("min_fraction", s.attractor.topology.min_fraction);
    s.attractor.topology.min_crossings = a.value("min_crossings", s.attractor.topology.min_crossings);
    s.attractor.svg = a.value("svg", s.attractor.svg);
  }
  if (j.contains("moments")) {
    const json& m = j["moments"];
    s.moments.enabled = m.value("enabled", true);
    s.moments.n_traj = m.value("n_traj", s.moments.n_traj);
    s.moments.stride = m.value("stride", s.moments.stride);
    s.moments.seed = m.value("seed", s.moments.seed);
  }
  if (j.contains("gradmatch")) {
    const json& g = j["gradmatch"];
    s.gradmatch.n_traj = g.value("n_traj", s.gradmatch.n_traj);
    s.gradmatch.options.neighbor_count = g.value("neighbor_count", s.gradmatch.options.neighbor_count);
    if (g.contains("radius") && g["radius"].is_number())
      s.gradmatch.options.neighborhood_radius = g["radius"].get<double>();
    s.gradmatch.simulate_steps = g.value("simulate_steps", s.gradmatch.simulate_steps);
  }
  s.validate();
  return s;
}

json experiment_spec_to_json(const ExperimentSpec& s) {
  json methods = json::array();
  for (Method m : s.methods) methods.push_back(to_string(m));
  json j = {{"name", s.name},
            {"system", system_spec_to_json(s.system)},
            {"sim", sim_config_to_json(s.sim)},
            {"train", train_config_to_json(s.train)},
            {"runs", s.runs},
            {"outputs", s.outputs},
            {"methods", methods}};
  if (s.train_det) j["train_det"] = train_config_to_json(*s.train_det);
  if (s.attractor.enabled)
    j["attractor"] = {{"enabled", true},
                      {"steps", s.attractor.steps},
                      {"burn_in", s.attractor.burn_in},
                      {"seed", s.attractor.seed},
                      {"margin", s.attractor.topology.margin},
                      {"min_fraction", s.attractor.topology.min_fraction},
                      {"min_crossings", s.attractor.topology.min_crossings},
                      {"svg", s.attractor.svg}};
  if (s.moments.enabled)
    j["moments"] = {{"enabled", true}, {"n_traj", s.moments.n_traj}, {"stride", s.moments.stride},
                    {"seed", s.moments.seed}};
  if (s.has(Method::GradMatch)) {
    json radius = std::isfinite(s.gradmatch.options.neighborhood_radius)
                      ? json(s.gradmatch.options.neighborhood_radius)
                      : json("inf");
    j["gradmatch"] = {{"n_traj", s.gradmatch.n_traj},
                      {"neighbor_count", s.gradmatch.options.neighbor_count},
                      {"radius", radius},
                      {"simulate_steps", s.gradmatch.simulate_steps}};
  }
  return j;
}

ExperimentSpec load_experiment_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw StructuralError("cannot open experiment config: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw StructuralError("malformed experiment config " + path + ": " + e.what());
  }
  return experiment_spec_from_json(j);
}

// ---- protocol ------------------------------------------------------------

std::optional<TopologyVerdict> learned_topology(const SdeModel& model, const AttractorSpec& att,
                                                const SimConfig& base, std::size_t run, Trajectory* out) {
  SimConfig cfg = base;
  cfg.steps = att.steps;
  cfg.burn_in = att.burn_in;
  cfg.seed = stream_seed(att.seed, run);
  try {
    Trajectory traj = simulate(model, cfg);
    TopologyVerdict v = attractor_topology(traj, att.topology);
    if (out != nullptr) *out = std::move(traj);
    return v;
  } catch (const DivergenceError&) {
    return std::nullopt;
  }
}

namespace {

RunOutcome fit_run(const ExperimentSpec& spec, Method method, const Trajectory& data, const SdeModel& truth,
                   std::size_t r) {
  TrainConfig cfg = spec.config_for(method);
  cfg.seed = stream_seed(cfg.seed, r);
  FitResult fr = fit(data, cfg);
  RunOutcome out{fr.model, fr.status, fr.message, fr.best_loss, std::move(fr.history), {}, {}, false};
  out.rmse = coefficient_rmse(out.model, truth);
  if (spec.attractor.enabled) {
    out.topology = learned_topology(out.model, spec.attractor, spec.sim, r);
    out.simulation_diverged = !out.topology.has_value();
  }
  return out;
}

GradMatchOutcome gradmatch_run(const ExperimentSpec& spec, const Dynamics& dyn, std::size_t r,
                               NonparametricField* field_out, Trajectory* sim_out) {
  std::vector<Trajectory> data;
  if (spec.gradmatch.n_traj == 1) {
    data.push_back(simulate(dyn, spec.run_sim(r)));
  } else {
    Ensemble ens = simulate_ensemble(dyn, spec.run_sim(r), spec.gradmatch.n_traj);
    data = std::move(ens.trajectories);
  }
  GradientMatchResult gm = gradient_match(data, spec.gradmatch.options);
  GradMatchOutcome out;
  out.anchors = gm.field.support_points.size();
  out.dropped_anchors = gm.dropped_anchors;
  if (spec.gradmatch.simulate_steps > 0) {
    SimConfig cfg = spec.run_sim(r);
    cfg.steps = spec.gradmatch.simulate_steps;
    cfg.burn_in = 0;
    cfg.seed = stream_seed(spec.attractor.seed, r);
    try {
      NonparametricSimulation ns = simulate_nonparametric(gm.field, cfg);
      out.extrapolated_queries = ns.extrapolated_queries;
      if (spec.attractor.enabled && ns.trajectory.dim >= 3)
        out.topology = attractor_topology(ns.trajectory, spec.attractor.topology);
      if (sim_out != nullptr) *sim_out = std::move(ns.trajectory);
    } catch (const DivergenceError&) {
      out.simulation_diverged = true;
    }
  }
  if (field_out != nullptr) *field_out = std::move(gm.field);
  return out;
}

json outcome_stats(const std::vector<RunOutcome>& runs) {
  std::vector<double> drift, diffusion, global;
  std::size_t converged = 0, diverged = 0, lobes = 0, topo = 0;
  for (const auto& o : runs) {
    drift.push_back(o.rmse.drift_rmse);
    diffusion.push_back(o.rmse.diffusion_rmse);
    global.push_back(o.rmse.global_rmse);
    converged += o.status == FitStatus::Converged;
    diverged += o.status == FitStatus::Diverged;
    if (o.topology || o.simulation_diverged) ++topo;
    lobes += o.topology && o.topology->both_lobes;
  }
  auto mv = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    const double var = v.size() > 1 ? s / static_cast<double>(v.size() - 1) : 0.0;
    return json{{"mean", m}, {"variance", var}, {"values", v}};
  };
  json j = {{"drift_rmse", mv(drift)},
            {"diffusion_rmse", mv(diffusion)},
            {"global_rmse", mv(global)},
            {"converged", converged},
            {"diverged", diverged}};
  if (topo > 0) j["both_lobes_rate"] = static_cast<double>(lobes) / static_cast<double>(topo);
  return j;
}

// Root mean square over runs of each coefficient's absolute error.
std::map<std::string, double> per_coefficient_rmse(const std::vector<RunOutcome>& runs) {
  std::map<std::string, double> acc;
  for (const auto& o : runs)
    for (const auto& [label, err] : o.rmse.per_coefficient) acc[label] += err * err;
  for (auto& [label, v] : acc) v = std::sqrt(v / static_cast<double>(runs.size()));
  return acc;
}

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + p.string() + ": " + ec.message());
}

}  // namespace

const std::vector<RunOutcome>& ExperimentResult::outcomes(Method m) const {
  if (m == Method::Sde) return sde;
  if (m == Method::Det) return det;
  throw StructuralError("no parametric outcomes for gradmatch");
}

double ExperimentResult::mean_drift_rmse(Method m) const {
  const auto& runs = outcomes(m);
  if (runs.empty()) throw StructuralError(std::string("method ") + to_string(m) + " was not run");
  double s = 0.0;
  for (const auto& o : runs) s += o.rmse.drift_rmse;
  return s / static_cast<double>(runs.size());
}

double ExperimentResult::lobe_rate(Method m) const {
  std::size_t pass = 0, n = 0;
  if (m == Method::GradMatch) {
    for (const auto& g : gradmatch) {
      ++n;
      pass += g.topology && g.topology->both_lobes;
    }
  } else {
    for (const auto& o : outcomes(m)) {
      ++n;
      pass += o.topology && o.topology->both_lobes;
    }
  }
  if (n == 0) throw StructuralError(std::string("method ") + to_string(m) + " was not run");
  return static_cast<double>(pass) / static_cast<double>(n);
}

double ExperimentResult::truth_lobe_rate() const {
  if (truth_topology.empty()) throw StructuralError("attractor checks were not enabled");
  std::size_t pass = 0;
  for (const auto& v : truth_topology) pass += v.both_lobes;
  return static_cast<double>(pass) / static_cast<double>(truth_topology.size());
}

json ExperimentResult::summary() const {
  json j = {{"name", spec.name}, {"runs", spec.runs}, {"config", experiment_spec_to_json(spec)}};
  json methods = json::object();
  const bool with_bias = truth.affine();
  for (Method m : {Method::Sde, Method::Det}) {
    const auto& runs = m == Method::Sde ? sde : det;
    if (runs.empty()) continue;
    json mj = outcome_stats(runs);
    if (runs.size() >= 2) {
      std::vector<SdeModel> models;
      for (const auto& o : runs) models.push_back(o.model);
      json stats = json::object();
      for (const auto& label : coefficient_labels(truth.dim(), with_bias && m == Method::Sde)) {
        if (!models.front().affine() && label.kind == CoefficientLabel::Kind::DiffusionBias) continue;
        stats[label.str()] = to_json(parameter_statistics(models, label));
      }
      mj["parameters"] = stats;
    }
    mj["coefficient_rmse"] = per_coefficient_rmse(runs);
    methods[to_string(m)] = mj;
  }
  if (!sde.empty() && !det.empty()) {
    const auto s = per_coefficient_rmse(sde), d = per_coefficient_rmse(det);
    json gains = json::object();
    for (const auto& [label, dv] : d) {
      auto it = s.find(label);
      if (it == s.end() || !CoefficientLabel::parse(label).is_drift()) continue;
      gains[label] = dv == 0.0 ? json(nullptr) : json(gain_rate(it->second, dv));
    }
    const double md = mean_drift_rmse(Method::Det);
    j["gain_rate"] = {{"drift_rmse", md == 0.0 ? json(nullptr) : json(gain_rate(mean_drift_rmse(Method::Sde), md))},
                      {"per_coefficient", gains}};
  }
  if (!gradmatch.empty()) {
    json g = json::array();
    std::size_t lobes = 0, topo = 0;
    for (const auto& o : gradmatch) {
      json e = {{"anchors", o.anchors},
                {"dropped_anchors", o.dropped_anchors},
                {"extrapolated_queries", o.extrapolated_queries},
                {"simulation_diverged", o.simulation_diverged}};
      if (o.topology) {
        e["topology"] = to_json(*o.topology);
        lobes += o.topology->both_lobes;
      }
      topo += o.topology.has_value() || o.simulation_diverged;
      g.push_back(e);
    }
    methods["gradmatch"] = {{"runs", g}};
    if (topo > 0) methods["gradmatch"]["both_lobes_rate"] = static_cast<double>(lobes) / static_cast<double>(topo);
  }
  j["methods"] = methods;
  if (!truth_topology.empty()) j["truth_both_lobes_rate"] = truth_lobe_rate();
  return j;
}

ExperimentResult run_experiment(const ExperimentSpec& spec, const RunOptions& options) {
  spec.validate();
  ExperimentResult res;
  res.spec = spec;
  const bool affine = spec.has(Method::Sde) && spec.train.affine_diffusion;
  res.truth = spec.system.truth(affine);
  const std::unique_ptr<Dynamics> dyn = spec.system.dynamics();
  const std::size_t n = spec.runs;
  const bool want_sde = spec.has(Method::Sde), want_det = spec.has(Method::Det),
             want_gm = spec.has(Method::GradMatch);

  std::vector<std::optional<RunOutcome>> sde(n), det(n);
  std::vector<std::optional<GradMatchOutcome>> gm(n);
  std::vector<std::optional<TopologyVerdict>> truth_topo(n);
  NonparametricField first_field;
  Trajectory first_field_sim, first_truth_sim;
  std::vector<std::string> errors(n);

  // Each run owns its seeds; results land in per-run slots.
#pragma omp parallel for schedule(dynamic, 1)
  for (std::size_t r = 0; r < n; ++r) {
    try {
      if (want_sde || want_det) {
        const Trajectory data = simulate(*dyn, spec.run_sim(r));
        if (want_sde) sde[r] = fit_run(spec, Method::Sde, data, res.truth, r);
        if (want_det) det[r] = fit_run(spec, Method::Det, data, res.truth, r);
      }
      if (want_gm) gm[r] = gradmatch_run(spec, *dyn, r, r == 0 ? &first_field : nullptr,
                                         r == 0 ? &first_field_sim : nullptr);
      if (spec.attractor.enabled && spec.system.name == "slorenz") {
        SimConfig cfg = spec.sim;
        cfg.steps = spec.attractor.steps;
        cfg.burn_in = spec.attractor.burn_in;
        cfg.seed = stream_seed(spec.attractor.seed, r);
        Trajectory t = simulate(*dyn, cfg);
        truth_topo[r] = attractor_topology(t, spec.attractor.topology);
        if (r == 0) first_truth_sim = std::move(t);
      }
    } catch (const std::exception& e) {
      errors[r] = e.what();
    }
  }
  for (std::size_t r = 0; r < n; ++r)
    if (!errors[r].empty()) throw NumericalError("run " + std::to_string(r) + ": " + errors[r]);
  for (std::size_t r = 0; r < n; ++r) {
    if (sde[r]) res.sde.push_back(std::move(*sde[r]));
    if (det[r]) res.det.push_back(std::move(*det[r]));
    if (gm[r]) res.gradmatch.push_back(*gm[r]);
    if (truth_topo[r]) res.truth_topology.push_back(*truth_topo[r]);
  }

  if (spec.moments.enabled) {
    SimConfig mc = spec.sim;
    mc.burn_in = 0;
    mc.seed = spec.moments.seed;
    res.true_empirical = ensemble_moments(*dyn, mc, spec.moments.n_traj, spec.moments.stride);
    if (spec.system.name == "gbm")
      res.theoretical = gbm_theoretical_moments(spec.system.gbm, res.true_empirical->times);
    if (!res.sde.empty())
      res.sde_empirical = ensemble_moments(ModelDynamics(res.sde.front().model), mc, spec.moments.n_traj,
                                           spec.moments.stride);
    if (!res.det.empty())
      res.det_empirical = ensemble_moments(ModelDynamics(res.det.front().model), mc, spec.moments.n_traj,
                                           spec.moments.stride);
  }

  if (!options.write_outputs) return res;

  const fs::path out(spec.outputs);
  ensure_dir(out);
  write_text_file((out / "summary.json").string(), res.summary().dump(2) + "\n");
  if (!res.sde.empty() && !res.det.empty())
    write_text_file((out / "coefficient_bars.csv").string(),
                    coefficient_bars_csv(per_coefficient_rmse(res.sde), per_coefficient_rmse(res.det)));
  save_model(res.truth, (out / "truth_model.json").string());
  if (options.write_runs) {
    for (Method m : {Method::Sde, Method::Det}) {
      const auto& runs = m == Method::Sde ? res.sde : res.det;
      for (std::size_t r = 0; r < runs.size(); ++r) {
        char dir[32];
        std::snprintf(dir, sizeof dir, "run_%03zu", r);
        const fs::path rd = out / "runs" / dir;
        ensure_dir(rd);
        const std::string stem = to_string(m);
        save_model(runs[r].model, (rd / (stem + "_model.json")).string());
        write_loss_history_csv(runs[r].history, (rd / (stem + "_loss.csv")).string());
        json report = {{"status", to_string(runs[r].status)},
                       {"message", runs[r].message},
                       {"best_loss", runs[r].best_loss},
                       {"rmse", to_json(runs[r].rmse)}};
        if (runs[r].topology) report["topology"] = to_json(*runs[r].topology);
        report["simulation_diverged"] = runs[r].simulation_diverged;
        write_text_file((rd / (stem + "_report.json")).string(), report.dump(2) + "\n");
      }
    }
  }
  if (res.theoretical || res.true_empirical) {
    std::vector<std::pair<std::string, const MomentCurve*>> curves;
    if (res.theoretical) curves.emplace_back("theory", &*res.theoretical);
    if (res.true_empirical) curves.emplace_back("truth", &*res.true_empirical);
    if (res.sde_empirical) curves.emplace_back("sde", &*res.sde_empirical);
    if (res.det_empirical) curves.emplace_back("det", &*res.det_empirical);
    write_text_file((out / "moments.csv").string(), moment_curves_csv(curves));
  }
  if (!res.gradmatch.empty()) {
    write_field_csv(first_field, (out / "gradmatch_field.csv").string());
    if (first_field_sim.size() > 0) write_trajectory_csv(first_field_sim, (out / "gradmatch_trajectory.csv").string());
  }
  if (spec.attractor.enabled && spec.attractor.svg && spec.system.name == "slorenz") {
    std::vector<Trajectory> sims;
    std::vector<std::string> titles;
    if (first_truth_sim.size() > 0) {
      sims.push_back(first_truth_sim);
      titles.emplace_back("true SL");
    }
    for (Method m : {Method::Sde, Method::Det}) {
      const auto& runs = m == Method::Sde ? res.sde : res.det;
      if (runs.empty()) continue;
      Trajectory t;
      if (learned_topology(runs.front().model, spec.attractor, spec.sim, 0, &t)) {
        sims.push_back(std::move(t));
        titles.emplace_back(m == Method::Sde ? "Bi-NN-SDE" : "Bi-NN");
      }
    }
    if (first_field_sim.size() > 0) {
      sims.push_back(first_field_sim);
      titles.emplace_back("gradient matching");
    }
    std::vector<Panel> panels;
    for (std::size_t i = 0; i < sims.size(); ++i) panels.push_back({titles[i], &sims[i]});
    write_text_file((out / "attractor_run0.svg").string(), projection_svg(panels));
    for (std::size_t i = 0; i < sims.size(); ++i) {
      std::string stem = titles[i];
      for (char& c : stem)
        if (!std::isalnum(static_cast<unsigned char>(c))) c = '_';
      write_trajectory_csv(sims[i], (out / ("attractor_" + stem + ".csv")).string());
    }
  }
  return res;
}

}  // namespace sdeid
