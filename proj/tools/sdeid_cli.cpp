// sdeid: simulate, fit and evaluate bilinear SDE models from the command line.
//
// Exit codes: 0 success, 1 numerical failure (divergence, non-finite loss),
// 2 usage or input error.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sdeid/baselines.hpp"
#include "sdeid/eval.hpp"
#include "sdeid/experiment.hpp"
#include "sdeid/integrate.hpp"
#include "sdeid/model.hpp"
#include "sdeid/rng.hpp"
#include "sdeid/svg.hpp"
#include "sdeid/systems.hpp"
#include "sdeid/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sdeid;

namespace {

constexpr int kOk = 0;
constexpr int kNumerical = 1;
constexpr int kUsage = 2;

// Relative output paths land under $SDEID_OUTPUT_DIR when it is set.
std::string output_path(const std::string& path) {
  const char* base = std::getenv("SDEID_OUTPUT_DIR");
  if (base == nullptr || *base == '\0' || fs::path(path).is_absolute()) return path;
  fs::create_directories(base);
  return (fs::path(base) / path).string();
}

void ensure_parent(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) {
    std::error_code ec;
    fs::create_directories(parent, ec);
  }
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw StructuralError("cannot open config file: " + path);
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    throw StructuralError("malformed JSON in " + path + ": " + e.what());
  }
}

struct SystemFlags {
  std::string system = "gbm";
  std::string model_path;
  double gamma = 10.0;
  double mu = 0.5;
  double sigma = 1.0;
  double x0 = 1.0;
  bool shared_noise = false;
  bool affine = false;

  void add(CLI::App* cmd, bool with_model) {
    cmd->add_option("--system", system, "Ground-truth system")->check(CLI::IsMember({"gbm", "slorenz"}));
    if (with_model) cmd->add_option("--model", model_path, "Model JSON file to use instead of a system");
    cmd->add_option("--gamma", gamma, "Stochastic Lorenz noise parameter");
    cmd->add_option("--mu", mu, "GBM drift");
    cmd->add_option("--sigma", sigma, "GBM volatility");
    cmd->add_option("--x0", x0, "GBM initial value");
    cmd->add_flag("--shared-noise", shared_noise, "Stochastic Lorenz: one Brownian path for all components");
    cmd->add_flag("--affine", affine, "Embed the stochastic Lorenz truth with its diffusion bias");
  }

  SystemSpec spec() const {
    SystemSpec s;
    s.name = system;
    s.gbm = GbmSystem{mu, sigma, x0};
    s.slorenz.gamma = gamma;
    s.slorenz.shared_noise = shared_noise;
    s.validate();
    return s;
  }
};

// Dynamics for either a stored model or a named system; owns what it points to.
struct DynamicsSource {
  std::optional<SdeModel> model;
  std::unique_ptr<ModelDynamics> model_dyn;
  std::unique_ptr<Dynamics> system_dyn;
  SimConfig defaults;

  const Dynamics& get() const { return model ? static_cast<const Dynamics&>(*model_dyn) : *system_dyn; }
  std::size_t dim() const { return get().dim(); }
};

DynamicsSource make_source(const SystemFlags& f, std::size_t steps, double tau, std::uint64_t seed) {
  DynamicsSource src;
  if (!f.model_path.empty()) {
    src.model = load_model(f.model_path);
    src.model_dyn = std::make_unique<ModelDynamics>(*src.model);
    src.defaults = SimConfig{steps, tau, seed, StateVector(src.model->dim(), 1.0), 0};
    if (src.model->dim() == 1) src.defaults.initial_state = {f.x0};
  } else {
    const SystemSpec s = f.spec();
    src.system_dyn = s.dynamics();
    src.defaults = s.default_sim(steps, tau, seed);
  }
  return src;
}

// ---- simulate --------------------------------------------------------------

struct SimulateArgs {
  SystemFlags sys;
  double tau = 1e-3;
  std::size_t steps = 1000;
  std::uint64_t seed = 0;
  std::size_t n_traj = 1;
  std::optional<std::size_t> burn_in;
  std::string out = "trajectory.csv";
};

int cmd_simulate(const SimulateArgs& a) {
  DynamicsSource src = make_source(a.sys, a.steps, a.tau, a.seed);
  SimConfig cfg = src.defaults;
  if (a.burn_in) cfg.burn_in = *a.burn_in;
  cfg.validate();
  const std::string out = output_path(a.out);
  if (a.n_traj == 1) {
    ensure_parent(out);
    write_trajectory_csv(simulate(src.get(), cfg), out);
  } else {
    // Member k uses seed stream_seed(seed, k) and is written as out/traj_kkkk.csv.
    Ensemble ens = simulate_ensemble(src.get(), cfg, a.n_traj);
    if (!ens.failures.empty())
      throw DivergenceError(ens.failures.front().step,
                            "member " + std::to_string(ens.failures.front().index) + ": " +
                                ens.failures.front().message);
    fs::create_directories(out);
    for (std::size_t i = 0; i < ens.trajectories.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "traj_%04zu.csv", ens.indices[i]);
      write_trajectory_csv(ens.trajectories[i], (fs::path(out) / name).string());
    }
  }
  std::printf("simulated dim=%zu steps=%zu seed=%llu trajectories=%zu -> %s\n", src.dim(), cfg.steps,
              static_cast<unsigned long long>(cfg.seed), a.n_traj, out.c_str());
  return kOk;
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string method = "sde";
  std::string config;
  std::string out = "model.json";
  std::string history;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> max_iters;
  std::optional<double> learning_rate;
};

int cmd_train(const TrainArgs& a) {
  const Trajectory traj = read_trajectory_csv(a.data);
  TrainConfig cfg = a.config.empty() ? TrainConfig{} : train_config_from_json(read_json_file(a.config));
  cfg.fit_diffusion = a.method == "sde";
  if (!cfg.fit_diffusion) {
    cfg.affine_diffusion = false;
    cfg.warmup_iters = 0;
    cfg.variance_floor_start.reset();
  }
  if (a.seed) cfg.seed = *a.seed;
  if (a.max_iters) cfg.max_iters = *a.max_iters;
  if (a.learning_rate) cfg.learning_rate = *a.learning_rate;
  cfg.validate();

  const FitResult res = fit(traj, cfg);
  const std::string out = output_path(a.out);
  std::string history = a.history;
  if (history.empty()) history = (fs::path(a.out).parent_path() / (fs::path(a.out).stem().string() + "_loss.csv")).string();
  history = output_path(history);
  ensure_parent(history);
  write_loss_history_csv(res.history, history);
  if (res.status == FitStatus::Diverged) {
    std::fprintf(stderr, "training diverged: %s (history kept in %s)\n", res.message.c_str(), history.c_str());
    return kNumerical;
  }
  ensure_parent(out);
  save_model(res.model, out);
  std::printf("trained method=%s status=%s iterations=%zu best_loss=%.10g -> %s\n", a.method.c_str(),
              to_string(res.status), res.history.empty() ? 0 : res.history.back().iter, res.best_loss, out.c_str());
  return kOk;
}

// ---- evaluate --------------------------------------------------------------

struct EvaluateArgs {
  std::vector<std::string> models;
  std::string truth_path;
  SystemFlags sys;
  std::string out = "evaluation.json";
};

int cmd_evaluate(const EvaluateArgs& a) {
  const SdeModel truth = a.truth_path.empty() ? a.sys.spec().truth(a.sys.affine) : load_model(a.truth_path);
  std::vector<SdeModel> models;
  for (const auto& p : a.models) {
    models.push_back(load_model(p));
    if (models.back().dim() != truth.dim())
      throw StructuralError("model " + p + " has dimension " + std::to_string(models.back().dim()) +
                            ", truth has " + std::to_string(truth.dim()));
  }
  json report = {{"truth", model_to_json(truth)}};
  json per_model = json::array();
  std::vector<double> drift;
  for (std::size_t i = 0; i < models.size(); ++i) {
    const RmseReport r = coefficient_rmse(models[i], truth);
    drift.push_back(r.drift_rmse);
    per_model.push_back({{"file", a.models[i]}, {"rmse", to_json(r)}});
  }
  report["models"] = per_model;
  double mean = 0.0;
  for (double v : drift) mean += v;
  mean /= static_cast<double>(drift.size());
  report["mean_drift_rmse"] = mean;
  if (models.size() >= 2) {
    json stats = json::object();
    const bool bias = std::all_of(models.begin(), models.end(), [](const SdeModel& m) { return m.affine(); });
    for (const auto& label : coefficient_labels(truth.dim(), bias))
      stats[label.str()] = to_json(parameter_statistics(models, label));
    report["parameters"] = stats;
  }
  const std::string out = output_path(a.out);
  ensure_parent(out);
  write_text_file(out, report.dump(2) + "\n");
  std::printf("evaluated models=%zu mean_drift_rmse=%.6g -> %s\n", models.size(), mean, out.c_str());
  return kOk;
}

// ---- moments ---------------------------------------------------------------

struct MomentsArgs {
  SystemFlags sys;
  std::string compare_model;
  std::size_t n_traj = 10000;
  std::size_t steps = 1000;
  double tau = 1e-3;
  std::uint64_t seed = 0;
  std::size_t stride = 10;
  std::string out = "moments.csv";
  std::string report;
};

int cmd_moments(const MomentsArgs& a) {
  DynamicsSource src = make_source(a.sys, a.steps, a.tau, a.seed);
  SimConfig cfg = src.defaults;
  cfg.burn_in = 0;
  std::size_t failures = 0;
  const MomentCurve empirical = ensemble_moments(src.get(), cfg, a.n_traj, a.stride, &failures);
  std::vector<std::pair<std::string, const MomentCurve*>> curves;
  std::optional<MomentCurve> theory, other;
  const bool gbm = a.sys.model_path.empty() && a.sys.system == "gbm";
  if (gbm) {
    theory = gbm_theoretical_moments(a.sys.spec().gbm, empirical.times);
    curves.emplace_back("theory", &*theory);
  }
  curves.emplace_back(a.sys.model_path.empty() ? "truth" : "model", &empirical);
  std::optional<SdeModel> cmp;
  if (!a.compare_model.empty()) {
    cmp = load_model(a.compare_model);
    if (cmp->dim() != src.dim()) throw StructuralError("comparison model dimension mismatch");
    other = ensemble_moments(ModelDynamics(*cmp), cfg, a.n_traj, a.stride);
    curves.emplace_back("fitted", &*other);
  }
  const std::string out = output_path(a.out);
  ensure_parent(out);
  write_text_file(out, moment_curves_csv(curves));
  if (!a.report.empty()) {
    json rep = {{"failures", failures}};
    auto errors = [](const MomentErrors& e) {
      json j = json::object();
      const std::size_t last = e.times.size() - 1;
      j["time"] = e.times[last];
      j["mean_rel"] = e.mean_rel[last];
      j["variance_rel"] = e.variance_rel[last];
      return j;
    };
    if (theory) rep["truth_vs_theory"] = errors(moment_comparison(*theory, empirical));
    if (theory && other) rep["fitted_vs_theory"] = errors(moment_comparison(*theory, *other));
    const std::string rp = output_path(a.report);
    ensure_parent(rp);
    write_text_file(rp, rep.dump(2) + "\n");
  }
  std::printf("moments trajectories=%zu points=%zu failures=%zu -> %s\n", a.n_traj, empirical.times.size(), failures,
              out.c_str());
  return failures == a.n_traj ? kNumerical : kOk;
}

// ---- attractor -------------------------------------------------------------

struct AttractorArgs {
  SystemFlags sys;
  std::size_t steps = 40000;
  std::size_t burn_in = 20000;
  double tau = 1e-3;
  std::uint64_t seed = 0;
  TopologyOptions topology{1.0, 0.10, 5};
  std::string out = "attractor.csv";
  std::string verdict = "verdict.json";
  std::string svg;
};

int cmd_attractor(const AttractorArgs& a) {
  DynamicsSource src = make_source(a.sys, a.steps, a.tau, a.seed);
  if (src.dim() != 3) throw StructuralError("attractor needs a three-dimensional system or model");
  SimConfig cfg = src.defaults;
  cfg.initial_state = {1.0, 1.0, 1.0};
  cfg.burn_in = a.burn_in;
  const Trajectory traj = simulate(src.get(), cfg);
  const TopologyVerdict v = attractor_topology(traj, a.topology);
  const std::string out = output_path(a.out), verdict = output_path(a.verdict);
  ensure_parent(out);
  ensure_parent(verdict);
  write_trajectory_csv(traj, out);
  json vj = to_json(v);
  vj["thresholds"] = {{"margin", a.topology.margin},
                      {"min_fraction", a.topology.min_fraction},
                      {"min_crossings", a.topology.min_crossings}};
  write_text_file(verdict, vj.dump(2) + "\n");
  if (!a.svg.empty()) {
    const std::string svg = output_path(a.svg);
    ensure_parent(svg);
    write_text_file(svg, projection_svg({{a.sys.model_path.empty() ? "true SL" : a.sys.model_path, &traj}}));
  }
  std::printf("attractor both_lobes=%s crossings=%zu fractions=%.4f/%.4f -> %s\n", v.both_lobes ? "true" : "false",
              v.crossings, v.negative_fraction, v.positive_fraction, verdict.c_str());
  return kOk;
}

// ---- gradmatch -------------------------------------------------------------

struct GradMatchArgs {
  std::string data;
  GradientMatchOptions options;
  std::string out = "field.csv";
  std::size_t simulate_steps = 0;
  std::uint64_t seed = 0;
  std::string sim_out = "field_trajectory.csv";
};

int cmd_gradmatch(const GradMatchArgs& a) {
  std::vector<Trajectory> data;
  if (fs::is_directory(a.data)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(a.data))
      if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw StructuralError("no .csv trajectories in directory " + a.data);
    for (const auto& f : files) data.push_back(read_trajectory_csv(f.string()));
  } else {
    data.push_back(read_trajectory_csv(a.data));
  }
  const GradientMatchResult gm = gradient_match(data, a.options);
  const std::string out = output_path(a.out);
  ensure_parent(out);
  write_field_csv(gm.field, out);
  std::printf("gradmatch trajectories=%zu anchors=%zu dropped=%zu -> %s\n", data.size(),
              gm.field.support_points.size(), gm.dropped_anchors, out.c_str());
  if (a.simulate_steps > 0) {
    const auto x0 = data.front().state(0);
    SimConfig cfg{a.simulate_steps, gm.field.tau, a.seed, StateVector(x0.begin(), x0.end()), 0};
    const NonparametricSimulation sim = simulate_nonparametric(gm.field, cfg);
    const std::string so = output_path(a.sim_out);
    ensure_parent(so);
    write_trajectory_csv(sim.trajectory, so);
    std::printf("field simulation steps=%zu extrapolated_queries=%zu -> %s\n", a.simulate_steps,
                sim.extrapolated_queries, so.c_str());
  }
  return kOk;
}

// ---- run -------------------------------------------------------------------

struct RunArgs {
  std::string config;
  std::optional<std::size_t> runs;
  std::string out;
};

int cmd_run(const RunArgs& a) {
  json j = read_json_file(a.config);
  if (a.runs) j["runs"] = *a.runs;
  ExperimentSpec spec = experiment_spec_from_json(j);
  spec.outputs = output_path(a.out.empty() ? spec.outputs : a.out);
  const ExperimentResult res = run_experiment(spec);
  std::printf("experiment %s runs=%zu -> %s\n", spec.name.c_str(), spec.runs, spec.outputs.c_str());
  for (Method m : {Method::Sde, Method::Det}) {
    if (!spec.has(m)) continue;
    std::printf("  %-4s mean drift RMSE %.6g", to_string(m), res.mean_drift_rmse(m));
    if (spec.attractor.enabled) std::printf("  both-lobes rate %.3f", res.lobe_rate(m));
    std::printf("\n");
  }
  if (spec.has(Method::GradMatch) && spec.attractor.enabled && spec.gradmatch.simulate_steps > 0)
    std::printf("  gradmatch both-lobes rate %.3f\n", res.lobe_rate(Method::GradMatch));
  if (!res.truth_topology.empty()) std::printf("  true-system both-lobes rate %.3f\n", res.truth_lobe_rate());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Identification of bilinear stochastic differential equations"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "Simulate trajectories with Euler-Maruyama");
  sim.sys.add(c_sim, true);
  c_sim->add_option("--tau", sim.tau, "Time step");
  c_sim->add_option("--steps", sim.steps, "Recorded steps (the file holds steps+1 states)");
  c_sim->add_option("--seed", sim.seed, "Random seed");
  c_sim->add_option("--n-traj", sim.n_traj, "Number of trajectories; more than one writes a directory")
      ->check(CLI::PositiveNumber);
  c_sim->add_option("--burn-in", sim.burn_in, "Discarded initial steps (default per system)");
  c_sim->add_option("--out", sim.out, "Output file, or directory when --n-traj > 1");

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Fit a bilinear model to a trajectory");
  c_train->add_option("--data", tr.data, "Trajectory CSV")->required();
  c_train->add_option("--method", tr.method, "sde (likelihood) or det (squared error)")
      ->check(CLI::IsMember({"sde", "det"}));
  c_train->add_option("--config", tr.config, "Training configuration JSON");
  c_train->add_option("--out", tr.out, "Fitted model JSON");
  c_train->add_option("--history", tr.history, "Loss history CSV (default <out>_loss.csv)");
  c_train->add_option("--seed", tr.seed, "Initialization seed");
  c_train->add_option("--max-iters", tr.max_iters, "Iteration budget");
  c_train->add_option("--lr", tr.learning_rate, "Learning rate");

  EvaluateArgs ev;
  auto* c_eval = app.add_subcommand("evaluate", "Score fitted models against a ground truth");
  c_eval->add_option("--model", ev.models, "Fitted model JSON (repeatable)")->required();
  c_eval->add_option("--truth", ev.truth_path, "Ground-truth model JSON (default: --system)");
  ev.sys.add(c_eval, false);
  c_eval->add_option("--out", ev.out, "Report JSON");

  MomentsArgs mo;
  auto* c_mom = app.add_subcommand("moments", "Ensemble mean and variance curves");
  mo.sys.add(c_mom, true);
  c_mom->add_option("--compare", mo.compare_model, "Fitted model whose ensemble is added to the curves");
  c_mom->add_option("--n-traj", mo.n_traj, "Ensemble size")->check(CLI::Range(2, 100000000));
  c_mom->add_option("--steps", mo.steps, "Steps per path");
  c_mom->add_option("--tau", mo.tau, "Time step");
  c_mom->add_option("--seed", mo.seed, "Random seed");
  c_mom->add_option("--stride", mo.stride, "Record every stride-th step")->check(CLI::PositiveNumber);
  c_mom->add_option("--out", mo.out, "Curves CSV");
  c_mom->add_option("--report", mo.report, "Final-time relative errors JSON");

  AttractorArgs at;
  at.sys.system = "slorenz";
  auto* c_att = app.add_subcommand("attractor", "Long simulation and lobe-visit verdict");
  at.sys.add(c_att, true);
  c_att->add_option("--steps", at.steps, "Recorded steps");
  c_att->add_option("--burn-in", at.burn_in, "Discarded initial steps");
  c_att->add_option("--tau", at.tau, "Time step");
  c_att->add_option("--seed", at.seed, "Random seed");
  c_att->add_option("--margin", at.topology.margin, "Lobe margin on x");
  c_att->add_option("--min-fraction", at.topology.min_fraction, "Minimum share of states in each lobe");
  c_att->add_option("--min-crossings", at.topology.min_crossings, "Minimum lobe switches");
  c_att->add_option("--out", at.out, "Trajectory CSV");
  c_att->add_option("--verdict", at.verdict, "Verdict JSON");
  c_att->add_option("--svg", at.svg, "Optional (x, z) projection plot");

  GradMatchArgs gm;
  auto* c_gm = app.add_subcommand("gradmatch", "Nonparametric drift and diffusion estimate");
  c_gm->add_option("--data", gm.data, "Trajectory CSV or directory of aligned trajectories")->required();
  c_gm->add_option("-k,--neighbors", gm.options.neighbor_count, "Neighborhood size")->check(CLI::PositiveNumber);
  c_gm->add_option("--radius", gm.options.neighborhood_radius, "Neighborhood radius");
  c_gm->add_option("--out", gm.out, "Field CSV");
  c_gm->add_option("--simulate-steps", gm.simulate_steps, "Simulate this many steps from the field");
  c_gm->add_option("--seed", gm.seed, "Seed for the field simulation");
  c_gm->add_option("--sim-out", gm.sim_out, "Field simulation CSV");

  RunArgs ru;
  auto* c_run = app.add_subcommand("run", "Run a multi-run experiment recipe");
  c_run->add_option("--config", ru.config, "Recipe JSON")->required();
  c_run->add_option("--runs", ru.runs, "Override the number of runs")->check(CLI::PositiveNumber);
  c_run->add_option("--out", ru.out, "Override the output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (c_sim->parsed()) return cmd_simulate(sim);
    if (c_train->parsed()) return cmd_train(tr);
    if (c_eval->parsed()) return cmd_evaluate(ev);
    if (c_mom->parsed()) return cmd_moments(mo);
    if (c_att->parsed()) return cmd_attractor(at);
    if (c_gm->parsed()) return cmd_gradmatch(gm);
    if (c_run->parsed()) return cmd_run(ru);
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kNumerical;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  }
  return kUsage;
}
