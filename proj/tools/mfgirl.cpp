// Command-line front end: solve-mfe, solve-irl, simulate, estimate, verify, pipeline.

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mfgirl/estimation.hpp"
#include "mfgirl/gnep.hpp"
#include "mfgirl/io.hpp"
#include "mfgirl/irl.hpp"
#include "mfgirl/mdp.hpp"
#include "mfgirl/model.hpp"

namespace fs = std::filesystem;
using namespace mfgirl;

namespace {

enum Exit { kOk = 0, kNotConverged = 1, kBadInput = 2 };

std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr);
  std::string hex;
  char buf[3];
  for (unsigned i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    hex += buf;
  }
  return hex;
}

/// Accumulates the run manifest; written once at exit whatever the outcome.
struct Manifest {
  json doc = {{"inputs", json::object()}, {"outputs", json::array()}};
  std::string path = "manifest.json";

  void input(const std::string& file, const std::string& contents) {
    doc["inputs"][file] = {{"sha256", sha256_hex(contents)}, {"bytes", contents.size()}};
  }
  void output(const std::string& file) {
    doc["outputs"].push_back(file);
  }
  void write() const {
    try {
      write_file(path, dump_stable(doc));
    } catch (const std::exception& e) {
      std::cerr << "warning: could not write manifest: " << e.what() << '\n';
    }
  }
};

std::string read_input(Manifest& m, const std::string& path) {
  if (!fs::exists(path)) throw ValidationError("file not found: " + path);
  std::string text = read_file(path);
  m.input(path, text);
  return text;
}

void write_output(Manifest& m, const std::string& path, const std::string& text) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  write_file(path, text);
  m.output(path);
}

// ---- options shared by several commands ------------------------------------

struct ModelOptions {
  std::string model;
  std::optional<double> beta;
  std::vector<double> theta;
  std::optional<double> q;

  void add(CLI::App* app) {
    app->add_option("--model", model, "model file, or builtin:malware2 / builtin:malware10")
        ->required();
    app->add_option("--beta", beta, "override the discount factor");
    app->add_option("--theta", theta, "override the cost weights")->delimiter(',');
    app->add_option("--q", q, "infection probability for builtin:malware2 (default 0.9)");
  }

  ModelSpec load(Manifest& m) const {
    ModelSpec s;
    if (model == "builtin:malware2" || model == "builtin:malware10") {
      const bool two = model == "builtin:malware2";
      Vector th(3);
      if (two)
        th << 0.2, 1.0, 0.4;
      else
        th << 0.1, 1.0, 0.4;
      s = builtin_malware(two ? 2 : 10, th, two ? std::optional<double>(q.value_or(0.9)) : q,
                          0.8);
    } else if (model.rfind("builtin:", 0) == 0) {
      throw ValidationError("unknown builtin model: " + model);
    } else {
      s = load_model(read_input(m, model));
    }
    if (beta) {
      if (!(*beta > 0.0 && *beta < 1.0)) throw BadParameter("--beta must lie in (0,1)");
      s.beta = *beta;
    }
    if (!theta.empty()) {
      if (int(theta.size()) != s.k())
        throw BadParameter("--theta needs " + std::to_string(s.k()) + " values");
      s.theta = Eigen::Map<const Vector>(theta.data(), Eigen::Index(theta.size()));
    }
    validate(s);
    json& c = m.doc["config"];
    c["model"] = model;
    c["beta"] = s.beta;
    if (s.theta) c["theta"] = to_json(*s.theta);
    if (model == "builtin:malware2") c["q"] = q.value_or(0.9);
    return s;
  }
};

struct GnepOptions {
  double sigma = 0.1;
  double kappa = 0.001;
  double tol = 1e-8;
  int max_iter = 10000;
  std::string jacobian = "analytic";

  void add(CLI::App* app) {
    app->add_option("--sigma", sigma, "centering parameter")->capture_default_str();
    app->add_option("--kappa", kappa, "line-search backtracking factor")->capture_default_str();
    app->add_option("--tol", tol, "stop when |H|_2 <= tol")->capture_default_str();
    app->add_option("--max-iter", max_iter, "iteration cap")->capture_default_str();
    app->add_option("--jacobian", jacobian, "analytic or fd")
        ->check(CLI::IsMember({"analytic", "fd"}))
        ->capture_default_str();
  }

  GnepConfig config(json& c) const {
    GnepConfig g;
    g.sigma = sigma;
    g.kappa = kappa;
    g.tol = tol;
    g.max_iter = max_iter;
    g.jacobian = jacobian == "fd" ? JacobianMode::FiniteDifference : JacobianMode::Analytic;
    c["sigma"] = sigma;
    c["kappa"] = kappa;
    c["tol"] = tol;
    c["max_iter"] = max_iter;
    c["jacobian"] = jacobian;
    c["armijo_alpha"] = g.armijo_alpha;
    c["mass_weight"] = g.mass_weight.value_or(1.0);
    return g;
  }
};

struct IrlOptions {
  std::optional<double> step;
  double grad_tol = 1e-2;
  int max_iter = 1000000;

  void add(CLI::App* app, const std::string& prefix = "") {
    app->add_option("--step", step, "gradient step (default 1/L)");
    app->add_option("--grad-tol", grad_tol, "stop when |grad|_inf <= grad-tol")
        ->capture_default_str();
    app->add_option("--" + prefix + "max-iter", max_iter, "gradient iteration cap")
        ->capture_default_str();
  }

  IrlConfig config(json& c, const IrlProblem& p) const {
    IrlConfig ic;
    ic.step = step;
    ic.grad_tol = grad_tol;
    ic.max_iter = max_iter;
    ic.keep_trace = false;
    c["step"] = step ? *step : 1.0 / smoothness_constants(p).L;
    c["grad_tol"] = grad_tol;
    c["irl_max_iter"] = max_iter;
    return ic;
  }
};

struct SimOptions {
  int n_traj = 10000;
  std::optional<int> horizon;
  std::uint64_t seed = 0;
  double tail = 1e-4;

  void add(CLI::App* app) {
    app->add_option("--n-traj", n_traj, "number of trajectories")->capture_default_str();
    app->add_option("--horizon", horizon, "trajectory length (default from --tail)");
    app->add_option("--seed", seed, "RNG seed")->capture_default_str();
    app->add_option("--tail", tail, "target truncation bound for the default horizon")
        ->capture_default_str();
  }

  EstimatorConfig config(json& c, const ModelSpec& s, const Vector& mu) const {
    EstimatorConfig e;
    e.n_trajectories = n_traj;
    e.seed = seed;
    if (horizon) {
      e.horizon = *horizon;
    } else {
      const FeatureTable F = feature_table(s, mu);
      double fmax = 0.0;
      for (Eigen::Index r = 0; r < F.rows.rows(); ++r) fmax = std::max(fmax, F.rows.row(r).norm());
      e.horizon = horizon_for_tail(s.beta, fmax, tail);
    }
    c["n_traj"] = e.n_trajectories;
    c["horizon"] = e.horizon;
    c["seed"] = e.seed;
    return e;
  }
};

/// Mean field from a JSON array or any document with a mean_field key.
Vector load_mean_field(Manifest& m, const std::string& path) {
  const json j = parse_json(read_input(m, path), path);
  if (j.is_array()) return vector_from_json(j, "mean field");
  if (j.is_object() && j.contains("mean_field")) return vector_from_json(j["mean_field"], "mean_field");
  throw ValidationError(path + ": expected an array or an object with mean_field");
}

Vector load_vector(Manifest& m, const std::string& path, const char* key) {
  const json j = parse_json(read_input(m, path), path);
  if (j.is_array()) return vector_from_json(j, key);
  if (j.is_object() && j.contains(key)) return vector_from_json(j[key], key);
  throw ValidationError(path + ": expected an array or an object with " + key);
}

Equilibrium load_equilibrium(Manifest& m, const std::string& path, const ModelSpec& s) {
  Equilibrium e = equilibrium_from_json(parse_json(read_input(m, path), path));
  if (e.mean_field.size() != s.X() || e.policy.cols() != s.A())
    throw ValidationError(path + ": shapes do not match the model");
  validate_simplex(e.mean_field, s.X(), "mean_field");
  for (int x = 0; x < s.X(); ++x) validate_simplex(e.policy.row(x).transpose(), s.A(), "policy row");
  return e;
}

json mfe_summary(const GnepResult& r, const ModelSpec& s) {
  const Equilibrium& e = r.equilibrium;
  const double J = std::abs(policy_cost(s, e.policy, e.mean_field));
  return {{"converged", r.report.converged},
          {"status", r.report.status},
          {"iterations", r.report.iterations},
          {"h_norm_final", r.report.h_norm_history.back()},
          {"optimality_gap", e.optimality_gap},
          {"relative_gap", e.optimality_gap / std::max(J, 1e-300)},
          {"invariance_residual", e.invariance_residual}};
}

json irl_summary(const IrlResult& r, const IrlResiduals& res) {
  return {{"converged", r.converged},
          {"iterations", r.iterations},
          {"g_final", r.g_final},
          {"step_above_bound", r.step_above_bound},
          {"residuals", {{"feat", res.feat}, {"flow", res.flow}, {"marg", res.marg}, {"pos", res.pos}}}};
}

IrlResult solve_checked(Manifest& m, const IrlOptions& o, const IrlProblem& p, IrlResiduals& res) {
  const IrlConfig ic = o.config(m.doc["config"], p);
  if (!check_span_assumption(p).first)
    std::cerr << "note: feature/transition span condition fails; dual optimum may not be unique\n";
  IrlResult r = mfgirl::run_irl(p, ic);
  res = verify_irl(p, r.occupation);
  if (r.step_above_bound) std::cerr << "note: step exceeds 1/L\n";
  return r;
}

// ---- commands ----------------------------------------------------------------

struct SolveMfe {
  ModelOptions model;
  GnepOptions gnep;
  std::string out = "equilibrium.json";

  int run(Manifest& m) {
    const ModelSpec s = model.load(m);
    s.require_theta();
    const GnepResult r = run_gnep(s, gnep.config(m.doc["config"]));
    write_output(m, out, dump_stable(equilibrium_to_json(r.equilibrium, r.report)));
    m.doc["convergence"] = mfe_summary(r, s);
    std::cout << "solve-mfe: " << r.report.status << " after " << r.report.iterations
              << " iterations, |H| = " << r.report.h_norm_history.back() << '\n';
    return r.report.converged ? kOk : kNotConverged;
  }
};

struct SolveIrl {
  ModelOptions model;
  IrlOptions irl;
  std::string equilibrium, mean_field, f_expert;
  std::string out = "irl.json";

  int run(Manifest& m) {
    ModelSpec s = model.load(m);
    IrlProblem p;
    if (!equilibrium.empty()) {
      const Equilibrium e = load_equilibrium(m, equilibrium, s);
      p.mu_E = e.mean_field;
      if (f_expert.empty()) {
        s.require_theta();
        p.f_expert = feature_expectation(s, e.policy, e.mean_field, e.mean_field);
      }
    } else {
      p.mu_E = load_mean_field(m, mean_field);
      if (f_expert.empty())
        throw ValidationError("--f-expert is required when only --mean-field is given");
    }
    if (!f_expert.empty()) p.f_expert = load_vector(m, f_expert, "f_expert");
    p.spec = s;
    m.doc["config"]["mu_E"] = to_json(p.mu_E);
    m.doc["config"]["f_expert"] = to_json(p.f_expert);
    IrlResiduals res;
    const IrlResult r = solve_checked(m, irl, p, res);
    write_output(m, out, dump_stable(irl_to_json(r, res)));
    m.doc["convergence"] = irl_summary(r, res);
    std::cout << "solve-irl: " << (r.converged ? "converged" : "max_iter") << " after "
              << r.iterations << " iterations, g = " << r.g_final << '\n';
    return r.converged ? kOk : kNotConverged;
  }
};

struct Simulate {
  ModelOptions model;
  SimOptions sim;
  std::string equilibrium;
  std::string out = "trajectories.csv";

  int run(Manifest& m) {
    const ModelSpec s = model.load(m);
    const Equilibrium e = load_equilibrium(m, equilibrium, s);
    const EstimatorConfig ec = sim.config(m.doc["config"], s, e.mean_field);
    const auto data = simulate(s, e.policy, e.mean_field, e.mean_field, ec);
    std::ostringstream os;
    write_trajectories_csv(os, data);
    write_output(m, out, os.str());
    std::cout << "simulate: " << ec.n_trajectories << " trajectories of length " << ec.horizon
              << '\n';
    return kOk;
  }
};

struct Estimate {
  ModelOptions model;
  std::string trajectories, mean_field;
  std::string out = "estimate.json";

  int run(Manifest& m) {
    const ModelSpec s = model.load(m);
    std::istringstream in(read_input(m, trajectories));
    const auto data = read_trajectories_csv(in, s.X(), s.A());
    const Vector mu_hat = estimate_mean_field(data, s.X());
    const Vector mu_f = mean_field.empty() ? mu_hat : load_mean_field(m, mean_field);
    const FeatureEstimate fe = estimate_feature_expectation(s, data, mu_f, s.beta);
    m.doc["config"]["mean_field_source"] = mean_field.empty() ? "estimated" : mean_field;
    json j = {{"mean_field", to_json(mu_hat)},
              {"f_expert", to_json(fe.value)},
              {"tail_bound", fe.tail_bound},
              {"n_trajectories", data.size()},
              {"horizon", data.front().steps.size()}};
    write_output(m, out, dump_stable(j));
    std::cout << "estimate: tail bound " << fe.tail_bound << '\n';
    return kOk;
  }
};

struct Verify {
  ModelOptions model;
  std::string equilibrium, irl_file, out;
  double gap_tol = 1e-5, residual_tol = 1e-6;

  int run(Manifest& m) {
    ModelSpec s = model.load(m);
    s.require_theta();
    const Equilibrium e = load_equilibrium(m, equilibrium, s);
    auto [gap, res] = verify_mfe(s, e.policy, e.mean_field);
    const double J = std::abs(policy_cost(s, e.policy, e.mean_field));
    const double rel = gap / std::max(J, 1e-300);
    json report = {{"optimality_gap", gap}, {"relative_gap", rel}, {"invariance_residual", res}};
    bool ok = rel <= gap_tol && res <= residual_tol;
    if (!irl_file.empty()) {
      const json ij = parse_json(read_input(m, irl_file), irl_file);
      if (!ij.contains("occupation")) throw ValidationError(irl_file + ": missing occupation");
      IrlProblem p{s, e.mean_field, feature_expectation(s, e.policy, e.mean_field, e.mean_field)};
      const IrlResiduals r = verify_irl(p, matrix_from_json(ij["occupation"], "occupation"));
      report["irl"] = {{"feat", r.feat}, {"flow", r.flow}, {"marg", r.marg}, {"pos", r.pos}};
    }
    m.doc["config"]["gap_tol"] = gap_tol;
    m.doc["config"]["residual_tol"] = residual_tol;
    m.doc["convergence"] = report;
    if (!out.empty()) write_output(m, out, dump_stable(report));
    std::cout << dump_stable(report);
    return ok ? kOk : kNotConverged;
  }
};

struct Pipeline {
  ModelOptions model;
  GnepOptions gnep;
  IrlOptions irl;
  SimOptions sim;
  bool estimate = false;
  std::string out = "out";

  int run(Manifest& m) {
    ModelSpec s = model.load(m);
    s.require_theta();
    json& c = m.doc["config"];
    c["estimate"] = estimate;
    json& conv = m.doc["convergence"];
    const fs::path dir(out);

    m.doc["stage"] = "solve-mfe";
    const GnepResult g = run_gnep(s, gnep.config(c));
    write_output(m, (dir / "equilibrium.json").string(),
                 dump_stable(equilibrium_to_json(g.equilibrium, g.report)));
    conv["mfe"] = mfe_summary(g, s);
    std::cout << "pipeline: mfe " << g.report.status << " after " << g.report.iterations
              << " iterations\n";
    if (!g.report.converged) {
      std::cerr << "pipeline[solve-mfe]: " << g.report.status << '\n';
      return kNotConverged;
    }
    const Equilibrium& e = g.equilibrium;

    IrlProblem p;
    p.spec = s;
    if (estimate) {
      m.doc["stage"] = "estimate";
      const EstimatorConfig ec = sim.config(c, s, e.mean_field);
      const auto data = simulate(s, e.policy, e.mean_field, e.mean_field, ec);
      std::ostringstream os;
      write_trajectories_csv(os, data);
      write_output(m, (dir / "trajectories.csv").string(), os.str());
      p.mu_E = estimate_mean_field(data, s.X());
      const FeatureEstimate fe = estimate_feature_expectation(s, data, p.mu_E, s.beta);
      p.f_expert = fe.value;
      conv["estimate"] = {{"tail_bound", fe.tail_bound}};
    } else {
      p.mu_E = e.mean_field;
      p.f_expert = feature_expectation(s, e.policy, e.mean_field, e.mean_field);
    }
    c["mu_E"] = to_json(p.mu_E);
    c["f_expert"] = to_json(p.f_expert);

    m.doc["stage"] = "solve-irl";
    IrlResiduals res;
    const IrlResult r = solve_checked(m, irl, p, res);
    write_output(m, (dir / "irl.json").string(), dump_stable(irl_to_json(r, res)));
    conv["irl"] = irl_summary(r, res);
    std::cout << "pipeline: irl " << (r.converged ? "converged" : "max_iter") << " after "
              << r.iterations << " iterations\n";
    m.doc.erase("stage");
    if (!r.converged) {
      std::cerr << "pipeline[solve-irl]: gradient tolerance not reached\n";
      return kNotConverged;
    }
    return kOk;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mean-field game equilibrium and inverse RL toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every subcommand");

  std::string manifest_path;
  app.add_option("--manifest", manifest_path, "manifest path (default next to the outputs)");

  SolveMfe solve_mfe;
  auto* c_mfe = app.add_subcommand("solve-mfe", "compute a mean-field equilibrium");
  solve_mfe.model.add(c_mfe);
  solve_mfe.gnep.add(c_mfe);
  c_mfe->add_option("--out", solve_mfe.out, "equilibrium JSON")->capture_default_str();

  SolveIrl solve_irl_cmd;
  auto* c_irl = app.add_subcommand("solve-irl", "recover costs from an expert mean field");
  solve_irl_cmd.model.add(c_irl);
  solve_irl_cmd.irl.add(c_irl);
  auto* eq_opt = c_irl->add_option("--equilibrium", solve_irl_cmd.equilibrium,
                                   "equilibrium JSON (expert policy and mean field)");
  auto* mf_opt = c_irl->add_option("--mean-field", solve_irl_cmd.mean_field,
                                   "expert mean field (JSON array or document with mean_field)");
  eq_opt->excludes(mf_opt);
  c_irl->add_option("--f-expert", solve_irl_cmd.f_expert,
                    "expert feature expectation (JSON array or document with f_expert)");
  c_irl->add_option("--out", solve_irl_cmd.out, "IRL result JSON")->capture_default_str();

  Simulate sim_cmd;
  auto* c_sim = app.add_subcommand("simulate", "sample trajectories under an equilibrium");
  sim_cmd.model.add(c_sim);
  sim_cmd.sim.add(c_sim);
  c_sim->add_option("--equilibrium", sim_cmd.equilibrium, "equilibrium JSON")->required();
  c_sim->add_option("--out", sim_cmd.out, "trajectory CSV")->capture_default_str();

  Estimate est_cmd;
  auto* c_est = app.add_subcommand("estimate", "estimate mean field and feature expectation");
  est_cmd.model.add(c_est);
  c_est->add_option("--trajectories", est_cmd.trajectories, "trajectory CSV")->required();
  c_est->add_option("--mean-field", est_cmd.mean_field,
                    "use this mean field inside the features instead of the estimate");
  c_est->add_option("--out", est_cmd.out, "estimate JSON")->capture_default_str();

  Verify ver_cmd;
  auto* c_ver = app.add_subcommand("verify", "check an equilibrium (and optionally an IRL result)");
  ver_cmd.model.add(c_ver);
  c_ver->add_option("--equilibrium", ver_cmd.equilibrium, "equilibrium JSON")->required();
  c_ver->add_option("--irl", ver_cmd.irl_file, "IRL result JSON");
  c_ver->add_option("--gap-tol", ver_cmd.gap_tol, "relative optimality gap bound")
      ->capture_default_str();
  c_ver->add_option("--residual-tol", ver_cmd.residual_tol, "invariance residual bound")
      ->capture_default_str();
  c_ver->add_option("--out", ver_cmd.out, "report JSON (also printed)");

  Pipeline pipe_cmd;
  auto* c_pipe = app.add_subcommand("pipeline", "equilibrium, expert features, then IRL");
  pipe_cmd.model.add(c_pipe);
  pipe_cmd.gnep.add(c_pipe);
  pipe_cmd.irl.add(c_pipe, "irl-");
  pipe_cmd.sim.add(c_pipe);
  c_pipe->add_flag("--estimate", pipe_cmd.estimate, "estimate expert data from simulation");
  c_pipe->add_option("--out", pipe_cmd.out, "output directory")->capture_default_str();

  Manifest m;
  const auto t0 = std::chrono::steady_clock::now();
  int code = kOk;
  std::string command = "none";
  auto finish = [&](int rc) {
    m.doc["command"] = command;
    m.doc["exit_code"] = rc;
    m.doc["wall_clock_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    m.write();
    return rc;
  };

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    m.doc["error"] = e.what();
    return finish(kBadInput);
  }

  const std::pair<CLI::App*, std::string> outs[] = {
      {c_mfe, solve_mfe.out},     {c_irl, solve_irl_cmd.out}, {c_sim, sim_cmd.out},
      {c_est, est_cmd.out},       {c_ver, ver_cmd.out},       {c_pipe, pipe_cmd.out + "/x"}};
  for (const auto& [sub, path] : outs)
    if (sub->parsed()) {
      command = sub->get_name();
      const fs::path parent = fs::path(path).parent_path();
      m.path = (parent.empty() ? fs::path("manifest.json") : parent / "manifest.json").string();
    }
  if (!manifest_path.empty()) m.path = manifest_path;
  {
    const fs::path mp(m.path);
    if (mp.has_parent_path()) {
      std::error_code ec;
      fs::create_directories(mp.parent_path(), ec);
    }
  }

  try {
    if (c_mfe->parsed()) code = solve_mfe.run(m);
    else if (c_irl->parsed()) {
      if (solve_irl_cmd.equilibrium.empty() && solve_irl_cmd.mean_field.empty())
        throw ValidationError("solve-irl needs --equilibrium or --mean-field");
      code = solve_irl_cmd.run(m);
    } else if (c_sim->parsed()) code = sim_cmd.run(m);
    else if (c_est->parsed()) code = est_cmd.run(m);
    else if (c_ver->parsed()) code = ver_cmd.run(m);
    else if (c_pipe->parsed()) code = pipe_cmd.run(m);
  } catch (const NonFinite& e) {
    std::cerr << command << ": " << e.what() << '\n';
    m.doc["error"] = e.what();
    code = kNotConverged;
  } catch (const NotConverged& e) {
    std::cerr << command << ": " << e.what() << '\n';
    m.doc["error"] = e.what();
    code = kNotConverged;
  } catch (const std::exception& e) {
    std::string where = command;
    if (m.doc.contains("stage")) where += "[" + m.doc["stage"].get<std::string>() + "]";
    std::cerr << where << ": " << e.what() << '\n';
    m.doc["error"] = e.what();
    code = kBadInput;
  }
  return finish(code);
}
