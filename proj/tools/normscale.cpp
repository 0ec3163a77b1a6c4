// Command-line front end: scale-invariance checks, trajectory-equivalence
// checks, stochastic norm-model simulation, (eta, lambda) grid sweeps of the
// small BN network, power-law fits, and plot-data emission.
//
// Exit codes: 0 success / checks passed, 1 failed checks or a
// divergence-dominated sweep, 2 contract violations or bad usage.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "normscale/config_file.hpp"
#include "normscale/scalelab.hpp"
#include "normscale/table_io.hpp"

namespace ns = normscale;

namespace {

std::uint64_t master_seed_from_env() {
  const char* v = std::getenv("NORMSCALE_SEED");
  if (!v || !*v) return 42;
  char* end = nullptr;
  const unsigned long long s = std::strtoull(v, &end, 10);
  if (end == v || *end != '\0')
    throw ns::contract_error("NORMSCALE_SEED must be an unsigned integer");
  return s;
}

ns::Rule parse_rule(const std::string& name) {
  const auto r = ns::rule_from_name(name);
  if (!r) throw ns::contract_error("unknown rule: " + name);
  return *r;
}

// Mixed bag of unit kinds / activations / losses for the invariance check.
ns::ProblemInstance nth_instance(std::uint64_t seed, int i, bool normalized) {
  const ns::UnitKind kind =
      normalized ? (i % 2 == 0 ? ns::UnitKind::bn : ns::UnitKind::wn) : ns::UnitKind::plain;
  const ns::Nonlinearity g = i % 3 == 0   ? ns::Nonlinearity::tanh()
                             : i % 3 == 1 ? ns::Nonlinearity::softplus()
                                          : ns::Nonlinearity::relu();
  const ns::LossSpec loss =
      i % 2 == 0 ? ns::LossSpec::squared_error() : ns::LossSpec::logistic();
  return ns::make_random_problem(kind, g, loss, 24, 6, 0.01,
                                 ns::substream_seed(seed, static_cast<std::uint64_t>(i)));
}

int cmd_check_invariance(int instances, std::uint64_t seed) {
  const std::vector<double> alphas = {0.1, 0.5, 2.0, 10.0};
  double worst_forward = 0.0, worst_grad = 0.0, worst_obj = 0.0;
  double min_plain = std::numeric_limits<double>::infinity();

  for (int i = 0; i < instances; ++i) {
    const auto inst = nth_instance(seed, i, true);
    const Eigen::VectorXd y0 =
        inst.problem.kind == ns::UnitKind::bn
            ? ns::forward_bn(inst.problem.batch, inst.params, inst.problem.g).y
            : ns::forward_wn(inst.problem.batch, inst.params, inst.problem.g);
    const Eigen::VectorXd g0 = ns::data_grad(inst.problem, inst.params);
    const double l0 = ns::loss_value(inst.problem, inst.params);

    for (const double a : alphas) {
      ns::UnitParams scaled = inst.params;
      scaled.w *= a;
      const Eigen::VectorXd ya =
          inst.problem.kind == ns::UnitKind::bn
              ? ns::forward_bn(inst.problem.batch, scaled, inst.problem.g).y
              : ns::forward_wn(inst.problem.batch, scaled, inst.problem.g);
      worst_forward = std::max(worst_forward, (ya - y0).norm() / (1.0 + y0.norm()));

      const Eigen::VectorXd ga = ns::data_grad(inst.problem, scaled);
      worst_grad = std::max(worst_grad, (a * ga - g0).norm() / (1.0 + g0.norm()));

      worst_obj = std::max(worst_obj, ns::scale_identity_gap(inst.problem, inst.params, a) /
                                          (1.0 + std::abs(l0)));
    }

    // plain-unit control: scaling must NOT be invariant
    ns::ProblemInstance ctrl = nth_instance(seed ^ 0x5a5a5a5aULL, i, false);
    ctrl.problem.g = ns::Nonlinearity::identity();
    const Eigen::VectorXd p0 = ns::forward_plain(ctrl.problem.batch, ctrl.params, ctrl.problem.g);
    ns::UnitParams pscaled = ctrl.params;
    pscaled.w *= 2.0;
    const Eigen::VectorXd p2 = ns::forward_plain(ctrl.problem.batch, pscaled, ctrl.problem.g);
    min_plain = std::min(min_plain, (p2 - p0).norm() / (1.0 + p0.norm()));
  }

  std::printf("forward invariance    max rel deviation %.3e (tolerance 1e-12)\n", worst_forward);
  std::printf("gradient homogeneity  max rel deviation %.3e (tolerance 1e-12)\n", worst_grad);
  std::printf("objective identity    max rel gap       %.3e (tolerance 1e-12)\n", worst_obj);
  std::printf("plain-unit control    min deviation     %.3e (must exceed 1e-3)\n", min_plain);
  const bool pass = worst_forward <= 1e-12 && worst_grad <= 1e-12 &&
                    worst_obj <= 1e-12 && min_plain > 1e-3;
  std::printf("%s\n", pass ? "PASS" : "FAIL");
  return pass ? 0 : 1;
}

int cmd_check_equivalence(const std::string& rule_name, double alpha, long steps,
                          const std::string& unit, double eta, double lambda,
                          double tol, std::uint64_t seed) {
  const ns::Rule rule = parse_rule(rule_name);
  ns::UnitKind kind;
  if (unit == "bn") kind = ns::UnitKind::bn;
  else if (unit == "wn") kind = ns::UnitKind::wn;
  else if (unit == "plain") kind = ns::UnitKind::plain;
  else throw ns::contract_error("unit must be bn, wn, or plain");
  if (rule == ns::Rule::newton && kind != ns::UnitKind::bn)
    throw ns::contract_error("newton equivalence runs on the bn unit");

  const ns::Nonlinearity g =
      rule == ns::Rule::newton ? ns::Nonlinearity::tanh() : ns::Nonlinearity::softplus();
  const auto inst = ns::make_random_problem(kind, g, ns::LossSpec::squared_error(),
                                            32, 8, lambda, seed);
  ns::OptConfig cfg;
  cfg.rule = rule;
  cfg.eta = eta;
  cfg.lambda = lambda;
  const auto rep =
      ns::check_trajectory_equivalence(rule, inst.problem, inst.params, alpha, steps, tol, cfg);
  std::printf("rule %s  unit %s  alpha %g  steps %ld\n", rule_name.c_str(), unit.c_str(),
              rep.alpha, rep.steps);
  if (rep.diverged_at >= 0)
    std::printf("diverged at step %ld\n", rep.diverged_at);
  else
    std::printf("max relative deviation %.3e (tolerance %g)\n", rep.max_rel_deviation,
                rep.tolerance);
  std::printf("%s\n", rep.pass ? "PASS" : "FAIL");
  return rep.pass ? 0 : 1;
}

int cmd_simulate(const std::string& rule_name, double eta, double lambda, long steps,
                 int dim, int seeds, double sigma_grad, double gamma, double rho,
                 std::uint64_t seed) {
  const ns::Rule rule = parse_rule(rule_name);
  ns::NoiseModel nm;
  nm.dim = dim;
  nm.sigma_grad = sigma_grad;
  nm.gamma = gamma;
  ns::SimOptions opt;
  opt.rho = rho;

  double acc = 0.0;
  for (int s = 0; s < seeds; ++s) {
    const auto trace = ns::simulate_norm_dynamics(rule, eta, lambda, nm, steps,
                                                  ns::substream_seed(seed, static_cast<std::uint64_t>(s)), opt);
    acc += ns::stationary_norm(trace);
  }
  const double sim = acc / seeds;
  std::printf("simulated stationary norm  %.6g  (%d seed%s, %ld steps, d=%d)\n", sim, seeds,
              seeds == 1 ? "" : "s", steps, dim);
  try {
    const double closed =
        ns::equilibrium_norm_closed_form(rule, eta, lambda, nm, rho);
    std::printf("closed-form prediction     %.6g\n", closed);
    std::printf("ratio sim/closed           %.4f\n", sim / closed);
  } catch (const ns::out_of_model_error& e) {
    std::printf("closed form unavailable: %s\n", e.what());
  }
  return 0;
}

int cmd_sweep(const std::string& rule_name, const std::string& out_path,
              const std::string& config_path, int seeds, int jobs, bool normalize,
              std::uint64_t seed) {
  ns::TrainConfig cfg;
  if (!config_path.empty()) ns::apply_config(cfg, ns::parse_config_file(config_path));
  cfg.opt.rule = parse_rule(rule_name);
  if (normalize) cfg.normalize_weights = true;

  ns::GridSpec grid = ns::GridSpec::default_grid();
  grid.seeds_per_cell = seeds;

  const auto table = ns::run_grid_sweep(grid, cfg, seed, jobs);

  std::ofstream f(out_path, std::ios::binary);
  if (!f) throw ns::contract_error("cannot open output file: " + out_path);
  ns::emit_csv(table, f);

  std::size_t diverged = 0;
  for (const auto& r : table.records) diverged += r.diverged ? 1 : 0;
  std::printf("sweep %s: %zu cells, %zu diverged -> %s\n", rule_name.c_str(),
              table.records.size(), diverged, out_path.c_str());
  return diverged * 2 > table.records.size() ? 1 : 0;
}

int cmd_fit(const std::string& in_path, const std::string& what) {
  std::ifstream f(in_path, std::ios::binary);
  if (!f) throw ns::contract_error("cannot open input file: " + in_path);
  const auto table = ns::parse_csv(f);

  ns::LineFit fit;
  if (what == "lr-exponent") {
    fit = ns::fit_optimal_lr_exponent(table);
    std::printf("optimal-lr exponent: slope %.4f  intercept %.4f  rms residual %.4f\n",
                fit.slope, fit.intercept, fit.rms_residual);
  } else if (what == "norm-exponent") {
    fit = ns::fit_norm_exponent(table);
    std::printf("norm exponent vs eta/lambda: slope %.4f  intercept %.4f  rms residual %.4f\n",
                fit.slope, fit.intercept, fit.rms_residual);
  } else {
    throw ns::contract_error("--what must be norm-exponent or lr-exponent");
  }
  return 0;
}

int cmd_emit_plot(const std::string& in_path, const std::string& quantity,
                  const std::string& out_path) {
  std::ifstream f(in_path, std::ios::binary);
  if (!f) throw ns::contract_error("cannot open input file: " + in_path);
  const auto table = ns::parse_csv(f);
  const auto q = ns::plot_quantity_from_name(quantity);
  if (!q) throw ns::contract_error("--quantity must be norm or test_error");

  if (out_path.empty()) {
    ns::emit_plot_data(table, *q, std::cout);
  } else {
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw ns::contract_error("cannot open output file: " + out_path);
    ns::emit_plot_data(table, *q, out);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"scale-invariant training dynamics workbench"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  bool seed_given = false;

  int instances = 100;
  auto* inv = app.add_subcommand("check-invariance",
                                 "verify forward/gradient scale invariance on random units");
  inv->add_option("--instances", instances, "number of random instances")->default_val(100);

  std::string rule = "sgd", unit = "bn";
  double alpha = 2.0, eta = 0.05, lambda = 0.01, tol = 1e-6;
  long steps = 100;
  auto* eq = app.add_subcommand("check-equivalence",
                                "compare a scaled run against its rescaled-config twin");
  eq->add_option("--rule", rule, "update rule")->required();
  eq->add_option("--alpha", alpha, "weight scale factor")->required();
  eq->add_option("--steps", steps, "trajectory length")->required();
  eq->add_option("--unit", unit, "unit kind: bn, wn, plain")->default_val("bn");
  eq->add_option("--eta", eta, "learning rate")->default_val(0.05);
  eq->add_option("--lambda", lambda, "L2 coefficient")->default_val(0.01);
  eq->add_option("--tol", tol, "pass tolerance")->default_val(1e-6);

  std::string sim_rule = "sgd";
  double sim_eta = 0.1, sim_lambda = 0.01, sigma_grad = 1.0, gamma = 1.0, rho = 0.9;
  long sim_steps = 50000;
  int dim = 64, sim_seeds = 1;
  auto* sim = app.add_subcommand("simulate-equilibrium",
                                 "Monte-Carlo stationary weight norm vs closed form");
  sim->add_option("--rule", sim_rule, "update rule")->required();
  sim->add_option("--eta", sim_eta, "learning rate")->required();
  sim->add_option("--lambda", sim_lambda, "L2 coefficient")->required();
  sim->add_option("--steps", sim_steps, "simulation length")->required();
  sim->add_option("--dim", dim, "weight dimension")->default_val(64);
  sim->add_option("--seeds", sim_seeds, "seeds to average")->default_val(1);
  sim->add_option("--sigma-grad", sigma_grad, "gradient noise std")->default_val(1.0);
  sim->add_option("--gamma", gamma, "activation scale")->default_val(1.0);
  sim->add_option("--rho", rho, "momentum coefficient")->default_val(0.9);

  std::string optimizer, out_file, config_file;
  int sweep_seeds = 1, jobs = 1;
  bool normalize = false;
  auto* sweep = app.add_subcommand("sweep", "train the small net over the (eta, lambda) grid");
  sweep->add_option("--optimizer", optimizer, "update rule")->required();
  sweep->add_option("--out", out_file, "output CSV path")->required();
  sweep->add_option("--config", config_file, "key = value config file");
  sweep->add_option("--seeds", sweep_seeds, "replicates per cell")->default_val(1);
  sweep->add_option("--jobs", jobs, "worker threads")->default_val(1);
  sweep->add_flag("--normalize-weights", normalize, "project hidden weights to unit norm");

  std::string fit_in, fit_what;
  auto* fit = app.add_subcommand("fit", "fit a power law from a sweep CSV");
  fit->add_option("--in", fit_in, "input CSV path")->required();
  fit->add_option("--what", fit_what, "norm-exponent or lr-exponent")->required();

  std::string plot_in, plot_quantity = "norm", plot_out;
  auto* plot = app.add_subcommand("emit-plot", "surface triples (log lambda, log eta, value)");
  plot->add_option("--in", plot_in, "input CSV path")->required();
  plot->add_option("--quantity", plot_quantity, "norm or test_error")->default_val("norm");
  plot->add_option("--out", plot_out, "output path (default stdout)");

  for (auto* sub : {inv, eq, sim, sweep}) {
    sub->add_option("--seed", seed, "master seed (default: NORMSCALE_SEED or 42)")
        ->each([&seed_given](const std::string&) { seed_given = true; });
  }

  try {
    app.parse(argc, argv);
    if (!seed_given) seed = master_seed_from_env();

    if (*inv) return cmd_check_invariance(instances, seed);
    if (*eq) return cmd_check_equivalence(rule, alpha, steps, unit, eta, lambda, tol, seed);
    if (*sim) return cmd_simulate(sim_rule, sim_eta, sim_lambda, sim_steps, dim, sim_seeds,
                                  sigma_grad, gamma, rho, seed);
    if (*sweep) return cmd_sweep(optimizer, out_file, config_file, sweep_seeds, jobs,
                                 normalize, seed);
    if (*fit) return cmd_fit(fit_in, fit_what);
    if (*plot) return cmd_emit_plot(plot_in, plot_quantity, plot_out);
    return 2;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // help/version exit cleanly; usage errors are contract errors
  } catch (const ns::error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
