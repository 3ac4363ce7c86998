// Command-line surface: simulate | allocate | design-coil | certify | normalize.
// Exit codes: 0 ok, 1 config error, 2 infeasible, 3 bound violation.

#include <CLI11.hpp>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "emff/coil_design.hpp"
#include "emff/scenario.hpp"

namespace {

using namespace emff;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitInfeasible = 2;
constexpr int kExitBound = 3;

struct CommonArgs {
  std::vector<std::string> configs;
  std::string out_dir = "out";
  long seed = -1;
  int jobs = 1;
  std::string model;
};

void apply_overrides(Config& cfg, const CommonArgs& args) {
  if (args.seed >= 0) cfg.set_number("seed", static_cast<double>(args.seed));
  if (!args.model.empty()) cfg.set_text("model", args.model);
}

int cmd_simulate(const CommonArgs& args) {
  std::atomic<int> rc{kExitOk};
  std::atomic<size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= args.configs.size()) return;
      try {
        Config cfg = Config::parse_file(args.configs[i]);
        apply_overrides(cfg, args);
        ScenarioConfig sc = scenario_from_config(cfg);
        cfg.finish();
        const RunResult res = run_formation_scenario(sc, args.out_dir);
        std::cout << sc.name << ": wrote " << res.csv_path << "\n";
        for (const auto& [k, v] : res.summary.values) std::cout << "  " << k << " = " << v << "\n";
        if (res.summary.bound_violation) {
          std::cout << sc.name << ": BOUND VIOLATION\n";
          int expect = kExitOk;
          rc.compare_exchange_strong(expect, kExitBound);
        }
      } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        rc = kExitConfig;
      } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        int expect = kExitOk;
        rc.compare_exchange_strong(expect, kExitInfeasible);
      }
    }
  };
  const int jobs = std::max(1, std::min<int>(args.jobs, args.configs.size()));
  std::vector<std::thread> pool;
  for (int j = 0; j < jobs - 1; ++j) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  return rc;
}

int cmd_allocate(const CommonArgs& args) {
  Config cfg = Config::parse_file(args.configs.at(0));
  apply_overrides(cfg, args);
  const int n = static_cast<int>(cfg.number("n"));
  const auto pos = cfg.array2("positions_m");
  SwarmState swarm;
  swarm.satellites.resize(n);
  for (int j = 0; j < n; ++j)
    swarm.satellites[j].position = Vector3d(pos[j][0], pos[j][1], pos[j][2]);
  CoilSpec coil = CoilSpec::circular(cfg.number("coil.turns", 120.0),
                                     cfg.number("coil.loop_radius_m", 0.075),
                                     cfg.number("coil.mu_r", 1.0),
                                     cfg.number("coil.demag_factor", 0.0));
  const auto cmds = cfg.array2("command_wrench");
  if (static_cast<int>(cmds.size()) != n) throw ConfigError("command_wrench needs n rows");
  std::vector<Vector6d> commands(n);
  for (int j = 0; j < n; ++j) {
    if (cmds[j].size() != 6) throw ConfigError("command_wrench rows must have 6 entries");
    for (int k = 0; k < 6; ++k) commands[j](k) = cmds[j][k];
  }
  AllocationOptions opts;
  opts.omega = cfg.number("omega_rad_s", 8.0 * kPi);
  opts.seed = static_cast<unsigned>(cfg.number("seed", 1));
  opts.power_weights = physical_power_weights(coil, cfg.number("coil.resistance_ohm", 2.0), n);
  const std::string model = cfg.text("model", "exact");
  const int nodes = static_cast<int>(cfg.number("quadrature_nodes", 32));
  cfg.finish();

  QuadratureOptions quad{nodes, 512, 1e-6, false};
  const GeometryStack stack = stack_geometry(
      swarm, coil, model == "far" ? GeometryModel::far : GeometryModel::exact, quad);
  const MatrixXd completion = stack_completion(swarm);
  const AllocationResult res = solve_opt_ac(commands, stack, completion, opts);

  std::filesystem::create_directories(args.out_dir);
  const std::string path = args.out_dir + "/allocation.txt";
  std::ofstream os(path);
  os << "# emff-allocation v1\n";
  os << "feasible = " << (res.feasible ? "true" : "false") << "\n";
  os << "residual_norm = " << res.residual_norm << "\n";
  os << "primal_power_w = " << res.primal_power << "\n";
  os << "dual_lower_bound_w = " << res.dual_bound << "\n";
  os << "jacobian_null_dim = " << res.jacobian_null_dim << "\n";
  if (!res.feasible) {
    os << "# " << res.message << "\n";
    std::cout << "allocation infeasible: " << res.message << "\n";
    return kExitInfeasible;
  }
  PairGeometryFn pair_fn = [&](int r, int s) {
    return geometry_matrix(swarm.satellites[r], swarm.satellites[s], coil, coil, quad);
  };
  const auto sups = allocation_ripple_sup(swarm, res.waves, pair_fn);
  for (int j = 0; j < n; ++j) {
    os << "sat" << j << "_s = [" << res.waves[j].s.transpose() << "]\n";
    os << "sat" << j << "_c = [" << res.waves[j].c.transpose() << "]\n";
    os << "sat" << j << "_ripple_sup_n = " << sups[j] << "\n";
  }
  std::cout << "allocation: power " << res.primal_power << " W, dual bound " << res.dual_bound
            << " W, residual " << res.residual_norm << "\n";
  std::cout << "wrote " << path << "\n";
  if (res.dual_bound > res.primal_power + 1e-6) {
    std::cout << "BOUND VIOLATION: dual exceeds primal\n";
    return kExitBound;
  }
  return kExitOk;
}

int cmd_design_coil(const CommonArgs& args) {
  Config cfg = Config::parse_file(args.configs.at(0));
  apply_overrides(cfg, args);
  DesignConstraints cs;
  cs.accel_threshold = cfg.number("accel_threshold_mps2", cs.accel_threshold);
  if (cs.accel_threshold > 4e-3)
    throw ConfigError("accel_threshold_mps2 must not exceed 4e-3");
  cs.mass_cap = cfg.number("coil_mass_cap_kg", cs.mass_cap);
  cs.coil_height = cfg.number("coil_height_m", cs.coil_height);
  cs.half_ac_factor = cfg.flag("half_ac_factor", cs.half_ac_factor);
  cs.operating_distance_factor = cfg.number("distance_factor", cs.operating_distance_factor);
  const double nominal_d = cfg.number("nominal_diameter_m", 0.15);
  const double nominal_v = cfg.number("nominal_voltage_v", 11.0);
  cfg.finish();

  const auto wires = default_wire_table();
  const OptimizationOutcome opt = optimize_design(wires, cs);

  std::filesystem::create_directories(args.out_dir);
  const std::string path = args.out_dir + "/coil_design.txt";
  std::ofstream os(path);
  os << "# emff-coil-design v1\n";
  if (!opt.feasible) {
    os << "feasible = false\n";
    for (const auto& v : opt.violation_margins) os << "# " << v << "\n";
    std::cout << "design infeasible\n";
    return kExitInfeasible;
  }
  os << "feasible = true\n";
  os << "wire = " << opt.best.wire_name << "\n";
  os << "coil_diameter_m = " << opt.best.coil_diameter << "\n";
  os << "voltage_v = " << opt.best.voltage << "\n";
  os << "resistance_ohm = " << opt.best.resistance << "\n";
  os << "turns = " << opt.best.turns << "\n";
  os << "mu_max_am2 = " << opt.best.mu_max << "\n";
  os << "coil_mass_kg = " << opt.best.coil_mass << "\n";
  os << "wire_thickness_m = " << opt.best.wire_thickness << "\n";
  os << "binding = " << opt.best.binding << "\n";

  // Nominal-point comparison at the configured diameter and supply.
  DesignInputs in;
  in.coil_diameter = nominal_d;
  in.voltage = nominal_v;
  in.coil_height = cs.coil_height;
  in.mass_cap = cs.mass_cap;
  const DesignResult nominal = dependent_parameters(wires.front(), in);
  os << "nominal_turns = " << nominal.turns << "\n";
  os << "nominal_mu_am2 = " << nominal.mu_max << "\n";
  os << "nominal_resistance_ohm = " << nominal.resistance << "\n";
  std::cout << "design: wire '" << opt.best.wire_name << "', D = " << opt.best.coil_diameter
            << " m, V = " << opt.best.voltage << " V\n";
  std::cout << "wrote " << path << "\n";
  return kExitOk;
}

int cmd_certify(const CommonArgs& args) {
  Config cfg = Config::parse_file(args.configs.at(0));
  apply_overrides(cfg, args);
  CoilSpec coil = CoilSpec::circular(cfg.number("coil.turns", 120.0),
                                     cfg.number("coil.loop_radius_m", 0.075));
  GeometrySurrogateConfig gcfg;
  gcfg.samples = static_cast<int>(cfg.number("samples", 20000));
  gcfg.quadrature_nodes = static_cast<int>(cfg.number("quadrature_nodes", 40));
  gcfg.seed = static_cast<unsigned>(cfg.number("seed", 11));
  gcfg.train.hidden.assign(static_cast<size_t>(cfg.number("hidden_layers", 3)),
                           static_cast<int>(cfg.number("hidden_units", 128)));
  gcfg.train.epochs = static_cast<int>(cfg.number("epochs", 300));
  gcfg.train.lr = cfg.number("learning_rate", 2e-3);
  const int levels = static_cast<int>(cfg.number("quant_levels", 3));
  const int n_bit = static_cast<int>(cfg.number("quant_bits", 8));
  const int protect = static_cast<int>(cfg.number("protect_order", 1));
  const auto flip_counts = cfg.array("flip_counts", {0, 1, 4, 16});
  const std::string model_path = cfg.text("surrogate_path", "");
  cfg.finish();

  std::filesystem::create_directories(args.out_dir);
  SurrogateMetrics metrics;
  GeometrySurrogate surrogate;
  if (!model_path.empty() && std::filesystem::exists(model_path)) {
    surrogate = load_geometry_surrogate(model_path);
    std::cout << "loaded surrogate from " << model_path << "\n";
  } else {
    surrogate = train_geometry_surrogate(coil, gcfg, &metrics);
    const std::string save_path =
        model_path.empty() ? args.out_dir + "/geometry_surrogate.txt" : model_path;
    const auto parent = std::filesystem::path(save_path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    save_geometry_surrogate(surrogate, save_path);
    std::cout << "trained surrogate: held-out median rel err " << metrics.median_rel_error
              << ", p95 " << metrics.p95_rel_error << "\n";
  }

  const std::string path = args.out_dir + "/certify.txt";
  std::ofstream os(path);
  os << "# emff-certify v1\n";
  os << "heldout_median_rel_err = " << metrics.median_rel_error << "\n";
  os << "heldout_p95_rel_err = " << metrics.p95_rel_error << "\n";
  os << "covering_radius = " << metrics.covering_radius << "\n";

  const double lip_bound = lipschitz_bound(surrogate.net);
  const double lip_emp = empirical_lipschitz(surrogate.net, 100000, gcfg.seed);
  os << "lipschitz_product_bound = " << lip_bound << "\n";
  os << "lipschitz_empirical = " << lip_emp << "\n";
  bool ok = lip_emp <= lip_bound;

  const QuantizedModel q = residual_quantize(surrogate.net, levels, n_bit);
  os << "# flips  gamma_bound  gamma_measured\n";
  double prev_bound = 0.0;
  for (double fc : flip_counts) {
    const LipschitzReport rep = bitflip_degradation(q, static_cast<int>(fc), protect, gcfg.seed);
    os << "flips_" << static_cast<int>(fc) << " = [" << rep.degradation_ratio_bound << ", "
       << rep.degradation_ratio_measured << "]\n";
    ok = ok && rep.degradation_ratio_measured <= rep.degradation_ratio_bound &&
         rep.degradation_ratio_bound >= prev_bound;
    prev_bound = rep.degradation_ratio_bound;
  }
  os << "bounds_hold = " << (ok ? "true" : "false") << "\n";
  std::cout << "wrote " << path << "\n";
  return ok ? kExitOk : kExitBound;
}

int cmd_normalize(const CommonArgs& args) {
  Config cfg = Config::parse_file(args.configs.at(0));
  apply_overrides(cfg, args);
  const auto edges = cfg.array2("edges");
  const int n = static_cast<int>(cfg.number("n"));
  MatrixXd e = MatrixXd::Zero(n, edges.size());
  for (size_t k = 0; k < edges.size(); ++k) {
    e(static_cast<int>(edges[k][0]), k) = -1.0;
    e(static_cast<int>(edges[k][1]), k) = 1.0;
  }
  OrbitalParams params;
  params.k_A = cfg.number("k_A", params.k_A);
  params.gamma = cfg.number("gamma", params.gamma);
  params.k1 = cfg.number("k1", params.k1);
  const double dt_orb = cfg.number("dt_orb_s", 10.0);
  const double dt_gnd = cfg.number("dt_gnd_s", 0.1875);
  const double disturbance_inf = cfg.number("ground_disturbance_inf", 1e-3);
  cfg.finish();

  const double beta = dt_orb / dt_gnd;
  const double theta11 = 1e-3 / disturbance_inf;
  const NormalizationMap nm = build_normalization(params, e, theta11, beta);

  std::filesystem::create_directories(args.out_dir);
  const std::string path = args.out_dir + "/normalization.txt";
  std::ofstream os(path);
  os << "# emff-normalization v1\n";
  os << "beta = " << beta << "\n";
  os << "# reference value from the experiment write-up: beta = 55.6 (uses dt_gnd = 0.18 s);\n";
  os << "# dt_orb/dt_gnd = " << dt_orb << "/" << dt_gnd << " gives " << beta << "\n";
  os << "theta11 = " << theta11 << "\n";
  os << "k_v = " << nm.k_v << "\n";
  os << "k_p = " << nm.k_p << "\n";
  os << "similarity_residual = " << nm.similarity_residual << "\n";
  std::cout << "normalization: beta = " << beta << ", residual = " << nm.similarity_residual
            << "\n";
  std::cout << "wrote " << path << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Magnetically actuated swarm laboratory"};
  app.require_subcommand(1);
  CommonArgs args;

  auto add_common = [&](CLI::App* sub, bool multi_config) {
    if (multi_config)
      sub->add_option("--config", args.configs, "configuration file(s)")->required();
    else
      sub->add_option("--config", args.configs, "configuration file")->required()->expected(1);
    sub->add_option("--out", args.out_dir, "output directory");
    sub->add_option("--seed", args.seed, "override the config seed");
    sub->add_option("--jobs", args.jobs, "parallel independent scenarios");
    sub->add_option("--model", args.model, "override the model {exact,far,surrogate}")
        ->check(CLI::IsMember({"exact", "far", "surrogate"}));
  };

  auto* simulate = app.add_subcommand("simulate", "run a scenario preset");
  add_common(simulate, true);
  auto* allocate = app.add_subcommand("allocate", "solve one allocation instance");
  add_common(allocate, false);
  auto* design = app.add_subcommand("design-coil", "coil design optimization");
  add_common(design, false);
  auto* certify = app.add_subcommand("certify", "surrogate training and certificates");
  add_common(certify, false);
  auto* normalize = app.add_subcommand("normalize", "ground/orbit similarity transform");
  add_common(normalize, false);

  CLI11_PARSE(app, argc, argv);

  try {
    if (simulate->parsed()) return cmd_simulate(args);
    if (allocate->parsed()) return cmd_allocate(args);
    if (design->parsed()) return cmd_design_coil(args);
    if (certify->parsed()) return cmd_certify(args);
    if (normalize->parsed()) return cmd_normalize(args);
  } catch (const emff::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInfeasible;
  }
  return kExitOk;
}
