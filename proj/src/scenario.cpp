#include "emff/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

namespace emff {
namespace {

Vector3d vec3(const std::vector<double>& v, const std::string& key) {
  if (v.size() != 3) throw ConfigError("key '" + key + "' must have three entries");
  return Vector3d(v[0], v[1], v[2]);
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

SwarmState build_swarm(const ScenarioConfig& cfg) {
  SwarmState swarm;
  swarm.satellites.resize(cfg.n);
  for (int j = 0; j < cfg.n; ++j) {
    swarm.satellites[j].position = cfg.initial_positions[j];
    if (static_cast<int>(cfg.initial_velocities.size()) == cfg.n)
      swarm.satellites[j].velocity = cfg.initial_velocities[j];
    if (j < cfg.wheels) swarm.satellites[j].wheel_momentum = Vector3d::Zero();
  }
  swarm.validate();
  return swarm;
}

// Pair-geometry provider for the configured model; `surrogate` may be null.
PairGeometryFn model_pair_fn(const ScenarioConfig& cfg, const SwarmState& swarm,
                             const GeometrySurrogate* surrogate) {
  if (cfg.model == "far") {
    return [&swarm](int r, int s) {
      return far_field_geometry_matrix(swarm.satellites[r], swarm.satellites[s]);
    };
  }
  if (cfg.model == "surrogate") {
    if (surrogate == nullptr)
      throw std::invalid_argument("scenario: model=surrogate needs a trained surrogate");
    return [&swarm, surrogate](int r, int s) {
      return surrogate->geometry(swarm.satellites[r], swarm.satellites[s]);
    };
  }
  if (cfg.model == "exact") {
    const QuadratureOptions quad = cfg.quadrature;
    const CoilSpec coil = cfg.coil;
    return [&swarm, coil, quad](int r, int s) {
      return geometry_matrix(swarm.satellites[r], swarm.satellites[s], coil, coil, quad);
    };
  }
  throw std::invalid_argument("scenario: unknown model '" + cfg.model + "'");
}

struct EdgeWaves {
  std::vector<DipoleWave> waves;  // [wave on a, wave on b]
  double power = 0.0;
  double dual = 0.0;
  bool feasible = false;
};

// Two-satellite sub-swarm allocation for one edge.
EdgeWaves allocate_edge(const ScenarioConfig& cfg, const SwarmState& swarm, const EdgeSpec& edge,
                        const Vector3d& f_on_a, const PairGeometryFn& model_fn, bool with_dual) {
  SwarmState pair;
  pair.satellites = {swarm.satellites[edge.a], swarm.satellites[edge.b]};
  pair.satellites[0].wheel_momentum.reset();
  pair.satellites[1].wheel_momentum.reset();
  PairGeometryFn local = [&](int r, int s) {
    return model_fn(r == 0 ? edge.a : edge.b, s == 0 ? edge.a : edge.b);
  };
  const GeometryStack stack = stack_geometry_custom(pair, local);
  const MatrixXd completion = stack_completion(pair);

  VectorXd ucmd(6);
  ucmd << f_on_a, Vector3d::Zero();
  AllocationOptions opts;
  opts.omega = edge.omega;
  opts.seed = cfg.seed;
  opts.multistarts = 6;
  opts.run_dual = with_dual;
  opts.power_weights = physical_power_weights(cfg.coil, cfg.coil_resistance, 2);
  const AllocationResult res = solve_opt_ac_stack(ucmd, stack, completion, opts);
  EdgeWaves out;
  out.feasible = res.feasible;
  if (res.feasible) {
    out.waves = res.waves;
    out.power = res.primal_power;
    out.dual = res.dual_bound;
  } else {
    out.waves.assign(2, DipoleWave{Vector3d::Zero(), Vector3d::Zero(), edge.omega});
  }
  return out;
}

}  // namespace

ScenarioConfig scenario_from_config(Config& cfg) {
  ScenarioConfig sc;
  sc.name = cfg.text("scenario", "scenario");
  sc.n = static_cast<int>(cfg.number("n"));
  sc.wheels = static_cast<int>(cfg.number("m", 0));
  if (sc.n < 2) throw ConfigError("scenario: n >= 2 required");

  const auto masses = cfg.array("mass_kg");
  if (static_cast<int>(masses.size()) != sc.n) throw ConfigError("mass_kg needs n entries");
  sc.masses = VectorXd(sc.n);
  for (int j = 0; j < sc.n; ++j) sc.masses(j) = masses[j];

  const auto inertia = cfg.array("inertia_kgm2");
  sc.inertias.clear();
  if (static_cast<int>(inertia.size()) == sc.n) {
    for (double v : inertia) sc.inertias.push_back(v * Matrix3d::Identity());
  } else if (inertia.size() == 1) {
    sc.inertias.assign(sc.n, inertia[0] * Matrix3d::Identity());
  } else {
    throw ConfigError("inertia_kgm2 needs 1 or n entries");
  }

  sc.coil = CoilSpec::circular(cfg.number("coil.turns", 120.0),
                               cfg.number("coil.loop_radius_m", 0.075),
                               cfg.number("coil.mu_r", 1.0), cfg.number("coil.demag_factor", 0.0));
  sc.coil.validate();
  sc.coil_resistance = cfg.number("coil.resistance_ohm", sc.coil_resistance);

  const auto pos = cfg.array2("positions_m");
  if (static_cast<int>(pos.size()) != sc.n) throw ConfigError("positions_m needs n rows");
  for (int j = 0; j < sc.n; ++j)
    sc.initial_positions.push_back(vec3(pos[j], "positions_m"));
  if (cfg.has("velocities_mps")) {
    const auto vel = cfg.array2("velocities_mps");
    for (int j = 0; j < sc.n; ++j)
      sc.initial_velocities.push_back(vec3(vel[j], "velocities_mps"));
  }

  const auto edges = cfg.array2("edges");
  const auto freqs = cfg.array("edge_freq_rad_s");
  const auto lengths = cfg.array("edge_target_m");
  if (edges.empty() || freqs.size() != edges.size() || lengths.size() != edges.size())
    throw ConfigError("edges / edge_freq_rad_s / edge_target_m must align");
  for (size_t e = 0; e < edges.size(); ++e) {
    if (edges[e].size() != 2) throw ConfigError("edges rows must be [a, b]");
    EdgeSpec es;
    es.a = static_cast<int>(edges[e][0]);
    es.b = static_cast<int>(edges[e][1]);
    if (es.a < 0 || es.b < 0 || es.a >= sc.n || es.b >= sc.n || es.a == es.b)
      throw ConfigError("edges indices out of range");
    es.omega = freqs[e];
    es.target_length = lengths[e];
    sc.edges.push_back(es);
  }

  sc.kp = cfg.number("kp_n_per_m", sc.kp);
  sc.kd = cfg.number("kd_n_per_mps", sc.kd);
  sc.dt_gnd = cfg.number("dt_gnd_s", sc.dt_gnd);
  sc.substeps = static_cast<int>(cfg.number("substeps", sc.substeps));
  sc.horizon = cfg.number("horizon_s", sc.horizon);
  sc.model = cfg.text("model", sc.model);
  sc.surrogate_path = cfg.text("surrogate_path", "");
  sc.seed = static_cast<unsigned>(cfg.number("seed", 1));
  sc.disturbance_accel = cfg.number("disturbance_accel_mps2", 0.0);
  sc.inject_ripple = cfg.flag("inject_ripple", true);
  sc.geometry_refresh = static_cast<int>(cfg.number("geometry_refresh", 1));
  sc.quadrature.initial_nodes = static_cast<int>(cfg.number("quadrature_nodes", 32));
  sc.quadrature.adaptive = false;
  return sc;
}

void write_summary(const RunSummary& summary, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open summary file " + path);
  os << "# emff-summary v1\n";
  for (const auto& [key, value] : summary.values) os << key << " = " << format_double(value) << "\n";
  os << "bound_violation = " << (summary.bound_violation ? "true" : "false") << "\n";
  for (const auto& note : summary.notes) os << "# " << note << "\n";
}

RunResult run_formation_scenario(const ScenarioConfig& cfg, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  SwarmState swarm = build_swarm(cfg);
  const LagrangianSystem sys = assemble_system(swarm, cfg.masses, cfg.inertias);
  const MatrixXd s_ref =
      tangent_space(momentum_matrix(swarm, cfg.masses, cfg.inertias), TangentVariant::eq3).S;
  ReducedState state = make_reduced_state(sys, swarm, s_ref);

  GeometrySurrogate surrogate;
  const bool use_surrogate = cfg.model == "surrogate";
  if (use_surrogate) {
    if (cfg.surrogate_path.empty())
      throw std::invalid_argument("scenario: model=surrogate requires surrogate_path");
    surrogate = load_geometry_surrogate(cfg.surrogate_path);
  }

  const int periods = static_cast<int>(std::ceil(cfg.horizon / cfg.dt_gnd));
  const int n = cfg.n;

  // Exact pair-geometry cache for the plant, refreshed on schedule.
  std::vector<Matrix69d> true_cache(n * n);
  auto refresh_true = [&]() {
    for (const auto& e : cfg.edges) {
      true_cache[e.a * n + e.b] = geometry_matrix(state.swarm.satellites[e.a],
                                                  state.swarm.satellites[e.b], cfg.coil, cfg.coil,
                                                  cfg.quadrature);
      true_cache[e.b * n + e.a] = geometry_matrix(state.swarm.satellites[e.b],
                                                  state.swarm.satellites[e.a], cfg.coil, cfg.coil,
                                                  cfg.quadrature);
    }
  };
  PairGeometryFn true_fn = [&](int r, int s) { return true_cache[r * n + s]; };

  const std::string csv_path = out_dir + "/" + cfg.name + ".csv";
  std::ofstream csv(csv_path);
  if (!csv) throw std::runtime_error("cannot open " + csv_path);
  csv << "# emff-csv v1\n";
  csv << "# scenario = " << cfg.name << ", model = " << cfg.model << ", seed = " << cfg.seed
      << "\n";
  csv << "t_s";
  for (int j = 0; j < n; ++j)
    csv << ",p" << j << "x_m,p" << j << "y_m,p" << j << "z_m,v" << j << "x_mps,v" << j
        << "y_mps,v" << j << "z_mps,s" << j << "1,s" << j << "2,s" << j << "3,w" << j
        << "x_radps,w" << j << "y_radps,w" << j << "z_radps,i" << j << "peak_a,cmd" << j
        << "_n,ach" << j << "_n";
  for (size_t e = 0; e < cfg.edges.size(); ++e)
    csv << ",edge" << e << "_dist_m,edge" << e << "_cmd_n,edge" << e << "_power_w";
  csv << ",ripple_sup_n,ripple_meas_n\n";

  RunSummary summary;
  std::vector<double> steady_edge_err(cfg.edges.size(), 0.0);
  std::vector<double> initial_edge_err(cfg.edges.size(), 0.0);
  double ripple_violation = 0.0;
  double power_last = 0.0, dual_last = 0.0;
  const double steady_start = 0.8 * cfg.horizon;

  for (int period = 0; period < periods; ++period) {
    const double t = period * cfg.dt_gnd;
    if (period % std::max(1, cfg.geometry_refresh) == 0) refresh_true();
    const PairGeometryFn model_fn = model_pair_fn(cfg, state.swarm, &surrogate);

    // Edge commands and allocations.
    std::vector<std::vector<DipoleWave>> edge_waves(cfg.edges.size());
    std::vector<double> edge_cmd(cfg.edges.size(), 0.0);
    std::vector<double> edge_power(cfg.edges.size(), 0.0);
    const bool want_dual = period + 1 == periods;
    for (size_t e = 0; e < cfg.edges.size(); ++e) {
      const auto& edge = cfg.edges[e];
      const auto& sa = state.swarm.satellites[edge.a];
      const auto& sb = state.swarm.satellites[edge.b];
      const Vector3d rel = sb.position - sa.position;
      const double dist = rel.norm();
      const Vector3d u = rel / dist;
      const double rate = u.dot(sb.velocity - sa.velocity);
      const double f_mag = cfg.kp * (dist - edge.target_length) + cfg.kd * rate;
      const Vector3d f_on_a = f_mag * u;  // pulls a toward b when too long
      edge_cmd[e] = f_mag;
      if (period == 0) initial_edge_err[e] = std::abs(dist - edge.target_length);

      const EdgeWaves ew =
          allocate_edge(cfg, state.swarm, edge, f_on_a, cfg.model == "exact" ? true_fn : model_fn,
                        want_dual);
      edge_waves[e] = ew.waves;
      edge_power[e] = ew.power;
      if (want_dual) {
        power_last += ew.power;
        dual_last += ew.dual;
      }
      if (!ew.feasible)
        summary.notes.push_back("edge " + std::to_string(e) + " allocation infeasible at t=" +
                                format_double(t));
    }

    // Plant: exact averaged wrench of the allocated waves, per edge.
    VectorXd u_stack_full = VectorXd::Zero(6 * n);  // [f(3n); tau_body(3n)]
    std::vector<RippleComponent> ripple;
    std::vector<int> ripple_sat;
    double ripple_sup_total = 0.0;
    for (size_t e = 0; e < cfg.edges.size(); ++e) {
      const auto& edge = cfg.edges[e];
      const int idx[2] = {edge.a, edge.b};
      for (int side = 0; side < 2; ++side) {
        const int recv = idx[side], src = idx[1 - side];
        const Matrix69d g = true_cache[recv * n + src];
        const DipoleWave& wr = edge_waves[e][side];
        const DipoleWave& ws = edge_waves[e][1 - side];
        Vector6d avg = 0.5 * (exact_wrench(g, ws.s, wr.s) + exact_wrench(g, ws.c, wr.c));
        const Matrix3d cb = mrp_to_rotation(state.swarm.satellites[recv].attitude);
        u_stack_full.segment<3>(3 * recv) += avg.head<3>();
        u_stack_full.segment<3>(3 * n + 3 * recv) += cb * avg.tail<3>();
        if (cfg.inject_ripple) {
          RippleComponent rc = ripple_disturbance(wr, ws, g);
          rc.x.tail<3>() = cb * rc.x.tail<3>();
          rc.y.tail<3>() = cb * rc.y.tail<3>();
          ripple.push_back(rc);
          ripple_sat.push_back(recv);
          ripple_sup_total += ripple_sup_bound(rc.x, rc.y);
        }
      }
    }

    const int dim = 6 * n + 3 * cfg.wheels;
    double ripple_meas = 0.0;
    DisturbanceFn dfn = [&, t](double tt) {
      VectorXd d = VectorXd::Zero(dim);
      for (size_t i = 0; i < ripple.size(); ++i) {
        const Vector6d w = ripple[i].at(tt);
        d.segment<3>(3 * ripple_sat[i]) += w.head<3>();
        d.segment<3>(3 * n + 3 * ripple_sat[i]) += w.tail<3>();
      }
      // The bound column tracks the ripple alone; the gravity-analog term
      // is an external disturbance outside the ripple bound.
      ripple_meas = std::max(ripple_meas, d.head(6 * n).norm());
      for (int j = 0; j < n; ++j) {
        const double sgn = (j == 0) ? -1.0 : (j == 1 ? 1.0 : 0.0);
        d(3 * j) += sgn * cfg.disturbance_accel * sys.masses(j);
      }
      return d;
    };

    StageInputFn ufn = [&](double, const SwarmState& stage) {
      // Re-complete the frozen per-satellite wrench so the balance stays
      // exact at the stage configuration: rebuild the last satellite's
      // wrench from the others.
      VectorXd u = VectorXd::Zero(dim);
      u.head(6 * n) = u_stack_full;
      VectorXd stack(6 * (n - 1));
      for (int j = 0; j < n - 1; ++j) {
        stack.segment<3>(3 * j) = u_stack_full.segment<3>(3 * j);
        stack.segment<3>(3 * (n - 1) + 3 * j) = u_stack_full.segment<3>(3 * n + 3 * j);
      }
      const VectorXd completed = stack_completion(stage) * stack;
      u.head(6 * n) = completed;
      return u;
    };

    // Record, then advance one control period.
    const double current_gain =
        1.0 / (cfg.coil.turns * cfg.coil.enclosed_area * cfg.coil.core_amplification());
    csv << format_double(t);
    for (int j = 0; j < n; ++j) {
      const auto& sat = state.swarm.satellites[j];
      for (int k = 0; k < 3; ++k) csv << "," << format_double(sat.position(k));
      for (int k = 0; k < 3; ++k) csv << "," << format_double(sat.velocity(k));
      for (int k = 0; k < 3; ++k) csv << "," << format_double(sat.attitude.sigma(k));
      for (int k = 0; k < 3; ++k) csv << "," << format_double(sat.angular_rate(k));
      // Peak per-axis coil current over the period and the commanded vs
      // realized force magnitudes.
      double peak_amp = 0.0;
      Vector3d cmd_force = Vector3d::Zero();
      for (size_t e = 0; e < cfg.edges.size(); ++e) {
        const auto& edge = cfg.edges[e];
        int side = -1;
        if (edge.a == j) side = 0;
        if (edge.b == j) side = 1;
        if (side < 0) continue;
        const auto& w = edge_waves[e][side];
        for (int k = 0; k < 3; ++k)
          peak_amp = std::max(peak_amp, std::sqrt(w.s(k) * w.s(k) + w.c(k) * w.c(k)));
        const auto& sa = state.swarm.satellites[edge.a];
        const auto& sb = state.swarm.satellites[edge.b];
        const Vector3d u = (sb.position - sa.position).normalized();
        cmd_force += (side == 0 ? 1.0 : -1.0) * edge_cmd[e] * u;
      }
      csv << "," << format_double(peak_amp * current_gain);
      csv << "," << format_double(cmd_force.norm());
      csv << "," << format_double(u_stack_full.segment<3>(3 * j).norm());
    }
    for (size_t e = 0; e < cfg.edges.size(); ++e) {
      const auto& edge = cfg.edges[e];
      const double dist = (state.swarm.satellites[edge.b].position -
                           state.swarm.satellites[edge.a].position)
                              .norm();
      csv << "," << format_double(dist) << "," << format_double(edge_cmd[e]) << ","
          << format_double(edge_power[e]);
      if (t >= steady_start)
        steady_edge_err[e] = std::max(steady_edge_err[e], std::abs(dist - edge.target_length));
    }

    const double sub_dt = cfg.dt_gnd / cfg.substeps;
    for (int k = 0; k < cfg.substeps; ++k)
      state = step_reduced_stage(sys, s_ref, state, ufn, dfn, t + k * sub_dt, sub_dt);

    csv << "," << format_double(ripple_sup_total) << "," << format_double(ripple_meas) << "\n";
    if (ripple_meas > ripple_sup_total * (1.0 + 1e-9)) ripple_violation = ripple_meas;
  }

  for (size_t e = 0; e < cfg.edges.size(); ++e) {
    summary.values.emplace_back("edge" + std::to_string(e) + "_initial_err_m",
                                initial_edge_err[e]);
    summary.values.emplace_back("edge" + std::to_string(e) + "_steady_err_m", steady_edge_err[e]);
  }
  summary.values.emplace_back("power_final_w", power_last);
  summary.values.emplace_back("dual_bound_final_w", dual_last);
  summary.bound_violation = ripple_violation > 0.0 || dual_last > power_last + 1e-6;
  summary.notes.push_back("model = " + cfg.model);

  RunResult out;
  out.summary = summary;
  out.csv_path = csv_path;
  out.summary_path = out_dir + "/" + cfg.name + "_summary.txt";
  write_summary(summary, out.summary_path);
  return out;
}

TrackingRunResult run_composite_tracking(const TrackingConfig& tcfg) {
  const ScenarioConfig& cfg = tcfg.base;
  SwarmState swarm = build_swarm(cfg);
  const LagrangianSystem sys = assemble_system(swarm, cfg.masses, cfg.inertias);
  const int n = cfg.n;
  const int dim = 6 * n + 3 * cfg.wheels;

  const MomentumConstraint mc0 = momentum_matrix(swarm, cfg.masses, cfg.inertias);
  const MatrixXd s_sim_ref = tangent_space(mc0, TangentVariant::eq3).S;
  const MatrixXd s_c = tangent_space(mc0, TangentVariant::controllable).S;
  ReducedState state = make_reduced_state(sys, swarm, s_sim_ref);

  GeometryStack stack = stack_geometry(swarm, cfg.coil, GeometryModel::exact, cfg.quadrature);
  MatrixXd completion = stack_completion(swarm);
  MatrixXd b_ef = decouple_input_map(sys.B, stack, completion);

  TrackingRunResult out;
  SynthesisOptions sopts;
  sopts.w_bar = tcfg.w_bar;
  sopts.u_bar = tcfg.u_bar;
  sopts.e_v_bar = tcfg.e_v_bar;
  const SynthesisResult synth = noda_mmh_synthesis(sys.M, b_ef, s_c, s_c, stack, VectorXd(),
                                                   MatrixXd::Identity(6 * n, 6 * n), sopts);
  if (!synth.feasible) {
    out.synthesized = false;
    return out;
  }
  out.synthesized = true;
  out.alpha = synth.config.alpha;
  out.certificate_gap = synth.certificate_gap;
  const double lambda_scale = tcfg.lambda_scale > 0.0 ? tcfg.lambda_scale : 2.0 * out.alpha;
  const MatrixXd lambda_mat = lambda_scale * MatrixXd::Identity(6 * n, 6 * n);

  // Seeded bounded extra disturbance (force rows only).
  std::mt19937_64 rng(tcfg.seed);
  std::uniform_real_distribution<double> uni(0.0, 2.0 * kPi);
  std::vector<Vector3d> dist_dir(n);
  std::vector<double> dist_phase(n), dist_freq(n);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int j = 0; j < n; ++j) {
    Vector3d v(gauss(rng), gauss(rng), gauss(rng));
    dist_dir[j] = v.normalized();
    dist_phase[j] = uni(rng);
    dist_freq[j] = 0.5 + 0.2 * j;
  }

  const int periods = static_cast<int>(std::ceil(cfg.horizon / cfg.dt_gnd));
  VectorXd zeta_r_prev;
  double d_sup_max = 0.0;
  double realizability_max = 0.0;
  int alloc_failures = 0;

  for (int period = 0; period < periods; ++period) {
    const double t = period * cfg.dt_gnd;
    if (period % std::max(1, cfg.geometry_refresh) == 0) {
      stack = stack_geometry(state.swarm, cfg.coil, GeometryModel::exact, cfg.quadrature);
      completion = stack_completion(state.swarm);
      b_ef = decouple_input_map(sys.B, stack, completion);
    }
    const MomentumConstraint mc = momentum_matrix(state.swarm, cfg.masses, cfg.inertias);

    // Error state and composite variable.
    VectorXd e_q(6 * n);
    std::vector<Mrp> err_mrps(n);
    for (int j = 0; j < n; ++j) {
      e_q.segment<3>(3 * j) = state.swarm.satellites[j].position - tcfg.target_positions[j];
      err_mrps[j] = state.swarm.satellites[j].attitude;  // target attitude: identity
      e_q.segment<3>(3 * n + 3 * j) = err_mrps[j].sigma;
    }
    out.t.push_back(t);
    out.eq_norm.push_back(e_q.norm());

    const KinematicsStack kin = stack_kinematics(state.swarm, err_mrps);
    const VectorXd zeta = reduced_to_zeta(sys, state, s_sim_ref);
    const VectorXd v_ctrl = s_c.transpose() * zeta;
    const CompositeState cs = composite_variable(kin, s_c, lambda_mat,
                                                 VectorXd::Zero(dim), e_q, v_ctrl);
    const VectorXd zeta_r = s_c * cs.v_r;
    const VectorXd zeta_r_dot = (zeta_r_prev.size() == 0)
                                    ? VectorXd::Zero(dim)
                                    : VectorXd((zeta_r - zeta_r_prev) / cfg.dt_gnd);
    zeta_r_prev = zeta_r;

    const ControlCommand cmd = control_wrench(
        sys.M, sys.gyroscopic(state.swarm), sys.B, b_ef, stack, completion, mc, synth.config.K,
        s_c, cs.e_v, zeta_r, zeta_r_dot, VectorXd::Zero(dim));
    realizability_max = std::max(realizability_max, cmd.realizability_residual /
                                                        (1.0 + cmd.u_plant.norm()));

    // Allocate the far-frame command against the far stack.
    GeometryStack alloc_stack = stack;
    alloc_stack.g_stack = stack.q_stack;
    AllocationOptions aopts;
    aopts.seed = cfg.seed;
    aopts.multistarts = 6;
    aopts.run_dual = false;
    const AllocationResult alloc = solve_opt_ac_stack(cmd.u_far, alloc_stack, completion, aopts);

    VectorXd u_stack_full(6 * n);
    std::vector<RippleComponent> ripple;
    std::vector<int> ripple_sat;
    std::vector<double> sat_sup(n, 0.0);
    if (alloc.feasible) {
      const auto per_sat = averaged_wrench(alloc.waves, stack, completion);
      for (int j = 0; j < n; ++j) {
        u_stack_full.segment<3>(3 * j) = per_sat[j].head<3>();
        u_stack_full.segment<3>(3 * n + 3 * j) = per_sat[j].tail<3>();
      }
      if (cfg.inject_ripple) {
        for (int r = 0; r < n; ++r) {
          Vector6d x = Vector6d::Zero(), y = Vector6d::Zero();
          const Matrix3d cb = mrp_to_rotation(state.swarm.satellites[r].attitude);
          for (int s = 0; s < n; ++s) {
            if (s == r) continue;
            const Matrix69d g = geometry_matrix(state.swarm.satellites[r],
                                                state.swarm.satellites[s], cfg.coil, cfg.coil,
                                                cfg.quadrature);
            RippleComponent rc = ripple_disturbance(alloc.waves[r], alloc.waves[s], g);
            rc.x.tail<3>() = cb * rc.x.tail<3>();
            rc.y.tail<3>() = cb * rc.y.tail<3>();
            x += rc.x;
            y += rc.y;
          }
          RippleComponent sum;
          sum.x = x;
          sum.y = y;
          sum.omega2 = 2.0 * aopts.omega;
          ripple.push_back(sum);
          ripple_sat.push_back(r);
          sat_sup[r] = ripple_sup_bound(x, y);
        }
      }
    } else {
      ++alloc_failures;
      // Fall back to the exact-route wrench so the run stays defined.
      const VectorXd u_exa = stack.g_stack * (pinv(stack.q_stack) * cmd.u_far);
      const VectorXd full = completion * u_exa;
      u_stack_full = full;
    }

    double period_d_sup = tcfg.extra_disturbance * std::sqrt(static_cast<double>(n));
    {
      double sumsq = 0.0;
      for (int j = 0; j < n; ++j) {
        const double s = sat_sup[j] + tcfg.extra_disturbance;
        sumsq += s * s;
      }
      period_d_sup = std::sqrt(sumsq);
    }
    d_sup_max = std::max(d_sup_max, period_d_sup);

    DisturbanceFn dfn = [&](double tt) {
      VectorXd dvec = VectorXd::Zero(dim);
      for (size_t i = 0; i < ripple.size(); ++i) {
        const Vector6d w = ripple[i].at(tt);
        dvec.segment<3>(3 * ripple_sat[i]) += w.head<3>();
        dvec.segment<3>(3 * n + 3 * ripple_sat[i]) += w.tail<3>();
      }
      for (int j = 0; j < n; ++j)
        dvec.segment<3>(3 * j) += tcfg.extra_disturbance *
                                  std::sin(dist_freq[j] * tt + dist_phase[j]) * dist_dir[j];
      return dvec;
    };

    StageInputFn ufn = [&](double, const SwarmState& stage) {
      VectorXd u = VectorXd::Zero(dim);
      VectorXd stk(6 * (n - 1));
      for (int j = 0; j < n - 1; ++j) {
        stk.segment<3>(3 * j) = u_stack_full.segment<3>(3 * j);
        stk.segment<3>(3 * (n - 1) + 3 * j) = u_stack_full.segment<3>(3 * n + 3 * j);
      }
      u.head(6 * n) = stack_completion(stage) * stk;
      if (dim > 6 * n) u.tail(3 * cfg.wheels) = cmd.wheel_torque;
      return u;
    };

    const double sub_dt = cfg.dt_gnd / cfg.substeps;
    for (int k = 0; k < cfg.substeps; ++k)
      state = step_reduced_stage(sys, s_sim_ref, state, ufn, dfn, t + k * sub_dt, sub_dt);
  }

  out.d_sup = d_sup_max;
  out.realizability_max = realizability_max;
  out.ball_radius = error_ball(out.alpha, sys.M, lambda_mat, 1.0, d_sup_max);
  out.initial_error = out.eq_norm.empty() ? 0.0 : out.eq_norm.front();
  const size_t steady_begin = out.eq_norm.size() * 3 / 4;
  for (size_t i = steady_begin; i < out.eq_norm.size(); ++i)
    out.steady_error = std::max(out.steady_error, out.eq_norm[i]);
  out.ball_violated = out.steady_error > out.ball_radius;

  // 1/e convergence time against the floor.
  const double target = out.initial_error / std::exp(1.0) + out.ball_radius;
  out.measured_rate = 0.0;
  for (size_t i = 1; i < out.eq_norm.size(); ++i) {
    if (out.eq_norm[i] <= target) {
      out.measured_rate = 1.0 / out.t[i];
      break;
    }
  }
  if (alloc_failures > 0) out.synthesized = out.synthesized && alloc_failures < periods / 4;
  return out;
}

MomentumDriftResult momentum_drift_run(const ScenarioConfig& cfg,
                                       const std::vector<DipoleWave>& waves, int steps, double dt,
                                       int refresh_every) {
  SwarmState swarm = build_swarm(cfg);
  const LagrangianSystem sys = assemble_system(swarm, cfg.masses, cfg.inertias);
  const MatrixXd s_ref =
      tangent_space(momentum_matrix(swarm, cfg.masses, cfg.inertias), TangentVariant::eq3).S;
  ReducedState state = make_reduced_state(sys, swarm, s_ref);
  const int n = cfg.n;
  const int dim = 6 * n + 3 * cfg.wheels;

  const Vector3d l0 = total_angular_momentum(swarm, sys);
  const Vector3d p0 = total_linear_momentum(swarm, sys);
  double max_l = 0.0, max_p = 0.0, drift_l = 0.0, drift_p = 0.0;

  GeometryStack stack;
  VectorXd u_stack;
  for (int i = 0; i < steps; ++i) {
    if (i % std::max(1, refresh_every) == 0) {
      stack = stack_geometry(state.swarm, cfg.coil, GeometryModel::exact, cfg.quadrature);
      const MatrixXd completion = stack_completion(state.swarm);
      const auto per_sat = averaged_wrench(waves, stack, completion);
      u_stack.resize(6 * (n - 1));
      for (int j = 0; j < n - 1; ++j) {
        u_stack.segment<3>(3 * j) = per_sat[j].head<3>();
        u_stack.segment<3>(3 * (n - 1) + 3 * j) = per_sat[j].tail<3>();
      }
    }
    StageInputFn ufn = [&](double, const SwarmState& stage) {
      VectorXd u = VectorXd::Zero(dim);
      u.head(6 * n) = stack_completion(stage) * u_stack;
      return u;
    };
    state = step_reduced_stage(sys, s_ref, state, ufn, nullptr, i * dt, dt);

    const Vector3d l = total_angular_momentum(state.swarm, sys);
    const Vector3d p = total_linear_momentum(state.swarm, sys);
    double scale_l = 0.0, scale_p = 0.0;
    for (int j = 0; j < n; ++j) {
      const auto& sat = state.swarm.satellites[j];
      scale_p += sys.masses(j) * sat.velocity.norm();
      scale_l += sys.masses(j) * sat.position.norm() * sat.velocity.norm() +
                 (sys.inertias[j] * sat.angular_rate).norm();
    }
    max_l = std::max(max_l, scale_l);
    max_p = std::max(max_p, scale_p);
    drift_l = std::max(drift_l, (l - l0).norm());
    drift_p = std::max(drift_p, (p - p0).norm());
  }
  MomentumDriftResult out;
  out.steps = steps;
  out.linear_drift = drift_p / std::max(max_p, 1e-30);
  out.angular_drift = drift_l / std::max(max_l, 1e-30);
  return out;
}

}  // namespace emff
