#pragma once

#include <limits>
#include <string>
#include <vector>

#include "emff/config.hpp"
#include "emff/controller.hpp"
#include "emff/dynamics.hpp"
#include "emff/mlp.hpp"

// Scenario runner tying the modules together: edge-PD formation scenarios
// with per-edge AC allocation, the composite-controller tracking run used
// by the certificate studies, and the record emission (CSV + summary).

namespace emff {

struct EdgeSpec {
  int a = 0, b = 1;
  double omega = 8.0 * kPi;
  double target_length = 0.3;  // [m]
};

struct ScenarioConfig {
  std::string name = "scenario";
  int n = 2;
  int wheels = 0;
  VectorXd masses;
  std::vector<Matrix3d> inertias;
  CoilSpec coil;
  double coil_resistance = 2.0;  // [Ohm] per axis, for the power weights
  std::vector<EdgeSpec> edges;
  std::vector<Vector3d> initial_positions;
  std::vector<Vector3d> initial_velocities;
  double kp = 2.0e-3;  // [N/m] edge spring
  double kd = 1.2e-2;  // [N/(m/s)] edge damper
  double dt_gnd = 0.1875;
  int substeps = 4;
  double horizon = 120.0;
  std::string model = "far";  // exact | far | surrogate
  std::string surrogate_path;
  unsigned seed = 1;
  double disturbance_accel = 0.0;  // differential gravity-analog [m/s^2]
  bool inject_ripple = true;
  int geometry_refresh = 1;  // control periods between exact refreshes
  QuadratureOptions quadrature{32, 512, 1e-6, false};
};

// Consumes scenario keys from cfg (callers call cfg.finish()).
ScenarioConfig scenario_from_config(Config& cfg);

struct RunSummary {
  std::vector<std::pair<std::string, double>> values;
  std::vector<std::string> notes;
  bool bound_violation = false;
};

struct RunResult {
  RunSummary summary;
  std::string csv_path;
  std::string summary_path;
};

// Edge-sprung formation scenario with per-edge allocation; the plant always
// applies the exact averaged wrench while the allocator uses cfg.model.
RunResult run_formation_scenario(const ScenarioConfig& cfg, const std::string& out_dir);

struct TrackingConfig {
  ScenarioConfig base;
  std::vector<Vector3d> target_positions;
  double lambda_scale = 0.0;  // 0 = 2 * synthesized alpha
  double w_bar = std::numeric_limits<double>::infinity();
  double u_bar = 0.0;      // explicit feedback authority [N]
  double e_v_bar = 0.05;   // operating |e_v| bound
  double extra_disturbance = 0.0;  // injected bounded disturbance amplitude [N]
  unsigned seed = 1;
};

struct TrackingRunResult {
  double alpha = 0.0;
  double certificate_gap = 0.0;
  double ball_radius = 0.0;
  double steady_error = 0.0;
  double initial_error = 0.0;
  double measured_rate = 0.0;
  double d_sup = 0.0;
  double realizability_max = 0.0;  // max |A M^-1 B u| / (1 + |u|)
  bool ball_violated = false;
  bool synthesized = false;
  std::vector<double> t, eq_norm;
};

TrackingRunResult run_composite_tracking(const TrackingConfig& cfg);

struct MomentumDriftResult {
  double linear_drift = 0.0;   // normalized over the run
  double angular_drift = 0.0;
  int steps = 0;
};

// Internal-wrench-only free run with fixed dipole waves.
MomentumDriftResult momentum_drift_run(const ScenarioConfig& cfg,
                                       const std::vector<DipoleWave>& waves, int steps,
                                       double dt, int refresh_every = 5);

void write_summary(const RunSummary& summary, const std::string& path);

}  // namespace emff
