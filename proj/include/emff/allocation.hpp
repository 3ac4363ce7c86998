#pragma once

#include <string>
#include <vector>

#include "emff/magnetics.hpp"

// Sinusoidal dipole scheduling and the time-averaged allocation problem:
// solve for per-satellite sine/cosine dipole coefficients whose
// period-averaged wrench matches a constant command at minimum resistive
// power, plus a Lagrange-dual power lower bound and the 2-omega ripple
// bookkeeping.

namespace emff {

// Default carrier set used by the experiments: 8*pi*{1..5} rad/s.
std::vector<double> default_frequency_set();

// Per-axis resistive power weights R / (N_t A kappa)^2 replicated over n
// satellites, so sum w (s^2 + c^2) / 2 is the time-averaged power in watts.
VectorXd physical_power_weights(const CoilSpec& coil, double resistance_ohm, int n);

struct DipoleWave {
  Vector3d s = Vector3d::Zero();  // sine coefficients [A*m^2], body frame
  Vector3d c = Vector3d::Zero();  // cosine coefficients [A*m^2]
  double omega = 8.0 * kPi;       // carrier [rad/s]
};

Vector3d instantaneous_dipole(const DipoleWave& w, double t);

// Stack command (K-ordered wrench of satellites 1..n-1) from per-satellite
// commands [f_world; tau_body]; checks consistency of the last satellite's
// command with the completion map.
VectorXd stack_command(const std::vector<Vector6d>& commands, const MatrixXd& completion,
                       double tol = 1e-9);

// Per-satellite averaged wrench of single-wave satellites through the
// stack model: same-frequency pairs contribute
// (mu0/8pi) G_{j<-k} (s_k (x) s_j + c_k (x) c_j), others zero.
// Returns n 6-vectors [f_world; tau_body].
std::vector<Vector6d> averaged_wrench(const std::vector<DipoleWave>& waves,
                                      const GeometryStack& stack, const MatrixXd& completion);

// Pairwise evaluators against an arbitrary geometry source (world-frame
// 6x9 per pair); used by the time-identity tests and the carrier-resolving
// simulation path. Torques are returned in each receiver's body frame.
std::vector<Vector6d> averaged_wrench_pairs(const SwarmState& swarm,
                                            const std::vector<std::vector<DipoleWave>>& waves,
                                            const PairGeometryFn& pair_geometry);
std::vector<Vector6d> instantaneous_wrench_pairs(const SwarmState& swarm,
                                                 const std::vector<std::vector<DipoleWave>>& waves,
                                                 const PairGeometryFn& pair_geometry, double t);

struct AllocationOptions {
  double omega = 8.0 * kPi;
  VectorXd power_weights;       // per-axis (3n); empty = ones
  int multistarts = 8;
  unsigned seed = 1;
  int max_lm_iterations = 400;
  double residual_tol_rel = 1e-9;  // * (1 + |u_cmd|)
  bool run_dual = true;
};

struct AllocationResult {
  std::vector<DipoleWave> waves;   // per satellite
  std::vector<Vector6d> achieved;  // per-satellite averaged wrench
  double primal_power = 0.0;       // [W]
  double dual_bound = 0.0;         // [W], certified lower bound
  double residual_norm = 0.0;
  bool feasible = false;
  int jacobian_null_dim = 0;       // at the returned solution
  std::string message;
};

// Power-optimal allocation for a momentum-consistent command set. All
// satellites share options.omega. Power = sum_axes w * (s^2 + c^2) / 2.
AllocationResult solve_opt_ac(const std::vector<Vector6d>& commands, const GeometryStack& stack,
                              const MatrixXd& completion, const AllocationOptions& opts = {});

// Same solver driven directly by the K-ordered stack command.
AllocationResult solve_opt_ac_stack(const VectorXd& stack_cmd, const GeometryStack& stack,
                                    const MatrixXd& completion, const AllocationOptions& opts = {});

// Certified lower bound on the primal power via the Lagrange dual of the
// quadratic/bilinear program (log-det barrier path following). Any
// dual-feasible iterate gives a valid bound.
double dual_lower_bound(const VectorXd& stack_cmd, const GeometryStack& stack,
                        const VectorXd& power_weights = VectorXd());

// 2-omega ripple of a same-frequency pair: d(t) = cos(2wt) x + sin(2wt) y.
struct RippleComponent {
  Vector6d x = Vector6d::Zero();
  Vector6d y = Vector6d::Zero();
  double omega2 = 0.0;  // 2*omega

  Vector6d at(double t) const;
};

// Ripple wrench on the receiver from one source; waves must share omega.
RippleComponent ripple_disturbance(const DipoleWave& receiver_wave, const DipoleWave& source_wave,
                                   const Matrix69d& g_receiver_from_source);

// sup_t |cos(2wt) x + sin(2wt) y| in closed form.
double ripple_sup_bound(const Vector6d& x, const Vector6d& y);

// Per-satellite analytic ripple sup for a single-frequency allocation.
std::vector<double> allocation_ripple_sup(const SwarmState& swarm,
                                          const std::vector<DipoleWave>& waves,
                                          const PairGeometryFn& pair_geometry);

struct RippleInstanceReport {
  double power = 0.0;
  double sup_measured = 0.0;  // dense time sampling, max over satellites
  double sup_analytic = 0.0;  // closed form, max over satellites
};

struct RippleMonotonicityReport {
  std::vector<RippleInstanceReport> instances;  // [0] = power-optimal
  bool optimal_is_least = false;
};

// Solves the command, then perturbs along the constraint manifold to build
// higher-power allocations of the same command and compares ripple sups.
RippleMonotonicityReport ripple_power_monotonicity_report(
    const std::vector<Vector6d>& commands, const SwarmState& swarm, const GeometryStack& stack,
    const MatrixXd& completion, const PairGeometryFn& pair_geometry, int alternatives = 3,
    const AllocationOptions& opts = {});

}  // namespace emff
