#pragma once

#include <functional>
#include <vector>

#include "emff/controller.hpp"

// Lagrangian swarm dynamics simulated in reduced coordinates, the ground
// and orbital closed-loop models, the similarity transform between them,
// and the analytic J2-perturbed relative orbit.

namespace emff {

struct LagrangianSystem {
  int n = 0;
  int m = 0;
  VectorXd masses;                 // [kg]
  std::vector<Matrix3d> inertias;  // body frame [kg*m^2]
  MatrixXd M;                      // (6n+3m)^2, constant
  MatrixXd B;                      // input map
  MatrixXd Binv;

  // Gyroscopic matrix C(state); zeta^T (Mdot - 2C) zeta = 0.
  MatrixXd gyroscopic(const SwarmState& swarm) const;
};

LagrangianSystem assemble_system(const SwarmState& swarm, const VectorXd& masses,
                                 const std::vector<Matrix3d>& inertias);

// Simulation state: generalized positions live in swarm (position/attitude),
// velocities in the reduced vector v with zeta = S v + A^+ L.
struct ReducedState {
  SwarmState swarm;
  VectorXd v;
  Vector3d total_angular_momentum = Vector3d::Zero();  // conserved L (world)
};

// Generalized disturbance force (6n+3m) at time t.
using DisturbanceFn = std::function<VectorXd(double)>;

// Input evaluated at every integrator stage; lets callers keep the wrench
// balance exact along the step (e.g. re-completing a frozen stack at the
// stage configuration).
using StageInputFn = std::function<VectorXd(double, const SwarmState&)>;

// Extracts zeta = [r_dot; omega; xi] for the current reduced state.
VectorXd reduced_to_zeta(const LagrangianSystem& sys, const ReducedState& state,
                         const MatrixXd& s_ref);

// Initializes v (and the swarm's velocity fields) from the swarm's
// velocities/rates/wheel momenta.
ReducedState make_reduced_state(const LagrangianSystem& sys, const SwarmState& swarm,
                                const MatrixXd& s_ref);

// One RK4 step with the input u (6n+3m generalized force shape) held
// constant across the step. The tangent basis is re-projected from s_ref at
// every stage and S_dot is taken by finite differences along the flow.
ReducedState step_reduced(const LagrangianSystem& sys, const MatrixXd& s_ref,
                          const ReducedState& state, const VectorXd& u, const DisturbanceFn& d,
                          double t, double dt);

ReducedState step_reduced_stage(const LagrangianSystem& sys, const MatrixXd& s_ref,
                                const ReducedState& state, const StageInputFn& u_fn,
                                const DisturbanceFn& d, double t, double dt);

Vector3d total_angular_momentum(const SwarmState& swarm, const LagrangianSystem& sys);
Vector3d total_linear_momentum(const SwarmState& swarm, const LagrangianSystem& sys);

struct GroundSystem {
  MatrixXd E;      // incidence, N x e
  MatrixXd Kp;     // N x e
  MatrixXd Kd;     // N x e
  MatrixXd Le;     // e x e edge Laplacian E^T E
  MatrixXd A_gnd;  // 2e x 2e
};

GroundSystem ground_closed_loop(const MatrixXd& E, const MatrixXd& Kp, const MatrixXd& Kd);

struct OrbitalParams {
  double k_A = 1.0e-3;
  double gamma = 0.5;
  double k0 = 1.8e3;
  double k1 = 1.0;
  double r_ref = 6.778e6;                    // [m]
  double mu_earth = 3.986004418e14;          // [m^3/s^2]
  double c_plus = 0.0, c_minus = 0.0;        // filled by finalize()
  double epsilon2 = 0.0, omega_xy = 0.0, omega_z = 0.0;

  // Derives c_+-, omega_xy, epsilon2 from the J2-level defaults unless the
  // caller already pinned them.
  void finalize();
};

MatrixXd orbital_closed_loop(const OrbitalParams& params, const MatrixXd& E);

struct NormalizationMap {
  MatrixXd Theta11, Theta12, Theta22;
  MatrixXd Theta;  // [T11 T12; 0 T22]
  double beta = 0.0;
  double k_v = 0.0, k_p = 0.0;
  double similarity_residual = 0.0;
  GroundSystem ground;
  MatrixXd A_orb;

  // Ground-frame edge errors [e_v; e_p] to orbital-frame [e_1; e_4].
  VectorXd map(const VectorXd& ground_err) const;
  VectorXd unmap(const VectorXd& orbital_err) const;
};

// Builds Theta for the Theorem-4 gain structure and verifies the similarity
// identity Theta A_gnd = beta A_orb Theta; throws above tolerance.
NormalizationMap build_normalization(const OrbitalParams& params, const MatrixXd& E,
                                     double theta11_scale, double beta, double tol = 1e-8);

struct RelativeOrbitInputs {
  double C1 = 0.0, C4 = 0.0;
  double r_xy = 0.0, theta_xy = 0.0;
  double r_z = 0.0, l_z = 0.0, theta_z = 0.0;
};

// Closed-form linearized J2-perturbed relative position at time t.
Vector3d analytic_relative_orbit(const RelativeOrbitInputs& in, const OrbitalParams& params,
                                 double t);

// Averaged orbital parameters from the mean relative state
// (x, y, x_dot, y_dot with the oscillatory part removed).
struct MeanRelativeState {
  double x = 0.0, y = 0.0, x_dot = 0.0, y_dot = 0.0;
};
std::pair<double, double> j2_invariants(const MeanRelativeState& mean,
                                        const OrbitalParams& params);

}  // namespace emff
