#pragma once

#include <string>
#include <vector>

#include "emff/allocation.hpp"
#include "emff/attitude.hpp"
#include "emff/magnetics.hpp"

// Null-space tangent construction, the composite-variable nonlinear control
// law, the exponential-convergence gain certificate with its error ball,
// and the power-coupled gain synthesis.
//
// Layout of the generalized coordinates everywhere in this module:
// zeta = [r_dot (3n, world); omega (3n, body); xi (3m, wheels)], inputs
// u = [f (3n, world); tau (3n, body); h_dot (3m)] at the plant level and
// [u_far stack (6(n-1)); h_dot (3m)] at the controller level.

namespace emff {

struct MomentumConstraint {
  MatrixXd angular;  // 3 x (6n+3m), angular momentum conservation rows
  MatrixXd linear;   // 3 x (6n+3m), total linear momentum rows
  int n = 0;
  int m = 0;
};

MomentumConstraint momentum_matrix(const SwarmState& swarm, const VectorXd& masses,
                                   const std::vector<Matrix3d>& inertias);

enum class TangentVariant {
  eq3,           // null of the angular-momentum rows
  eq12,          // additionally annihilates the exact/far mismatch
  s0,            // closed form, solves for the last wheel's xi
  controllable,  // null of angular and linear momentum rows
};

struct TangentSpace {
  MatrixXd S;  // (6n+3m) x k basis
  TangentVariant variant = TangentVariant::eq3;
};

// stacks/completion are only needed for the eq12 variant; swarm only for s0.
TangentSpace tangent_space(const MomentumConstraint& constraint, TangentVariant variant,
                           const GeometryStack* stacks = nullptr,
                           const MatrixXd* completion = nullptr,
                           const SwarmState* swarm = nullptr);

// Smoothly varying orthonormal basis of null(angular [; linear]) obtained by
// projecting a fixed reference basis; usable for finite-difference S_dot.
MatrixXd projected_tangent_basis(const MomentumConstraint& constraint,
                                 const MatrixXd& reference, bool include_linear);

// B_ef = B * blockdiag(T * G * Q^+, I_3m): maps the far-frame command
// [u_far; h_dot] to the generalized force the exact model actually applies.
MatrixXd decouple_input_map(const MatrixXd& B, const GeometryStack& stack,
                            const MatrixXd& completion, const MatrixXd* g_model = nullptr);

// Plain exact-route input map B * blockdiag(T, I_3m).
MatrixXd stack_input_map(const MatrixXd& B, const MatrixXd& completion, int m);

struct CompositeState {
  VectorXd v_r;  // reference reduced velocity
  VectorXd e_v;  // composite variable v - v_r
};

// v_r = (P S)^+ (P zeta_d - Lambda e_q), e_v = v - v_r.
CompositeState composite_variable(const KinematicsStack& kin, const MatrixXd& S,
                                  const MatrixXd& Lambda, const VectorXd& zeta_d,
                                  const VectorXd& e_q, const VectorXd& v);

struct ControllerConfig {
  MatrixXd K;       // (6(n-1)+3m) x (6n+3m) feedback gain
  MatrixXd Lambda;  // 6n x 6n, positive definite
  double alpha = 0.0;
  double u_bar = 0.0;
  double w_bar = 0.0;
  double epsilon = 0.0;
};

struct ControlCommand {
  VectorXd u_far;         // 6(n-1) far-frame stack command
  VectorXd wheel_torque;  // 3m
  VectorXd u_plant;       // (6n+3m) plant-level input [f; tau; h_dot]
  double realizability_residual = 0.0;  // |A M^-1 B u_plant|
};

// u = u_r - K S e_v with u_r = B_ef^+ (M zeta_r_dot + C zeta_r - d_hat).
ControlCommand control_wrench(const MatrixXd& M, const MatrixXd& C, const MatrixXd& B,
                              const MatrixXd& B_ef, const GeometryStack& stack,
                              const MatrixXd& completion, const MomentumConstraint& constraint,
                              const MatrixXd& K, const MatrixXd& S, const VectorXd& e_v,
                              const VectorXd& zeta_r, const VectorXd& zeta_r_dot,
                              const VectorXd& d_hat, const MatrixXd* g_model = nullptr);

// Largest eigenvalue of S^T sym(B_ef K) S - alpha S^T M S; certificate holds
// when this is <= tolerance (the inequality holds on span(S)).
double contraction_certificate_gap(const MatrixXd& K, double alpha, const MatrixXd& S,
                                   const MatrixXd& B_ef, const MatrixXd& M);

// sup|P| / sqrt(lmin(M) lmin(Lambda)) * d_sup / alpha.
double error_ball(double alpha, const MatrixXd& M, const MatrixXd& Lambda, double p_sup,
                  double d_sup);

struct SynthesisOptions {
  double w_bar = std::numeric_limits<double>::infinity();  // power budget [W]
  double u_bar = 0.0;     // explicit feedback wrench authority; 0 = derive from w_bar
  double e_v_bar = 1.0;   // operating bound on |e_v|
  bool block_diagonal = true;
  bool allow_dense_fallback = true;
  int subgradient_iters = 300;
  int bisection_iters = 30;
  VectorXd power_weights;  // forwarded to the dual bound
};

struct SynthesisResult {
  ControllerConfig config;
  bool feasible = false;
  double u_bar = 0.0;
  double epsilon = 0.0;
  double feedforward_power_bound = 0.0;  // dual bound for u_r alone
  double certificate_gap = 0.0;
  std::string binding_constraint;
};

// Maximizes the certified rate alpha by bisection, testing feasibility of
// the structured-gain eigenvalue condition under the norm cap implied by
// the power budget (via the self-derived dual certificate).
SynthesisResult noda_mmh_synthesis(const MatrixXd& M, const MatrixXd& B_ef,
                                   const MatrixXd& S_cert, const MatrixXd& S_ctrl,
                                   const GeometryStack& stack, const VectorXd& u_r_nominal,
                                   const MatrixXd& Lambda, const SynthesisOptions& opts = {});

}  // namespace emff
