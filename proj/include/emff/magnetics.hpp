#pragma once

#include <array>
#include <functional>
#include <stdexcept>
#include <vector>

#include "emff/attitude.hpp"
#include "emff/linalg.hpp"

// Exact (double contour integral) and far-field (point dipole) magnetic
// interaction models, their stacked matrix forms over a swarm, and the
// exact/far mapping.
//
// Geometry matrices are pure geometry: the mu0/(4 pi) prefactor is applied
// by the wrench evaluators, and dipole vectors are body-frame components
// that already include the core amplification.
//
// Frames: pairwise geometry matrices report force and torque in world axes,
// torque about the receiver's center of mass. Stacked matrices rotate each
// torque block into the receiver's body frame, which is what the dynamics
// input map consumes. Stack row order after the block permutation is
// [f_1 .. f_{n-1}; tau_1 .. tau_{n-1}].

namespace emff {

using Matrix69d = Eigen::Matrix<double, 6, 9>;

struct CoilSpec {
  double turns = 120.0;
  double loop_radius = 0.075;               // [m]
  double enclosed_area = kPi * 0.075 * 0.075;  // [m^2]
  double mu_r = 1.0;                        // relative permeability
  double demag_factor = 0.0;                // N_d in [0,1]
  std::array<Vector3d, 3> axes = {Vector3d::UnitX(), Vector3d::UnitY(),
                                  Vector3d::UnitZ()};  // body frame
  std::array<Vector3d, 3> axis_offsets = {Vector3d::Zero(), Vector3d::Zero(),
                                          Vector3d::Zero()};  // body frame [m]

  static CoilSpec circular(double turns_, double loop_radius_, double mu_r_ = 1.0,
                           double demag_factor_ = 0.0);
  // 1 + (mu_r - 1) / (1 - N_d + mu_r * N_d)
  double core_amplification() const;
  void validate() const;
};

// mu_v = N_t * A * c_v * core_amplification, per axis [A*m^2].
Vector3d dipole_moment(const CoilSpec& coil, const Vector3d& currents);

struct QuadratureOptions {
  int initial_nodes = 64;
  int max_nodes = 512;
  double rel_tol = 1e-6;
  bool adaptive = true;
};

// 6-vector kernel of the double contour integral between one source loop
// and one receiver loop (world poses). First three entries: force kernel;
// last three: torque kernel about the receiver loop center.
Vector6d coil_geometry_vector(const Vector3d& receiver_center, const Vector3d& receiver_axis,
                              double receiver_radius, const Vector3d& source_center,
                              const Vector3d& source_axis, double source_radius,
                              const QuadratureOptions& opts = {});

// 6x9 map from (mu_source (x) mu_receiver) to the receiver wrench, exact
// model, A^-2 scaled, torque shifted to the receiver center of mass.
Matrix69d geometry_matrix(const SatelliteState& receiver, const SatelliteState& source,
                          const CoilSpec& receiver_coil, const CoilSpec& source_coil,
                          const QuadratureOptions& opts = {});

// Same layout, point-dipole model.
Matrix69d far_field_geometry_matrix(const SatelliteState& receiver,
                                    const SatelliteState& source);

// (mu0/4pi) * G * (mu_source (x) mu_receiver).
Vector6d exact_wrench(const Matrix69d& g, const Vector3d& mu_source,
                      const Vector3d& mu_receiver);

// Point-dipole wrench on the receiver; dipoles and the relative position
// (receiver minus source) in world axes.
Vector6d far_field_wrench(const Vector3d& mu_receiver, const Vector3d& mu_source,
                          const Vector3d& relative_position);

enum class GeometryModel { exact, far };

// Per-pair geometry provider (receiver, source indices) for plugging in a
// learned model; must return the world-frame 6x9 layout of geometry_matrix.
using PairGeometryFn = std::function<Matrix69d(int, int)>;

struct GeometryStack {
  int n = 0;
  MatrixXd g_stack;  // selected model, 6(n-1) x 9n^2
  MatrixXd q_stack;  // far-field,      6(n-1) x 9n^2
  MatrixXd k_perm;   // 6(n-1) x 6(n-1) block permutation
  MatrixXd r_sel;    // 9n(n-1)/2 x 9n^2 pair selection
  MatrixXd k33;      // 9x9 Kronecker commutation

  int rows() const { return 6 * (n - 1); }
};

GeometryStack stack_geometry(const SwarmState& swarm, const CoilSpec& coil,
                             GeometryModel model, const QuadratureOptions& opts = {});

// Stack with a caller-supplied exact-model source (e.g. a learned model);
// the far-field stack is still computed analytically.
GeometryStack stack_geometry_custom(const SwarmState& swarm, const PairGeometryFn& pair_fn);

// Completion map T in R^{6n x 6(n-1)}: lifts the stacked wrench of
// satellites 1..n-1 to all n per-satellite wrenches
// [f_world(3n); tau_body(3n)] using Newton's third law and total torque
// balance about the origin.
MatrixXd stack_completion(const SwarmState& swarm);

// H solving G Pz^T = H Q Pz^T in the least-squares sense; errors out when
// Q Pz^T is row-rank deficient.
MatrixXd exact_far_mapping(const MatrixXd& g_stack, const MatrixXd& q_stack,
                           const MatrixXd& p_zeta);

// Pi = Q^+ Q.
MatrixXd orthogonal_projector(const MatrixXd& q_stack);

}  // namespace emff
