#pragma once

#include <optional>
#include <stdexcept>
#include <vector>

#include "emff/linalg.hpp"

// Attitude representation (modified Rodrigues parameters), the swarm state
// container, and the stacked kinematic map used by the controller and the
// simulator.
//
// Conventions: sigma = axis * tan(angle/4). mrp_to_rotation returns the
// coordinate transformation matrix from the inertial frame to the body
// frame (passive rotation). The shadow representative -sigma/|sigma|^2
// describes the same physical attitude.

namespace emff {

struct Mrp {
  Vector3d sigma = Vector3d::Zero();

  Mrp() = default;
  explicit Mrp(const Vector3d& s) : sigma(s) {}

  double norm2() const { return sigma.squaredNorm(); }

  // Shadow-set representative of the same rotation.
  Mrp shadow() const;

  // Representative with |sigma| <= 1 (switches to the shadow set if needed).
  Mrp canonical() const;
};

// Body-from-inertial direction cosine matrix.
Matrix3d mrp_to_rotation(const Mrp& m);

// MRP of a given rotation matrix (canonical representative, |sigma| <= 1).
// Goes through the quaternion so it is well conditioned for all inputs.
Mrp rotation_to_mrp(const Matrix3d& c);

// Kinematics matrix Z(sigma); sigma_dot = Z(sigma) * omega_body,
// Z(0) = I/4.
Matrix3d mrp_rate_matrix(const Mrp& m);

// sigma_dot for body angular rate omega.
Vector3d mrp_kinematics(const Mrp& m, const Vector3d& omega);

// Relative attitude e such that C(e) = C(sigma) * C(sigma_d)^T.
Mrp attitude_error(const Mrp& sigma, const Mrp& sigma_d);

struct SatelliteState {
  Vector3d position = Vector3d::Zero();       // inertial [m]
  Vector3d velocity = Vector3d::Zero();       // inertial [m/s]
  Mrp attitude;                               // body from inertial
  Vector3d angular_rate = Vector3d::Zero();   // body [rad/s]
  std::optional<Vector3d> wheel_momentum;     // body [N*m*s], wheels only
};

struct SwarmState {
  std::vector<SatelliteState> satellites;

  int n() const { return static_cast<int>(satellites.size()); }
  // Wheel-equipped satellites come first by convention.
  int m() const;
  void validate() const;
};

// Block map P: q_dot = P * zeta with zeta = [r_dot(3n); omega(3n); xi(3m)]
// and q = [positions(3n); MRPs(3n)]. The attitude blocks are Z(errors[j]).
struct KinematicsStack {
  MatrixXd P;  // 6n x (6n+3m)
};

KinematicsStack stack_kinematics(const SwarmState& swarm, const std::vector<Mrp>& errors);

}  // namespace emff
