#include "emff/attitude.hpp"

#include <cmath>

namespace emff {

Mrp Mrp::shadow() const {
  const double n2 = sigma.squaredNorm();
  if (n2 == 0.0) return *this;
  return Mrp(Vector3d(-sigma / n2));
}

Mrp Mrp::canonical() const {
  return sigma.squaredNorm() > 1.0 ? shadow() : *this;
}

Matrix3d mrp_to_rotation(const Mrp& m) {
  const double n2 = m.norm2();
  const Matrix3d sx = skew(m.sigma);
  const double d = (1.0 + n2) * (1.0 + n2);
  return Matrix3d::Identity() + (8.0 * sx * sx - 4.0 * (1.0 - n2) * sx) / d;
}

Mrp rotation_to_mrp(const Matrix3d& c) {
  // Shepperd's method for the quaternion [q0; qv] of the passive DCM,
  // then sigma = qv / (1 + q0) with q0 >= 0 picked for |sigma| <= 1.
  const double tr = c.trace();
  Eigen::Vector4d q;  // [q0, q1, q2, q3]
  const double t0 = 1.0 + tr;
  const double t1 = 1.0 + 2.0 * c(0, 0) - tr;
  const double t2 = 1.0 + 2.0 * c(1, 1) - tr;
  const double t3 = 1.0 + 2.0 * c(2, 2) - tr;
  int imax = 0;
  double tmax = t0;
  if (t1 > tmax) { tmax = t1; imax = 1; }
  if (t2 > tmax) { tmax = t2; imax = 2; }
  if (t3 > tmax) { tmax = t3; imax = 3; }
  switch (imax) {
    case 0:
      q(0) = 0.5 * std::sqrt(t0);
      q(1) = (c(1, 2) - c(2, 1)) / (4.0 * q(0));
      q(2) = (c(2, 0) - c(0, 2)) / (4.0 * q(0));
      q(3) = (c(0, 1) - c(1, 0)) / (4.0 * q(0));
      break;
    case 1:
      q(1) = 0.5 * std::sqrt(t1);
      q(0) = (c(1, 2) - c(2, 1)) / (4.0 * q(1));
      q(2) = (c(0, 1) + c(1, 0)) / (4.0 * q(1));
      q(3) = (c(2, 0) + c(0, 2)) / (4.0 * q(1));
      break;
    case 2:
      q(2) = 0.5 * std::sqrt(t2);
      q(0) = (c(2, 0) - c(0, 2)) / (4.0 * q(2));
      q(1) = (c(0, 1) + c(1, 0)) / (4.0 * q(2));
      q(3) = (c(1, 2) + c(2, 1)) / (4.0 * q(2));
      break;
    default:
      q(3) = 0.5 * std::sqrt(t3);
      q(0) = (c(0, 1) - c(1, 0)) / (4.0 * q(3));
      q(1) = (c(2, 0) + c(0, 2)) / (4.0 * q(3));
      q(2) = (c(1, 2) + c(2, 1)) / (4.0 * q(3));
      break;
  }
  if (q(0) < 0.0) q = -q;
  return Mrp(Vector3d(q.segment<3>(1) / (1.0 + q(0))));
}

Matrix3d mrp_rate_matrix(const Mrp& m) {
  const double n2 = m.norm2();
  return 0.25 * ((1.0 - n2) * Matrix3d::Identity() + 2.0 * skew(m.sigma) +
                 2.0 * m.sigma * m.sigma.transpose());
}

Vector3d mrp_kinematics(const Mrp& m, const Vector3d& omega) {
  return mrp_rate_matrix(m) * omega;
}

Mrp attitude_error(const Mrp& sigma, const Mrp& sigma_d) {
  const Matrix3d rel = mrp_to_rotation(sigma) * mrp_to_rotation(sigma_d).transpose();
  return rotation_to_mrp(rel);
}

int SwarmState::m() const {
  int count = 0;
  for (const auto& s : satellites)
    if (s.wheel_momentum.has_value()) ++count;
  return count;
}

void SwarmState::validate() const {
  if (n() < 1) throw std::invalid_argument("swarm must have at least one satellite");
  const int mm = m();
  for (int j = 0; j < mm; ++j)
    if (!satellites[j].wheel_momentum.has_value())
      throw std::invalid_argument("wheel-equipped satellites must come first");
  for (const auto& s : satellites) {
    if (!s.position.allFinite() || !s.velocity.allFinite() ||
        !s.attitude.sigma.allFinite() || !s.angular_rate.allFinite())
      throw std::invalid_argument("non-finite satellite state");
  }
}

KinematicsStack stack_kinematics(const SwarmState& swarm, const std::vector<Mrp>& errors) {
  const int n = swarm.n();
  const int m = swarm.m();
  if (static_cast<int>(errors.size()) != n)
    throw std::invalid_argument("stack_kinematics: errors length must equal n");
  MatrixXd p = MatrixXd::Zero(6 * n, 6 * n + 3 * m);
  p.topLeftCorner(3 * n, 3 * n).setIdentity();
  for (int j = 0; j < n; ++j)
    p.block(3 * n + 3 * j, 3 * n + 3 * j, 3, 3) = mrp_rate_matrix(errors[j]);
  return KinematicsStack{std::move(p)};
}

}  // namespace emff
