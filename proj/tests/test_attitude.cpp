#include <doctest.h>

#include <random>

#include "emff/attitude.hpp"

using namespace emff;

namespace {

// Independent quaternion oracle (scalar-first, passive DCM).
struct Quat {
  double w = 1.0;
  Vector3d v = Vector3d::Zero();

  static Quat axis_angle(const Vector3d& axis, double angle) {
    Quat q;
    q.w = std::cos(angle / 2.0);
    q.v = std::sin(angle / 2.0) * axis.normalized();
    return q;
  }
  Matrix3d dcm() const {
    const double q0 = w;
    const Vector3d& qv = v;
    return (q0 * q0 - qv.squaredNorm()) * Matrix3d::Identity() + 2.0 * qv * qv.transpose() -
           2.0 * q0 * skew(qv);
  }
  Mrp mrp() const {
    Quat q = *this;
    if (q.w < 0.0) {
      q.w = -q.w;
      q.v = -q.v;
    }
    return Mrp(Vector3d(q.v / (1.0 + q.w)));
  }
};

std::mt19937_64 rng(42);

Mrp random_mrp() {
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  std::uniform_real_distribution<double> ang(-3.0, 3.0);
  Vector3d axis(uni(rng), uni(rng), uni(rng));
  while (axis.norm() < 1e-3) axis = Vector3d(uni(rng), uni(rng), uni(rng));
  return Quat::axis_angle(axis, ang(rng)).mrp();
}

}  // namespace

TEST_SUITE("attitude") {

TEST_CASE("zero mrp is the identity rotation") {
  CHECK((mrp_to_rotation(Mrp()) - Matrix3d::Identity()).norm() == doctest::Approx(0.0));
}

TEST_CASE("tan(pi/8) about x rotates by pi/2") {
  const Mrp m(Vector3d(std::tan(kPi / 8.0), 0.0, 0.0));
  Matrix3d expected;
  // Frozen from the quaternion oracle: passive rotation by pi/2 about x.
  expected << 1, 0, 0, 0, 0, 1, 0, -1, 0;
  CHECK((mrp_to_rotation(m) - expected).norm() < 1e-14);
  const Matrix3d oracle = Quat::axis_angle(Vector3d::UnitX(), kPi / 2.0).dcm();
  CHECK((mrp_to_rotation(m) - oracle).norm() < 1e-14);
}

TEST_CASE("quaternion oracle agreement on random attitudes") {
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    Vector3d axis(uni(rng), uni(rng), uni(rng));
    if (axis.norm() < 1e-3) continue;
    const double angle = 3.0 * uni(rng);
    const Quat q = Quat::axis_angle(axis, angle);
    CHECK((mrp_to_rotation(q.mrp()) - q.dcm()).norm() < 1e-12);
  }
}

TEST_CASE("rotation matrices are orthonormal with unit determinant") {
  for (int i = 0; i < 100; ++i) {
    const Matrix3d c = mrp_to_rotation(random_mrp());
    CHECK((c.transpose() * c - Matrix3d::Identity()).norm() < 1e-12);
    CHECK(c.determinant() == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("shadow set gives the identical rotation") {
  for (int i = 0; i < 100; ++i) {
    const Mrp m = random_mrp();
    if (m.norm2() < 1e-8) continue;
    CHECK((mrp_to_rotation(m) - mrp_to_rotation(m.shadow())).norm() < 1e-12);
  }
}

TEST_CASE("canonical representative has |sigma| <= 1") {
  for (int i = 0; i < 100; ++i) {
    Mrp m = random_mrp();
    m.sigma *= 3.0;  // push outside the unit ball
    CHECK(m.canonical().norm2() <= 1.0 + 1e-12);
    CHECK((mrp_to_rotation(m) - mrp_to_rotation(m.canonical())).norm() < 1e-12);
  }
}

TEST_CASE("rate is zero for zero angular velocity") {
  CHECK(mrp_kinematics(random_mrp(), Vector3d::Zero()).norm() == 0.0);
}

TEST_CASE("Z(0) = I/4") {
  const Vector3d w(0.3, -0.1, 0.7);
  CHECK((mrp_kinematics(Mrp(), w) - w / 4.0).norm() < 1e-15);
  CHECK((mrp_rate_matrix(Mrp()) - 0.25 * Matrix3d::Identity()).norm() < 1e-15);
}

TEST_CASE("finite difference of the DCM matches the angular velocity") {
  // d/dt C^{B/I} = -[w x] C^{B/I} for body-frame w; integrate sigma with Z
  // and difference the rotation.
  const Vector3d w(0.4, -0.2, 0.9);
  Mrp m = random_mrp();
  const double h = 1e-5;
  auto rk4 = [&](Mrp s, double dt) {
    const Vector3d k1 = mrp_kinematics(s, w);
    const Vector3d k2 = mrp_kinematics(Mrp(s.sigma + 0.5 * dt * k1), w);
    const Vector3d k3 = mrp_kinematics(Mrp(s.sigma + 0.5 * dt * k2), w);
    const Vector3d k4 = mrp_kinematics(Mrp(s.sigma + dt * k3), w);
    return Mrp(s.sigma + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
  };
  const Matrix3d c0 = mrp_to_rotation(m);
  const Matrix3d cp = mrp_to_rotation(rk4(m, h));
  const Matrix3d cm = mrp_to_rotation(rk4(m, -h));
  const Matrix3d cdot = (cp - cm) / (2.0 * h);
  CHECK((cdot + skew(w) * c0).norm() < 1e-8);
}

TEST_CASE("constant-rate integration reproduces the axis-angle rotation") {
  const Vector3d w(0.21, -0.34, 0.55);
  const double t_final = 1.3;
  const int steps = 2000;
  Mrp m;
  const double dt = t_final / steps;
  for (int i = 0; i < steps; ++i) {
    const Vector3d k1 = mrp_kinematics(m, w);
    const Vector3d k2 = mrp_kinematics(Mrp(m.sigma + 0.5 * dt * k1), w);
    const Vector3d k3 = mrp_kinematics(Mrp(m.sigma + 0.5 * dt * k2), w);
    const Vector3d k4 = mrp_kinematics(Mrp(m.sigma + dt * k3), w);
    m = Mrp(m.sigma + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)).canonical();
  }
  const Matrix3d expected = Quat::axis_angle(w, w.norm() * t_final).dcm();
  CHECK((mrp_to_rotation(m) - expected).norm() < 1e-8);
}

TEST_CASE("attitude error trivials and composition oracle") {
  const Mrp s = random_mrp();
  CHECK(attitude_error(s, s).sigma.norm() < 1e-14);
  CHECK((mrp_to_rotation(attitude_error(s, Mrp())) - mrp_to_rotation(s)).norm() < 1e-13);
  for (int i = 0; i < 100; ++i) {
    const Mrp a = random_mrp(), b = random_mrp();
    const Mrp e = attitude_error(a, b);
    const Matrix3d expected = mrp_to_rotation(a) * mrp_to_rotation(b).transpose();
    CHECK((mrp_to_rotation(e) - expected).norm() < 1e-12);
  }
}

TEST_CASE("stacked kinematics") {
  SwarmState swarm;
  swarm.satellites.resize(1);
  const KinematicsStack single = stack_kinematics(swarm, {Mrp()});
  CHECK(single.P.rows() == 6);
  CHECK(single.P.cols() == 6);

  swarm.satellites.resize(3);
  std::vector<Mrp> errors = {Mrp(), Mrp(), Mrp()};
  const KinematicsStack zero_err = stack_kinematics(swarm, errors);
  for (int j = 0; j < 3; ++j)
    CHECK((zero_err.P.block(9 + 3 * j, 9 + 3 * j, 3, 3) - 0.25 * Matrix3d::Identity()).norm() <
          1e-15);

  errors = {random_mrp(), random_mrp(), random_mrp()};
  const KinematicsStack kin = stack_kinematics(swarm, errors);
  VectorXd zeta(18);
  for (int i = 0; i < 18; ++i) zeta(i) = std::sin(i + 1.0);
  const VectorXd qdot = kin.P * zeta;
  for (int j = 0; j < 3; ++j) {
    CHECK((qdot.segment<3>(3 * j) - zeta.segment<3>(3 * j)).norm() < 1e-15);
    const Vector3d expected = mrp_kinematics(errors[j], zeta.segment<3>(9 + 3 * j));
    CHECK((qdot.segment<3>(9 + 3 * j) - expected).norm() < 1e-15);
  }

  CHECK_THROWS(stack_kinematics(swarm, {Mrp()}));
}

}  // TEST_SUITE
