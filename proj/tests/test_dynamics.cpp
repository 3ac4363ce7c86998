#include <doctest.h>

#include <random>
#include <unsupported/Eigen/MatrixFunctions>

#include "emff/dynamics.hpp"
#include "emff/scenario.hpp"

using namespace emff;

namespace {

std::mt19937_64 rng(31);

const CoilSpec kCoil = CoilSpec::circular(120.0, 0.075);
const QuadratureOptions kQuad{32, 512, 1e-6, false};

ScenarioConfig two_sat_cfg(double d = 0.5) {
  ScenarioConfig cfg;
  cfg.n = 2;
  cfg.masses = VectorXd::Constant(2, 1.15);
  cfg.inertias.assign(2, 6.9e-4 * Matrix3d::Identity());
  cfg.coil = kCoil;
  cfg.initial_positions = {Vector3d::Zero(), Vector3d(d, 0.0, 0.0)};
  cfg.quadrature = kQuad;
  return cfg;
}

MatrixXd path_incidence(int n) {
  MatrixXd e = MatrixXd::Zero(n, n - 1);
  for (int k = 0; k + 1 < n; ++k) {
    e(k, k) = -1.0;
    e(k + 1, k) = 1.0;
  }
  return e;
}

}  // namespace

TEST_SUITE("dynamics") {

TEST_CASE("assemble_system shapes and wheel coupling") {
  SwarmState swarm;
  swarm.satellites.resize(2);
  swarm.satellites[1].position = Vector3d(0.5, 0, 0);
  const VectorXd masses = VectorXd::Constant(2, 1.15);
  const std::vector<Matrix3d> inertias(2, 6.9e-4 * Matrix3d::Identity());

  // No wheels: B is the identity and its own inverse.
  const LagrangianSystem plain = assemble_system(swarm, masses, inertias);
  CHECK((plain.B - MatrixXd::Identity(12, 12)).norm() == 0.0);
  CHECK((plain.Binv - plain.B).norm() == 0.0);

  swarm.satellites[0].wheel_momentum = Vector3d::Zero();
  const LagrangianSystem sys = assemble_system(swarm, masses, inertias);
  CHECK(sys.M.rows() == 15);
  CHECK((sys.B * sys.Binv - MatrixXd::Identity(15, 15)).norm() < 1e-14);

  CHECK_THROWS(assemble_system(swarm, VectorXd::Zero(2), inertias));
}

TEST_CASE("gyroscopic matrix is power-neutral") {
  SwarmState swarm;
  swarm.satellites.resize(2);
  swarm.satellites[1].position = Vector3d(0.5, 0, 0);
  swarm.satellites[0].wheel_momentum = Vector3d(0.01, -0.02, 0.005);
  swarm.satellites[0].angular_rate = Vector3d(0.4, 0.1, -0.3);
  swarm.satellites[1].angular_rate = Vector3d(-0.2, 0.3, 0.6);
  const LagrangianSystem sys = assemble_system(swarm, VectorXd::Constant(2, 1.15),
                                               std::vector<Matrix3d>(2, 6.9e-4 * Matrix3d::Identity()));
  const MatrixXd c = sys.gyroscopic(swarm);
  VectorXd zeta(15);
  zeta.setZero();
  zeta.segment<3>(6) = swarm.satellites[0].angular_rate;
  zeta.segment<3>(9) = swarm.satellites[1].angular_rate;
  // zeta^T (Mdot - 2C) zeta = -2 zeta^T C zeta with constant M.
  CHECK(std::abs(zeta.dot(c * zeta)) < 1e-16);
}

TEST_CASE("free drift leaves the state unchanged") {
  const ScenarioConfig cfg = two_sat_cfg();
  SwarmState swarm;
  swarm.satellites.resize(2);
  swarm.satellites[1].position = cfg.initial_positions[1];
  const LagrangianSystem sys = assemble_system(swarm, cfg.masses, cfg.inertias);
  const MatrixXd s_ref =
      tangent_space(momentum_matrix(swarm, cfg.masses, cfg.inertias), TangentVariant::eq3).S;
  ReducedState state = make_reduced_state(sys, swarm, s_ref);
  const ReducedState next =
      step_reduced(sys, s_ref, state, VectorXd::Zero(12), nullptr, 0.0, 0.05);
  CHECK((next.v - state.v).norm() < 1e-15);
  CHECK((next.swarm.satellites[1].position - swarm.satellites[1].position).norm() < 1e-15);
  CHECK_THROWS(step_reduced(sys, s_ref, state, VectorXd::Zero(12), nullptr, 0.0, 0.0));
}

TEST_CASE("axial attraction pulls the pair together symmetrically") {
  const ScenarioConfig cfg = two_sat_cfg(0.5);
  SwarmState swarm;
  swarm.satellites.resize(2);
  swarm.satellites[1].position = cfg.initial_positions[1];
  const LagrangianSystem sys = assemble_system(swarm, cfg.masses, cfg.inertias);
  const MatrixXd s_ref =
      tangent_space(momentum_matrix(swarm, cfg.masses, cfg.inertias), TangentVariant::eq3).S;
  ReducedState state = make_reduced_state(sys, swarm, s_ref);

  // Constant internal force pair along x.
  VectorXd u = VectorXd::Zero(12);
  u(0) = 1e-3;
  u(3) = -1e-3;
  for (int i = 0; i < 200; ++i) state = step_reduced(sys, s_ref, state, u, nullptr, 0.0, 0.01);
  const Vector3d p0 = state.swarm.satellites[0].position;
  const Vector3d p1 = state.swarm.satellites[1].position;
  CHECK(p0.x() > 0.0);
  CHECK(p1.x() < 0.5);
  CHECK(std::abs(p0.x() + p1.x() - 0.5) < 1e-12);  // symmetric approach
  CHECK(total_linear_momentum(state.swarm, sys).norm() < 1e-12);
}

TEST_CASE("RK4 order on a smooth two-coil scenario") {
  const ScenarioConfig cfg = two_sat_cfg(0.5);
  SwarmState swarm;
  swarm.satellites.resize(2);
  swarm.satellites[1].position = cfg.initial_positions[1];
  swarm.satellites[0].angular_rate = Vector3d(0.2, -0.1, 0.15);
  swarm.satellites[1].angular_rate = Vector3d(-0.1, 0.25, 0.1);
  const LagrangianSystem sys = assemble_system(swarm, cfg.masses, cfg.inertias);
  const MatrixXd s_ref =
      tangent_space(momentum_matrix(swarm, cfg.masses, cfg.inertias), TangentVariant::eq3).S;

  // Smooth bounded generalized force.
  DisturbanceFn d = [](double t) {
    VectorXd v = VectorXd::Zero(12);
    v(0) = 1e-3 * std::sin(0.9 * t);
    v(3) = -1e-3 * std::sin(0.9 * t);
    v(7) = 2e-5 * std::cos(1.3 * t);
    return v;
  };
  auto run = [&](int steps) {
    ReducedState st = make_reduced_state(sys, swarm, s_ref);
    const double dt = 2.0 / steps;
    for (int i = 0; i < steps; ++i)
      st = step_reduced(sys, s_ref, st, VectorXd::Zero(12), d, i * dt, dt);
    VectorXd out(6);
    out << st.swarm.satellites[0].position, st.swarm.satellites[1].position;
    return out;
  };
  const VectorXd ref = run(512);
  const double e1 = (run(32) - ref).norm();
  const double e2 = (run(64) - ref).norm();
  const double order = std::log2(e1 / e2);
  CHECK(order >= 3.8);
}

TEST_CASE("momentum conservation over an internal-wrench-only run") {
  ScenarioConfig cfg = two_sat_cfg(0.5);
  std::vector<DipoleWave> waves(2);
  waves[0] = DipoleWave{Vector3d(5.0, 1.0, 0.5), Vector3d(0.5, 2.0, 0.0), 8.0 * kPi};
  waves[1] = DipoleWave{Vector3d(4.0, -1.5, 1.0), Vector3d(1.5, 0.5, 1.0), 8.0 * kPi};
  const MomentumDriftResult drift = momentum_drift_run(cfg, waves, 2000, 5e-3, 5);
  CHECK(drift.linear_drift < 1e-10);
  CHECK(drift.angular_drift < 1e-10);
}

TEST_CASE("wheel torque exchanges momentum without changing the total") {
  ScenarioConfig cfg = two_sat_cfg(0.5);
  cfg.wheels = 1;
  SwarmState swarm;
  swarm.satellites.resize(2);
  swarm.satellites[1].position = cfg.initial_positions[1];
  swarm.satellites[0].wheel_momentum = Vector3d::Zero();
  const LagrangianSystem sys = assemble_system(swarm, cfg.masses, cfg.inertias);
  const MatrixXd s_ref =
      tangent_space(momentum_matrix(swarm, cfg.masses, cfg.inertias), TangentVariant::eq3).S;
  ReducedState state = make_reduced_state(sys, swarm, s_ref);
  VectorXd u = VectorXd::Zero(15);
  u.tail<3>() = Vector3d(2e-4, -1e-4, 3e-4);  // wheel torque only
  const Vector3d l0 = total_angular_momentum(state.swarm, sys);
  for (int i = 0; i < 400; ++i) state = step_reduced(sys, s_ref, state, u, nullptr, 0.0, 5e-3);
  const Vector3d l1 = total_angular_momentum(state.swarm, sys);
  CHECK(state.swarm.satellites[0].wheel_momentum->norm() > 1e-5);
  CHECK(state.swarm.satellites[0].angular_rate.norm() > 1e-3);
  CHECK((l1 - l0).norm() < 1e-12);
}

TEST_CASE("ground closed loop structure and spectrum") {
  const MatrixXd e = path_incidence(2);
  const GroundSystem shift = ground_closed_loop(e, MatrixXd::Zero(2, 1), MatrixXd::Zero(2, 1));
  CHECK(shift.A_gnd.topRows(1).norm() == 0.0);
  CHECK((shift.A_gnd.bottomLeftCorner(1, 1) - MatrixXd::Identity(1, 1)).norm() == 0.0);

  // Scalar-gain path: eigenvalues solve s^2 + 2 kd s + 2 kp = 0 (edge
  // Laplacian eigenvalue 2 for n = 2).
  const double kp = 0.3, kd = 0.8;
  const GroundSystem g = ground_closed_loop(e, kp * e, kd * e);
  const Eigen::VectorXcd eig = g.A_gnd.eigenvalues();
  const std::complex<double> disc = std::sqrt(std::complex<double>(kd * kd * 4.0 - 8.0 * kp));
  const std::complex<double> r1 = 0.5 * (-2.0 * kd + disc);
  const std::complex<double> r2 = 0.5 * (-2.0 * kd - disc);
  const double err = std::min(std::abs(eig(0) - r1), std::abs(eig(0) - r2)) +
                     std::min(std::abs(eig(1) - r1), std::abs(eig(1) - r2));
  CHECK(err < 1e-12);

  // Propagation against the matrix exponential.
  VectorXd x0(2);
  x0 << 0.2, -0.4;
  VectorXd x = x0;
  const double dt = 1e-3;
  for (int i = 0; i < 1000; ++i) {
    // RK4 on x_dot = A x.
    const VectorXd k1 = g.A_gnd * x;
    const VectorXd k2 = g.A_gnd * (x + 0.5 * dt * k1);
    const VectorXd k3 = g.A_gnd * (x + 0.5 * dt * k2);
    const VectorXd k4 = g.A_gnd * (x + dt * k3);
    x += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  const MatrixXd expm = (g.A_gnd * 1.0).exp();
  CHECK((x - expm * x0).norm() < 1e-8);
}

TEST_CASE("orbital closed loop blocks and spectrum") {
  const MatrixXd e = path_incidence(3);
  OrbitalParams params;
  params.finalize();

  // k_A = 0 with gamma = 0 is the pure drift block [0 0; (eps2/2) I 0];
  // with gamma != 0 the symbolically simplified (k1/kA) A22 term keeps a
  // finite -(gamma k1/2) L_e contribution.
  OrbitalParams drift = params;
  drift.k_A = 0.0;
  drift.gamma = 0.0;
  const MatrixXd a_drift = orbital_closed_loop(drift, e);
  CHECK(a_drift.topRows(2).norm() == 0.0);
  CHECK((a_drift.bottomLeftCorner(2, 2) - params.epsilon2 / 2.0 * MatrixXd::Identity(2, 2))
            .norm() < 1e-12);
  OrbitalParams drift_g = params;
  drift_g.k_A = 0.0;
  drift_g.gamma = 0.7;
  const MatrixXd a_drift_g = orbital_closed_loop(drift_g, e);
  const MatrixXd expected_bl =
      params.epsilon2 / 2.0 *
      (MatrixXd::Identity(2, 2) - 0.7 * params.k1 / 2.0 * (e.transpose() * e));
  CHECK((a_drift_g.bottomLeftCorner(2, 2) - expected_bl).norm() < 1e-12);

  OrbitalParams nogamma = params;
  nogamma.gamma = 0.0;
  const MatrixXd a0 = orbital_closed_loop(nogamma, e);
  CHECK(a0.bottomRightCorner(2, 2).norm() == 0.0);

  // Spectrum equals the union of per-edge-eigenvalue 2x2 blocks.
  const MatrixXd a = orbital_closed_loop(params, e);
  Eigen::SelfAdjointEigenSolver<MatrixXd> le(e.transpose() * e);
  std::vector<std::complex<double>> expected;
  for (int i = 0; i < le.eigenvalues().size(); ++i) {
    const double lam = le.eigenvalues()(i);
    const double a11 = -(params.k_A / 2.0) * lam;
    const double a22 = params.gamma * a11;
    Eigen::Matrix2d blk;
    blk << a11, 0.0, (params.epsilon2 / 2.0) * (1.0 + (params.k1 / params.k_A) * a22), a22;
    const Eigen::Vector2cd ev = blk.eigenvalues();
    expected.push_back(ev(0));
    expected.push_back(ev(1));
  }
  Eigen::VectorXcd actual = a.eigenvalues();
  for (int i = 0; i < actual.size(); ++i) {
    double best = 1e300;
    for (const auto& c : expected) best = std::min(best, std::abs(actual(i) - c));
    CHECK(best < 1e-12);
  }
}

TEST_CASE("normalization similarity identity and trajectory mapping") {
  const MatrixXd e = path_incidence(3);
  OrbitalParams params;
  params.k_A = 2.0e-3;
  params.gamma = 0.4;
  params.k1 = 1.3;
  params.finalize();
  const double beta = 10.0 / 0.1875;
  CHECK(beta == doctest::Approx(53.333333).epsilon(1e-6));

  const NormalizationMap nm = build_normalization(params, e, 1e-3 / 1e-3, beta);
  CHECK(nm.similarity_residual < 1e-10);

  // Round trip of the error map.
  VectorXd ground_err(4);
  ground_err << 0.1, -0.2, 0.05, 0.3;
  CHECK((nm.unmap(nm.map(ground_err)) - ground_err).norm() < 1e-12);

  // The mapped ground trajectory equals the orbital propagation in scaled
  // time: Theta exp(A_gnd t) = exp(A_orb beta t) Theta.
  const double t = 3.0;
  const MatrixXd lhs = nm.Theta * (nm.ground.A_gnd * t).exp();
  const MatrixXd rhs = (nm.A_orb * beta * t).exp() * nm.Theta;
  CHECK((lhs - rhs).norm() < 1e-6 * rhs.norm());

  // Inconsistent tolerance triggers the error path.
  CHECK_THROWS(build_normalization(params, e, 1.0, beta, 1e-18));
}

TEST_CASE("analytic relative orbit and averaged invariants") {
  OrbitalParams params;
  params.finalize();
  RelativeOrbitInputs in;
  in.C1 = 0.0;
  in.C4 = 12.0;
  in.r_xy = 5.0;
  in.theta_xy = 0.7;
  in.r_z = 2.0;
  in.theta_z = -0.4;

  // No drift when C1 = 0: y stays within the oscillation band.
  double ymin = 1e300, ymax = -1e300;
  const double period = 2.0 * kPi / params.omega_xy;
  for (int i = 0; i < 2000; ++i) {
    const double y = analytic_relative_orbit(in, params, 5.0 * period * i / 2000.0).y();
    ymin = std::min(ymin, y);
    ymax = std::max(ymax, y);
  }
  CHECK(ymax - ymin <= 2.0 * 2.0 * in.r_xy / params.c_minus * (1.0 + 1e-9));

  // t = 0 value from amplitudes and phases directly.
  const Vector3d r0 = analytic_relative_orbit(in, params, 0.0);
  CHECK(r0.x() == doctest::Approx(2.0 * in.C1 + in.r_xy * std::sin(in.theta_xy) / params.c_plus));
  CHECK(r0.y() ==
        doctest::Approx(in.C4 + 2.0 * in.r_xy * std::cos(in.theta_xy) / params.c_minus));
  CHECK(r0.z() == doctest::Approx(in.r_z * std::sin(in.theta_z)));

  // Finite-difference velocity at t = 0 matches the analytic derivative.
  const double h = 1e-4;
  const Vector3d rp = analytic_relative_orbit(in, params, h);
  const Vector3d rm = analytic_relative_orbit(in, params, -h);
  const Vector3d v_fd = (rp - rm) / (2.0 * h);
  const double y_dot_expected =
      -params.epsilon2 * in.C1 -
      2.0 * in.r_xy * params.omega_xy * std::sin(in.theta_xy) / params.c_minus;
  CHECK(v_fd.y() == doctest::Approx(y_dot_expected).epsilon(1e-6));

  // Drift-free mean state gives C1 = 0 exactly.
  MeanRelativeState mean;
  mean.x = 0.0;
  mean.y_dot = 0.0;
  mean.y = 12.0;
  CHECK(j2_invariants(mean, params).first == 0.0);
  CHECK(j2_invariants(mean, params).second ==
        doctest::Approx(12.0 / params.c_minus).epsilon(1e-12));

  // Round trip through the displayed formulas: the composition factors are
  // fixed closed forms of (c_plus, c_minus, eps2/omega); the paper's nominal
  // constants make them 1 only to O(1e-4), so the oracle checks the exact
  // composition rather than identity.
  in.C1 = 3.0;
  mean.x = 2.0 * in.C1;
  mean.x_dot = 0.0;
  mean.y = in.C4;  // at t = 0
  mean.y_dot = -params.epsilon2 * in.C1;
  const auto [c1_back, c4_back] = j2_invariants(mean, params);
  const double kappa1 = (params.c_plus / (params.c_minus * params.c_minus)) *
                        (4.0 - params.epsilon2 / params.omega_xy);
  CHECK(c1_back == doctest::Approx(kappa1 * in.C1).epsilon(1e-10));
  CHECK(c4_back == doctest::Approx(in.C4 / params.c_minus).epsilon(1e-10));
}

}  // TEST_SUITE
