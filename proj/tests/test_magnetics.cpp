#include <doctest.h>

#include <cmath>
#include <random>

#include "emff/magnetics.hpp"

using namespace emff;

namespace {

std::mt19937_64 rng(7);

double uni(double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  return d(rng);
}

Vector3d rand_dir() {
  std::normal_distribution<double> g(0.0, 1.0);
  Vector3d v(g(rng), g(rng), g(rng));
  while (v.norm() < 1e-6) v = Vector3d(g(rng), g(rng), g(rng));
  return v.normalized();
}

Mrp rand_att() {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double u1 = u(rng), u2 = u(rng), u3 = u(rng);
  const double s1 = std::sqrt(1.0 - u1), s2 = std::sqrt(u1);
  double q0 = s2 * std::cos(2.0 * kPi * u3);
  Vector3d qv(s1 * std::sin(2.0 * kPi * u2), s1 * std::cos(2.0 * kPi * u2),
              s2 * std::sin(2.0 * kPi * u3));
  if (q0 < 0.0) {
    q0 = -q0;
    qv = -qv;
  }
  return Mrp(Vector3d(qv / (1.0 + q0)));
}

// Independent oracle: mutual inductance of coaxial loops via complete
// elliptic integrals (Maxwell), force from a Richardson-extrapolated
// derivative. Currents of 1 A and single turns.
double mutual_inductance(double a, double b, double d) {
  const double k2 = 4.0 * a * b / ((a + b) * (a + b) + d * d);
  const double k = std::sqrt(k2);
  const double K = std::comp_ellint_1(k);
  const double E = std::comp_ellint_2(k);
  return kMu0 * std::sqrt(a * b) * ((2.0 / k - k) * K - (2.0 / k) * E);
}

double coaxial_force_oracle(double radius, double d) {
  const double h = 1e-5 * d;
  const double d1 = (mutual_inductance(radius, radius, d + h) -
                     mutual_inductance(radius, radius, d - h)) /
                    (2.0 * h);
  const double d2 = (mutual_inductance(radius, radius, d + 2.0 * h) -
                     mutual_inductance(radius, radius, d - 2.0 * h)) /
                    (4.0 * h);
  return (4.0 * d1 - d2) / 3.0;  // attractive magnitude is |dM/dd|
}

SatelliteState at(const Vector3d& pos, const Mrp& att = Mrp()) {
  SatelliteState s;
  s.position = pos;
  s.attitude = att;
  return s;
}

const CoilSpec kCoil = CoilSpec::circular(120.0, 0.075);

}  // namespace

TEST_SUITE("magnetics") {

TEST_CASE("dipole moment basics") {
  CHECK(dipole_moment(kCoil, Vector3d::Zero()).norm() == 0.0);
  // Air core, N_t = 120, A = pi 0.075^2, c = 5.9 A on one axis.
  const Vector3d mu = dipole_moment(kCoil, Vector3d(0.0, 0.0, 5.9));
  CHECK(mu.z() == doctest::Approx(12.5).epsilon(0.2));
  CHECK(mu.z() == doctest::Approx(120.0 * kPi * 0.075 * 0.075 * 5.9).epsilon(1e-12));
  // Iron core limit: mu_r -> inf with N_d = 0.1 amplifies by 1 + 1/N_d = 11.
  const CoilSpec iron = CoilSpec::circular(120.0, 0.075, 1e9, 0.1);
  CHECK(iron.core_amplification() == doctest::Approx(11.0).epsilon(1e-6));
}

TEST_CASE("coil spec validation") {
  CHECK_NOTHROW(kCoil.validate());
  CoilSpec bad = kCoil;
  bad.mu_r = 0.5;
  CHECK_THROWS(bad.validate());
  bad = kCoil;
  bad.enclosed_area *= 1.5;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("quadrature matches the elliptic-integral oracle for coaxial loops") {
  const double r = 0.075;
  for (double d : {0.3, 0.45, 0.8}) {
    const Vector6d g = coil_geometry_vector(Vector3d(0, 0, d), Vector3d::UnitZ(), r,
                                            Vector3d::Zero(), Vector3d::UnitZ(), r);
    // Unit currents, single turns: F = dM/dd along z, attractive for
    // same-sense currents.
    const double oracle = coaxial_force_oracle(r, d);
    const double quadrature = (kMu0 / (4.0 * kPi)) * g(2);
    CHECK(std::abs(std::abs(quadrature) - std::abs(oracle)) < 1e-6 * std::abs(oracle));
    CHECK(quadrature < 0.0);  // pulls the receiver toward the source
    CHECK(g.head<2>().norm() < 1e-9 * std::abs(g(2)));  // axisymmetry
    CHECK(g.tail<3>().norm() < 1e-9 * std::abs(g(2)) * r);
  }
}

TEST_CASE("far-field wrench closed form") {
  // mu = 12.5 each, coaxial at 0.45 m: F = 3 mu0 mu^2 / (2 pi d^4),
  // frozen from direct evaluation of the dipole force formula.
  const Vector3d mu(0.0, 0.0, 12.5);
  const Vector6d u = far_field_wrench(mu, mu, Vector3d(0.0, 0.0, 0.45));
  CHECK(std::abs(u.head<3>().norm() - 2.286236e-3) < 1e-7);
  CHECK(u.head<3>()(2) < 0.0);  // attraction
  CHECK(u.tail<3>().norm() < 1e-18);

  // Sign symmetry: flipping one dipole negates the force.
  const Vector6d flipped = far_field_wrench(mu, Vector3d(0.0, 0.0, -12.5),
                                            Vector3d(0.0, 0.0, 0.45));
  CHECK((flipped.head<3>() + u.head<3>()).norm() < 1e-18);
  CHECK_THROWS(far_field_wrench(mu, mu, Vector3d::Zero()));
}

TEST_CASE("far-vs-exact coaxial error follows 5 (R/d)^2") {
  // The dipole model overestimates the attraction between equal coaxial
  // loops by a relative 5 (R/d)^2 + O((R/d)^4); measured against the
  // elliptic oracle. This pins the expected mismatch scale used by the
  // proximity studies.
  const double r = 0.075;
  for (double ratio : {8.0, 10.0, 14.0, 20.0}) {
    const double d = ratio * r;
    const double exact = std::abs(coaxial_force_oracle(r, d));
    const double far = 3.0 * kMu0 / (2.0 * kPi) / (d * d * d * d);  // unit dipoles: mu = pi r^2
    const double far_scaled = far * std::pow(kPi * r * r, 2);
    const double rel = (far_scaled - exact) / exact;
    const double predicted = 5.0 * r * r / (d * d);
    CHECK(rel == doctest::Approx(predicted).epsilon(0.06));
  }
}

TEST_CASE("geometry matrix against the pairwise oracle and refinement") {
  SatelliteState receiver = at(Vector3d(0.31, 0.02, -0.04), rand_att());
  SatelliteState source = at(Vector3d::Zero(), rand_att());
  QuadratureOptions opts;
  const Matrix69d g = geometry_matrix(receiver, source, kCoil, kCoil, opts);
  QuadratureOptions fine;
  fine.initial_nodes = 128;
  const Matrix69d g2 = geometry_matrix(receiver, source, kCoil, kCoil, fine);
  CHECK((g2 - g).norm() < 1e-6 * g.norm());

  // Coaxial z-z pair matches the dedicated two-loop result.
  receiver = at(Vector3d(0.0, 0.0, 0.45));
  source = at(Vector3d::Zero());
  const Matrix69d gz = geometry_matrix(receiver, source, kCoil, kCoil, opts);
  const Vector6d pair = coil_geometry_vector(receiver.position, Vector3d::UnitZ(),
                                             kCoil.loop_radius, source.position,
                                             Vector3d::UnitZ(), kCoil.loop_radius);
  const double a2 = kCoil.enclosed_area * kCoil.enclosed_area;
  CHECK((gz.col(8) - pair / a2).norm() < 1e-9 * pair.norm() / a2);
}

TEST_CASE("axis offsets shift the torque by r_off x f") {
  CoilSpec offset_coil = kCoil;
  const Vector3d r_off(0.01, -0.02, 0.03);
  offset_coil.axis_offsets[2] = r_off;
  const SatelliteState receiver = at(Vector3d(0.4, 0.05, 0.1));
  const SatelliteState source = at(Vector3d::Zero());
  QuadratureOptions opts;
  const Matrix69d base = geometry_matrix(receiver, source, kCoil, kCoil, opts);
  const Matrix69d shifted = geometry_matrix(receiver, source, offset_coil, kCoil, opts);
  // Zero offset leaves the torque rows untouched.
  CHECK((shifted.col(0) - base.col(0)).norm() == 0.0);
  // The offset columns equal the displaced-loop kernel with the torque
  // shifted to the center of mass (identity attitude: r_off is world-frame).
  const double a2 = kCoil.enclosed_area * kCoil.enclosed_area;
  for (int w = 0; w < 3; ++w) {
    const int col = 3 * w + 2;
    Vector6d g = coil_geometry_vector(receiver.position + r_off, Vector3d::UnitZ(),
                                      kCoil.loop_radius, source.position,
                                      Vector3d(w == 0, w == 1, w == 2), kCoil.loop_radius);
    g.tail<3>() += r_off.cross(Vector3d(g.head<3>()));
    CHECK((shifted.col(col) - g / a2).norm() < 1e-9 * g.norm() / a2);
  }
}

TEST_CASE("exact wrench bilinearity and trivial zeros") {
  const SatelliteState receiver = at(Vector3d(0.35, -0.1, 0.2), rand_att());
  const SatelliteState source = at(Vector3d::Zero(), rand_att());
  QuadratureOptions opts;
  opts.initial_nodes = 32;
  opts.adaptive = false;
  const Matrix69d g = geometry_matrix(receiver, source, kCoil, kCoil, opts);
  const Vector3d mu_s = 10.0 * rand_dir(), mu_r = 8.0 * rand_dir();
  CHECK(exact_wrench(g, Vector3d::Zero(), mu_r).norm() == 0.0);
  CHECK(exact_wrench(g, mu_s, Vector3d::Zero()).norm() == 0.0);
  const Vector6d base = exact_wrench(g, mu_s, mu_r);
  const Vector6d scaled = exact_wrench(g, 2.5 * mu_s, -1.5 * mu_r);
  CHECK((scaled - 2.5 * (-1.5) * base).norm() < 1e-12 * base.norm());
}

TEST_CASE("Newton's third law and torque balance on the exact model") {
  QuadratureOptions opts;
  opts.initial_nodes = 128;
  opts.adaptive = false;
  for (int trial = 0; trial < 5; ++trial) {
    const SatelliteState a = at(0.15 * rand_dir(), rand_att());
    const SatelliteState b = at(a.position + uni(0.35, 0.7) * rand_dir(), rand_att());
    const Matrix69d g_ab = geometry_matrix(a, b, kCoil, kCoil, opts);
    const Matrix69d g_ba = geometry_matrix(b, a, kCoil, kCoil, opts);
    const Vector3d mu_a = 12.0 * rand_dir(), mu_b = 9.0 * rand_dir();
    const Vector6d u_a = exact_wrench(g_ab, mu_b, mu_a);
    const Vector6d u_b = exact_wrench(g_ba, mu_a, mu_b);
    const double fscale = u_a.head<3>().norm() + u_b.head<3>().norm();
    CHECK((u_a.head<3>() + u_b.head<3>()).norm() < 1e-8 * fscale);
    const Vector3d total_torque = u_a.tail<3>() + a.position.cross(Vector3d(u_a.head<3>())) +
                                  u_b.tail<3>() + b.position.cross(Vector3d(u_b.head<3>()));
    const double tscale = u_a.tail<3>().norm() + u_b.tail<3>().norm() +
                          fscale * (a.position.norm() + b.position.norm());
    CHECK(total_torque.norm() < 1e-8 * tscale);
  }
}

TEST_CASE("force kernel decays as 1/r^4") {
  const double r = 0.075;
  std::vector<double> logs, logd;
  for (double d : {0.8, 1.2, 1.8, 2.7}) {
    const Vector6d g = coil_geometry_vector(Vector3d(0, 0, d), Vector3d::UnitZ(), r,
                                            Vector3d::Zero(), Vector3d::UnitZ(), r);
    logs.push_back(std::log(std::abs(g(2))));
    logd.push_back(std::log(d));
  }
  // Least-squares slope of log|g| vs log d.
  const int n = static_cast<int>(logs.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (int i = 0; i < n; ++i) {
    sx += logd[i];
    sy += logs[i];
    sxx += logd[i] * logd[i];
    sxy += logd[i] * logs[i];
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  CHECK(slope == doctest::Approx(-4.0).epsilon(0.02));
}

TEST_CASE("kernel-level action-reaction under swap") {
  QuadratureOptions opts;
  opts.initial_nodes = 256;
  opts.adaptive = false;
  const Vector3d ca(0.02, -0.01, 0.0), cb(0.42, 0.1, 0.15);
  const Vector3d axis_a = rand_dir(), axis_b = rand_dir();
  const double r = kCoil.loop_radius;
  const Vector6d g_ab = coil_geometry_vector(ca, axis_a, r, cb, axis_b, r, opts);
  const Vector6d g_ba = coil_geometry_vector(cb, axis_b, r, ca, axis_a, r, opts);
  CHECK((g_ab.head<3>() + g_ba.head<3>()).norm() < 1e-8 * g_ab.head<3>().norm());
}

TEST_CASE("quadrature guards") {
  const double r = kCoil.loop_radius;
  CHECK_THROWS_AS(coil_geometry_vector(Vector3d(0, 0, 0.14), Vector3d::UnitZ(), r,
                                       Vector3d::Zero(), Vector3d::UnitZ(), r),
                  std::domain_error);
  // A near-guard separation converges too slowly for a tiny node cap.
  QuadratureOptions strict;
  strict.initial_nodes = 16;
  strict.max_nodes = 32;
  strict.rel_tol = 1e-14;
  CHECK_THROWS_AS(coil_geometry_vector(Vector3d(0, 0, 0.16), Vector3d::UnitZ(), r,
                                       Vector3d::Zero(), Vector3d::UnitZ(), r, strict),
                  std::runtime_error);
}

TEST_CASE("canonical-frame covariance of the geometry matrix") {
  // Rotating the whole scene by the source attitude must map the geometry
  // matrix by the same rotation on the force/torque rows.
  QuadratureOptions opts;
  opts.initial_nodes = 64;
  opts.adaptive = false;
  const SatelliteState source = at(Vector3d(0.05, 0.0, -0.02), rand_att());
  const SatelliteState receiver = at(source.position + 0.4 * rand_dir(), rand_att());
  const Matrix69d g_world = geometry_matrix(receiver, source, kCoil, kCoil, opts);

  const Matrix3d cs = mrp_to_rotation(source.attitude);
  SatelliteState src_c = at(Vector3d::Zero());
  SatelliteState rec_c = at(cs * (receiver.position - source.position),
                            attitude_error(receiver.attitude, source.attitude));
  const Matrix69d g_canon = geometry_matrix(rec_c, src_c, kCoil, kCoil, opts);
  Matrix69d g_mapped;
  g_mapped.topRows(3) = cs.transpose() * g_canon.topRows(3);
  g_mapped.bottomRows(3) = cs.transpose() * g_canon.bottomRows(3);
  CHECK((g_mapped - g_world).norm() < 1e-9 * g_world.norm());
}

TEST_CASE("stacked geometry: shapes, pairwise sums, commutation") {
  SwarmState swarm;
  swarm.satellites = {at(Vector3d::Zero(), rand_att()), at(Vector3d(0.5, 0.1, 0.0), rand_att())};
  QuadratureOptions opts;
  opts.initial_nodes = 48;
  opts.adaptive = false;
  const GeometryStack st = stack_geometry(swarm, kCoil, GeometryModel::exact, opts);
  CHECK(st.g_stack.rows() == 6);
  CHECK(st.g_stack.cols() == 36);

  // K33 property on random vectors.
  for (int i = 0; i < 20; ++i) {
    const Vector3d a = rand_dir(), b = rand_dir();
    CHECK((st.k33 * kron_vec(a, b) - kron_vec(b, a)).norm() < 1e-15);
  }

  // Stack value equals the pairwise exact wrench on satellite 0 (torque in
  // the body frame).
  const Vector3d mu0v = 11.0 * rand_dir(), mu1v = 7.0 * rand_dir();
  VectorXd mu(36);
  VectorXd mu_n(6);
  mu_n << mu0v, mu1v;
  for (int p = 0; p < 6; ++p)
    for (int q = 0; q < 6; ++q) mu(p * 6 + q) = mu_n(p) * mu_n(q);
  const VectorXd u_stack = (kMu0 / (8.0 * kPi)) * st.g_stack * mu;

  const Matrix69d g01 = geometry_matrix(swarm.satellites[0], swarm.satellites[1], kCoil, kCoil,
                                        opts);
  const Vector6d direct = 0.5 * exact_wrench(g01, mu1v, mu0v);
  const Matrix3d cb0 = mrp_to_rotation(swarm.satellites[0].attitude);
  CHECK((u_stack.head<3>() - direct.head<3>()).norm() < 1e-9 * direct.head<3>().norm());
  CHECK((u_stack.tail<3>() - cb0 * direct.tail<3>()).norm() < 1e-9 * direct.tail<3>().norm());
}

TEST_CASE("stack completion balances force and torque") {
  SwarmState swarm;
  swarm.satellites = {at(Vector3d(0.1, 0.0, 0.0), rand_att()),
                      at(Vector3d(0.0, 0.45, 0.05), rand_att()),
                      at(Vector3d(-0.4, -0.1, 0.3), rand_att())};
  const MatrixXd t = stack_completion(swarm);
  CHECK(t.rows() == 18);
  CHECK(t.cols() == 12);
  VectorXd stack(12);
  for (int i = 0; i < 12; ++i) stack(i) = std::cos(2.0 + i);
  const VectorXd full = t * stack;
  Vector3d fsum = Vector3d::Zero(), tsum = Vector3d::Zero();
  for (int j = 0; j < 3; ++j) {
    const Vector3d f = full.segment<3>(3 * j);
    const Matrix3d c_ib = mrp_to_rotation(swarm.satellites[j].attitude).transpose();
    fsum += f;
    tsum += c_ib * full.segment<3>(9 + 3 * j) + swarm.satellites[j].position.cross(f);
  }
  CHECK(fsum.norm() < 1e-14);
  CHECK(tsum.norm() < 1e-14);
}

TEST_CASE("far stack mismatch shrinks with separation") {
  QuadratureOptions opts;
  opts.initial_nodes = 64;
  opts.adaptive = false;
  double prev = std::numeric_limits<double>::infinity();
  for (double ratio : {3.0, 5.0, 10.0, 20.0}) {
    SwarmState swarm;
    swarm.satellites = {at(Vector3d::Zero()), at(Vector3d(ratio * kCoil.loop_radius, 0, 0))};
    const GeometryStack st = stack_geometry(swarm, kCoil, GeometryModel::exact, opts);
    const double rel = (st.g_stack - st.q_stack).norm() / st.g_stack.norm();
    CHECK(rel < prev);
    prev = rel;
  }
  // Even at twenty radii the dipole model keeps a percent-level mismatch,
  // consistent with the 5 (R/d)^2 leading error of the coaxial pair.
  CHECK(prev > 1e-3);
  CHECK(prev < 0.02);
}

TEST_CASE("exact/far mapping") {
  SwarmState swarm;
  swarm.satellites = {at(Vector3d::Zero(), rand_att()), at(Vector3d(0.6, 0.1, -0.05), rand_att())};
  QuadratureOptions opts;
  opts.initial_nodes = 48;
  opts.adaptive = false;
  const GeometryStack st = stack_geometry(swarm, kCoil, GeometryModel::exact, opts);

  // An admissible restriction subspace: the defining identity requires
  // rowspace(G Pz^T) inside rowspace(Q Pz^T), so build Pz from a generic
  // block plus directions in the common null space of both stacks.
  std::normal_distribution<double> g01(0.0, 1.0);
  MatrixXd stacked(12, 36);
  stacked << st.g_stack, st.q_stack;
  const MatrixXd common_null = null_space(stacked);  // 36 x 24
  MatrixXd v1(36, 6);
  for (int r = 0; r < 36; ++r)
    for (int c = 0; c < 6; ++c) v1(r, c) = g01(rng);
  MatrixXd p_zeta_t(36, 12);
  p_zeta_t << v1, common_null.leftCols(6);
  const MatrixXd p_zeta = p_zeta_t.transpose();
  REQUIRE(numeric_rank(p_zeta) == 12);  // rank 6n

  // Identical models give the identity mapping.
  const MatrixXd h_same = exact_far_mapping(st.g_stack, st.g_stack, p_zeta);
  CHECK((h_same - MatrixXd::Identity(6, 6)).norm() < 1e-10);

  // Any admissible [mu] maps exactly.
  const MatrixXd h = exact_far_mapping(st.g_stack, st.q_stack, p_zeta);
  for (int i = 0; i < 10; ++i) {
    VectorXd eta(12);
    for (int k = 0; k < 12; ++k) eta(k) = g01(rng);
    const VectorXd mu = p_zeta.transpose() * eta;
    const VectorXd u_exa = st.g_stack * mu;
    const VectorXd u_far = st.q_stack * mu;
    CHECK((u_exa - h * u_far).norm() < 1e-8 * u_exa.norm());
  }

  // Far-valid geometry: the mapping approaches the identity at the same
  // quadratic rate as the dipole-model error (a few percent at 8 radii).
  SwarmState far_swarm;
  far_swarm.satellites = {at(Vector3d::Zero()), at(Vector3d(1.5, 0.0, 0.0))};
  const GeometryStack far_st = stack_geometry(far_swarm, kCoil, GeometryModel::exact, opts);
  MatrixXd p_far(6, 36);
  p_far = far_st.q_stack;  // restrict to range(Q^T)
  const MatrixXd h_far = exact_far_mapping(far_st.g_stack, far_st.q_stack, p_far);
  Eigen::JacobiSVD<MatrixXd> svd(h_far - MatrixXd::Identity(6, 6));
  CHECK(svd.singularValues()(0) < 0.05);

  // Rank-deficient Q Pz^T errors out.
  CHECK_THROWS(exact_far_mapping(st.g_stack, MatrixXd::Zero(6, 36), p_zeta));
}

TEST_CASE("orthogonal projector") {
  std::normal_distribution<double> g01(0.0, 1.0);
  MatrixXd q(6, 36);
  for (int r = 0; r < q.rows(); ++r)
    for (int c = 0; c < q.cols(); ++c) q(r, c) = g01(rng);
  const MatrixXd pi = orthogonal_projector(q);
  CHECK((pi * pi - pi).norm() < 1e-10);
  CHECK((pi - pi.transpose()).norm() < 1e-10);

  // Nested null spaces: rows of G inside rowspace(Q) annihilate.
  MatrixXd mix(6, 6);
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < 6; ++c) mix(r, c) = g01(rng);
  const MatrixXd g = mix * q;
  CHECK(((MatrixXd::Identity(36, 36) - pi) * g.transpose()).norm() < 1e-10 * g.norm());

  // Full row rank square-ish case: projector is the identity.
  MatrixXd qsq(36, 36);
  for (int r = 0; r < 36; ++r)
    for (int c = 0; c < 36; ++c) qsq(r, c) = g01(rng) + (r == c ? 3.0 : 0.0);
  CHECK((orthogonal_projector(qsq) - MatrixXd::Identity(36, 36)).norm() < 1e-10);
}

}  // TEST_SUITE
