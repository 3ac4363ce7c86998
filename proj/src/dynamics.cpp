#include "emff/dynamics.hpp"

#include <cmath>

namespace emff {

LagrangianSystem assemble_system(const SwarmState& swarm, const VectorXd& masses,
                                 const std::vector<Matrix3d>& inertias) {
  swarm.validate();
  const int n = swarm.n();
  const int m = swarm.m();
  if (masses.size() != n || static_cast<int>(inertias.size()) != n)
    throw std::invalid_argument("assemble_system: masses/inertias must have n entries");
  for (int j = 0; j < n; ++j) {
    if (masses(j) <= 0.0) throw std::invalid_argument("assemble_system: non-positive mass");
    if (min_eig_sym(inertias[j]) <= 0.0)
      throw std::invalid_argument("assemble_system: non-positive-definite inertia");
  }
  LagrangianSystem sys;
  sys.n = n;
  sys.m = m;
  sys.masses = masses;
  sys.inertias = inertias;
  const int dim = 6 * n + 3 * m;
  sys.M = MatrixXd::Zero(dim, dim);
  for (int j = 0; j < n; ++j) {
    sys.M.block(3 * j, 3 * j, 3, 3) = masses(j) * Matrix3d::Identity();
    sys.M.block(3 * n + 3 * j, 3 * n + 3 * j, 3, 3) = inertias[j];
  }
  sys.M.bottomRightCorner(3 * m, 3 * m).setIdentity();

  sys.B = MatrixXd::Identity(dim, dim);
  sys.Binv = MatrixXd::Identity(dim, dim);
  // Wheel acceleration reacts on the carrying body: tau_body rows get -h_dot.
  for (int j = 0; j < m; ++j) {
    sys.B.block(3 * n + 3 * j, 6 * n + 3 * j, 3, 3) = -Matrix3d::Identity();
    sys.Binv.block(3 * n + 3 * j, 6 * n + 3 * j, 3, 3) = Matrix3d::Identity();
  }
  return sys;
}

MatrixXd LagrangianSystem::gyroscopic(const SwarmState& swarm) const {
  const int dim = 6 * n + 3 * m;
  MatrixXd c = MatrixXd::Zero(dim, dim);
  for (int j = 0; j < n; ++j) {
    const Vector3d w = swarm.satellites[j].angular_rate;
    Matrix3d blk = skew(w) * inertias[j];
    if (swarm.satellites[j].wheel_momentum.has_value())
      blk -= skew(*swarm.satellites[j].wheel_momentum);
    c.block(3 * n + 3 * j, 3 * n + 3 * j, 3, 3) = blk;
  }
  return c;
}

namespace {

// Generalized-position snapshot used while integrating.
struct Coords {
  std::vector<Vector3d> r;
  std::vector<Mrp> sigma;
};

Coords coords_of(const SwarmState& s) {
  Coords c;
  c.r.reserve(s.n());
  c.sigma.reserve(s.n());
  for (const auto& sat : s.satellites) {
    c.r.push_back(sat.position);
    c.sigma.push_back(sat.attitude);
  }
  return c;
}

SwarmState with_coords(const SwarmState& base, const Coords& c) {
  SwarmState s = base;
  for (int j = 0; j < s.n(); ++j) {
    s.satellites[j].position = c.r[j];
    s.satellites[j].attitude = c.sigma[j];
  }
  return s;
}

MomentumConstraint constraint_at(const LagrangianSystem& sys, const SwarmState& s) {
  return momentum_matrix(s, sys.masses, sys.inertias);
}

// zeta = S v + A^+ L for the configuration q.
struct Basis {
  MatrixXd S;
  VectorXd zeta_p;
};

Basis basis_at(const LagrangianSystem& sys, const SwarmState& s, const MatrixXd& s_ref,
               const Vector3d& L) {
  const MomentumConstraint mc = constraint_at(sys, s);
  Basis b;
  b.S = projected_tangent_basis(mc, s_ref, false);
  b.zeta_p = L.isZero(0.0) ? VectorXd::Zero(b.S.rows()) : VectorXd(pinv(mc.angular) * L);
  return b;
}

// q_dot from zeta.
Coords coords_rate(const SwarmState& s, const VectorXd& zeta) {
  const int n = s.n();
  Coords c;
  c.r.resize(n);
  c.sigma.resize(n);
  for (int j = 0; j < n; ++j) {
    c.r[j] = zeta.segment<3>(3 * j);
    c.sigma[j] = Mrp(mrp_kinematics(s.satellites[j].attitude, zeta.segment<3>(3 * n + 3 * j)));
  }
  return c;
}

void sync_velocities(const LagrangianSystem& sys, SwarmState& s, const VectorXd& zeta) {
  const int n = sys.n;
  for (int j = 0; j < n; ++j) {
    s.satellites[j].velocity = zeta.segment<3>(3 * j);
    s.satellites[j].angular_rate = zeta.segment<3>(3 * n + 3 * j);
  }
  for (int j = 0; j < sys.m; ++j)
    s.satellites[j].wheel_momentum = Vector3d(zeta.segment<3>(6 * n + 3 * j));
  // xi = h - C^{B/I} L / m is folded into the wheel slot at L = 0; nonzero L
  // is reconstructed by the caller via reduced_to_zeta.
}

struct Derivative {
  Coords qdot;
  VectorXd vdot;
};

Derivative eval_derivative(const LagrangianSystem& sys, const MatrixXd& s_ref,
                           const SwarmState& q_state, const VectorXd& v, const StageInputFn& u_fn,
                           const DisturbanceFn& dfn, double t, const Vector3d& L, double fd_step) {
  const Basis b = basis_at(sys, q_state, s_ref, L);
  const VectorXd zeta = b.S * v + b.zeta_p;
  SwarmState state_v = q_state;
  sync_velocities(sys, state_v, zeta);
  const VectorXd u = u_fn(t, state_v);

  const Coords qdot = coords_rate(state_v, zeta);

  // S_dot and zeta_p_dot by central differences along the flow. The step is
  // fixed (not dt-proportional): a dt-coupled step feeds first-order error
  // into the RK4 stages and a too-small one amplifies round-off into the
  // momentum balance.
  Coords fwd = coords_of(q_state);
  Coords bwd = fwd;
  for (int j = 0; j < sys.n; ++j) {
    fwd.r[j] += fd_step * qdot.r[j];
    fwd.sigma[j].sigma += fd_step * qdot.sigma[j].sigma;
    bwd.r[j] -= fd_step * qdot.r[j];
    bwd.sigma[j].sigma -= fd_step * qdot.sigma[j].sigma;
  }
  const Basis b_fwd = basis_at(sys, with_coords(q_state, fwd), s_ref, L);
  const Basis b_bwd = basis_at(sys, with_coords(q_state, bwd), s_ref, L);
  const MatrixXd s_dot = (b_fwd.S - b_bwd.S) / (2.0 * fd_step);
  const VectorXd zeta_p_dot = (b_fwd.zeta_p - b_bwd.zeta_p) / (2.0 * fd_step);

  const MatrixXd c = sys.gyroscopic(state_v);
  const MatrixXd m_bar = b.S.transpose() * sys.M * b.S;
  const VectorXd d = dfn ? dfn(t) : VectorXd::Zero(zeta.size());
  const VectorXd rhs = b.S.transpose() * (sys.B * u + d - sys.M * (s_dot * v + zeta_p_dot) -
                                          c * zeta);
  Derivative out;
  out.qdot = qdot;
  out.vdot = m_bar.ldlt().solve(rhs);
  return out;
}

}  // namespace

VectorXd reduced_to_zeta(const LagrangianSystem& sys, const ReducedState& state,
                         const MatrixXd& s_ref) {
  const Basis b = basis_at(sys, state.swarm, s_ref, state.total_angular_momentum);
  return b.S * state.v + b.zeta_p;
}

ReducedState make_reduced_state(const LagrangianSystem& sys, const SwarmState& swarm,
                                const MatrixXd& s_ref) {
  ReducedState st;
  st.swarm = swarm;
  st.total_angular_momentum = total_angular_momentum(swarm, sys);
  const int n = sys.n;
  VectorXd zeta(6 * n + 3 * sys.m);
  for (int j = 0; j < n; ++j) {
    zeta.segment<3>(3 * j) = swarm.satellites[j].velocity;
    zeta.segment<3>(3 * n + 3 * j) = swarm.satellites[j].angular_rate;
  }
  for (int j = 0; j < sys.m; ++j) {
    const Matrix3d c_bi = mrp_to_rotation(swarm.satellites[j].attitude);
    zeta.segment<3>(6 * n + 3 * j) =
        *swarm.satellites[j].wheel_momentum -
        c_bi * st.total_angular_momentum / static_cast<double>(sys.m);
  }
  const Basis b = basis_at(sys, swarm, s_ref, st.total_angular_momentum);
  st.v = b.S.transpose() * (zeta - b.zeta_p);
  return st;
}

ReducedState step_reduced(const LagrangianSystem& sys, const MatrixXd& s_ref,
                          const ReducedState& state, const VectorXd& u, const DisturbanceFn& d,
                          double t, double dt) {
  return step_reduced_stage(
      sys, s_ref, state, StageInputFn([&u](double, const SwarmState&) { return u; }), d, t, dt);
}

ReducedState step_reduced_stage(const LagrangianSystem& sys, const MatrixXd& s_ref,
                                const ReducedState& state, const StageInputFn& u,
                                const DisturbanceFn& d, double t, double dt) {
  if (dt <= 0.0) throw std::invalid_argument("step_reduced: dt must be positive");
  const double fd = 1e-5;
  const Vector3d L = state.total_angular_momentum;

  const Coords q0 = coords_of(state.swarm);
  auto advance = [&](const Coords& qd, const VectorXd& vd, double h) {
    Coords q = q0;
    for (int j = 0; j < sys.n; ++j) {
      q.r[j] += h * qd.r[j];
      q.sigma[j].sigma += h * qd.sigma[j].sigma;
    }
    return std::make_pair(with_coords(state.swarm, q), VectorXd(state.v + h * vd));
  };

  const Derivative k1 = eval_derivative(sys, s_ref, state.swarm, state.v, u, d, t, L, fd);
  auto [s2, v2] = advance(k1.qdot, k1.vdot, 0.5 * dt);
  const Derivative k2 = eval_derivative(sys, s_ref, s2, v2, u, d, t + 0.5 * dt, L, fd);
  auto [s3, v3] = advance(k2.qdot, k2.vdot, 0.5 * dt);
  const Derivative k3 = eval_derivative(sys, s_ref, s3, v3, u, d, t + 0.5 * dt, L, fd);
  auto [s4, v4] = advance(k3.qdot, k3.vdot, dt);
  const Derivative k4 = eval_derivative(sys, s_ref, s4, v4, u, d, t + dt, L, fd);

  Coords q = q0;
  for (int j = 0; j < sys.n; ++j) {
    q.r[j] += dt / 6.0 * (k1.qdot.r[j] + 2.0 * k2.qdot.r[j] + 2.0 * k3.qdot.r[j] + k4.qdot.r[j]);
    q.sigma[j].sigma += dt / 6.0 *
                        (k1.qdot.sigma[j].sigma + 2.0 * k2.qdot.sigma[j].sigma +
                         2.0 * k3.qdot.sigma[j].sigma + k4.qdot.sigma[j].sigma);
    // Shadow-set switch keeps the representative canonical.
    q.sigma[j] = q.sigma[j].canonical();
  }
  ReducedState next;
  next.total_angular_momentum = L;
  next.swarm = with_coords(state.swarm, q);
  next.v = state.v + dt / 6.0 * (k1.vdot + 2.0 * k2.vdot + 2.0 * k3.vdot + k4.vdot);
  if (!next.v.allFinite())
    throw std::runtime_error("step_reduced: non-finite state at t=" + std::to_string(t));
  const Basis b = basis_at(sys, next.swarm, s_ref, L);
  sync_velocities(sys, next.swarm, b.S * next.v + b.zeta_p);
  return next;
}

Vector3d total_angular_momentum(const SwarmState& swarm, const LagrangianSystem& sys) {
  Vector3d total = Vector3d::Zero();
  for (int j = 0; j < sys.n; ++j) {
    const auto& sat = swarm.satellites[j];
    const Matrix3d c_ib = mrp_to_rotation(sat.attitude).transpose();
    total += sys.masses(j) * sat.position.cross(sat.velocity) +
             c_ib * (sys.inertias[j] * sat.angular_rate);
    if (sat.wheel_momentum.has_value()) total += c_ib * (*sat.wheel_momentum);
  }
  return total;
}

Vector3d total_linear_momentum(const SwarmState& swarm, const LagrangianSystem& sys) {
  Vector3d total = Vector3d::Zero();
  for (int j = 0; j < sys.n; ++j)
    total += sys.masses(j) * swarm.satellites[j].velocity;
  return total;
}

GroundSystem ground_closed_loop(const MatrixXd& E, const MatrixXd& Kp, const MatrixXd& Kd) {
  GroundSystem g;
  g.E = E;
  g.Kp = Kp;
  g.Kd = Kd;
  g.Le = E.transpose() * E;
  const int e = static_cast<int>(E.cols());
  g.A_gnd = MatrixXd::Zero(2 * e, 2 * e);
  g.A_gnd.topLeftCorner(e, e) = -E.transpose() * Kd;
  g.A_gnd.topRightCorner(e, e) = -E.transpose() * Kp;
  g.A_gnd.bottomLeftCorner(e, e).setIdentity();
  return g;
}

void OrbitalParams::finalize() {
  if (c_plus == 0.0) c_plus = std::sqrt(1.0 + 1e-4);
  if (c_minus == 0.0) c_minus = std::sqrt(1.0 - 1e-4);
  if (omega_xy == 0.0) omega_xy = c_minus * std::sqrt(mu_earth / (r_ref * r_ref * r_ref));
  if (omega_z == 0.0) omega_z = omega_xy;
  if (epsilon2 == 0.0) epsilon2 = (3.0 + 5e-4) * omega_xy;
}

MatrixXd orbital_closed_loop(const OrbitalParams& params, const MatrixXd& E) {
  const MatrixXd le = E.transpose() * E;
  const int e = static_cast<int>(le.rows());
  const MatrixXd a11 = -(params.k_A / 2.0) * le;
  const MatrixXd a22 = params.gamma * a11;
  MatrixXd a = MatrixXd::Zero(2 * e, 2 * e);
  a.topLeftCorner(e, e) = a11;
  // (k1/k_A) A22 simplified symbolically to -(gamma k1 / 2) L_e, which keeps
  // the k_A -> 0 drift limit well defined.
  a.bottomLeftCorner(e, e) =
      (params.epsilon2 / 2.0) *
      (MatrixXd::Identity(e, e) - (params.gamma * params.k1 / 2.0) * le);
  a.bottomRightCorner(e, e) = a22;
  return a;
}

VectorXd NormalizationMap::map(const VectorXd& ground_err) const { return Theta * ground_err; }

VectorXd NormalizationMap::unmap(const VectorXd& orbital_err) const {
  return Theta.partialPivLu().solve(orbital_err);
}

NormalizationMap build_normalization(const OrbitalParams& params_in, const MatrixXd& E,
                                     double theta11_scale, double beta, double tol) {
  OrbitalParams params = params_in;
  params.finalize();
  const MatrixXd le = E.transpose() * E;
  const int e = static_cast<int>(le.rows());

  NormalizationMap nm;
  nm.beta = beta;
  nm.k_v = beta * params.k_A * (1.0 + params.gamma) / 2.0;
  nm.k_p = beta * beta * params.k_A * params.k_A * params.gamma / 4.0;
  const MatrixXd kd = nm.k_v * E;
  const MatrixXd kp = nm.k_p * E * le;
  nm.ground = ground_closed_loop(E, kp, kd);
  nm.A_orb = orbital_closed_loop(params, E);

  nm.Theta11 = theta11_scale * MatrixXd::Identity(e, e);
  nm.Theta12 = (beta * params.k_A * params.gamma / 2.0) * le * nm.Theta11;
  nm.Theta22 = (beta * params.epsilon2 / 2.0) *
               (MatrixXd::Identity(e, e) - (params.gamma * params.k1 / 2.0) * le) * nm.Theta11;
  nm.Theta = MatrixXd::Zero(2 * e, 2 * e);
  nm.Theta.topLeftCorner(e, e) = nm.Theta11;
  nm.Theta.topRightCorner(e, e) = nm.Theta12;
  nm.Theta.bottomRightCorner(e, e) = nm.Theta22;

  nm.similarity_residual = (nm.Theta * nm.ground.A_gnd - beta * nm.A_orb * nm.Theta).norm();
  const double scale = std::max(1.0, (nm.Theta * nm.ground.A_gnd).norm());
  if (nm.similarity_residual > tol * scale)
    throw std::runtime_error("build_normalization: similarity residual " +
                             std::to_string(nm.similarity_residual) +
                             " exceeds tolerance (inconsistent gains/parameters)");
  return nm;
}

Vector3d analytic_relative_orbit(const RelativeOrbitInputs& in, const OrbitalParams& params_in,
                                 double t) {
  OrbitalParams p = params_in;
  p.finalize();
  Vector3d r;
  r.x() = 2.0 * in.C1 + in.r_xy * std::sin(p.omega_xy * t + in.theta_xy) / p.c_plus;
  r.y() = in.C4 - p.epsilon2 * in.C1 * t +
          2.0 * in.r_xy * std::cos(p.omega_xy * t + in.theta_xy) / p.c_minus;
  r.z() = (in.r_z + in.l_z * t) * std::sin(p.omega_z * t + in.theta_z);
  return r;
}

std::pair<double, double> j2_invariants(const MeanRelativeState& mean,
                                        const OrbitalParams& params_in) {
  OrbitalParams p = params_in;
  p.finalize();
  const double c1 = (p.c_plus / (p.c_minus * p.c_minus)) *
                    (2.0 * mean.x + mean.y_dot / p.omega_xy);
  const double c4 = (1.0 / p.c_minus) * (mean.y - 2.0 * mean.x_dot / p.omega_xy);
  return {c1, c4};
}

}  // namespace emff
