#include "emff/magnetics.hpp"

#include <cmath>

namespace emff {
namespace {

// Orthonormal in-plane frame for a loop with unit axis n.
void loop_frame(const Vector3d& axis, Vector3d& e1, Vector3d& e2) {
  const Vector3d a = std::abs(axis.x()) < 0.9 ? Vector3d::UnitX() : Vector3d::UnitY();
  e1 = axis.cross(a).normalized();
  e2 = axis.cross(e1);
}

struct LoopSamples {
  std::vector<Vector3d> point;
  std::vector<Vector3d> dl;  // tangent * d_phi
  std::vector<Vector3d> radial;  // point - center
};

LoopSamples sample_loop(const Vector3d& center, const Vector3d& axis, double radius, int nodes) {
  Vector3d e1, e2;
  loop_frame(axis.normalized(), e1, e2);
  LoopSamples s;
  s.point.resize(nodes);
  s.dl.resize(nodes);
  s.radial.resize(nodes);
  const double dphi = 2.0 * kPi / nodes;
  for (int i = 0; i < nodes; ++i) {
    const double phi = dphi * i;
    const double c = std::cos(phi), sn = std::sin(phi);
    s.radial[i] = radius * (c * e1 + sn * e2);
    s.point[i] = center + s.radial[i];
    s.dl[i] = radius * dphi * (-sn * e1 + c * e2);
  }
  return s;
}

// One evaluation of the double contour kernel at a fixed node count.
Vector6d contour_kernel(const Vector3d& rc, const Vector3d& ra, double rr, const Vector3d& sc,
                        const Vector3d& sa, double sr, int nodes) {
  const LoopSamples rec = sample_loop(rc, ra, rr, nodes);
  const LoopSamples src = sample_loop(sc, sa, sr, nodes);
  Vector3d force = Vector3d::Zero();
  Vector3d torque = Vector3d::Zero();
  for (int i = 0; i < nodes; ++i) {
    // Inner integral over the source loop at the receiver element i.
    Vector3d inner = Vector3d::Zero();
    for (int k = 0; k < nodes; ++k) {
      const Vector3d r = rec.point[i] - src.point[k];
      const double d2 = r.squaredNorm();
      inner += r.cross(src.dl[k]) / (d2 * std::sqrt(d2));
    }
    const Vector3d df = inner.cross(rec.dl[i]);
    force += df;
    torque += rec.radial[i].cross(df);
  }
  Vector6d g;
  g << force, torque;
  return g;
}

Matrix3d body_to_world(const SatelliteState& s) {
  return mrp_to_rotation(s.attitude).transpose();
}

std::vector<std::pair<int, int>> pair_list(int n) {
  std::vector<std::pair<int, int>> pairs;
  for (int a = 1; a < n; ++a)
    for (int b = 0; b < a; ++b) pairs.emplace_back(a, b);
  return pairs;
}

// 3x3n selector e_i^T (x) I3.
MatrixXd axis_selector(int i, int n) {
  MatrixXd e = MatrixXd::Zero(3, 3 * n);
  e.block(0, 3 * i, 3, 3).setIdentity();
  return e;
}

GeometryStack assemble_stacks(const SwarmState& swarm, const PairGeometryFn& exact_fn,
                              const PairGeometryFn& far_fn) {
  const int n = swarm.n();
  if (n < 2) throw std::invalid_argument("stack_geometry: need n >= 2");
  GeometryStack st;
  st.n = n;
  st.k33 = commutation_matrix(3, 3);

  // Block permutation [f1,t1,f2,t2,...] -> [f1,f2,...,t1,t2,...].
  const int rows = 6 * (n - 1);
  st.k_perm = MatrixXd::Zero(rows, rows);
  for (int j = 0; j < n - 1; ++j) {
    st.k_perm.block(3 * j, 6 * j, 3, 3).setIdentity();
    st.k_perm.block(3 * (n - 1) + 3 * j, 6 * j + 3, 3, 3).setIdentity();
  }

  const auto pairs = pair_list(n);
  const int np = static_cast<int>(pairs.size());
  st.r_sel = MatrixXd::Zero(9 * np, 9 * n * n);
  for (int p = 0; p < np; ++p) {
    const auto [a, b] = pairs[p];
    st.r_sel.block(9 * p, 0, 9, 9 * n * n) = kron(axis_selector(a, n), axis_selector(b, n));
  }

  // Receiver-major middle blocks, then permutation and selection.
  auto middle = [&](const PairGeometryFn& fn) {
    MatrixXd mid = MatrixXd::Zero(rows, 9 * np);
    for (int p = 0; p < np; ++p) {
      const auto [a, b] = pairs[p];
      // Torques into each receiver's body frame.
      if (b <= n - 2) {
        Matrix69d g = fn(b, a);
        g.bottomRows(3) = mrp_to_rotation(swarm.satellites[b].attitude) * g.bottomRows(3);
        mid.block(6 * b, 9 * p, 6, 9) += g;
      }
      if (a <= n - 2) {
        Matrix69d g = fn(a, b);
        g.bottomRows(3) = mrp_to_rotation(swarm.satellites[a].attitude) * g.bottomRows(3);
        mid.block(6 * a, 9 * p, 6, 9) += g * st.k33;
      }
    }
    return MatrixXd(st.k_perm * mid * st.r_sel);
  };

  st.q_stack = middle(far_fn);
  st.g_stack = exact_fn ? middle(exact_fn) : st.q_stack;
  return st;
}

}  // namespace

CoilSpec CoilSpec::circular(double turns_, double loop_radius_, double mu_r_, double demag_factor_) {
  CoilSpec c;
  c.turns = turns_;
  c.loop_radius = loop_radius_;
  c.enclosed_area = kPi * loop_radius_ * loop_radius_;
  c.mu_r = mu_r_;
  c.demag_factor = demag_factor_;
  return c;
}

double CoilSpec::core_amplification() const {
  return 1.0 + (mu_r - 1.0) / (1.0 - demag_factor + mu_r * demag_factor);
}

void CoilSpec::validate() const {
  if (turns <= 0.0 || loop_radius <= 0.0) throw std::invalid_argument("coil: positive turns/radius required");
  if (mu_r < 1.0) throw std::invalid_argument("coil: mu_r >= 1 required");
  if (demag_factor < 0.0 || demag_factor > 1.0) throw std::invalid_argument("coil: N_d in [0,1] required");
  const double a = kPi * loop_radius * loop_radius;
  if (std::abs(enclosed_area - a) > 1e-9 * a)
    throw std::invalid_argument("coil: enclosed_area must equal pi*R^2 for circular loops");
}

Vector3d dipole_moment(const CoilSpec& coil, const Vector3d& currents) {
  return coil.turns * coil.enclosed_area * coil.core_amplification() * currents;
}

Vector6d coil_geometry_vector(const Vector3d& rc, const Vector3d& ra, double rr,
                              const Vector3d& sc, const Vector3d& sa, double sr,
                              const QuadratureOptions& opts) {
  const double sep = (rc - sc).norm();
  if (sep < 1.05 * (rr + sr))
    throw std::domain_error("coil_geometry_vector: loops closer than the 1.05*(Rj+Rk) guard");
  if (!opts.adaptive) return contour_kernel(rc, ra, rr, sc, sa, sr, opts.initial_nodes);

  int nodes = std::max(16, opts.initial_nodes);
  Vector6d g = contour_kernel(rc, ra, rr, sc, sa, sr, nodes);
  while (nodes < opts.max_nodes) {
    nodes *= 2;
    const Vector6d g2 = contour_kernel(rc, ra, rr, sc, sa, sr, nodes);
    const double change = (g2 - g).norm();
    const double scale = std::max(g2.norm(), 1e-30);
    g = g2;
    if (change <= opts.rel_tol * scale) return g;
  }
  throw std::runtime_error("coil_geometry_vector: quadrature did not converge at the node cap");
}

Matrix69d geometry_matrix(const SatelliteState& receiver, const SatelliteState& source,
                          const CoilSpec& receiver_coil, const CoilSpec& source_coil,
                          const QuadratureOptions& opts) {
  const Matrix3d cr = body_to_world(receiver);
  const Matrix3d cs = body_to_world(source);
  Matrix69d g;
  for (int w = 0; w < 3; ++w) {
    const Vector3d source_axis = cs * source_coil.axes[w];
    const Vector3d source_center = source.position + cs * source_coil.axis_offsets[w];
    for (int v = 0; v < 3; ++v) {
      const Vector3d recv_axis = cr * receiver_coil.axes[v];
      const Vector3d recv_off = cr * receiver_coil.axis_offsets[v];
      const Vector3d recv_center = receiver.position + recv_off;
      Vector6d gv = coil_geometry_vector(recv_center, recv_axis, receiver_coil.loop_radius,
                                         source_center, source_axis, source_coil.loop_radius, opts);
      // Shift torque from the coil center to the receiver center of mass.
      gv.tail<3>() += recv_off.cross(Vector3d(gv.head<3>()));
      g.col(3 * w + v) = gv;
    }
  }
  return g / (receiver_coil.enclosed_area * source_coil.enclosed_area);
}

Matrix69d far_field_geometry_matrix(const SatelliteState& receiver, const SatelliteState& source) {
  const Matrix3d cr = body_to_world(receiver);
  const Matrix3d cs = body_to_world(source);
  const Vector3d rel = receiver.position - source.position;
  Matrix69d g;
  for (int w = 0; w < 3; ++w)
    for (int v = 0; v < 3; ++v)
      g.col(3 * w + v) =
          far_field_wrench(cr.col(v), cs.col(w), rel) * (4.0 * kPi / kMu0);
  return g;
}

Vector6d exact_wrench(const Matrix69d& g, const Vector3d& mu_source, const Vector3d& mu_receiver) {
  Eigen::Matrix<double, 9, 1> mm;
  for (int w = 0; w < 3; ++w) mm.segment<3>(3 * w) = mu_source(w) * mu_receiver;
  return (kMu0 / (4.0 * kPi)) * g * mm;
}

Vector6d far_field_wrench(const Vector3d& mu_receiver, const Vector3d& mu_source,
                          const Vector3d& relative_position) {
  const double d = relative_position.norm();
  if (d <= 0.0) throw std::domain_error("far_field_wrench: zero separation");
  const Vector3d rh = relative_position / d;
  const double ms_r = mu_source.dot(rh);
  const double mr_r = mu_receiver.dot(rh);
  const double c = 3.0 * kMu0 / (4.0 * kPi * d * d * d * d);
  const Vector3d f = c * (ms_r * mu_receiver + mr_r * mu_source +
                          mu_receiver.dot(mu_source) * rh - 5.0 * ms_r * mr_r * rh);
  const Vector3d b = kMu0 / (4.0 * kPi * d * d * d) * (3.0 * ms_r * rh - mu_source);
  Vector6d u;
  u << f, mu_receiver.cross(b);
  return u;
}

GeometryStack stack_geometry(const SwarmState& swarm, const CoilSpec& coil, GeometryModel model,
                             const QuadratureOptions& opts) {
  PairGeometryFn far_fn = [&](int r, int s) {
    return far_field_geometry_matrix(swarm.satellites[r], swarm.satellites[s]);
  };
  if (model == GeometryModel::far) return assemble_stacks(swarm, nullptr, far_fn);
  PairGeometryFn exact_fn = [&](int r, int s) {
    return geometry_matrix(swarm.satellites[r], swarm.satellites[s], coil, coil, opts);
  };
  return assemble_stacks(swarm, exact_fn, far_fn);
}

GeometryStack stack_geometry_custom(const SwarmState& swarm, const PairGeometryFn& pair_fn) {
  PairGeometryFn far_fn = [&](int r, int s) {
    return far_field_geometry_matrix(swarm.satellites[r], swarm.satellites[s]);
  };
  return assemble_stacks(swarm, pair_fn, far_fn);
}

MatrixXd stack_completion(const SwarmState& swarm) {
  const int n = swarm.n();
  if (n < 2) throw std::invalid_argument("stack_completion: need n >= 2");
  const int cols = 6 * (n - 1);
  MatrixXd t = MatrixXd::Zero(6 * n, cols);
  // Pass-through for satellites 0..n-2.
  for (int j = 0; j < n - 1; ++j) {
    t.block(3 * j, 3 * j, 3, 3).setIdentity();
    t.block(3 * n + 3 * j, 3 * (n - 1) + 3 * j, 3, 3).setIdentity();
  }
  // f_last = -sum f_j.
  for (int j = 0; j < n - 1; ++j)
    t.block(3 * (n - 1), 3 * j, 3, 3) -= Matrix3d::Identity();
  // tau_last from total torque balance about the origin (body frame of the
  // last satellite): C^{B/I} * (-sum_j (C^{I/Bj} tau_j + r_j x f_j) - r_n x f_n).
  const Matrix3d c_last = mrp_to_rotation(swarm.satellites[n - 1].attitude);
  const Matrix3d rn_x = skew(swarm.satellites[n - 1].position);
  for (int j = 0; j < n - 1; ++j) {
    const Matrix3d cj = mrp_to_rotation(swarm.satellites[j].attitude).transpose();
    t.block(3 * n + 3 * (n - 1), 3 * (n - 1) + 3 * j, 3, 3) -= c_last * cj;
    t.block(3 * n + 3 * (n - 1), 3 * j, 3, 3) -= c_last * skew(swarm.satellites[j].position);
    // r_n x f_n = r_n x (-sum f_j): subtracting it adds r_n x f_j terms.
    t.block(3 * n + 3 * (n - 1), 3 * j, 3, 3) += c_last * rn_x;
  }
  return t;
}

MatrixXd exact_far_mapping(const MatrixXd& g_stack, const MatrixXd& q_stack,
                           const MatrixXd& p_zeta) {
  const MatrixXd gp = g_stack * p_zeta.transpose();
  const MatrixXd qp = q_stack * p_zeta.transpose();
  const int want = static_cast<int>(qp.rows());
  if (numeric_rank(qp) < want)
    throw std::runtime_error("exact_far_mapping: Q * Pz^T is row-rank deficient (rank " +
                             std::to_string(numeric_rank(qp)) + " of " + std::to_string(want) + ")");
  return gp * pinv(qp);
}

MatrixXd orthogonal_projector(const MatrixXd& q_stack) {
  return pinv(q_stack) * q_stack;
}

}  // namespace emff
