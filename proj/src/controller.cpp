#include "emff/controller.hpp"

#include <cmath>
#include <limits>

namespace emff {

MomentumConstraint momentum_matrix(const SwarmState& swarm, const VectorXd& masses,
                                   const std::vector<Matrix3d>& inertias) {
  const int n = swarm.n();
  const int m = swarm.m();
  if (masses.size() != n || static_cast<int>(inertias.size()) != n)
    throw std::invalid_argument("momentum_matrix: masses/inertias must have n entries");
  MomentumConstraint mc;
  mc.n = n;
  mc.m = m;
  mc.angular = MatrixXd::Zero(3, 6 * n + 3 * m);
  mc.linear = MatrixXd::Zero(3, 6 * n + 3 * m);
  for (int j = 0; j < n; ++j) {
    const Matrix3d c_ib = mrp_to_rotation(swarm.satellites[j].attitude).transpose();
    mc.angular.block(0, 3 * j, 3, 3) = masses(j) * skew(swarm.satellites[j].position);
    mc.angular.block(0, 3 * n + 3 * j, 3, 3) = c_ib * inertias[j];
    mc.linear.block(0, 3 * j, 3, 3) = masses(j) * Matrix3d::Identity();
  }
  for (int j = 0; j < m; ++j) {
    const Matrix3d c_ib = mrp_to_rotation(swarm.satellites[j].attitude).transpose();
    mc.angular.block(0, 6 * n + 3 * j, 3, 3) = c_ib;
  }
  return mc;
}

TangentSpace tangent_space(const MomentumConstraint& mc, TangentVariant variant,
                           const GeometryStack* stacks, const MatrixXd* completion,
                           const SwarmState* swarm) {
  const int dim = static_cast<int>(mc.angular.cols());
  TangentSpace ts;
  ts.variant = variant;
  switch (variant) {
    case TangentVariant::eq3:
      ts.S = null_space(mc.angular);
      break;
    case TangentVariant::controllable: {
      MatrixXd a(6, dim);
      a << mc.angular, mc.linear;
      ts.S = null_space(a);
      break;
    }
    case TangentVariant::eq12: {
      if (stacks == nullptr || completion == nullptr)
        throw std::invalid_argument("tangent_space: eq12 needs the geometry stacks");
      // Condition: (I - Pi) G^T T^T Btilde^T S = 0 with Btilde the wrench
      // columns of B (identity blocks here since B's wrench columns are
      // the identity on [f; tau]).
      const MatrixXd pi = orthogonal_projector(stacks->q_stack);
      const int nn = stacks->n;
      MatrixXd btilde = MatrixXd::Zero(dim, 6 * nn);
      btilde.topLeftCorner(6 * nn, 6 * nn).setIdentity();
      const MatrixXd cmat =
          (MatrixXd::Identity(pi.rows(), pi.cols()) - pi) * stacks->g_stack.transpose() *
          completion->transpose() * btilde.transpose();
      MatrixXd joint(3 + cmat.rows(), dim);
      const double s1 = std::max(mc.angular.norm(), 1e-300);
      // Scale by the ingredient magnitudes, not |cmat| itself: a mismatch
      // that is zero up to round-off (far-valid models) must stay below the
      // null-space cutoff instead of being renormalized into a constraint.
      const double s2 = std::max(stacks->g_stack.norm() * completion->norm(), 1e-300);
      joint.topRows(3) = mc.angular / s1;
      joint.bottomRows(cmat.rows()) = cmat / s2;
      ts.S = null_space(joint);
      if (ts.S.cols() == 0)
        throw std::runtime_error("tangent_space: empty eq12 intersection (A: 3x" +
                                 std::to_string(dim) + ", mismatch rank " +
                                 std::to_string(numeric_rank(cmat)) + ")");
      break;
    }
    case TangentVariant::s0: {
      if (mc.m < 1) throw std::invalid_argument("tangent_space: s0 variant needs wheels (m >= 1)");
      if (swarm == nullptr) throw std::invalid_argument("tangent_space: s0 needs the swarm state");
      // Solve the constraint for the last wheel's xi: the last three columns
      // of A are C^{I/B_m}, so S0 = [I; -C^{B_m/I} A_(:,1:end-3)].
      const Matrix3d c_bm =
          mrp_to_rotation(swarm->satellites[mc.m - 1].attitude);
      MatrixXd s0(dim, dim - 3);
      s0.setZero();
      s0.topLeftCorner(dim - 3, dim - 3).setIdentity();
      s0.bottomRows(3) = -c_bm * mc.angular.leftCols(dim - 3);
      ts.S = s0;
      break;
    }
  }
  return ts;
}

MatrixXd projected_tangent_basis(const MomentumConstraint& mc, const MatrixXd& reference,
                                 bool include_linear) {
  MatrixXd a;
  if (include_linear) {
    a.resize(6, mc.angular.cols());
    a << mc.angular, mc.linear;
  } else {
    a = mc.angular;
  }
  const MatrixXd proj = reference - pinv(a) * (a * reference);
  return orthonormalize(proj);
}

MatrixXd stack_input_map(const MatrixXd& B, const MatrixXd& completion, int m) {
  const int rows = static_cast<int>(B.rows());
  const int stack_cols = static_cast<int>(completion.cols());
  MatrixXd lift = MatrixXd::Zero(rows, stack_cols + 3 * m);
  lift.topLeftCorner(completion.rows(), stack_cols) = completion;
  lift.bottomRightCorner(3 * m, 3 * m).setIdentity();
  return B * lift;
}

MatrixXd decouple_input_map(const MatrixXd& B, const GeometryStack& stack,
                            const MatrixXd& completion, const MatrixXd* g_model) {
  const MatrixXd& g = g_model ? *g_model : stack.g_stack;
  const MatrixXd gq = g * pinv(stack.q_stack);
  const int m = (static_cast<int>(B.rows()) - 6 * stack.n) / 3;
  const int rows = static_cast<int>(B.rows());
  MatrixXd lift = MatrixXd::Zero(rows, gq.cols() + 3 * m);
  lift.topLeftCorner(completion.rows(), gq.cols()) = completion * gq;
  lift.bottomRightCorner(3 * m, 3 * m).setIdentity();
  return B * lift;
}

CompositeState composite_variable(const KinematicsStack& kin, const MatrixXd& S,
                                  const MatrixXd& Lambda, const VectorXd& zeta_d,
                                  const VectorXd& e_q, const VectorXd& v) {
  const MatrixXd ps = kin.P * S;
  if (numeric_rank(ps) < std::min(ps.rows(), ps.cols()))
    throw std::runtime_error("composite_variable: rank-deficient P*S");
  CompositeState cs;
  cs.v_r = pinv(ps) * (kin.P * zeta_d - Lambda * e_q);
  cs.e_v = v - cs.v_r;
  return cs;
}

ControlCommand control_wrench(const MatrixXd& M, const MatrixXd& C, const MatrixXd& B,
                              const MatrixXd& B_ef, const GeometryStack& stack,
                              const MatrixXd& completion, const MomentumConstraint& constraint,
                              const MatrixXd& K, const MatrixXd& S, const VectorXd& e_v,
                              const VectorXd& zeta_r, const VectorXd& zeta_r_dot,
                              const VectorXd& d_hat, const MatrixXd* g_model) {
  if (numeric_rank(B_ef) < B_ef.cols())
    throw std::runtime_error("control_wrench: column-rank-deficient effective input map");
  const VectorXd u_r = pinv(B_ef) * (M * zeta_r_dot + C * zeta_r - d_hat);
  const VectorXd u = u_r - K * (S * e_v);
  ControlCommand cmd;
  const int stack_rows = stack.rows();
  cmd.u_far = u.head(stack_rows);
  cmd.wheel_torque = u.tail(u.size() - stack_rows);
  // Plant-level input the allocation layer will realize: the exact-model
  // wrench corresponding to the far-frame command.
  const MatrixXd& g = g_model ? *g_model : stack.g_stack;
  const VectorXd u_exa = g * (pinv(stack.q_stack) * cmd.u_far);
  VectorXd u_plant(B.rows());
  u_plant.head(completion.rows()) = completion * u_exa;
  u_plant.tail(cmd.wheel_torque.size()) = cmd.wheel_torque;
  cmd.u_plant = u_plant;
  cmd.realizability_residual =
      (constraint.angular * M.ldlt().solve(B * u_plant)).norm();
  return cmd;
}

double contraction_certificate_gap(const MatrixXd& K, double alpha, const MatrixXd& S,
                                   const MatrixXd& B_ef, const MatrixXd& M) {
  const MatrixXd bk = B_ef * K;
  const MatrixXd sym = 0.5 * (bk + bk.transpose());
  return max_eig_sym(S.transpose() * (alpha * M - sym) * S);
}

double error_ball(double alpha, const MatrixXd& M, const MatrixXd& Lambda, double p_sup,
                  double d_sup) {
  if (alpha <= 0.0) throw std::invalid_argument("error_ball: alpha must be positive");
  const double lm = min_eig_sym(M);
  const double ll = min_eig_sym(Lambda);
  if (lm <= 0.0 || ll <= 0.0) throw std::invalid_argument("error_ball: M, Lambda must be PD");
  return p_sup / std::sqrt(lm * ll) * d_sup / alpha;
}

namespace {

// Structured gain parameterization: a list of basis matrices K_i.
struct GainBasis {
  std::vector<MatrixXd> basis;
  int rows = 0;
  int cols = 0;

  MatrixXd assemble(const VectorXd& theta) const {
    MatrixXd k = MatrixXd::Zero(rows, cols);
    for (int i = 0; i < theta.size(); ++i) k += theta(i) * basis[i];
    return k;
  }
};

GainBasis make_gain_basis(int n, int m, bool block_diagonal) {
  GainBasis gb;
  gb.rows = 6 * (n - 1) + 3 * m;
  gb.cols = 6 * n + 3 * m;
  auto add_block = [&](int r0, int c0, int nr, int nc) {
    for (int r = 0; r < nr; ++r)
      for (int c = 0; c < nc; ++c) {
        MatrixXd b = MatrixXd::Zero(gb.rows, gb.cols);
        b(r0 + r, c0 + c) = 1.0;
        gb.basis.push_back(std::move(b));
      }
  };
  if (!block_diagonal) {
    add_block(0, 0, gb.rows, gb.cols);
    return gb;
  }
  for (int j = 0; j < n - 1; ++j) {
    add_block(3 * j, 3 * j, 3, 3);                          // f_j <- r_dot_j
    add_block(3 * (n - 1) + 3 * j, 3 * n + 3 * j, 3, 3);    // tau_j <- omega_j
    add_block(3 * j, 3 * n + 3 * j, 3, 3);                  // f_j <- omega_j
  }
  // Last satellite's rates are still observable through the stack rows of
  // its neighbors: couple every stack row to the last satellite's states.
  add_block(0, 3 * (n - 1), 6 * (n - 1), 3);
  add_block(0, 3 * n + 3 * (n - 1), 6 * (n - 1), 3);
  for (int j = 0; j < m; ++j) {
    add_block(6 * (n - 1) + 3 * j, 3 * n + 3 * j, 3, 3);    // h_dot_j <- omega_j
    add_block(6 * (n - 1) + 3 * j, 6 * n + 3 * j, 3, 3);    // h_dot_j <- xi_j
  }
  return gb;
}

}  // namespace

SynthesisResult noda_mmh_synthesis(const MatrixXd& M, const MatrixXd& B_ef,
                                   const MatrixXd& S_cert, const MatrixXd& S_ctrl,
                                   const GeometryStack& stack, const VectorXd& u_r_nominal,
                                   const MatrixXd& Lambda, const SynthesisOptions& opts) {
  SynthesisResult out;
  const int n = stack.n;
  const int m = (static_cast<int>(M.rows()) - 6 * n) / 3;
  out.config.Lambda = Lambda;
  out.config.w_bar = opts.w_bar;

  // Feedback authority from the power budget through the dual certificate.
  double kappa_max = 0.0;
  if (opts.u_bar > 0.0) {
    out.u_bar = opts.u_bar;
    kappa_max = opts.u_bar / opts.e_v_bar;
    out.binding_constraint = "explicit u_bar";
  } else if (std::isinf(opts.w_bar)) {
    // Unlimited budget: normalize by the plant scale so the bisection has a
    // finite search box.
    kappa_max = 1e6;
    out.u_bar = kappa_max * opts.e_v_bar;
    out.binding_constraint = "none (unbounded power)";
  } else {
    const double w_lb = u_r_nominal.size() > 0
                            ? dual_lower_bound(u_r_nominal, stack, opts.power_weights)
                            : 0.0;
    out.feedforward_power_bound = w_lb;
    if (opts.w_bar < w_lb) {
      out.feasible = false;
      out.binding_constraint = "power budget below the feedforward dual bound";
      return out;
    }
    // |lambda*| from a fresh dual solve on the nominal command; if the
    // command is zero any positive lambda scale works, fall back to 1.
    double lam_norm = 1.0;
    if (u_r_nominal.size() > 0 && u_r_nominal.norm() > 0.0 && w_lb > 0.0)
      lam_norm = w_lb / u_r_nominal.norm();
    out.u_bar = (opts.w_bar - w_lb) / std::max(lam_norm, 1e-30);
    out.epsilon = out.u_bar / std::max(lam_norm, 1e-30);
    kappa_max = out.u_bar / opts.e_v_bar;
    out.binding_constraint = "power budget";
  }
  out.config.u_bar = out.u_bar;
  out.config.epsilon = out.epsilon;

  GainBasis gb = make_gain_basis(n, m, opts.block_diagonal);

  const MatrixXd h = S_cert.transpose() * M * S_cert;
  auto sym_form = [&](const MatrixXd& k) {
    const MatrixXd bk = B_ef * k;
    return MatrixXd(S_cert.transpose() * 0.5 * (bk + bk.transpose()) * S_cert);
  };
  auto gain_norm = [&](const MatrixXd& k) {
    Eigen::JacobiSVD<MatrixXd> svd(k * S_ctrl);
    return svd.singularValues().size() ? svd.singularValues()(0) : 0.0;
  };

  // Margin maximization at fixed alpha by projected subgradient ascent on
  // the smallest eigenvalue; theta is kept inside the norm cap by scaling.
  auto max_margin = [&](double alpha, VectorXd& theta) {
    const int p = static_cast<int>(gb.basis.size());
    if (theta.size() != p) theta = VectorXd::Zero(p);
    auto project = [&](VectorXd& th) {
      const double nrm = gain_norm(gb.assemble(th));
      if (nrm > kappa_max) th *= kappa_max / nrm;
    };
    project(theta);
    // Per-parameter scale: unit theta_i produces gain_norm(basis_i).
    VectorXd scale(p);
    for (int i = 0; i < p; ++i) scale(i) = std::max(gain_norm(gb.basis[i]), 1e-30);
    auto margin_of = [&](const VectorXd& th) {
      return min_eig_sym(sym_form(gb.assemble(th)) - alpha * h);
    };
    double best = margin_of(theta);
    VectorXd best_theta = theta;
    double step = 0.5 * kappa_max;
    for (int it = 0; it < opts.subgradient_iters; ++it) {
      const MatrixXd a = sym_form(gb.assemble(theta)) - alpha * h;
      Eigen::SelfAdjointEigenSolver<MatrixXd> es(a);
      const VectorXd v = es.eigenvectors().col(0);
      VectorXd grad(p);
      for (int i = 0; i < p; ++i) grad(i) = v.dot(sym_form(gb.basis[i]) * v);
      const double gn = grad.norm();
      if (gn < 1e-16) break;
      theta += (step / std::pow(it + 1.0, 0.6)) * grad / gn;
      project(theta);
      const double mg = margin_of(theta);
      if (mg > best) {
        best = mg;
        best_theta = theta;
        if (best > 0.0) break;  // feasibility established
      }
    }
    theta = best_theta;
    return best;
  };

  // Dense closed-form candidate: K = c B_ef^+ M Sc (Sc^T M Sc)^{-1} Sc^T M
  // gives sym form c * Sc^T M Sc exactly (range(B_ef) contains M Sc).
  MatrixXd k_dense;
  double c_dense_max = 0.0;
  if (!opts.block_diagonal || opts.allow_dense_fallback) {
    const MatrixXd base = pinv(B_ef) * M * S_cert *
                          (S_cert.transpose() * M * S_cert).ldlt().solve(
                              MatrixXd(S_cert.transpose() * M)) ;
    const double base_norm = gain_norm(base);
    if (base_norm > 0.0) {
      c_dense_max = kappa_max / base_norm;
      k_dense = base;
    }
  }

  // Bisection on alpha.
  VectorXd theta;
  double alpha_lo = 0.0, alpha_hi = 1.0;
  bool structured_any = max_margin(1e-12, theta) >= 0.0;
  // Grow the bracket.
  VectorXd theta_hi = theta;
  for (int it = 0; it < opts.bisection_iters; ++it) {
    if (max_margin(alpha_hi, theta_hi) < 0.0) break;
    alpha_lo = alpha_hi;
    theta = theta_hi;
    alpha_hi *= 2.0;
  }
  for (int it = 0; it < opts.bisection_iters; ++it) {
    const double mid = 0.5 * (alpha_lo + alpha_hi);
    VectorXd theta_mid = theta;
    if (max_margin(mid, theta_mid) >= 0.0) {
      alpha_lo = mid;
      theta = theta_mid;
    } else {
      alpha_hi = mid;
    }
  }

  double alpha_struct = structured_any ? alpha_lo : 0.0;
  const double alpha_cf = (k_dense.size() > 0) ? c_dense_max : 0.0;

  if (alpha_cf > alpha_struct && k_dense.size() > 0) {
    const double c = 0.98 * alpha_cf;
    out.config.K = c * k_dense;
    out.config.alpha = 0.98 * c;
    out.binding_constraint += "; dense closed-form gain selected";
  } else if (structured_any && alpha_struct > 0.0) {
    // Back off slightly so the certificate holds with strict margin.
    out.config.K = gb.assemble(theta);
    out.config.alpha = 0.98 * alpha_struct;
  } else {
    out.feasible = false;
    out.binding_constraint += "; no gain achieves a positive rate under the cap";
    return out;
  }

  out.certificate_gap = contraction_certificate_gap(out.config.K, out.config.alpha, S_cert,
                                                    B_ef, M);
  out.feasible = out.certificate_gap <= 1e-10;
  return out;
}

}  // namespace emff
