#include "emff/allocation.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <random>

namespace emff {
namespace {

constexpr double kKappaAvg = kMu0 / (8.0 * kPi);  // averaged-wrench prefactor

// Symmetrized 3n x 3n reshapes of the stack rows: row_i * (a (x) b) =
// a^T Rbar_i b for a = source-stacked, b = receiver-stacked coefficients.
std::vector<MatrixXd> stack_row_forms(const MatrixXd& g) {
  const int n3 = static_cast<int>(std::lround(std::sqrt(static_cast<double>(g.cols()))));
  std::vector<MatrixXd> rbar(g.rows());
  for (int i = 0; i < g.rows(); ++i) {
    MatrixXd m(n3, n3);
    for (int p = 0; p < n3; ++p)
      for (int q = 0; q < n3; ++q) m(p, q) = g(i, p * n3 + q);
    rbar[i] = 0.5 * (m + m.transpose());
  }
  return rbar;
}

struct BilinearSystem {
  std::vector<MatrixXd> rbar;
  VectorXd ucmd;
  int n3 = 0;

  VectorXd residual(const VectorXd& x) const {
    const auto s = x.head(n3);
    const auto c = x.tail(n3);
    VectorXd h(ucmd.size());
    for (int i = 0; i < h.size(); ++i)
      h(i) = kKappaAvg * (s.dot(rbar[i] * s) + c.dot(rbar[i] * c)) - ucmd(i);
    return h;
  }

  MatrixXd jacobian(const VectorXd& x) const {
    const auto s = x.head(n3);
    const auto c = x.tail(n3);
    MatrixXd j(ucmd.size(), 2 * n3);
    for (int i = 0; i < ucmd.size(); ++i) {
      j.row(i).head(n3) = 2.0 * kKappaAvg * (rbar[i] * s).transpose();
      j.row(i).tail(n3) = 2.0 * kKappaAvg * (rbar[i] * c).transpose();
    }
    return j;
  }
};

// Levenberg-Marquardt descent on |h|^2; returns achieved residual norm.
double lm_project(const BilinearSystem& sys, VectorXd& x, double tol, int max_iter) {
  VectorXd h = sys.residual(x);
  double damp = -1.0;
  for (int iter = 0; iter < max_iter; ++iter) {
    if (h.norm() <= tol) break;
    const MatrixXd j = sys.jacobian(x);
    const MatrixXd jtj = j.transpose() * j;
    if (damp < 0.0) damp = 1e-4 * jtj.trace() / jtj.rows() + 1e-300;
    bool stepped = false;
    for (int tries = 0; tries < 25; ++tries) {
      MatrixXd a = jtj;
      a.diagonal().array() += damp;
      const VectorXd d = a.ldlt().solve(-j.transpose() * h);
      const VectorXd xn = x + d;
      const VectorXd hn = sys.residual(xn);
      if (hn.norm() < h.norm()) {
        x = xn;
        h = hn;
        damp = std::max(damp * 0.35, 1e-18 * jtj.trace() / jtj.rows());
        stepped = true;
        break;
      }
      damp *= 3.0;
    }
    if (!stepped) break;
  }
  return h.norm();
}

double power_of(const VectorXd& x, const VectorXd& w3) {
  const int n3 = static_cast<int>(w3.size());
  double p = 0.0;
  for (int i = 0; i < n3; ++i) p += w3(i) * (x(i) * x(i) + x(n3 + i) * x(n3 + i));
  return 0.5 * p;
}

// Reduce power along the constraint manifold by projected-gradient steps
// with LM retraction.
void minimize_power_on_manifold(const BilinearSystem& sys, VectorXd& x, const VectorXd& w3,
                                double tol_inner, int max_outer) {
  const int n3 = static_cast<int>(w3.size());
  VectorXd wfull(2 * n3);
  wfull << w3, w3;
  double eta = 0.5;
  for (int outer = 0; outer < max_outer; ++outer) {
    const VectorXd grad = wfull.cwiseProduct(x);
    const MatrixXd j = sys.jacobian(x);
    const VectorXd jg = j * grad;
    const VectorXd tangent_grad = grad - j.transpose() * (pinv(j * j.transpose()) * jg);
    const double gscale = grad.norm() + 1e-30;
    if (tangent_grad.norm() <= 1e-9 * gscale) break;
    const double p0 = power_of(x, w3);
    bool accepted = false;
    for (int tries = 0; tries < 30; ++tries) {
      VectorXd xc = x - eta * tangent_grad / (wfull.maxCoeff() + 1e-300);
      const double res = lm_project(sys, xc, tol_inner, 60);
      if (res <= tol_inner && power_of(xc, w3) < p0 * (1.0 - 1e-12)) {
        x = xc;
        eta = std::min(eta * 1.6, 1e3);
        accepted = true;
        break;
      }
      eta *= 0.35;
      if (eta < 1e-14) break;
    }
    if (!accepted) break;
  }
}

}  // namespace

std::vector<double> default_frequency_set() {
  return {8.0 * kPi, 16.0 * kPi, 24.0 * kPi, 32.0 * kPi, 40.0 * kPi};
}

VectorXd physical_power_weights(const CoilSpec& coil, double resistance_ohm, int n) {
  const double gain = coil.turns * coil.enclosed_area * coil.core_amplification();
  return VectorXd::Constant(3 * n, resistance_ohm / (gain * gain));
}

Vector3d instantaneous_dipole(const DipoleWave& w, double t) {
  return w.s * std::sin(w.omega * t) + w.c * std::cos(w.omega * t);
}

VectorXd stack_command(const std::vector<Vector6d>& commands, const MatrixXd& completion,
                       double tol) {
  const int n = static_cast<int>(commands.size());
  if (n < 2) throw std::invalid_argument("stack_command: need n >= 2 commands");
  VectorXd ucmd(6 * (n - 1));
  for (int j = 0; j < n - 1; ++j) {
    ucmd.segment<3>(3 * j) = commands[j].head<3>();
    ucmd.segment<3>(3 * (n - 1) + 3 * j) = commands[j].tail<3>();
  }
  VectorXd full(6 * n);
  for (int j = 0; j < n; ++j) {
    full.segment<3>(3 * j) = commands[j].head<3>();
    full.segment<3>(3 * n + 3 * j) = commands[j].tail<3>();
  }
  const double scale = 1.0 + full.norm();
  if ((completion * ucmd - full).norm() > tol * scale)
    throw std::invalid_argument(
        "stack_command: command set is not momentum/torque consistent with internal actuation");
  return ucmd;
}

std::vector<Vector6d> averaged_wrench(const std::vector<DipoleWave>& waves,
                                      const GeometryStack& stack, const MatrixXd& completion) {
  const int n = stack.n;
  if (static_cast<int>(waves.size()) != n)
    throw std::invalid_argument("averaged_wrench: one wave per satellite required");
  const int n3 = 3 * n;
  // Frequency-masked [mu] = s (x) s + c (x) c over same-frequency pairs.
  VectorXd mu = VectorXd::Zero(9 * n * n);
  for (int p = 0; p < n; ++p)
    for (int q = 0; q < n; ++q) {
      if (waves[p].omega != waves[q].omega) continue;
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b)
          mu((3 * p + a) * n3 + 3 * q + b) =
              waves[p].s(a) * waves[q].s(b) + waves[p].c(a) * waves[q].c(b);
    }
  const VectorXd ustack = kKappaAvg * (stack.g_stack * mu);
  const VectorXd ufull = completion * ustack;
  std::vector<Vector6d> out(n);
  for (int j = 0; j < n; ++j) {
    out[j].head<3>() = ufull.segment<3>(3 * j);
    out[j].tail<3>() = ufull.segment<3>(3 * n + 3 * j);
  }
  return out;
}

namespace {

std::vector<Vector6d> pairwise_wrench(const SwarmState& swarm,
                                      const std::vector<std::vector<DipoleWave>>& waves,
                                      const PairGeometryFn& pair_geometry, bool averaged,
                                      double t) {
  const int n = swarm.n();
  if (static_cast<int>(waves.size()) != n)
    throw std::invalid_argument("wrench_pairs: waves per satellite required");
  std::vector<Vector6d> out(n, Vector6d::Zero());
  for (int j = 0; j < n; ++j) {
    const Matrix3d cbj = mrp_to_rotation(swarm.satellites[j].attitude);
    for (int k = 0; k < n; ++k) {
      if (k == j) continue;
      const Matrix69d g = pair_geometry(j, k);
      Vector6d u = Vector6d::Zero();
      if (averaged) {
        for (const auto& wj : waves[j])
          for (const auto& wk : waves[k]) {
            if (wk.omega != wj.omega) continue;
            u += 0.5 * (exact_wrench(g, wk.s, wj.s) + exact_wrench(g, wk.c, wj.c));
          }
      } else {
        Vector3d mj = Vector3d::Zero(), mk = Vector3d::Zero();
        for (const auto& w : waves[j]) mj += instantaneous_dipole(w, t);
        for (const auto& w : waves[k]) mk += instantaneous_dipole(w, t);
        u = exact_wrench(g, mk, mj);
      }
      u.tail<3>() = cbj * u.tail<3>();
      out[j] += u;
    }
  }
  return out;
}

}  // namespace

std::vector<Vector6d> averaged_wrench_pairs(const SwarmState& swarm,
                                            const std::vector<std::vector<DipoleWave>>& waves,
                                            const PairGeometryFn& pair_geometry) {
  return pairwise_wrench(swarm, waves, pair_geometry, true, 0.0);
}

std::vector<Vector6d> instantaneous_wrench_pairs(const SwarmState& swarm,
                                                 const std::vector<std::vector<DipoleWave>>& waves,
                                                 const PairGeometryFn& pair_geometry, double t) {
  return pairwise_wrench(swarm, waves, pair_geometry, false, t);
}

AllocationResult solve_opt_ac(const std::vector<Vector6d>& commands, const GeometryStack& stack,
                              const MatrixXd& completion, const AllocationOptions& opts) {
  return solve_opt_ac_stack(stack_command(commands, completion), stack, completion, opts);
}

AllocationResult solve_opt_ac_stack(const VectorXd& stack_cmd, const GeometryStack& stack,
                                    const MatrixXd& completion, const AllocationOptions& opts) {
  const int n = stack.n;
  const int n3 = 3 * n;
  AllocationResult res;

  BilinearSystem sys;
  sys.n3 = n3;
  sys.rbar = stack_row_forms(stack.g_stack);
  sys.ucmd = stack_cmd;

  VectorXd w3 = opts.power_weights;
  if (w3.size() == 0) w3 = VectorXd::Ones(n3);
  if (w3.size() != n3) throw std::invalid_argument("solve_opt_ac: power_weights must have 3n entries");

  const double cmd_norm = sys.ucmd.norm();
  const double tol = opts.residual_tol_rel * (1.0 + cmd_norm);

  if (cmd_norm == 0.0) {
    res.waves.assign(n, DipoleWave{Vector3d::Zero(), Vector3d::Zero(), opts.omega});
    res.achieved.assign(n, Vector6d::Zero());
    res.feasible = true;
    res.jacobian_null_dim = 2 * n3;
    res.dual_bound = 0.0;
    res.message = "zero command";
    return res;
  }

  // Characteristic dipole scale for the starts.
  const double gnorm = std::max(stack.g_stack.cwiseAbs().maxCoeff(), 1e-30);
  const double mu_typ = std::sqrt(cmd_norm / (kKappaAvg * gnorm));

  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  VectorXd best;
  double best_power = 0.0, best_res = 0.0;
  bool have = false;
  for (int start = 0; start < std::max(1, opts.multistarts); ++start) {
    VectorXd x(2 * n3);
    for (int i = 0; i < x.size(); ++i) x(i) = mu_typ * gauss(rng);
    double r = lm_project(sys, x, tol, opts.max_lm_iterations);
    if (r > tol) continue;
    minimize_power_on_manifold(sys, x, w3, 0.1 * tol, 200);
    r = lm_project(sys, x, tol, opts.max_lm_iterations);
    if (r > tol) continue;
    const double p = power_of(x, w3);
    if (!have || p < best_power) {
      best = x;
      best_power = p;
      best_res = r;
      have = true;
    }
  }

  if (!have) {
    // Report the best infeasible attempt.
    VectorXd x = VectorXd::Constant(2 * n3, mu_typ);
    const double r = lm_project(sys, x, tol, 4 * opts.max_lm_iterations);
    res.feasible = false;
    res.residual_norm = r;
    res.message = "no feasible allocation found (best residual " + std::to_string(r) + ")";
    return res;
  }

  // Polish the winner close to the numerical floor: weak duality against a
  // nearly-tight dual is only meaningful when the power deficit carried by
  // the residual (about |lambda| * residual) is below the duality margin.
  best_res = lm_project(sys, best, 1e-13 * (1.0 + cmd_norm), opts.max_lm_iterations);
  best_power = power_of(best, w3);

  res.feasible = true;
  res.residual_norm = best_res;
  res.primal_power = best_power;
  res.waves.resize(n);
  for (int j = 0; j < n; ++j) {
    res.waves[j].s = best.segment<3>(3 * j);
    res.waves[j].c = best.segment<3>(n3 + 3 * j);
    res.waves[j].omega = opts.omega;
  }
  res.achieved = averaged_wrench(res.waves, stack, completion);
  {
    const MatrixXd j = sys.jacobian(best);
    res.jacobian_null_dim = 2 * n3 - numeric_rank(j);
  }
  if (opts.run_dual) res.dual_bound = dual_lower_bound(sys.ucmd, stack, w3);
  return res;
}

double dual_lower_bound(const VectorXd& stack_cmd, const GeometryStack& stack,
                        const VectorXd& power_weights) {
  const int n3 = 3 * stack.n;
  const int m = static_cast<int>(stack_cmd.size());
  VectorXd w3 = power_weights;
  if (w3.size() == 0) w3 = VectorXd::Ones(n3);
  const auto rbar = stack_row_forms(stack.g_stack);
  const MatrixXd w_half = 0.5 * MatrixXd(w3.asDiagonal());

  if (stack_cmd.norm() == 0.0) return 0.0;

  auto barrier_matrix = [&](const VectorXd& lam) {
    MatrixXd p = w_half;
    for (int i = 0; i < m; ++i) p += kKappaAvg * lam(i) * rbar[i];
    return p;
  };

  // Minimize t*(lam.u) - logdet P(lam) by damped Newton, path following in t.
  VectorXd lam = VectorXd::Zero(m);
  const double obj_scale = std::max(stack_cmd.norm(), 1e-30);
  double t = 1.0 / obj_scale;
  const double t_max = 1e9 * static_cast<double>(n3) / obj_scale;

  while (t < t_max) {
    for (int newton = 0; newton < 60; ++newton) {
      const MatrixXd p = barrier_matrix(lam);
      Eigen::LLT<MatrixXd> llt(p);
      if (llt.info() != Eigen::Success) break;  // should not happen from inside
      const MatrixXd pinv_mat = llt.solve(MatrixXd::Identity(n3, n3));
      VectorXd grad(m);
      for (int i = 0; i < m; ++i)
        grad(i) = t * stack_cmd(i) - kKappaAvg * (pinv_mat * rbar[i]).trace();
      MatrixXd hess(m, m);
      std::vector<MatrixXd> pr(m);
      for (int i = 0; i < m; ++i) pr[i] = pinv_mat * rbar[i];
      for (int i = 0; i < m; ++i)
        for (int j = i; j < m; ++j) {
          hess(i, j) = kKappaAvg * kKappaAvg * (pr[i] * pr[j]).trace();
          hess(j, i) = hess(i, j);
        }
      hess.diagonal().array() += 1e-14 * (hess.trace() / m + 1.0);
      const VectorXd step = hess.ldlt().solve(-grad);
      const double decrement = -grad.dot(step);
      // Backtrack into the PSD cone.
      double alpha = 1.0;
      bool moved = false;
      for (int bt = 0; bt < 60; ++bt) {
        const VectorXd trial = lam + alpha * step;
        Eigen::LLT<MatrixXd> chk(barrier_matrix(trial));
        if (chk.info() == Eigen::Success) {
          lam = trial;
          moved = true;
          break;
        }
        alpha *= 0.5;
      }
      if (!moved || decrement < 1e-12) break;
    }
    t *= 10.0;
  }
  // Pull strictly inside the cone so the certificate survives round-off.
  lam *= 1.0 - 1e-9;
  return -lam.dot(stack_cmd);
}

Vector6d RippleComponent::at(double t) const {
  return std::cos(omega2 * t) * x + std::sin(omega2 * t) * y;
}

RippleComponent ripple_disturbance(const DipoleWave& receiver_wave, const DipoleWave& source_wave,
                                   const Matrix69d& g) {
  if (receiver_wave.omega != source_wave.omega)
    throw std::invalid_argument("ripple_disturbance: cross-frequency pair is not a pure 2w term");
  RippleComponent r;
  r.omega2 = 2.0 * receiver_wave.omega;
  const auto& sj = receiver_wave.s;
  const auto& cj = receiver_wave.c;
  const auto& sk = source_wave.s;
  const auto& ck = source_wave.c;
  // x from (c_k (x) c_j - s_k (x) s_j), y from (c_k (x) s_j + s_k (x) c_j);
  // exact_wrench carries mu0/4pi so halve it for the mu0/8pi prefactor.
  r.x = 0.5 * (exact_wrench(g, ck, cj) - exact_wrench(g, sk, sj));
  r.y = 0.5 * (exact_wrench(g, ck, sj) + exact_wrench(g, sk, cj));
  return r;
}

double ripple_sup_bound(const Vector6d& x, const Vector6d& y) {
  const double nx2 = x.squaredNorm();
  const double ny2 = y.squaredNorm();
  const double xy = x.dot(y);
  const double diff = nx2 - ny2;
  return std::sqrt(0.5 * (nx2 + ny2) + 0.5 * std::sqrt(diff * diff + 4.0 * xy * xy));
}

std::vector<double> allocation_ripple_sup(const SwarmState& swarm,
                                          const std::vector<DipoleWave>& waves,
                                          const PairGeometryFn& pair_geometry) {
  const int n = swarm.n();
  std::vector<double> sup(n, 0.0);
  for (int j = 0; j < n; ++j) {
    Vector6d x = Vector6d::Zero(), y = Vector6d::Zero();
    for (int k = 0; k < n; ++k) {
      if (k == j || waves[j].omega != waves[k].omega) continue;
      const RippleComponent r = ripple_disturbance(waves[j], waves[k], pair_geometry(j, k));
      x += r.x;
      y += r.y;
    }
    sup[j] = ripple_sup_bound(x, y);
  }
  return sup;
}

RippleMonotonicityReport ripple_power_monotonicity_report(
    const std::vector<Vector6d>& commands, const SwarmState& swarm, const GeometryStack& stack,
    const MatrixXd& completion, const PairGeometryFn& pair_geometry, int alternatives,
    const AllocationOptions& opts) {
  RippleMonotonicityReport report;
  const AllocationResult base = solve_opt_ac(commands, stack, completion, opts);
  if (!base.feasible) return report;

  const int n = stack.n;
  const int n3 = 3 * n;
  VectorXd w3 = opts.power_weights;
  if (w3.size() == 0) w3 = VectorXd::Ones(n3);

  BilinearSystem sys;
  sys.n3 = n3;
  sys.rbar = stack_row_forms(stack.g_stack);
  sys.ucmd = stack_command(commands, completion);
  const double tol = opts.residual_tol_rel * (1.0 + sys.ucmd.norm());

  auto measure = [&](const std::vector<DipoleWave>& waves, double power) {
    RippleInstanceReport inst;
    inst.power = power;
    const auto sup = allocation_ripple_sup(swarm, waves, pair_geometry);
    inst.sup_analytic = *std::max_element(sup.begin(), sup.end());
    // Dense sampling of the pointwise identity over one carrier period.
    std::vector<std::vector<DipoleWave>> per_sat(n);
    for (int j = 0; j < n; ++j) per_sat[j] = {waves[j]};
    const auto avg = averaged_wrench_pairs(swarm, per_sat, pair_geometry);
    const double period = 2.0 * kPi / opts.omega;
    double sup_meas = 0.0;
    for (int it = 0; it < 2000; ++it) {
      const double t = period * it / 2000.0;
      const auto inst_w = instantaneous_wrench_pairs(swarm, per_sat, pair_geometry, t);
      for (int j = 0; j < n; ++j) sup_meas = std::max(sup_meas, (inst_w[j] - avg[j]).norm());
    }
    inst.sup_measured = sup_meas;
    return inst;
  };

  report.instances.push_back(measure(base.waves, base.primal_power));

  VectorXd x0(2 * n3);
  for (int j = 0; j < n; ++j) {
    x0.segment<3>(3 * j) = base.waves[j].s;
    x0.segment<3>(n3 + 3 * j) = base.waves[j].c;
  }
  std::mt19937_64 rng(opts.seed + 77);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double scale = x0.norm() / std::sqrt(static_cast<double>(x0.size()));
  for (int a = 0; a < alternatives; ++a) {
    VectorXd x = x0;
    for (int i = 0; i < x.size(); ++i) x(i) += 0.7 * scale * gauss(rng);
    if (lm_project(sys, x, tol, 400) > tol) continue;
    std::vector<DipoleWave> waves(n);
    for (int j = 0; j < n; ++j)
      waves[j] = DipoleWave{x.segment<3>(3 * j), x.segment<3>(n3 + 3 * j), opts.omega};
    report.instances.push_back(measure(waves, power_of(x, w3)));
  }

  report.optimal_is_least = true;
  for (size_t i = 1; i < report.instances.size(); ++i)
    if (report.instances[i].sup_analytic <
        report.instances[0].sup_analytic * (1.0 - 1e-9))
      report.optimal_is_least = false;
  return report;
}

}  // namespace emff
