#pragma once

#include <string>
#include <vector>

#include "emff/allocation.hpp"
#include "emff/magnetics.hpp"

// From-scratch MLP (tanh, Adam, smooth-L1) with spectral-norm Lipschitz
// bookkeeping, residual quantization, bit-flip degradation bounds, and the
// two learned models: the coil-geometry surrogate and the allocation
// surrogate.

namespace emff {

struct MlpModel {
  std::vector<MatrixXd> weights;  // W^l, out x in
  std::vector<VectorXd> biases;
  // Affine feature/target maps: x_net = (x - in_offset) .* in_scale,
  // y = y_net .* out_scale + out_offset.
  VectorXd in_offset, in_scale, out_offset, out_scale;

  int layer_count() const { return static_cast<int>(weights.size()); }
  void validate() const;
};

// Network map without the declared normalization.
VectorXd mlp_forward_raw(const MlpModel& model, const VectorXd& x);
// Full map including normalization.
VectorXd mlp_forward(const MlpModel& model, const VectorXd& x);

// Product of per-layer spectral norms (tanh is 1-Lipschitz), raw network.
double lipschitz_bound(const MlpModel& model);
std::vector<double> layer_spectral_norms(const MlpModel& model);

// Empirical Lipschitz estimate of the raw network from sampled pairs.
double empirical_lipschitz(const MlpModel& model, int pairs, unsigned seed,
                           double input_radius = 1.0);

struct TrainConfig {
  std::vector<int> hidden = {128, 128, 128, 128};
  int epochs = 300;
  int batch = 256;
  double lr = 3e-3;
  double lr_min = 1e-5;
  double huber_delta = 1.0;
  unsigned seed = 7;
  double holdout_fraction = 0.1;
};

struct TrainResult {
  MlpModel model;
  std::vector<double> loss_curve;
  double final_loss = 0.0;
  bool converged = false;
};

// Supervised training on rows of (x, y); normalization is fitted from the
// training split and stored in the model.
TrainResult train_mlp(const MatrixXd& x, const MatrixXd& y, const TrainConfig& cfg);

struct QuantizedModel {
  MlpModel base;  // original full-precision model (weights replaced on reconstruct)
  int levels = 0;
  int n_bit = 0;
  // level_codes[layer][level] integer codes, level_scales[layer][level].
  std::vector<std::vector<Eigen::MatrixXi>> level_codes;
  std::vector<std::vector<double>> level_scales;

  MlpModel reconstruct() const;
};

// P-level residual quantization of the weights (biases stay full precision;
// they do not enter the Lipschitz product).
QuantizedModel residual_quantize(const MlpModel& model, int levels, int n_bit);

struct LipschitzReport {
  std::vector<double> layer_norms;       // base model
  double product_bound = 0.0;            // F_Lip upper bound
  double empirical = 0.0;                // sampled estimate
  double degradation_ratio_bound = 1.0;  // Eq.-(21)-style bound on gamma_F
  double degradation_ratio_measured = 1.0;
  double covering_radius = 0.0;
  double lipschitz_truth = 0.0;    // sampled constant of the oracle map
  double lipschitz_learned = 0.0;  // sampled constant of the learned map
  int flips = 0;
  int protection_order = 0;
};

// Flips the sign of n_bf randomly chosen codes in residual level p+1 of
// every layer, reports the measured spectral-norm product ratio and the
// analytic bound. Flips inside protected levels are rejected.
LipschitzReport bitflip_degradation(const QuantizedModel& qmodel, int n_bf, int protection_order,
                                    unsigned seed);

struct SteadyErrorInputs {
  double ripple_sup = 0.0;     // sup of the control-induced disturbance [N]
  double lipschitz_truth = 0.0;
  double lipschitz_learned = 0.0;
  double degradation_ratio = 1.0;
  double covering_radius = 0.0;
  double mass = 1.0;  // [kg]
  double k_p = 1.0;
  double k_d = 1.0;
};

// (ripple + (L_G + (1+gamma_F) L_learned) rho) / (alpha sqrt(m kp/kd)),
// alpha = kd/m.
double learned_steady_error_bound(const SteadyErrorInputs& in);

// ---------------------------------------------------------------------------
// Coil-geometry surrogate: canonical-frame 6x9 geometry matrix from the
// relative pose, with radial whitening declared alongside the network.

struct GeometrySurrogateConfig {
  int samples = 12000;
  double d_min = 0.0;  // 0 = 1.2 * 2R
  double d_max = 0.0;  // 0 = 8 * D_coil
  int quadrature_nodes = 48;
  unsigned seed = 11;
  TrainConfig train;
};

// Learns the residual between the exact contour-integral geometry and the
// closed-form point-dipole model in the source body frame, with a radial
// whitening so near- and far-range samples train on comparable scales.
struct GeometrySurrogate {
  MlpModel net;            // 14 features -> 54 residual outputs
  double gamma = 0.15;     // length normalization [m]
  double radial_exponent = 6.0;  // whitening power of (d / gamma)
  CoilSpec coil;

  // [r_hat; d/gamma; (gamma/d)^2; relative-DCM columns; axis cosines].
  VectorXd features(const Vector3d& rel_position, const Mrp& rel_attitude) const;
  // Canonical prediction: source at the origin with identity attitude.
  Matrix69d predict_canonical(const Vector3d& rel_position, const Mrp& rel_attitude) const;
  // World-frame prediction matching geometry_matrix's layout.
  Matrix69d geometry(const SatelliteState& receiver, const SatelliteState& source) const;
};

struct SurrogateMetrics {
  double median_rel_error = 0.0;
  double p95_rel_error = 0.0;
  double covering_radius = 0.0;  // mesh norm of the training inputs
  std::vector<double> loss_curve;
};

GeometrySurrogate train_geometry_surrogate(const CoilSpec& coil,
                                           const GeometrySurrogateConfig& cfg,
                                           SurrogateMetrics* metrics = nullptr);

// ---------------------------------------------------------------------------
// Allocation surrogate (two satellites): predicts the power-optimal wave
// coefficients from the relative position and the commanded stack wrench.

struct AllocationSurrogateConfig {
  int samples = 4000;
  double d_min = 0.3, d_max = 0.9;  // [m]
  double force_scale = 2e-3;        // [N] sampling scale
  double torque_scale = 2e-4;       // [N*m]
  unsigned seed = 13;
  double omega = 8.0 * kPi;
  TrainConfig train;
};

// The learning target is the pair-product matrix P = s1 s0^T + c1 c0^T:
// the averaged wrench is linear in P, the unit-weight power equals its
// nuclear norm at a balanced factorization, so the power-optimal P solves a
// convex program and is a well-defined function of the command (unlike the
// wave coefficients, which carry gauge and branch ambiguity). The far-field
// problem is also exactly equivariant under scene rotations, so instances
// are mapped to a canonical pair frame and scaled to a unit command.
struct AllocationSurrogate {
  MlpModel net;  // 6 canonical features -> 9 outputs (vec of canonical P)
  double pos_scale = 1.0, cmd_force_scale = 1.0, cmd_torque_scale = 1.0;
  double omega = 8.0 * kPi;

  // rel = satellite-1 minus satellite-0 position; stack_cmd = satellite-0
  // wrench; returns waves for both satellites (balanced rank-2 factors).
  std::vector<DipoleWave> predict(const Vector3d& rel, const Vector6d& stack_cmd) const;
  // Product-matrix prediction in the world frame.
  Matrix3d predict_products(const Vector3d& rel, const Vector6d& stack_cmd) const;
};

// Rotation to the canonical pair frame for (separation, commanded wrench).
Matrix3d allocation_canonical_frame(const Vector3d& rel, const Vector6d& stack_cmd);

AllocationSurrogate train_allocation_surrogate(const CoilSpec& coil,
                                               const AllocationSurrogateConfig& cfg,
                                               SurrogateMetrics* metrics = nullptr);

// Gauge fix for wave pairs: a common phase shift and sign leave the averaged
// wrench invariant; canonicalize so learning targets are single-valued.
void canonicalize_waves(std::vector<DipoleWave>& waves);

// Versioned text container for models.
void save_mlp(const MlpModel& model, const std::string& path);
MlpModel load_mlp(const std::string& path);
void save_geometry_surrogate(const GeometrySurrogate& g, const std::string& path);
GeometrySurrogate load_geometry_surrogate(const std::string& path);

}  // namespace emff
