#include "emff/mlp.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

namespace emff {

void MlpModel::validate() const {
  if (weights.size() != biases.size() || weights.empty())
    throw std::invalid_argument("mlp: weights/biases layer mismatch");
  for (size_t l = 0; l + 1 < weights.size(); ++l)
    if (weights[l + 1].cols() != weights[l].rows())
      throw std::invalid_argument("mlp: layer dimension chain broken");
  for (size_t l = 0; l < weights.size(); ++l)
    if (biases[l].size() != weights[l].rows())
      throw std::invalid_argument("mlp: bias dimension mismatch");
}

VectorXd mlp_forward_raw(const MlpModel& model, const VectorXd& x) {
  if (x.size() != model.weights.front().cols())
    throw std::invalid_argument("mlp_forward: input dimension mismatch");
  VectorXd a = x;
  const int last = model.layer_count() - 1;
  for (int l = 0; l < last; ++l)
    a = (model.weights[l] * a + model.biases[l]).array().tanh().matrix();
  return model.weights[last] * a + model.biases[last];
}

VectorXd mlp_forward(const MlpModel& model, const VectorXd& x) {
  VectorXd xn = x;
  if (model.in_offset.size() > 0) xn = (x - model.in_offset).cwiseProduct(model.in_scale);
  VectorXd y = mlp_forward_raw(model, xn);
  if (model.out_offset.size() > 0) y = y.cwiseProduct(model.out_scale) + model.out_offset;
  return y;
}

std::vector<double> layer_spectral_norms(const MlpModel& model) {
  std::vector<double> norms;
  norms.reserve(model.weights.size());
  for (const auto& w : model.weights) {
    Eigen::BDCSVD<MatrixXd> svd(w);
    norms.push_back(svd.singularValues()(0));
  }
  return norms;
}

double lipschitz_bound(const MlpModel& model) {
  double p = 1.0;
  for (double s : layer_spectral_norms(model)) p *= s;
  return p;
}

double empirical_lipschitz(const MlpModel& model, int pairs, unsigned seed, double input_radius) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int din = static_cast<int>(model.weights.front().cols());
  double best = 0.0;
  for (int i = 0; i < pairs; ++i) {
    VectorXd x1(din);
    for (int k = 0; k < din; ++k) x1(k) = input_radius * gauss(rng);
    VectorXd dx(din);
    for (int k = 0; k < din; ++k) dx(k) = gauss(rng);
    // Alternate local slopes and far pairs.
    const double step = (i % 2 == 0) ? 1e-4 * input_radius : input_radius;
    const VectorXd x2 = x1 + step * dx.normalized();
    const double num = (mlp_forward_raw(model, x1) - mlp_forward_raw(model, x2)).norm();
    best = std::max(best, num / (x1 - x2).norm());
  }
  return best;
}

// ---------------------------------------------------------------------------
// Training

namespace {

double cosine_lr(const TrainConfig& cfg, int epoch) {
  return cfg.lr_min +
         0.5 * (cfg.lr - cfg.lr_min) * (1.0 + std::cos(kPi * epoch / std::max(1, cfg.epochs)));
}

struct Adam {
  std::vector<MatrixXd> mw, vw;
  std::vector<VectorXd> mb, vb;
  double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  long step = 0;

  void init(const MlpModel& m) {
    for (const auto& w : m.weights) {
      mw.push_back(MatrixXd::Zero(w.rows(), w.cols()));
      vw.push_back(MatrixXd::Zero(w.rows(), w.cols()));
    }
    for (const auto& b : m.biases) {
      mb.push_back(VectorXd::Zero(b.size()));
      vb.push_back(VectorXd::Zero(b.size()));
    }
  }

  void update(MlpModel& m, const std::vector<MatrixXd>& gw, const std::vector<VectorXd>& gb,
              double lr) {
    ++step;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
    for (size_t l = 0; l < m.weights.size(); ++l) {
      mw[l] = b1 * mw[l] + (1.0 - b1) * gw[l];
      vw[l] = b2 * vw[l] + (1.0 - b2) * gw[l].cwiseProduct(gw[l]);
      m.weights[l] -= lr * (mw[l] / c1)
                          .cwiseQuotient((vw[l] / c2).cwiseSqrt().array().matrix() +
                                         MatrixXd::Constant(gw[l].rows(), gw[l].cols(), eps));
      mb[l] = b1 * mb[l] + (1.0 - b1) * gb[l];
      vb[l] = b2 * vb[l] + (1.0 - b2) * gb[l].cwiseProduct(gb[l]);
      m.biases[l] -= lr * (mb[l] / c1)
                         .cwiseQuotient((vb[l] / c2).cwiseSqrt() +
                                        VectorXd::Constant(gb[l].size(), eps));
    }
  }
};

}  // namespace

TrainResult train_mlp(const MatrixXd& x, const MatrixXd& y, const TrainConfig& cfg) {
  if (x.rows() != y.rows() || x.rows() < 4)
    throw std::invalid_argument("train_mlp: bad dataset shape");
  const int n_total = static_cast<int>(x.rows());
  const int n_hold = std::min(n_total / 2, static_cast<int>(cfg.holdout_fraction * n_total));
  const int n_train = n_total - n_hold;
  const int din = static_cast<int>(x.cols());
  const int dout = static_cast<int>(y.cols());

  TrainResult out;
  MlpModel& m = out.model;

  // Feature/target normalization fitted on the training split.
  m.in_offset = x.topRows(n_train).colwise().mean().transpose();
  m.out_offset = y.topRows(n_train).colwise().mean().transpose();
  m.in_scale = VectorXd(din);
  m.out_scale = VectorXd(dout);
  for (int j = 0; j < din; ++j) {
    const double sd = std::sqrt((x.col(j).head(n_train).array() - m.in_offset(j)).square().mean());
    m.in_scale(j) = 1.0 / std::max(sd, 1e-12);
  }
  for (int j = 0; j < dout; ++j) {
    const double sd = std::sqrt((y.col(j).head(n_train).array() - m.out_offset(j)).square().mean());
    m.out_scale(j) = std::max(sd, 1e-12);
  }

  MatrixXd xn = (x.rowwise() - m.in_offset.transpose()) * m.in_scale.asDiagonal();
  MatrixXd yn = (y.rowwise() - m.out_offset.transpose()) * m.out_scale.cwiseInverse().asDiagonal();

  std::vector<int> dims;
  dims.push_back(din);
  for (int h : cfg.hidden) dims.push_back(h);
  dims.push_back(dout);
  std::mt19937_64 rng(cfg.seed);
  for (size_t l = 0; l + 1 < dims.size(); ++l) {
    const double bound = std::sqrt(6.0 / (dims[l] + dims[l + 1]));
    std::uniform_real_distribution<double> uni(-bound, bound);
    MatrixXd w(dims[l + 1], dims[l]);
    for (int r = 0; r < w.rows(); ++r)
      for (int c = 0; c < w.cols(); ++c) w(r, c) = uni(rng);
    m.weights.push_back(std::move(w));
    m.biases.push_back(VectorXd::Zero(dims[l + 1]));
  }

  Adam adam;
  adam.init(m);
  const int layers = m.layer_count();
  const double delta = cfg.huber_delta;

  std::vector<int> order(n_train);
  for (int i = 0; i < n_train; ++i) order[i] = i;

  auto eval_loss = [&](const MatrixXd& xb, const MatrixXd& yb) {
    // Forward in batch; rows are samples.
    MatrixXd a = xb;
    for (int l = 0; l < layers - 1; ++l)
      a = ((a * m.weights[l].transpose()).rowwise() + m.biases[l].transpose())
              .array()
              .tanh()
              .matrix();
    MatrixXd e =
        ((a * m.weights[layers - 1].transpose()).rowwise() + m.biases[layers - 1].transpose()) -
        yb;
    double loss = 0.0;
    for (int r = 0; r < e.rows(); ++r)
      for (int c = 0; c < e.cols(); ++c) {
        const double ae = std::abs(e(r, c));
        loss += ae < delta ? 0.5 * ae * ae / delta : ae - 0.5 * delta;
      }
    return loss / (e.rows() * e.cols());
  };

  double first_loss = -1.0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = cosine_lr(cfg, epoch);
    double epoch_loss = 0.0;
    int batches = 0;
    for (int beg = 0; beg < n_train; beg += cfg.batch) {
      const int bs = std::min(cfg.batch, n_train - beg);
      MatrixXd xb(bs, din), yb(bs, dout);
      for (int i = 0; i < bs; ++i) {
        xb.row(i) = xn.row(order[beg + i]);
        yb.row(i) = yn.row(order[beg + i]);
      }
      // Forward, keeping activations.
      std::vector<MatrixXd> acts;
      acts.push_back(xb);
      for (int l = 0; l < layers - 1; ++l)
        acts.push_back(((acts.back() * m.weights[l].transpose()).rowwise() +
                        m.biases[l].transpose())
                           .array()
                           .tanh()
                           .matrix());
      MatrixXd yhat =
          (acts.back() * m.weights[layers - 1].transpose()).rowwise() +
          m.biases[layers - 1].transpose();
      MatrixXd e = yhat - yb;
      double loss = 0.0;
      MatrixXd g(bs, dout);
      for (int r = 0; r < bs; ++r)
        for (int c = 0; c < dout; ++c) {
          const double val = e(r, c);
          const double ae = std::abs(val);
          loss += ae < delta ? 0.5 * ae * ae / delta : ae - 0.5 * delta;
          g(r, c) = std::clamp(val / delta, -1.0, 1.0);
        }
      loss /= bs * dout;
      g /= bs * dout;
      epoch_loss += loss;
      ++batches;

      std::vector<MatrixXd> gw(layers);
      std::vector<VectorXd> gb(layers);
      MatrixXd delta_l = g;
      for (int l = layers - 1; l >= 0; --l) {
        gw[l] = delta_l.transpose() * acts[l];
        gb[l] = delta_l.colwise().sum().transpose();
        if (l > 0) {
          MatrixXd back = delta_l * m.weights[l];
          delta_l = back.cwiseProduct(
              (MatrixXd::Ones(acts[l].rows(), acts[l].cols()) - acts[l].cwiseProduct(acts[l])));
        }
      }
      adam.update(m, gw, gb, lr);
    }
    epoch_loss /= std::max(1, batches);
    if (first_loss < 0.0) first_loss = epoch_loss;
    out.loss_curve.push_back(epoch_loss);
  }

  if (n_hold > 0)
    out.final_loss = eval_loss(xn.bottomRows(n_hold), yn.bottomRows(n_hold));
  else
    out.final_loss = out.loss_curve.empty() ? 0.0 : out.loss_curve.back();
  out.converged = !out.loss_curve.empty() && out.loss_curve.back() < first_loss;
  return out;
}

// ---------------------------------------------------------------------------
// Residual quantization and bit flips

QuantizedModel residual_quantize(const MlpModel& model, int levels, int n_bit) {
  if (levels < 1) throw std::invalid_argument("residual_quantize: P >= 1 required");
  if (n_bit < 2) throw std::invalid_argument("residual_quantize: n_bit >= 2 required");
  QuantizedModel q;
  q.base = model;
  q.levels = levels;
  q.n_bit = n_bit;
  const double qmax = std::pow(2.0, n_bit - 1);
  for (const auto& w : model.weights) {
    std::vector<Eigen::MatrixXi> codes;
    std::vector<double> scales;
    MatrixXd residual = w;
    for (int p = 0; p < levels; ++p) {
      const double m = residual.cwiseAbs().maxCoeff();
      if (m == 0.0) {
        codes.push_back(Eigen::MatrixXi::Zero(w.rows(), w.cols()));
        scales.push_back(0.0);
        continue;
      }
      const double scale = m / qmax;
      Eigen::MatrixXi code(w.rows(), w.cols());
      for (int r = 0; r < w.rows(); ++r)
        for (int c = 0; c < w.cols(); ++c)
          code(r, c) = static_cast<int>(std::lround(residual(r, c) / scale));
      codes.push_back(code);
      scales.push_back(scale);
      residual -= scale * code.cast<double>();
    }
    q.level_codes.push_back(std::move(codes));
    q.level_scales.push_back(std::move(scales));
  }
  return q;
}

MlpModel QuantizedModel::reconstruct() const {
  MlpModel m = base;
  for (size_t l = 0; l < m.weights.size(); ++l) {
    MatrixXd w = MatrixXd::Zero(m.weights[l].rows(), m.weights[l].cols());
    for (int p = 0; p < levels; ++p)
      w += level_scales[l][p] * level_codes[l][p].cast<double>();
    m.weights[l] = w;
  }
  return m;
}

LipschitzReport bitflip_degradation(const QuantizedModel& qmodel, int n_bf, int protection_order,
                                    unsigned seed) {
  if (protection_order < 0 || protection_order + 1 > qmodel.levels)
    throw std::invalid_argument(
        "bitflip_degradation: flips target level p+1; need 0 <= p <= P-1");
  const MlpModel base = qmodel.reconstruct();
  LipschitzReport rep;
  rep.flips = n_bf;
  rep.protection_order = protection_order;
  rep.layer_norms = layer_spectral_norms(base);
  rep.product_bound = 1.0;
  for (double s : rep.layer_norms) rep.product_bound *= s;

  // Eq.-(21)-style bound with the quantized base as reference.
  rep.degradation_ratio_bound = 1.0;
  for (size_t l = 0; l < base.weights.size(); ++l) {
    const double wmax = base.weights[l].cwiseAbs().maxCoeff();
    const double denom =
        std::pow(2.0, protection_order * qmodel.n_bit - 1) * rep.layer_norms[l];
    rep.degradation_ratio_bound *= 1.0 + n_bf * wmax / denom;
  }

  if (n_bf == 0) {
    rep.degradation_ratio_measured = 1.0;
    rep.empirical = empirical_lipschitz(base, 2000, seed);
    return rep;
  }

  QuantizedModel flipped = qmodel;
  std::mt19937_64 rng(seed);
  const int level = protection_order;  // 0-based index of level p+1
  for (size_t l = 0; l < flipped.level_codes.size(); ++l) {
    auto& code = flipped.level_codes[l][level];
    const int total = static_cast<int>(code.size());
    std::vector<int> idx(total);
    for (int i = 0; i < total; ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    const int flips = std::min(n_bf, total);
    for (int i = 0; i < flips; ++i) {
      const int r = idx[i] % code.rows();
      const int c = idx[i] / code.rows();
      code(r, c) = -code(r, c);
    }
  }
  const MlpModel post = flipped.reconstruct();
  double post_product = 1.0;
  for (double s : layer_spectral_norms(post)) post_product *= s;
  rep.degradation_ratio_measured = post_product / rep.product_bound;
  rep.empirical = empirical_lipschitz(post, 2000, seed + 1);
  return rep;
}

double learned_steady_error_bound(const SteadyErrorInputs& in) {
  if (in.k_p <= 0.0 || in.k_d <= 0.0 || in.mass <= 0.0)
    throw std::invalid_argument("learned_steady_error_bound: positive gains/mass required");
  const double alpha = in.k_d / in.mass;
  const double d_sup =
      in.ripple_sup +
      (in.lipschitz_truth + (1.0 + in.degradation_ratio) * in.lipschitz_learned) *
          in.covering_radius;
  return d_sup / (alpha * std::sqrt(in.mass * in.k_p / in.k_d));
}

// ---------------------------------------------------------------------------
// Geometry surrogate

namespace {

Mrp random_attitude(std::mt19937_64& rng) {
  // Shoemake's uniform quaternion.
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const double u1 = uni(rng), u2 = uni(rng), u3 = uni(rng);
  const double s1 = std::sqrt(1.0 - u1), s2 = std::sqrt(u1);
  Eigen::Vector4d q(s1 * std::sin(2.0 * kPi * u2), s1 * std::cos(2.0 * kPi * u2),
                    s2 * std::sin(2.0 * kPi * u3), s2 * std::cos(2.0 * kPi * u3));
  if (q(3) < 0.0) q = -q;  // scalar part last here; keep q0 >= 0
  return Mrp(Vector3d(q.head<3>() / (1.0 + q(3))));
}

Vector3d random_direction(std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vector3d v(gauss(rng), gauss(rng), gauss(rng));
  while (v.norm() < 1e-8) v = Vector3d(gauss(rng), gauss(rng), gauss(rng));
  return v.normalized();
}

// 54-vector packing of a 6x9 residual matrix with radial whitening.
VectorXd pack_target(const Matrix69d& g, double d, double gamma, double exponent) {
  const double w = std::pow(d / gamma, exponent);
  VectorXd y(54);
  for (int col = 0; col < 9; ++col) {
    y.segment<3>(6 * col) = g.col(col).head<3>() * w;
    y.segment<3>(6 * col + 3) = g.col(col).tail<3>() * (w / gamma);
  }
  return y;
}

Matrix69d unpack_target(const VectorXd& y, double d, double gamma, double exponent) {
  const double w = std::pow(d / gamma, exponent);
  Matrix69d g;
  for (int col = 0; col < 9; ++col) {
    g.col(col).head<3>() = y.segment<3>(6 * col) / w;
    g.col(col).tail<3>() = y.segment<3>(6 * col + 3) * (gamma / w);
  }
  return g;
}

// Point-dipole geometry in the canonical (source body) frame.
Matrix69d far_canonical(const Vector3d& rel_position, const Mrp& rel_attitude) {
  SatelliteState source;
  SatelliteState receiver;
  receiver.position = rel_position;
  receiver.attitude = rel_attitude;
  return far_field_geometry_matrix(receiver, source);
}

double covering_radius_estimate(const MatrixXd& train_features, const MatrixXd& probes) {
  double worst = 0.0;
  for (int p = 0; p < probes.rows(); ++p) {
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < train_features.rows(); ++i) {
      const double d = (train_features.row(i) - probes.row(p)).norm();
      if (d < best) best = d;
    }
    worst = std::max(worst, best);
  }
  return worst;
}

}  // namespace

VectorXd GeometrySurrogate::features(const Vector3d& rel_position,
                                     const Mrp& rel_attitude) const {
  const double d = rel_position.norm();
  const Vector3d rhat = rel_position / d;
  const Matrix3d c = mrp_to_rotation(rel_attitude);
  VectorXd f(14);
  // Direction, range, the relative DCM's first two columns, and the
  // receiver-axis / separation cosines the multipole couplings ride on.
  f << rhat, d / gamma, (gamma / d) * (gamma / d), c.col(0), c.col(1), c * rhat;
  return f;
}

Matrix69d GeometrySurrogate::predict_canonical(const Vector3d& rel_position,
                                               const Mrp& rel_attitude) const {
  const VectorXd y = mlp_forward(net, features(rel_position, rel_attitude));
  return far_canonical(rel_position, rel_attitude) +
         unpack_target(y, rel_position.norm(), gamma, radial_exponent);
}

Matrix69d GeometrySurrogate::geometry(const SatelliteState& receiver,
                                      const SatelliteState& source) const {
  const Matrix3d cs = mrp_to_rotation(source.attitude);
  const Vector3d rel_src = cs * (receiver.position - source.position);
  const Mrp rel_att = attitude_error(receiver.attitude, source.attitude);
  const Matrix69d gc = predict_canonical(rel_src, rel_att);
  Matrix69d g;
  g.topRows(3) = cs.transpose() * gc.topRows(3);
  g.bottomRows(3) = cs.transpose() * gc.bottomRows(3);
  return g;
}

GeometrySurrogate train_geometry_surrogate(const CoilSpec& coil,
                                           const GeometrySurrogateConfig& cfg,
                                           SurrogateMetrics* metrics) {
  GeometrySurrogate out;
  out.coil = coil;
  const double d_coil = 2.0 * coil.loop_radius;
  out.gamma = d_coil;
  const double d_min = cfg.d_min > 0.0 ? cfg.d_min : 1.2 * 2.0 * coil.loop_radius;
  const double d_max = cfg.d_max > 0.0 ? cfg.d_max : 8.0 * d_coil;

  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  QuadratureOptions quad;
  quad.adaptive = false;
  quad.initial_nodes = cfg.quadrature_nodes;

  MatrixXd x(cfg.samples, 14), y(cfg.samples, 54);
  std::vector<Vector3d> rels(cfg.samples);
  std::vector<Mrp> atts(cfg.samples);
  std::vector<Matrix69d> truth(cfg.samples);
  SatelliteState source;  // origin, identity
  for (int i = 0; i < cfg.samples; ++i) {
    const double d = d_min * std::pow(d_max / d_min, uni(rng));
    SatelliteState receiver;
    receiver.position = d * random_direction(rng);
    receiver.attitude = random_attitude(rng);
    const Matrix69d g = geometry_matrix(receiver, source, coil, coil, quad);
    const Matrix69d residual = g - far_canonical(receiver.position, receiver.attitude);
    x.row(i) = out.features(receiver.position, receiver.attitude).transpose();
    y.row(i) = pack_target(residual, d, out.gamma, out.radial_exponent).transpose();
    rels[i] = receiver.position;
    atts[i] = receiver.attitude;
    truth[i] = g;
  }

  TrainConfig tc = cfg.train;
  const int n_hold = std::max(1, static_cast<int>(tc.holdout_fraction * cfg.samples));
  TrainResult tr = train_mlp(x, y, tc);
  out.net = tr.model;

  if (metrics) {
    metrics->loss_curve = tr.loss_curve;
    std::vector<double> errs;
    for (int i = cfg.samples - n_hold; i < cfg.samples; ++i) {
      const Matrix69d pred = out.predict_canonical(rels[i], atts[i]);
      errs.push_back((pred - truth[i]).norm() / std::max(truth[i].norm(), 1e-30));
    }
    std::sort(errs.begin(), errs.end());
    metrics->median_rel_error = errs[errs.size() / 2];
    metrics->p95_rel_error = errs[static_cast<size_t>(0.95 * (errs.size() - 1))];

    MatrixXd probes(1500, 14);
    for (int p = 0; p < probes.rows(); ++p) {
      const double d = d_min * std::pow(d_max / d_min, uni(rng));
      probes.row(p) =
          out.features(d * random_direction(rng), random_attitude(rng)).transpose();
    }
    metrics->covering_radius =
        covering_radius_estimate(x.topRows(cfg.samples - n_hold), probes);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Allocation surrogate

void canonicalize_waves(std::vector<DipoleWave>& waves) {
  double a = 0.0, b = 0.0, h = 0.0;
  for (const auto& w : waves) {
    a += w.s.squaredNorm();
    b += w.c.squaredNorm();
    h += w.s.dot(w.c);
  }
  // |s(theta)|^2 = (a+b)/2 + (a-b)/2 cos 2t + h sin 2t; minimize over t.
  const double phase = 0.5 * std::atan2(2.0 * h, a - b);
  auto rotate = [&](double t) {
    std::vector<DipoleWave> out = waves;
    for (auto& w : out) {
      const Vector3d s = w.s, c = w.c;
      w.s = std::cos(t) * s + std::sin(t) * c;
      w.c = -std::sin(t) * s + std::cos(t) * c;
    }
    return out;
  };
  auto snorm = [](const std::vector<DipoleWave>& ws) {
    double v = 0.0;
    for (const auto& w : ws) v += w.s.squaredNorm();
    return v;
  };
  auto cand1 = rotate(phase);
  auto cand2 = rotate(phase + 0.5 * kPi);
  waves = snorm(cand1) <= snorm(cand2) ? cand1 : cand2;
  // Sign fix: make the largest-magnitude cosine entry positive.
  double best = 0.0;
  double sign = 1.0;
  for (const auto& w : waves)
    for (int i = 0; i < 3; ++i)
      if (std::abs(w.c(i)) > best) {
        best = std::abs(w.c(i));
        sign = w.c(i) >= 0.0 ? 1.0 : -1.0;
      }
  if (sign < 0.0)
    for (auto& w : waves) {
      w.s = -w.s;
      w.c = -w.c;
    }
}

Matrix3d allocation_canonical_frame(const Vector3d& rel, const Vector6d& stack_cmd) {
  const Vector3d e1 = rel.normalized();
  const Vector3d f = stack_cmd.head<3>();
  const Vector3d tau = stack_cmd.tail<3>();
  Vector3d e2 = f - f.dot(e1) * e1;
  if (e2.norm() < 1e-12 * (f.norm() + 1e-300)) e2 = tau - tau.dot(e1) * e1;
  if (e2.norm() < 1e-15) {
    const Vector3d a = std::abs(e1.x()) < 0.9 ? Vector3d::UnitX() : Vector3d::UnitY();
    e2 = a - a.dot(e1) * e1;
  }
  e2.normalize();
  Matrix3d c;  // rows: canonical axes in world coordinates (world -> canonical)
  c.row(0) = e1;
  c.row(1) = e2;
  c.row(2) = e1.cross(e2);
  return c;
}

namespace {

// Command magnitude in the mixed force/torque scaling; the optimal product
// matrix is positively homogeneous in the command, so instances are scaled
// to unit commands before the network sees them.
double command_scale(const AllocationSurrogate& s, const Vector6d& cmd) {
  return std::sqrt(cmd.head<3>().squaredNorm() / (s.cmd_force_scale * s.cmd_force_scale) +
                   cmd.tail<3>().squaredNorm() / (s.cmd_torque_scale * s.cmd_torque_scale)) +
         1e-300;
}

VectorXd allocation_features(const AllocationSurrogate& s, const Matrix3d& c,
                             const Vector3d& rel, const Vector6d& stack_cmd, double scale) {
  const Vector3d fc = c * stack_cmd.head<3>();
  const Vector3d tc = c * stack_cmd.tail<3>();
  VectorXd x(6);
  x << rel.norm() / s.pos_scale, fc.x() / (s.cmd_force_scale * scale),
      fc.y() / (s.cmd_force_scale * scale), tc / (s.cmd_torque_scale * scale);
  return x;
}

VectorXd vec_products(const Matrix3d& p) {
  VectorXd v(9);
  for (int r = 0; r < 3; ++r)
    for (int cidx = 0; cidx < 3; ++cidx) v(3 * r + cidx) = p(r, cidx);
  return v;
}

Matrix3d unvec_products(const VectorXd& v) {
  Matrix3d p;
  for (int r = 0; r < 3; ++r)
    for (int cidx = 0; cidx < 3; ++cidx) p(r, cidx) = v(3 * r + cidx);
  return p;
}

}  // namespace

Matrix3d AllocationSurrogate::predict_products(const Vector3d& rel,
                                               const Vector6d& stack_cmd) const {
  const Matrix3d c = allocation_canonical_frame(rel, stack_cmd);
  const double scale = command_scale(*this, stack_cmd);
  const VectorXd y = mlp_forward(net, allocation_features(*this, c, rel, stack_cmd, scale));
  const Matrix3d p_canon = scale * unvec_products(y);
  return c.transpose() * p_canon * c;
}

std::vector<DipoleWave> AllocationSurrogate::predict(const Vector3d& rel,
                                                     const Vector6d& stack_cmd) const {
  const Matrix3d p = predict_products(rel, stack_cmd);
  // Balanced rank-2 factorization: the sine pair carries the leading dyad,
  // the cosine pair the second; the trailing singular value is truncated.
  Eigen::JacobiSVD<Matrix3d> svd(p, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  std::vector<DipoleWave> waves(2);
  waves[0].omega = waves[1].omega = omega;
  waves[1].s = std::sqrt(sv(0)) * svd.matrixU().col(0);
  waves[0].s = std::sqrt(sv(0)) * svd.matrixV().col(0);
  waves[1].c = std::sqrt(sv(1)) * svd.matrixU().col(1);
  waves[0].c = std::sqrt(sv(1)) * svd.matrixV().col(1);
  return waves;
}

AllocationSurrogate train_allocation_surrogate(const CoilSpec& coil,
                                               const AllocationSurrogateConfig& cfg,
                                               SurrogateMetrics* metrics) {
  AllocationSurrogate out;
  out.omega = cfg.omega;
  out.pos_scale = cfg.d_max;
  out.cmd_force_scale = cfg.force_scale;
  out.cmd_torque_scale = cfg.torque_scale;

  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<VectorXd> xs, ys;
  std::vector<Vector3d> rels;
  std::vector<Vector6d> cmds;
  int attempts = 0;
  while (static_cast<int>(xs.size()) < cfg.samples && attempts < 20 * cfg.samples) {
    ++attempts;
    SwarmState swarm;
    swarm.satellites.resize(2);
    const double d = cfg.d_min + (cfg.d_max - cfg.d_min) * uni(rng);
    swarm.satellites[1].position = d * random_direction(rng);
    const GeometryStack stack = stack_geometry(swarm, coil, GeometryModel::far);
    const MatrixXd completion = stack_completion(swarm);

    Vector6d cmd0;
    for (int i = 0; i < 3; ++i) cmd0(i) = cfg.force_scale * gauss(rng);
    for (int i = 0; i < 3; ++i) cmd0(3 + i) = cfg.torque_scale * gauss(rng);

    AllocationOptions aopts;
    aopts.omega = cfg.omega;
    aopts.seed = cfg.seed + attempts;
    aopts.multistarts = 4;
    aopts.run_dual = false;
    AllocationResult result = solve_opt_ac_stack(VectorXd(cmd0), stack, completion, aopts);
    if (!result.feasible) continue;

    // Gauge- and branch-invariant product target, canonical frame, unit
    // command scaling.
    const Matrix3d p_world = result.waves[1].s * result.waves[0].s.transpose() +
                             result.waves[1].c * result.waves[0].c.transpose();
    const Matrix3d c = allocation_canonical_frame(swarm.satellites[1].position, cmd0);
    const double scale = command_scale(out, cmd0);
    xs.push_back(allocation_features(out, c, swarm.satellites[1].position, cmd0, scale));
    ys.push_back(vec_products(c * p_world * c.transpose() / scale));
    rels.push_back(swarm.satellites[1].position);
    cmds.push_back(cmd0);
  }
  if (xs.size() < 16) throw std::runtime_error("train_allocation_surrogate: too few solves");

  MatrixXd x(xs.size(), 6), y(ys.size(), 9);
  for (size_t i = 0; i < xs.size(); ++i) {
    x.row(i) = xs[i].transpose();
    y.row(i) = ys[i].transpose();
  }
  TrainResult tr = train_mlp(x, y, cfg.train);
  out.net = tr.model;

  if (metrics) {
    metrics->loss_curve = tr.loss_curve;
    const int n_hold = std::max(1, static_cast<int>(cfg.train.holdout_fraction * x.rows()));
    std::vector<double> errs;
    for (int i = static_cast<int>(x.rows()) - n_hold; i < x.rows(); ++i) {
      SwarmState swarm;
      swarm.satellites.resize(2);
      swarm.satellites[1].position = rels[i];
      const GeometryStack stack = stack_geometry(swarm, coil, GeometryModel::far);
      const MatrixXd completion = stack_completion(swarm);
      const auto waves = out.predict(rels[i], cmds[i]);
      const auto achieved = averaged_wrench(waves, stack, completion);
      Vector6d cmd_full;
      cmd_full = cmds[i];
      errs.push_back((achieved[0] - cmd_full).norm() / std::max(cmd_full.norm(), 1e-30));
    }
    std::sort(errs.begin(), errs.end());
    metrics->median_rel_error = errs[errs.size() / 2];
    metrics->p95_rel_error = errs[static_cast<size_t>(0.95 * (errs.size() - 1))];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {
constexpr const char* kMlpMagic = "emff-mlp v1";
constexpr const char* kGeoMagic = "emff-geometry-surrogate v1";

void write_matrix(std::ostream& os, const MatrixXd& m) {
  os << m.rows() << " " << m.cols() << "\n";
  for (int r = 0; r < m.rows(); ++r) {
    for (int c = 0; c < m.cols(); ++c) os << (c ? " " : "") << std::hexfloat << m(r, c);
    os << "\n";
  }
  os << std::defaultfloat;
}

MatrixXd read_matrix(std::istream& is) {
  int rows, cols;
  is >> rows >> cols;
  MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      std::string tok;
      is >> tok;
      m(r, c) = std::strtod(tok.c_str(), nullptr);
    }
  return m;
}

void write_vector(std::ostream& os, const VectorXd& v) {
  os << v.size() << "\n";
  for (int i = 0; i < v.size(); ++i) os << (i ? " " : "") << std::hexfloat << v(i);
  os << "\n" << std::defaultfloat;
}

VectorXd read_vector(std::istream& is) {
  int n;
  is >> n;
  VectorXd v(n);
  for (int i = 0; i < n; ++i) {
    std::string tok;
    is >> tok;
    v(i) = std::strtod(tok.c_str(), nullptr);
  }
  return v;
}

void save_mlp_stream(const MlpModel& model, std::ostream& os) {
  os << kMlpMagic << "\n";
  os << "activation tanh\n";
  os << "layers " << model.layer_count() << "\n";
  for (int l = 0; l < model.layer_count(); ++l) {
    write_matrix(os, model.weights[l]);
    write_vector(os, model.biases[l]);
  }
  write_vector(os, model.in_offset);
  write_vector(os, model.in_scale);
  write_vector(os, model.out_offset);
  write_vector(os, model.out_scale);
}

MlpModel load_mlp_stream(std::istream& is) {
  std::string line;
  std::getline(is, line);
  if (line != kMlpMagic) throw std::runtime_error("load_mlp: bad header '" + line + "'");
  std::string word;
  is >> word >> word;  // activation tanh
  int layers;
  is >> word >> layers;
  MlpModel m;
  for (int l = 0; l < layers; ++l) {
    m.weights.push_back(read_matrix(is));
    m.biases.push_back(read_vector(is));
  }
  m.in_offset = read_vector(is);
  m.in_scale = read_vector(is);
  m.out_offset = read_vector(is);
  m.out_scale = read_vector(is);
  m.validate();
  return m;
}

}  // namespace

void save_mlp(const MlpModel& model, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("save_mlp: cannot open " + path);
  save_mlp_stream(model, os);
}

MlpModel load_mlp(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("load_mlp: cannot open " + path);
  return load_mlp_stream(is);
}

void save_geometry_surrogate(const GeometrySurrogate& g, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("save_geometry_surrogate: cannot open " + path);
  os << kGeoMagic << "\n";
  os << "gamma " << std::hexfloat << g.gamma << "\n";
  os << "radial_exponent " << g.radial_exponent << std::defaultfloat << "\n";
  os << "coil " << g.coil.turns << " " << std::hexfloat << g.coil.loop_radius << " "
     << g.coil.mu_r << " " << g.coil.demag_factor << std::defaultfloat << "\n";
  save_mlp_stream(g.net, os);
}

GeometrySurrogate load_geometry_surrogate(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("load_geometry_surrogate: cannot open " + path);
  std::string line;
  std::getline(is, line);
  if (line != kGeoMagic) throw std::runtime_error("load_geometry_surrogate: bad header");
  GeometrySurrogate g;
  std::string word, tok;
  is >> word >> tok;
  g.gamma = std::strtod(tok.c_str(), nullptr);
  is >> word >> tok;
  g.radial_exponent = std::strtod(tok.c_str(), nullptr);
  double turns, radius, mu_r, nd;
  is >> word >> turns >> tok;
  radius = std::strtod(tok.c_str(), nullptr);
  is >> tok;
  mu_r = std::strtod(tok.c_str(), nullptr);
  is >> tok;
  nd = std::strtod(tok.c_str(), nullptr);
  g.coil = CoilSpec::circular(turns, radius, mu_r, nd);
  is.ignore(std::numeric_limits<std::streamsize>::max(), '\n');
  g.net = load_mlp_stream(is);
  return g;
}

}  // namespace emff
