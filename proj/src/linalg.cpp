#include "emff/linalg.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <Eigen/SVD>

namespace emff {

Matrix3d skew(const Vector3d& v) {
  Matrix3d s;
  s << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return s;
}

MatrixXd pinv(const MatrixXd& a, double rel_cutoff) {
  Eigen::JacobiSVD<MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const VectorXd& sv = svd.singularValues();
  if (sv.size() == 0) return MatrixXd::Zero(a.cols(), a.rows());
  const double cutoff = rel_cutoff * sv(0);
  VectorXd inv = VectorXd::Zero(sv.size());
  for (int i = 0; i < sv.size(); ++i)
    if (sv(i) > cutoff) inv(i) = 1.0 / sv(i);
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

MatrixXd null_space(const MatrixXd& a, double rel_cutoff) {
  Eigen::JacobiSVD<MatrixXd> svd(a, Eigen::ComputeFullV);
  const VectorXd& sv = svd.singularValues();
  const double cutoff = sv.size() > 0 ? rel_cutoff * sv(0) : 0.0;
  int rank = 0;
  for (int i = 0; i < sv.size(); ++i)
    if (sv(i) > cutoff) ++rank;
  return svd.matrixV().rightCols(a.cols() - rank);
}

int numeric_rank(const MatrixXd& a, double rel_cutoff) {
  Eigen::JacobiSVD<MatrixXd> svd(a);
  const VectorXd& sv = svd.singularValues();
  if (sv.size() == 0) return 0;
  const double cutoff = rel_cutoff * sv(0);
  int rank = 0;
  for (int i = 0; i < sv.size(); ++i)
    if (sv(i) > cutoff) ++rank;
  return rank;
}

MatrixXd kron(const MatrixXd& a, const MatrixXd& b) {
  MatrixXd out(a.rows() * b.rows(), a.cols() * b.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

VectorXd kron_vec(const VectorXd& a, const VectorXd& b) {
  VectorXd out(a.size() * b.size());
  for (int i = 0; i < a.size(); ++i) out.segment(i * b.size(), b.size()) = a(i) * b;
  return out;
}

MatrixXd commutation_matrix(int p, int q) {
  // K (a (x) b) = b (x) a; entry layout follows from
  // (a (x) b)[q*i + j] = a_i b_j and (b (x) a)[p*j + i] = a_i b_j.
  MatrixXd k = MatrixXd::Zero(p * q, p * q);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < q; ++j) k(p * j + i, q * i + j) = 1.0;
  return k;
}

double max_eig_sym(const MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (a + a.transpose()));
  return es.eigenvalues().maxCoeff();
}

double min_eig_sym(const MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (a + a.transpose()));
  return es.eigenvalues().minCoeff();
}

MatrixXd orthonormalize(const MatrixXd& a) {
  Eigen::HouseholderQR<MatrixXd> qr(a);
  MatrixXd q = qr.householderQ() * MatrixXd::Identity(a.rows(), a.cols());
  MatrixXd r = qr.matrixQR().topLeftCorner(a.cols(), a.cols());
  for (int i = 0; i < a.cols(); ++i)
    if (r(i, i) < 0.0) q.col(i) = -q.col(i);
  return q;
}

}  // namespace emff
