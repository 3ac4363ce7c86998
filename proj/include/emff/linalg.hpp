#pragma once

#include <Eigen/Dense>

// Small dense linear-algebra helpers shared across the library.
// All pseudoinverse / rank decisions go through one SVD routine with a
// fixed singular-value cutoff so results are deterministic.

namespace emff {

using Eigen::Matrix3d;
using Eigen::MatrixXd;
using Eigen::Vector3d;
using Eigen::VectorXd;
using Vector6d = Eigen::Matrix<double, 6, 1>;
using Matrix6d = Eigen::Matrix<double, 6, 6>;

inline constexpr double kMu0 = 4.0e-7 * 3.14159265358979323846;  // T*m/A
inline constexpr double kPi = 3.14159265358979323846;

// Relative singular-value cutoff used for every pseudoinverse and
// null-space computation in the library.
inline constexpr double kSvdCutoff = 1e-10;

Matrix3d skew(const Vector3d& v);

// Moore-Penrose pseudoinverse, singular values below
// kSvdCutoff * sigma_max are treated as zero.
MatrixXd pinv(const MatrixXd& a, double rel_cutoff = kSvdCutoff);

// Orthonormal basis of null(a) as columns. Empty (n x 0) if a has full
// column rank.
MatrixXd null_space(const MatrixXd& a, double rel_cutoff = kSvdCutoff);

int numeric_rank(const MatrixXd& a, double rel_cutoff = kSvdCutoff);

// Kronecker product a (x) b.
MatrixXd kron(const MatrixXd& a, const MatrixXd& b);
VectorXd kron_vec(const VectorXd& a, const VectorXd& b);

// Commutation matrix K such that K * (a (x) b) = b (x) a for
// a in R^p, b in R^q. K is pq x pq.
MatrixXd commutation_matrix(int p, int q);

// Largest eigenvalue of a symmetric matrix (symmetrized internally).
double max_eig_sym(const MatrixXd& a);
double min_eig_sym(const MatrixXd& a);

// Deterministic orthonormalization of the columns of a (thin QR with the
// sign of each diagonal of R fixed positive), used where a smoothly varying
// basis is needed.
MatrixXd orthonormalize(const MatrixXd& a);

}  // namespace emff
