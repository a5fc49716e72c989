#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>

#include "errors.hpp"

namespace mfgirl {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Maximum absolute entry; 0 for empty input.
inline double max_abs(const Eigen::Ref<const Matrix>& a) {
  return a.size() == 0 ? 0.0 : a.cwiseAbs().maxCoeff();
}

/**
 * Solve A x = b by LU with partial pivoting.
 *
 * Throws SingularMatrix when a pivot falls below 1e-14 relative to the
 * largest entry of A. One step of iterative refinement is applied, which
 * is cheap at the sizes used here and tightens the residual.
 */
inline Vector solve_linear(const Matrix& A, const Vector& b) {
  if (A.rows() != A.cols() || A.rows() != b.size())
    throw BadParameter("solve_linear: dimension mismatch");
  if (A.rows() == 0) return Vector(0);
  const double scale = max_abs(A);
  Eigen::PartialPivLU<Matrix> lu(A);
  const Matrix& LU = lu.matrixLU();
  for (Eigen::Index i = 0; i < LU.rows(); ++i)
    if (!(std::abs(LU(i, i)) > 1e-14 * scale))
      throw SingularMatrix("solve_linear: no pivot above 1e-14 relative at row " +
                           std::to_string(i));
  Vector x = lu.solve(b);
  Vector r = b - A * x;
  x += lu.solve(r);
  return x;
}

/// Moore-Penrose pseudoinverse via SVD; singular values below rcond*smax are dropped.
inline Matrix pseudo_inverse(const Matrix& A, double rcond = 1e-12) {
  if (A.size() == 0) return Matrix(A.cols(), A.rows());
  Eigen::JacobiSVD<Matrix> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& s = svd.singularValues();
  const double cut = rcond * (s.size() ? s(0) : 0.0);
  Vector sinv = Vector::Zero(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) > cut && s(i) > 0) sinv(i) = 1.0 / s(i);
  return svd.matrixV() * sinv.asDiagonal() * svd.matrixU().transpose();
}

/// Numerical rank: number of singular values above rcond * smax.
inline int matrix_rank(const Matrix& A, double rcond = 1e-10) {
  if (A.size() == 0) return 0;
  Eigen::JacobiSVD<Matrix> svd(A);
  const Vector& s = svd.singularValues();
  if (s.size() == 0 || s(0) == 0.0) return 0;
  return static_cast<int>((s.array() > rcond * s(0)).count());
}

/// log(sum(exp(v))) with max shift.
inline double log_sum_exp(const Eigen::Ref<const Vector>& v) {
  if (v.size() == 0) throw EmptyInput("log_sum_exp: empty vector");
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

using VectorMap = std::function<Vector(const Vector&)>;

/// Central-difference Jacobian, step h_rel*(1+|z_i|) per coordinate.
inline Matrix jacobian_fd(const VectorMap& F, const Vector& z, double h_rel = 1e-6) {
  Matrix J;
  Vector zp = z, zm = z;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const double h = h_rel * (1.0 + std::abs(z(i)));
    zp(i) = z(i) + h;
    zm(i) = z(i) - h;
    Vector fp = F(zp), fm = F(zm);
    if (!fp.allFinite() || !fm.allFinite())
      throw NonFiniteEvaluation("jacobian_fd: non-finite value probing coordinate " +
                                std::to_string(i));
    if (i == 0) J.resize(fp.size(), z.size());
    // use the actually representable step
    J.col(i) = (fp - fm) / (zp(i) - zm(i));
    zp(i) = zm(i) = z(i);
  }
  return J;
}

}  // namespace mfgirl
