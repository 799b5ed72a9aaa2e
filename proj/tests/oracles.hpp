#pragma once

// Independent reference implementations used only by tests. Deliberately
// naive: the point is that they share no code path with the library.

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <stdexcept>

namespace oracle {

// Gauss-Jordan inversion with partial pivoting. O(n^3), no Cholesky anywhere.
inline Eigen::MatrixXd gauss_jordan_inverse(Eigen::MatrixXd a) {
  const Eigen::Index n = a.rows();
  if (a.cols() != n) throw std::invalid_argument("gauss_jordan_inverse: not square");
  Eigen::MatrixXd inv = Eigen::MatrixXd::Identity(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    Eigen::Index pivot = j;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      if (std::abs(a(i, j)) > std::abs(a(pivot, j))) pivot = i;
    }
    if (a(pivot, j) == 0.0) throw std::runtime_error("gauss_jordan_inverse: singular");
    if (pivot != j) {
      a.row(j).swap(a.row(pivot));
      inv.row(j).swap(inv.row(pivot));
    }
    const double d = a(j, j);
    a.row(j) /= d;
    inv.row(j) /= d;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (i == j) continue;
      const double f = a(i, j);
      if (f == 0.0) continue;
      a.row(i) -= f * a.row(j);
      inv.row(i) -= f * inv.row(j);
    }
  }
  return inv;
}

// log det via the same elimination (LU without the inverse), sign-checked.
inline double logdet_lu(Eigen::MatrixXd a) {
  const Eigen::Index n = a.rows();
  double logdet = 0.0;
  int sign = 1;
  for (Eigen::Index j = 0; j < n; ++j) {
    Eigen::Index pivot = j;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      if (std::abs(a(i, j)) > std::abs(a(pivot, j))) pivot = i;
    }
    if (a(pivot, j) == 0.0) throw std::runtime_error("logdet_lu: singular");
    if (pivot != j) {
      a.row(j).swap(a.row(pivot));
      sign = -sign;
    }
    if (a(j, j) < 0.0) sign = -sign;
    logdet += std::log(std::abs(a(j, j)));
    for (Eigen::Index i = j + 1; i < n; ++i) {
      a.row(i) -= (a(i, j) / a(j, j)) * a.row(j);
    }
  }
  if (sign < 0) throw std::runtime_error("logdet_lu: negative determinant");
  return logdet;
}

inline Eigen::MatrixXd randn(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols,
                             double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
  }
  return m;
}

// Random SPD matrix G G^T + I.
inline Eigen::MatrixXd random_spd(std::mt19937_64& rng, Eigen::Index n) {
  Eigen::MatrixXd g = randn(rng, n, n);
  return g * g.transpose() + Eigen::MatrixXd::Identity(n, n);
}

}  // namespace oracle
