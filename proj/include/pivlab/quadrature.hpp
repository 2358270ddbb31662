#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Eigenvalues>

namespace pivlab {

struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

namespace detail {

// Golub-Welsch: nodes are eigenvalues of the Jacobi matrix, weights are the
// squared first eigenvector components times the total mass.
inline QuadratureRule golub_welsch(const Eigen::VectorXd& diag, const Eigen::VectorXd& off,
                                   double mass) {
  const auto n = diag.size();
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) jacobi(i, i) = diag(i);
  for (Eigen::Index i = 0; i + 1 < n; ++i) {
    jacobi(i, i + 1) = off(i);
    jacobi(i + 1, i) = off(i);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(jacobi);
  QuadratureRule rule;
  for (Eigen::Index i = 0; i < n; ++i) {
    rule.nodes.push_back(solver.eigenvalues()(i));
    const double v = solver.eigenvectors()(0, i);
    rule.weights.push_back(mass * v * v);
  }
  return rule;
}

}  // namespace detail

// Expectation rule for a standard normal variable.
inline QuadratureRule gauss_hermite_normal(int n) {
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd off(std::max(0, n - 1));
  for (int k = 1; k < n; ++k) off(k - 1) = std::sqrt(static_cast<double>(k));
  return detail::golub_welsch(diag, off, 1.0);
}

// Gauss-Legendre rule on [a, b] (weights sum to b - a).
inline QuadratureRule gauss_legendre(int n, double a, double b) {
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd off(std::max(0, n - 1));
  for (int k = 1; k < n; ++k) {
    const double kk = static_cast<double>(k);
    off(k - 1) = kk / std::sqrt(4.0 * kk * kk - 1.0);
  }
  auto rule = detail::golub_welsch(diag, off, 2.0);
  const double half = 0.5 * (b - a);
  const double mid = 0.5 * (a + b);
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
    rule.nodes[i] = mid + half * rule.nodes[i];
    rule.weights[i] *= half;
  }
  return rule;
}

}  // namespace pivlab
