#include "fpfgain/quadrature.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>

#include "fpfgain/common.hpp"

namespace fpfgain::quadrature {

RombergResult romberg(const std::function<double(double)>& f, double a, double b, double rel_tol,
                      std::size_t max_levels) {
  RombergResult r;
  if (a == b) {
    r.converged = true;
    return r;
  }
  std::vector<double> prev, cur;
  double h = b - a;
  const double fa = f(a), fb = f(b);
  double trap = 0.5 * h * (fa + fb);
  double abs_trap = 0.5 * std::abs(h) * (std::abs(fa) + std::abs(fb));
  prev.push_back(trap);
  std::size_t intervals = 1;
  for (std::size_t level = 1; level <= max_levels; ++level) {
    h *= 0.5;
    double mid = 0.0, abs_mid = 0.0;
    for (std::size_t k = 0; k < intervals; ++k) {
      const double v = f(a + (2.0 * static_cast<double>(k) + 1.0) * h);
      mid += v;
      abs_mid += std::abs(v);
    }
    intervals *= 2;
    trap = 0.5 * trap + h * mid;
    abs_trap = 0.5 * abs_trap + std::abs(h) * abs_mid;
    cur.assign(level + 1, 0.0);
    cur[0] = trap;
    double factor = 1.0;
    for (std::size_t m = 1; m <= level; ++m) {
      factor *= 4.0;
      cur[m] = cur[m - 1] + (cur[m - 1] - prev[m - 1]) / (factor - 1.0);
    }
    const double err = std::abs(cur[level] - prev[level - 1]);
    r.value = cur[level];
    r.abs_value = abs_trap;
    r.achieved_error = err;
    r.levels = level;
    // Require a few levels so that a coincidentally flat early estimate does not stop refinement.
    if (level >= 5 && err <= std::max(rel_tol * abs_trap, 1e-300)) {
      r.converged = true;
      return r;
    }
    prev.swap(cur);
  }
  return r;
}

GaussHermite gauss_hermite(std::size_t n) {
  if (n < 1) throw ConfigError("gauss_hermite: n must be positive");
  // Golub-Welsch on the Jacobi matrix of the probabilists' Hermite recurrence.
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t k = 1; k < n; ++k) {
    const double off = std::sqrt(static_cast<double>(k));
    J(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k - 1)) = off;
    J(static_cast<Eigen::Index>(k - 1), static_cast<Eigen::Index>(k)) = off;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(J);
  GaussHermite rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    rule.nodes[k] = eig.eigenvalues()[static_cast<Eigen::Index>(k)];
    const double v0 = eig.eigenvectors()(0, static_cast<Eigen::Index>(k));
    rule.weights[k] = v0 * v0;
  }
  return rule;
}

} // namespace fpfgain::quadrature
