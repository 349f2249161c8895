#pragma once

#include <cstddef>
#include <functional>
#include <vector>

namespace fpfgain::quadrature {

struct RombergResult {
  double value = 0.0;
  double abs_value = 0.0; // integral of |f|, the scale of the tolerance
  double achieved_error = 0.0;
  std::size_t levels = 0;
  bool converged = false;
};

/// Trapezoid rule on [a, b] with interval doubling and Richardson
/// extrapolation. Stops when successive diagonal estimates differ by less
/// than rel_tol * integral(|f|) (or 1e-300 absolutely).
RombergResult romberg(const std::function<double(double)>& f, double a, double b,
                      double rel_tol = 1e-9, std::size_t max_levels = 22);

/// Gauss-Hermite rule for the standard normal weight exp(-x^2/2)/sqrt(2 pi):
/// exact for polynomials of degree <= 2 n - 1; weights sum to 1.
struct GaussHermite {
  std::vector<double> nodes;
  std::vector<double> weights;
};
GaussHermite gauss_hermite(std::size_t n);

} // namespace fpfgain::quadrature
