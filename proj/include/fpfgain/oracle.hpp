#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "fpfgain/common.hpp"
#include "fpfgain/density.hpp"

namespace fpfgain {

enum class OracleProvenance { ScalarQuadrature, GaussianSpectral, KalmanClosedForm };

std::string_view to_string(OracleProvenance p);

/// Exact (or quadrature-accurate) gain function K = grad phi.
class OracleGain {
public:
  using Evaluator = std::function<PointMatrix(const PointMatrix&)>;

  OracleGain(Evaluator eval, OracleProvenance provenance)
      : eval_(std::move(eval)), provenance_(provenance) {}

  /// N x d matrix of exact gains at the given points.
  PointMatrix evaluate(const PointMatrix& points) const { return eval_(points); }
  OracleProvenance provenance() const { return provenance_; }

private:
  Evaluator eval_;
  OracleProvenance provenance_;
};

// ---------------------------------------------------------------------------
// Hermite basis

/// Probabilists' Hermite polynomial He_n(x) / sqrt(n!), orthonormal in L^2(N(0,1)).
double hermite(int n, double x);
/// d/dx of hermite(n, x), equal to sqrt(n) * hermite(n - 1, x).
double hermite_derivative(int n, double x);

/// Multi-index n = (n_1, ..., n_d) with total degree >= 1.
using HermiteIndex = std::vector<int>;

struct Eigenpair {
  double eigenvalue;
  std::function<double(std::span<const double>)> eigenfunction;
};

/// Eigenpair of -Delta_rho for Gaussian rho = N(mu, V D V^T):
/// lambda_n = sum_j n_j / sigma_j^2, e_n(x) = prod_j hermite(n_j, V_j . (x - mu) / sigma_j).
/// Axis j follows Gaussian::eigenvectors() ordering. Throws ConfigError for a
/// non-Gaussian spec or an invalid index.
Eigenpair gaussian_eigenpair(const DensitySpec& spec, const HermiteIndex& n);

// ---------------------------------------------------------------------------
// Spectral solution for Gaussian densities

/// phi = sum_n <e_n, h - hhat> / lambda_n e_n over all n with 1 <= |n| <= truncation.
class SpectralSolution {
public:
  struct Term {
    HermiteIndex index;
    double eigenvalue;
    double coefficient; // <e_n, h - hhat>
  };

  /// Inner products by tensor Gauss-Hermite quadrature in whitened
  /// coordinates, exact for polynomial h. Throws ConfigError when h is a
  /// polynomial of degree above `truncation`.
  static SpectralSolution solve(const DensitySpec& spec, const ObservationFn& h, int truncation = 8);

  double phi(std::span<const double> x) const;
  void gain(std::span<const double> x, std::span<double> out) const;
  PointMatrix gain(const PointMatrix& points) const;

  const std::vector<Term>& terms() const { return terms_; }
  double h_mean() const { return h_mean_; }
  int truncation() const { return truncation_; }
  /// || (h - hhat) - sum_n <e_n, h - hhat> e_n ||^2 in L^2(rho); zero for polynomial h.
  double truncation_residual() const { return residual_; }

private:
  SpectralSolution(const Gaussian& g) : gauss_(g) {}

  Gaussian gauss_;
  std::vector<Term> terms_;
  Vector inv_sigma_;
  double h_mean_ = 0.0;
  double residual_ = 0.0;
  int truncation_ = 0;
};

OracleGain spectral_exact_solution(const DensitySpec& spec, const ObservationFn& h, int truncation = 8);

// ---------------------------------------------------------------------------
// Scalar (effectively one-dimensional) solution

/// K(x) = -(1/rho(x)) int_{-inf}^x rho(z) (h(z) - hhat) dz on the marginal of
/// the active coordinate. The spec must factor as rho_1(x_a) * rho_rest(x_rest)
/// with h depending on x_a only; K is then zero off axis a.
class ScalarGainOracle {
public:
  static ScalarGainOracle make(const DensitySpec& spec, const ObservationFn& h);

  /// Gain along the active axis at coordinate value x. Throws NumericalError
  /// if the quadrature misses its tolerance.
  double gain(double x) const;
  double h_mean() const { return h_mean_; }
  std::size_t axis() const { return axis_; }
  double marginal_pdf(double x) const;
  double h_on_axis(double x) const;

  PointMatrix evaluate(const PointMatrix& points) const;

private:
  ScalarGainOracle() = default;

  struct Component {
    double weight, mean, variance;
  };
  std::vector<Component> marginal_;
  std::function<double(std::span<const double>)> h_;
  std::size_t dim_ = 1;
  std::size_t axis_ = 0;
  double lower_ = 0.0, upper_ = 0.0, median_ = 0.0;
  double h_mean_ = 0.0;
};

double scalar_exact_gain(const DensitySpec& spec, const ObservationFn& h, double x);

/// The natural oracle for (spec, h): Kalman closed form for Gaussian rho and
/// linear h, spectral for other Gaussian cases, scalar quadrature for
/// effectively one-dimensional mixtures. Throws ConfigError otherwise.
OracleGain make_oracle(const DensitySpec& spec, const ObservationFn& h);

} // namespace fpfgain
