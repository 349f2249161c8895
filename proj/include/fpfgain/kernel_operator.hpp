#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fpfgain/common.hpp"

namespace fpfgain {

// The three assembly stages are exposed individually so each intermediate
// matrix can be inspected; build() chains them in a single buffer.
namespace kernel {

/// g_ij = exp(-|X^i - X^j|^2 / 4 eps). Throws ConfigError for eps <= 0.
DenseMatrix gaussian_affinity(const PointMatrix& points, double epsilon);

/// sqrt(sum_l g_il) for every row.
Vector affinity_degree(const DenseMatrix& g);

/// In place: g_ij -> g_ij / (degree_i * degree_j). The result is symmetric.
void symmetric_normalize(DenseMatrix& g, const Vector& degree);

/// In place: k_ij -> k_ij / sum_l k_il. Returns the row sums of k.
/// Throws NumericalError if a row sum is not strictly positive.
Vector row_normalize(DenseMatrix& k);

} // namespace kernel

/// Row-stochastic N x N matrix T approximating the semigroup exp(eps * Delta_rho)
/// over a particle ensemble. Immutable once built.
class MarkovOperator {
public:
  static MarkovOperator build(const PointMatrix& points, double epsilon);

  double epsilon() const { return epsilon_; }
  std::size_t size() const { return static_cast<std::size_t>(T_.rows()); }
  std::size_t dimension() const { return static_cast<std::size_t>(points_.cols()); }

  const DenseMatrix& matrix() const { return T_; }
  const PointMatrix& points() const { return points_; }
  /// sqrt(sum_l g_il): the symmetric-normalization denominators.
  const Vector& degree() const { return degree_; }
  /// Stationary distribution pi of T (pi T = pi), proportional to the row sums of k.
  Vector stationary() const;

  /// T f
  Vector apply(std::span<const double> f) const;
  Vector apply(const Vector& f) const { return apply(std::span<const double>(f.data(), static_cast<std::size_t>(f.size()))); }

  /// Row i is (1/2eps) [sum_j T_ij X^j f_j - (sum_j T_ij X^j)(sum_j T_ij f_j)],
  /// the local covariance of position and f under row i's weights.
  PointMatrix apply_gradient(std::span<const double> f) const;
  PointMatrix apply_gradient(const Vector& f) const {
    return apply_gradient(std::span<const double>(f.data(), static_cast<std::size_t>(f.size())));
  }

private:
  MarkovOperator() = default;

  double epsilon_ = 0.0;
  DenseMatrix T_;
  PointMatrix points_;
  Vector degree_;
  Vector row_mass_;
  // Positions relative to the ensemble mean, stored coordinate-major (d blocks of N).
  std::vector<double> centered_coords_;
};

} // namespace fpfgain
