#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <variant>
#include <vector>

#include "fpfgain/common.hpp"

namespace fpfgain {

/// A multivariate normal N(mean, covariance). Construction validates the
/// covariance (symmetric, strictly positive eigenvalues) and caches its
/// Cholesky factor and eigendecomposition.
class Gaussian {
public:
  Gaussian(Vector mean, Eigen::MatrixXd covariance);

  /// N(mean, sigma2 * I)
  static Gaussian isotropic(Vector mean, double sigma2);

  std::size_t dimension() const { return static_cast<std::size_t>(mean_.size()); }
  const Vector& mean() const { return mean_; }
  const Eigen::MatrixXd& covariance() const { return covariance_; }
  const Eigen::MatrixXd& cholesky_factor() const { return chol_; }
  /// Columns are the orthonormal eigenvectors V_j of the covariance, ordered
  /// so that column j is the one most aligned with coordinate axis j (sign
  /// chosen to make that entry positive). A diagonal covariance gives V = I.
  const Eigen::MatrixXd& eigenvectors() const { return eigvecs_; }
  /// Eigenvalues sigma_j^2 matching the columns of eigenvectors().
  const Vector& eigenvalues() const { return eigvals_; }
  double max_variance() const { return eigvals_.maxCoeff(); }

  double pdf(std::span<const double> x) const;

  /// Writes one draw into `out` using standard normals from `rng`.
  template <class Gen> void draw(Gen& rng, std::span<double> out) const;

private:
  Vector mean_;
  Eigen::MatrixXd covariance_;
  Eigen::MatrixXd chol_;
  Eigen::MatrixXd eigvecs_;
  Vector eigvals_;
  double log_norm_ = 0.0;
};

struct GaussianMixture {
  std::vector<double> weights;
  std::vector<Gaussian> components;
};

/// Declarative description of the particle density rho.
class DensitySpec {
public:
  explicit DensitySpec(Gaussian g);
  DensitySpec(std::vector<double> weights, std::vector<Gaussian> components);

  /// 1/2 N(-mu e1, sigma2 I) + 1/2 N(+mu e1, sigma2 I) in R^d.
  static DensitySpec symmetric_bimodal(std::size_t d, double mu, double sigma2);

  std::size_t dimension() const { return dim_; }
  bool is_gaussian() const { return std::holds_alternative<Gaussian>(variant_); }
  const Gaussian& gaussian() const;
  /// Components and weights; a single Gaussian is reported as a one-component mixture.
  std::vector<std::pair<double, const Gaussian*>> components() const;

  double pdf(std::span<const double> x) const;

  /// n i.i.d. draws. Bit-identical for identical (spec, n, seed).
  PointMatrix sample(std::size_t n, std::uint64_t seed) const;

private:
  std::variant<Gaussian, GaussianMixture> variant_;
  std::size_t dim_ = 0;
};

/// Scalar observation function h : R^d -> R.
class ObservationFn {
public:
  using ValueFn = std::function<double(std::span<const double>)>;
  using GradientFn = std::function<void(std::span<const double>, std::span<double>)>;

  static ObservationFn linear(Vector H);
  static ObservationFn coordinate(std::size_t index);
  static ObservationFn bilinear(std::size_t i, std::size_t j);
  static ObservationFn custom(ValueFn value, GradientFn gradient = {});

  double value(std::span<const double> x) const;
  bool has_gradient() const;
  void gradient(std::span<const double> x, std::span<double> out) const;

  /// Degree for the polynomial variants; nullopt for custom functions.
  std::optional<int> polynomial_degree() const;
  /// Coordinate index when h depends on exactly one coordinate.
  std::optional<std::size_t> single_axis() const;
  /// Throws ConfigError when h cannot be evaluated on R^d.
  void check_dimension(std::size_t d) const;

private:
  struct Linear { Vector H; };
  struct Coordinate { std::size_t index; };
  struct Bilinear { std::size_t i, j; };
  struct Custom { ValueFn value; GradientFn gradient; };
  using Variant = std::variant<Linear, Coordinate, Bilinear, Custom>;

  explicit ObservationFn(Variant v) : v_(std::move(v)) {}
  Variant v_;
};

/// Largest relative discrepancy between the supplied gradient and central
/// finite differences over `probes` random points drawn from N(0, I).
double gradient_check(const ObservationFn& h, std::size_t d, std::uint64_t seed,
                      std::size_t probes = 16);

/// h evaluated row by row. Throws NumericalError on non-finite output.
Vector evaluate_h(const ObservationFn& h, const PointMatrix& points);

/// The particles together with h evaluated at each of them.
struct ParticleEnsemble {
  PointMatrix points;
  Vector h_values;
  std::uint64_t seed = 0;

  ParticleEnsemble(PointMatrix pts, Vector h, std::uint64_t s);

  std::size_t size() const { return static_cast<std::size_t>(points.rows()); }
  std::size_t dimension() const { return static_cast<std::size_t>(points.cols()); }
  double h_mean() const { return h_values.mean(); }
};

ParticleEnsemble make_ensemble(const DensitySpec& spec, const ObservationFn& h, std::size_t n,
                               std::uint64_t seed);

template <class Gen> void Gaussian::draw(Gen& rng, std::span<double> out) const {
  std::normal_distribution<double> normal;
  const auto d = static_cast<Eigen::Index>(dimension());
  Vector z(d);
  for (Eigen::Index k = 0; k < d; ++k) z[k] = normal(rng);
  Vector x = mean_ + chol_.template triangularView<Eigen::Lower>() * z;
  for (Eigen::Index k = 0; k < d; ++k) out[static_cast<std::size_t>(k)] = x[k];
}

} // namespace fpfgain
