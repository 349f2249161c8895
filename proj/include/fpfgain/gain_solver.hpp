#pragma once

#include <cstddef>
#include <optional>
#include <string_view>
#include <vector>

#include "fpfgain/common.hpp"
#include "fpfgain/density.hpp"
#include "fpfgain/kernel_operator.hpp"

namespace fpfgain {

enum class GainMethod { G1, G2, Constant };

std::string_view to_string(GainMethod m);
/// Parses "G1", "G2" or "constant" (case-insensitive). Throws ConfigError.
GainMethod parse_gain_method(std::string_view s);

struct SolverConfig {
  std::size_t max_iterations = 10000;
  /// Bound on max|Phi_t - Phi_{t-1}| / max(1, max|Phi_t|).
  double residual_tol = 1e-10;
  std::optional<Vector> warm_start;

  void validate() const;
};

struct SolveDiagnostics {
  std::size_t iterations = 0;
  double final_residual = 0.0;
  bool converged = false;
  /// c in Phi = T Phi + eps (h - hhat) - c 1, the constant removed by centering.
  double constant_offset = 0.0;
  std::vector<double> residual_history;
};

struct FixedPointSolution {
  Vector phi;
  SolveDiagnostics diagnostics;
};

/// Successive approximation Phi_t = T Phi_{t-1} + eps (h - hhat), followed by
/// re-centering Phi_t to mean zero. Non-convergence within max_iterations is
/// reported through diagnostics.converged; NaN iterates throw NumericalError.
///
/// The returned Phi is the last iterate whose residual was measured: its
/// fixed-point residual modulo constants is diagnostics.final_residual.
FixedPointSolution solve_fixed_point(const MarkovOperator& op, const Vector& h_values,
                                     const SolverConfig& cfg = {});

/// (G1): grad T phi + eps grad h. Throws ConfigError if h has no gradient.
PointMatrix gain_g1(const MarkovOperator& op, const Vector& phi, const ObservationFn& h);

/// (G2): grad T (phi + eps (h - hhat)), evaluated in covariance form.
PointMatrix gain_g2(const MarkovOperator& op, const Vector& phi, const Vector& h_values);

/// (G2) evaluated literally as
///   K(X^i) = 1/(2 eps) sum_j T_ij (Phi_j + eps (H_j - hhat)) (X^j - sum_k T_ik X^k).
/// Scalar O(N^2 d); used to cross-check gain_g2.
PointMatrix gain_g2_summation(const MarkovOperator& op, const Vector& phi, const Vector& h_values);

/// (1/N) sum_i (h_i - hhat) X^i
Vector gain_constant(const PointMatrix& points, const Vector& h_values);
inline Vector gain_constant(const ParticleEnsemble& e) { return gain_constant(e.points, e.h_values); }

struct GainEstimate {
  Vector phi;
  PointMatrix gain;
  GainMethod method = GainMethod::G2;
  std::size_t iterations_used = 0;
  double final_residual = 0.0;
  bool converged = true;
  double epsilon = 0.0;
};

/// Builds T, solves for Phi and evaluates the requested gain. `h` is only
/// consulted for G1. For the constant method Phi is the linear potential
/// K . (x - xbar) and no operator is built.
GainEstimate estimate_gain(const ParticleEnsemble& ensemble, double epsilon, GainMethod method,
                           const ObservationFn* h = nullptr, const SolverConfig& cfg = {});

/// Same as estimate_gain but reuses an operator that was already built for
/// `ensemble`; returns both kernel gains from one fixed-point solve.
struct KernelGains {
  FixedPointSolution solution;
  PointMatrix g1; // empty when h has no gradient
  PointMatrix g2;
};
KernelGains kernel_gains(const MarkovOperator& op, const ParticleEnsemble& ensemble,
                         const ObservationFn* h, const SolverConfig& cfg = {});

} // namespace fpfgain
