#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "fpfgain/common.hpp"
#include "fpfgain/density.hpp"
#include "fpfgain/gain_solver.hpp"
#include "fpfgain/rng.hpp"

namespace fpfgain {

/// dX = A X dt + dB, dZ = H . X dt + dW: the linear model behind a scenario,
/// when there is one (enables the Kalman-Bucy oracle).
struct LinearModel {
  Eigen::MatrixXd A;
  Vector H;
};

struct FilterScenario {
  using Drift = std::function<void(std::span<const double>, std::span<double>)>;

  Drift drift;
  ObservationFn observation;
  DensitySpec prior;
  double dt = 0.01;
  double horizon = 1.0;
  std::size_t particles = 200;
  std::uint64_t seed = 0;
  std::optional<LinearModel> linear;

  static FilterScenario linear_gaussian(Eigen::MatrixXd A, Vector H, Gaussian prior, double dt,
                                        double horizon, std::size_t particles, std::uint64_t seed);

  std::size_t dimension() const { return prior.dimension(); }
  std::size_t steps() const;
  void validate() const;
};

/// Sampled signal and observation increments. x has steps+1 rows (x[0] is
/// the initial state); dz has steps entries, dz[k] covering [t_k, t_k + dt).
struct Trajectory {
  std::vector<double> t;
  PointMatrix x;
  std::vector<double> dz;
  std::vector<double> z; // cumulative observation, z[0] = 0
};

/// Euler-Maruyama paths of the signal and observation SDEs.
Trajectory simulate_truth(const FilterScenario& scenario);

enum class GainMode { G1, G2, Constant, Oracle };
std::string_view to_string(GainMode m);
GainMode parse_gain_mode(std::string_view s);

struct FilterState {
  double t = 0.0;
  PointMatrix particles;
  double h_hat = 0.0;
  Vector phi; // previous fixed-point solution, reused as the warm start
};

FilterState initial_state(const FilterScenario& scenario);

struct StepOptions {
  GainMode mode = GainMode::G2;
  double epsilon = 0.1;
  SolverConfig solver;
  /// Gain supplier for GainMode::Oracle: (time, particles) -> N x d gains.
  std::function<PointMatrix(double, const PointMatrix&)> oracle;
};

/// One Euler-Maruyama step of the feedback particle filter:
///   X^i += a(X^i) dt + sqrt(dt) xi^i + K(X^i) (dZ - (h(X^i) + hhat) dt / 2)
/// with K recomputed from the current ensemble. Gain-solver failures are
/// rethrown with the step index in the message.
FilterState step_fpf(const FilterScenario& scenario, const FilterState& state, double dz,
                     const StepOptions& options, Rng& rng, std::size_t step_index = 0);

/// Kalman-Bucy mean/covariance integrated with the same Euler step.
struct KalmanBucyPath {
  std::vector<Vector> mean;
  std::vector<Eigen::MatrixXd> covariance;
};
KalmanBucyPath kalman_bucy(const FilterScenario& scenario, const Trajectory& truth);

struct FilterRun {
  GainMode mode;
  std::vector<Vector> particle_mean; // steps+1 entries
  /// Time average over steps 1..K of |mean_t - X_t|^2.
  double mean_square_error = 0.0;
};

/// Runs the filter against `truth` with a fresh particle ensemble drawn from
/// the prior. Oracle mode needs scenario.linear (uses the Kalman-Bucy gain P H).
FilterRun run_filter(const FilterScenario& scenario, const Trajectory& truth, StepOptions options);

double mean_square_error(const std::vector<Vector>& estimate, const PointMatrix& truth);

} // namespace fpfgain
