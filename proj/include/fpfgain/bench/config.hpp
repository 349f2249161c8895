#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fpfgain/density.hpp"
#include "fpfgain/fpf_sim.hpp"
#include "fpfgain/gain_solver.hpp"

namespace fpfgain::bench {

/// Density family that can be instantiated in any dimension of the sweep.
struct DensityConfig {
  enum class Kind { SymmetricBimodal, IsotropicGaussian, Gaussian, Mixture } kind = Kind::SymmetricBimodal;
  double mu = 1.0;
  double sigma2 = 0.2;
  nlohmann::json explicit_spec; // Gaussian / Mixture

  DensitySpec instantiate(std::size_t d) const;
};

struct ObservationConfig {
  enum class Kind { Coordinate, Linear, Bilinear } kind = Kind::Coordinate;
  std::size_t index = 0, i = 0, j = 1;
  std::vector<double> H; // Linear; a single value is broadcast as H e_1

  ObservationFn instantiate(std::size_t d) const;
};

struct FitConfig {
  /// Largest epsilon admitted to the fit; unset means "the decreasing run of
  /// the mean-error curve that ends at its minimum".
  std::optional<double> max_epsilon;
  std::optional<double> min_epsilon;
  std::size_t min_points = 3;
  /// Cells where some simulation hit max_iterations do not hold fixed-point
  /// errors and are left out unless this is set.
  bool include_nonconverged = false;
};

struct FpfConfig {
  Eigen::MatrixXd A; // drift matrix; zero matrix for a driftless signal
  std::vector<GainMode> modes{GainMode::Constant, GainMode::G2};
  double dt = 0.01;
  double horizon = 1.0;
  double epsilon = 0.1;
  std::size_t seeds = 50;
};

struct ExperimentConfig {
  DensityConfig density;
  ObservationConfig observation;
  std::vector<GainMethod> methods{GainMethod::G2};
  std::vector<double> epsilons;
  std::vector<std::size_t> dimensions{1};
  std::size_t particles = 200;
  std::size_t simulations = 100;
  std::uint64_t seed = 1;
  SolverConfig solver;
  FitConfig fit;
  FpfConfig fpf;
  std::size_t bias_replicates = 8;
  std::size_t threads = 1;
  std::filesystem::path output_dir = "out";

  void validate() const;
};

/// Geometric grid from lo to hi (inclusive) with `per_decade` points per decade.
std::vector<double> geometric_grid(double lo, double hi, std::size_t per_decade);

/// Parses the JSON experiment config. Throws ConfigError with the offending key.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const ExperimentConfig& cfg);

} // namespace fpfgain::bench
