#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fpfgain/bench/config.hpp"
#include "fpfgain/gain_solver.hpp"

namespace fpfgain::bench {

/// One (d, eps, simulation, method) measurement.
struct ErrorRecord {
  std::size_t d = 1;
  double epsilon = 0.0;
  std::size_t N = 0;
  std::uint64_t seed = 0;
  GainMethod method = GainMethod::G2;
  double error = 0.0;
  bool converged = true;
  std::size_t iterations = 0;
  double wall_time = 0.0; // seconds; not part of the reproducible CSV
};

/// Aggregate over the M simulations of one (d, eps, method) cell.
struct CellSummary {
  std::size_t d = 1;
  double epsilon = 0.0;
  GainMethod method = GainMethod::G2;
  std::size_t N = 0;
  std::size_t M = 0;
  double mean_error = 0.0;
  double std_error = 0.0;
  std::size_t nonconverged = 0;
};

struct ExponentFit {
  std::size_t d = 1;
  GainMethod method = GainMethod::G2;
  double alpha = 0.0;
  double intercept = 0.0;
  double eps_min = 0.0, eps_max = 0.0;
  std::size_t points = 0;
  double residual = 0.0; // RMS of the log-log fit residuals
};

/// sqrt((1/N) sum_i |K_est(X^i) - K(X^i)|^2)
double rms_error(const PointMatrix& estimate, const PointMatrix& exact);

std::vector<CellSummary> summarize(const std::vector<ErrorRecord>& records);

/// Least-squares slope of log(mean error) against log(1/eps) for dimension d.
/// Without an explicit window, the fit runs from the smallest eps up to the
/// minimum of the mean-error curve. Throws ConfigError with fewer than
/// fit.min_points usable cells.
ExponentFit fit_exponent(const std::vector<CellSummary>& cells, std::size_t d, GainMethod method,
                         const FitConfig& fit = {});
ExponentFit fit_exponent(const std::vector<ErrorRecord>& records, std::size_t d, GainMethod method,
                         const FitConfig& fit = {});

// ---------------------------------------------------------------------------

struct GainCurve {
  double epsilon = 0.0;
  std::vector<double> x;          // sorted particle coordinate along the active axis
  std::vector<double> exact;      // oracle gain
  std::vector<double> constant;   // constant gain
  std::vector<GainMethod> methods;
  std::vector<std::vector<double>> kernel; // one column per method
  std::vector<double> rms_to_constant;     // per method
  std::vector<double> rms_to_exact;        // per method
  bool converged = true;
};

/// Gain curves for one ensemble (d = config.dimensions[0], N, seed) at every
/// configured epsilon. Writes gain_curve_eps_<eps>.csv files when out_dir is set.
std::vector<GainCurve> run_gain_curve(const ExperimentConfig& cfg,
                                      const std::optional<std::filesystem::path>& out_dir = std::nullopt);

struct SweepResult {
  std::vector<ErrorRecord> records;
  std::vector<CellSummary> cells;
  std::vector<ExponentFit> fits;
  std::vector<std::string> warnings;
};

/// M simulations per (d, eps) cell scored against the oracle. The m-th
/// ensemble for dimension d is shared across eps (common random numbers).
SweepResult run_error_sweep(const ExperimentConfig& cfg,
                            const std::optional<std::filesystem::path>& out_dir = std::nullopt);

// ---------------------------------------------------------------------------

/// delta_eps = eps (s2 + 4 eps) / (s2^2 + 3 eps s2 + 4 eps^2) for N(0, s2 I).
double continuum_delta(double epsilon, double sigma2);
/// K - K_eps for (G1) in the linear Gaussian continuum: eps (s2 - 4 eps) / (s2 + 4 eps) |H|.
double continuum_bias_g1(double epsilon, double sigma2, double h_norm);
/// K - K_eps for (G2): eps s2^3 / ((s2 + 4 eps)(s2^2 + 3 eps s2 + 4 eps^2)) |H|.
double continuum_bias_g2(double epsilon, double sigma2, double h_norm);

struct BiasPoint {
  double epsilon = 0.0;
  double bias_g1 = 0.0, bias_g2 = 0.0;       // signed, K - mean K_eps along H/|H|
  double se_g1 = 0.0, se_g2 = 0.0;           // Monte Carlo standard errors
  double closed_g1 = 0.0, closed_g2 = 0.0;
  bool converged = true;
};

/// Empirical vs closed-form bias on N(0, s2 I) with linear h. The main estimate
/// uses one ensemble of N particles; standard errors come from
/// cfg.bias_replicates ensembles of N/10 particles, rescaled to N.
std::vector<BiasPoint> run_bias_curve(const ExperimentConfig& cfg,
                                      const std::optional<std::filesystem::path>& out_dir = std::nullopt);

// ---------------------------------------------------------------------------

struct ModeSummary {
  GainMode mode;
  double mse_mean = 0.0, mse_stderr = 0.0;
  // Signed deviation of the particle mean from the Kalman-Bucy mean (first
  // coordinate), time-averaged per seed and at the final time.
  double kb_dev_mean = 0.0, kb_dev_stderr = 0.0;
  double kb_final_dev_mean = 0.0, kb_final_dev_stderr = 0.0;
};

struct FpfDemoResult {
  std::vector<ModeSummary> modes;
  bool has_kalman = false;
  double kb_mse_mean = 0.0, kb_mse_stderr = 0.0;
  std::size_t seeds = 0;
};

FilterScenario make_scenario(const ExperimentConfig& cfg, std::uint64_t seed);

FpfDemoResult run_fpf_demo(const ExperimentConfig& cfg,
                           const std::optional<std::filesystem::path>& out_dir = std::nullopt);

// ---------------------------------------------------------------------------
// Persistence

std::string format_double(double v);
void write_records_csv(const std::filesystem::path& path, const std::vector<ErrorRecord>& records);
std::vector<ErrorRecord> read_records_csv(const std::filesystem::path& path);
void write_cells_csv(const std::filesystem::path& path, const std::vector<CellSummary>& cells);
void write_fits_csv(const std::filesystem::path& path, const std::vector<ExponentFit>& fits);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

nlohmann::json to_json(const ExponentFit& f);
nlohmann::json to_json(const CellSummary& c);

} // namespace fpfgain::bench
