#include "fpfgain/fpf_sim.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <memory>
#include <string>

namespace fpfgain {

namespace {

constexpr std::uint64_t kTruthStream = 1;
constexpr std::uint64_t kPriorStream = 2;
constexpr std::uint64_t kNoiseStream = 3;

} // namespace

FilterScenario FilterScenario::linear_gaussian(Eigen::MatrixXd A, Vector H, Gaussian prior, double dt,
                                               double horizon, std::size_t particles, std::uint64_t seed) {
  const auto d = static_cast<Eigen::Index>(prior.dimension());
  if (A.rows() != d || A.cols() != d || H.size() != d) throw ConfigError("linear scenario: dimension mismatch");
  FilterScenario s{
      [A](std::span<const double> x, std::span<double> out) {
        const Vector v = A * Eigen::Map<const Vector>(x.data(), A.cols());
        for (Eigen::Index k = 0; k < v.size(); ++k) out[static_cast<std::size_t>(k)] = v[k];
      },
      ObservationFn::linear(H),
      DensitySpec(std::move(prior)),
      dt,
      horizon,
      particles,
      seed,
      LinearModel{A, H}};
  return s;
}

std::size_t FilterScenario::steps() const {
  return static_cast<std::size_t>(std::llround(horizon / dt));
}

void FilterScenario::validate() const {
  if (!(dt > 0.0)) throw ConfigError("scenario: time step must be positive");
  if (!(horizon >= dt)) throw ConfigError("scenario: horizon must be at least one time step");
  if (particles < 2) throw ConfigError("scenario: at least two particles are required");
  if (!drift) throw ConfigError("scenario: drift is not set");
  observation.check_dimension(dimension());
}

Trajectory simulate_truth(const FilterScenario& scenario) {
  scenario.validate();
  const std::size_t d = scenario.dimension();
  const std::size_t K = scenario.steps();
  const double sq = std::sqrt(scenario.dt);

  Trajectory tr;
  tr.x = scenario.prior.sample(1, stream_seed(scenario.seed, kTruthStream)).eval();
  tr.x.conservativeResize(static_cast<Eigen::Index>(K + 1), static_cast<Eigen::Index>(d));
  tr.t.resize(K + 1);
  tr.dz.resize(K);
  tr.z.assign(K + 1, 0.0);

  Rng rng(stream_seed(scenario.seed, kTruthStream + 100));
  std::normal_distribution<double> normal;
  std::vector<double> drift(d), cur(d);
  for (std::size_t k = 0; k < K; ++k) {
    const double t = static_cast<double>(k) * scenario.dt;
    tr.t[k] = t;
    for (std::size_t c = 0; c < d; ++c) cur[c] = tr.x(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(c));
    scenario.drift(cur, drift);
    const double hx = scenario.observation.value(cur);
    for (std::size_t c = 0; c < d; ++c)
      if (!std::isfinite(drift[c])) throw NumericalError("drift is not finite at t = " + std::to_string(t));
    for (std::size_t c = 0; c < d; ++c)
      tr.x(static_cast<Eigen::Index>(k + 1), static_cast<Eigen::Index>(c)) = cur[c] + drift[c] * scenario.dt + sq * normal(rng);
    tr.dz[k] = hx * scenario.dt + sq * normal(rng);
    tr.z[k + 1] = tr.z[k] + tr.dz[k];
  }
  tr.t[K] = static_cast<double>(K) * scenario.dt;
  return tr;
}

std::string_view to_string(GainMode m) {
  switch (m) {
  case GainMode::G1: return "G1";
  case GainMode::G2: return "G2";
  case GainMode::Constant: return "constant";
  case GainMode::Oracle: return "oracle";
  }
  return "?";
}

GainMode parse_gain_mode(std::string_view s) {
  std::string lower(s);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "g1") return GainMode::G1;
  if (lower == "g2") return GainMode::G2;
  if (lower == "constant") return GainMode::Constant;
  if (lower == "oracle") return GainMode::Oracle;
  throw ConfigError("unknown gain mode '" + std::string(s) + "'");
}

FilterState initial_state(const FilterScenario& scenario) {
  scenario.validate();
  FilterState st;
  st.particles = scenario.prior.sample(scenario.particles, stream_seed(scenario.seed, kPriorStream));
  st.h_hat = evaluate_h(scenario.observation, st.particles).mean();
  return st;
}

FilterState step_fpf(const FilterScenario& scenario, const FilterState& state, double dz,
                     const StepOptions& options, Rng& rng, std::size_t step_index) {
  const auto n = state.particles.rows();
  const auto d = static_cast<std::size_t>(state.particles.cols());
  const double dt = scenario.dt;
  const Vector hv = evaluate_h(scenario.observation, state.particles);
  const double hhat = hv.mean();

  PointMatrix gain;
  Vector phi;
  try {
    switch (options.mode) {
    case GainMode::Constant: {
      const Vector k = gain_constant(state.particles, hv);
      gain = k.transpose().replicate(n, 1);
      break;
    }
    case GainMode::Oracle:
      if (!options.oracle) throw ConfigError("oracle gain mode needs an oracle gain supplier");
      gain = options.oracle(state.t, state.particles);
      break;
    case GainMode::G1:
    case GainMode::G2: {
      const auto op = MarkovOperator::build(state.particles, options.epsilon);
      SolverConfig cfg = options.solver;
      if (state.phi.size() == n) cfg.warm_start = state.phi;
      auto sol = solve_fixed_point(op, hv, cfg);
      gain = options.mode == GainMode::G1 ? gain_g1(op, sol.phi, scenario.observation)
                                          : gain_g2(op, sol.phi, hv);
      phi = std::move(sol.phi);
      break;
    }
    }
  } catch (const NumericalError& e) {
    throw NumericalError("gain computation failed at step " + std::to_string(step_index) + ": " + e.what());
  }

  FilterState next;
  next.t = state.t + dt;
  next.particles = state.particles;
  next.phi = std::move(phi);
  std::normal_distribution<double> normal;
  const double sq = std::sqrt(dt);
  std::vector<double> cur(d), drift(d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < d; ++c) cur[c] = state.particles(i, static_cast<Eigen::Index>(c));
    scenario.drift(cur, drift);
    const double innovation = dz - 0.5 * (hv[i] + hhat) * dt;
    for (std::size_t c = 0; c < d; ++c) {
      const auto cc = static_cast<Eigen::Index>(c);
      next.particles(i, cc) = cur[c] + drift[c] * dt + sq * normal(rng) + gain(i, cc) * innovation;
    }
  }
  if (!next.particles.allFinite())
    throw NumericalError("particles became non-finite at step " + std::to_string(step_index));
  next.h_hat = evaluate_h(scenario.observation, next.particles).mean();
  return next;
}

KalmanBucyPath kalman_bucy(const FilterScenario& scenario, const Trajectory& truth) {
  if (!scenario.linear) throw ConfigError("Kalman-Bucy oracle requires a linear scenario");
  if (!scenario.prior.is_gaussian()) throw ConfigError("Kalman-Bucy oracle requires a Gaussian prior");
  const auto& A = scenario.linear->A;
  const auto& H = scenario.linear->H;
  const auto d = A.rows();
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(d, d);
  KalmanBucyPath path;
  Vector m = scenario.prior.gaussian().mean();
  Eigen::MatrixXd P = scenario.prior.gaussian().covariance();
  path.mean.push_back(m);
  path.covariance.push_back(P);
  const double dt = scenario.dt;
  for (double dz : truth.dz) {
    const Vector K = P * H;
    const Vector m_next = m + A * m * dt + K * (dz - H.dot(m) * dt);
    P = P + (A * P + P * A.transpose() + I - K * K.transpose()) * dt;
    m = m_next;
    path.mean.push_back(m);
    path.covariance.push_back(P);
  }
  return path;
}

double mean_square_error(const std::vector<Vector>& estimate, const PointMatrix& truth) {
  if (estimate.size() != static_cast<std::size_t>(truth.rows()) || estimate.size() < 2)
    throw ConfigError("mean_square_error: length mismatch");
  double s = 0.0;
  for (std::size_t k = 1; k < estimate.size(); ++k)
    s += (estimate[k] - truth.row(static_cast<Eigen::Index>(k)).transpose()).squaredNorm();
  return s / static_cast<double>(estimate.size() - 1);
}

FilterRun run_filter(const FilterScenario& scenario, const Trajectory& truth, StepOptions options) {
  FilterRun run;
  run.mode = options.mode;
  if (options.mode == GainMode::Oracle && !options.oracle) {
    if (!scenario.linear) throw ConfigError("oracle gain mode needs a linear scenario or an explicit oracle");
    auto kb = std::make_shared<KalmanBucyPath>(kalman_bucy(scenario, truth));
    const Vector H = scenario.linear->H;
    const double dt = scenario.dt;
    options.oracle = [kb, H, dt](double t, const PointMatrix& pts) -> PointMatrix {
      const auto k = std::min<std::size_t>(static_cast<std::size_t>(std::llround(t / dt)), kb->covariance.size() - 1);
      const Vector K = kb->covariance[k] * H;
      return K.transpose().replicate(pts.rows(), 1);
    };
  }
  FilterState st = initial_state(scenario);
  Rng rng(stream_seed(scenario.seed, kNoiseStream));
  run.particle_mean.push_back(st.particles.colwise().mean().transpose());
  for (std::size_t k = 0; k < truth.dz.size(); ++k) {
    st = step_fpf(scenario, st, truth.dz[k], options, rng, k);
    run.particle_mean.push_back(st.particles.colwise().mean().transpose());
  }
  run.mean_square_error = mean_square_error(run.particle_mean, truth.x);
  return run;
}

} // namespace fpfgain
