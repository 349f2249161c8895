#include "fpfgain/gain_solver.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>

namespace fpfgain {

std::string_view to_string(GainMethod m) {
  switch (m) {
  case GainMethod::G1: return "G1";
  case GainMethod::G2: return "G2";
  case GainMethod::Constant: return "constant";
  }
  return "?";
}

GainMethod parse_gain_method(std::string_view s) {
  std::string lower(s);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "g1") return GainMethod::G1;
  if (lower == "g2") return GainMethod::G2;
  if (lower == "constant") return GainMethod::Constant;
  throw ConfigError("unknown gain method '" + std::string(s) + "'");
}

void SolverConfig::validate() const {
  if (max_iterations < 1) throw ConfigError("solver: max_iterations must be at least 1");
  if (!(residual_tol > 0.0)) throw ConfigError("solver: residual_tol must be positive");
}

namespace {

void center(Vector& v) { v.array() -= v.mean(); }

} // namespace

FixedPointSolution solve_fixed_point(const MarkovOperator& op, const Vector& h_values,
                                     const SolverConfig& cfg) {
  cfg.validate();
  const auto n = static_cast<Eigen::Index>(op.size());
  if (h_values.size() != n)
    throw ConfigError("solve_fixed_point: h_values length does not match the operator");

  const Vector source = op.epsilon() * (h_values.array() - h_values.mean()).matrix();

  FixedPointSolution out;
  auto& diag = out.diagnostics;
  Vector phi = Vector::Zero(n);
  if (cfg.warm_start) {
    if (cfg.warm_start->size() != n) throw ConfigError("solve_fixed_point: warm start has wrong length");
    phi = *cfg.warm_start;
    center(phi);
  }

  for (std::size_t t = 1; t <= cfg.max_iterations; ++t) {
    Vector next = op.apply(phi) + source;
    const double offset = next.mean();
    next.array() -= offset;
    if (!next.allFinite())
      throw NumericalError("fixed-point iterate became non-finite at iteration " + std::to_string(t));

    // next - phi is minus the centered residual of phi.
    const double step = (next - phi).cwiseAbs().maxCoeff();
    const double res = step / std::max(1.0, phi.cwiseAbs().maxCoeff());
    diag.residual_history.push_back(res);
    diag.iterations = t;
    diag.final_residual = res;
    diag.constant_offset = offset;
    if (res <= cfg.residual_tol) {
      diag.converged = true;
      break;
    }
    phi = std::move(next);
  }
  out.phi = std::move(phi);
  return out;
}

PointMatrix gain_g1(const MarkovOperator& op, const Vector& phi, const ObservationFn& h) {
  if (!h.has_gradient())
    throw ConfigError("G1 needs the gradient of h; use the gradient-free G2 formula instead");
  if (static_cast<std::size_t>(phi.size()) != op.size()) throw ConfigError("gain_g1: phi length mismatch");
  PointMatrix k = op.apply_gradient(phi);
  const auto d = op.dimension();
  std::vector<double> grad(d);
  for (Eigen::Index i = 0; i < k.rows(); ++i) {
    h.gradient(std::span<const double>(op.points().row(i).data(), d), grad);
    for (std::size_t c = 0; c < d; ++c) k(i, static_cast<Eigen::Index>(c)) += op.epsilon() * grad[c];
  }
  return k;
}

PointMatrix gain_g2(const MarkovOperator& op, const Vector& phi, const Vector& h_values) {
  if (static_cast<std::size_t>(phi.size()) != op.size() || h_values.size() != phi.size())
    throw ConfigError("gain_g2: length mismatch");
  const Vector f = phi + op.epsilon() * (h_values.array() - h_values.mean()).matrix();
  return op.apply_gradient(f);
}

PointMatrix gain_g2_summation(const MarkovOperator& op, const Vector& phi, const Vector& h_values) {
  const auto n = static_cast<Eigen::Index>(op.size());
  if (phi.size() != n || h_values.size() != n) throw ConfigError("gain_g2_summation: length mismatch");
  const auto& T = op.matrix();
  const auto& X = op.points();
  const double eps = op.epsilon();
  const double hhat = h_values.mean();
  PointMatrix K = PointMatrix::Zero(n, X.cols());
  Eigen::RowVectorXd local_mean(X.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    local_mean.setZero();
    for (Eigen::Index k = 0; k < n; ++k) local_mean += T(i, k) * X.row(k);
    for (Eigen::Index j = 0; j < n; ++j) {
      const double w = T(i, j) * (phi[j] + eps * (h_values[j] - hhat));
      K.row(i) += w * (X.row(j) - local_mean);
    }
  }
  return K / (2.0 * eps);
}

Vector gain_constant(const PointMatrix& points, const Vector& h_values) {
  if (points.rows() < 2) throw ConfigError("gain_constant: at least two particles are required");
  if (h_values.size() != points.rows()) throw ConfigError("gain_constant: h_values length mismatch");
  const Vector centered = (h_values.array() - h_values.mean()).matrix();
  return points.transpose() * centered / static_cast<double>(points.rows());
}

KernelGains kernel_gains(const MarkovOperator& op, const ParticleEnsemble& ensemble,
                         const ObservationFn* h, const SolverConfig& cfg) {
  KernelGains out;
  out.solution = solve_fixed_point(op, ensemble.h_values, cfg);
  out.g2 = gain_g2(op, out.solution.phi, ensemble.h_values);
  if (h && h->has_gradient()) out.g1 = gain_g1(op, out.solution.phi, *h);
  return out;
}

GainEstimate estimate_gain(const ParticleEnsemble& ensemble, double epsilon, GainMethod method,
                           const ObservationFn* h, const SolverConfig& cfg) {
  GainEstimate est;
  est.method = method;
  est.epsilon = epsilon;
  if (method == GainMethod::Constant) {
    const Vector k = gain_constant(ensemble);
    const Eigen::RowVectorXd xbar = ensemble.points.colwise().mean();
    est.phi = (ensemble.points.rowwise() - xbar) * k;
    est.gain = k.transpose().replicate(ensemble.points.rows(), 1);
    return est;
  }
  if (method == GainMethod::G1 && (!h || !h->has_gradient()))
    throw ConfigError("G1 needs the gradient of h; use the gradient-free G2 formula instead");

  const auto op = MarkovOperator::build(ensemble.points, epsilon);
  auto sol = solve_fixed_point(op, ensemble.h_values, cfg);
  est.gain = method == GainMethod::G1 ? gain_g1(op, sol.phi, *h) : gain_g2(op, sol.phi, ensemble.h_values);
  est.phi = std::move(sol.phi);
  est.iterations_used = sol.diagnostics.iterations;
  est.final_residual = sol.diagnostics.final_residual;
  est.converged = sol.diagnostics.converged;
  return est;
}

} // namespace fpfgain
