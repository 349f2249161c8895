#include "fpfgain/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <memory>
#include <numeric>
#include <string>

#include "fpfgain/quadrature.hpp"

namespace fpfgain {

std::string_view to_string(OracleProvenance p) {
  switch (p) {
  case OracleProvenance::ScalarQuadrature: return "scalar-quadrature";
  case OracleProvenance::GaussianSpectral: return "gaussian-spectral";
  case OracleProvenance::KalmanClosedForm: return "kalman-closed-form";
  }
  return "?";
}

double hermite(int n, double x) {
  if (n < 0) throw ConfigError("hermite: negative degree");
  double prev = 0.0, cur = 1.0;
  for (int k = 0; k < n; ++k) {
    const double next = (x * cur - std::sqrt(static_cast<double>(k)) * prev) / std::sqrt(static_cast<double>(k + 1));
    prev = cur;
    cur = next;
  }
  return cur;
}

double hermite_derivative(int n, double x) {
  if (n <= 0) return 0.0;
  return std::sqrt(static_cast<double>(n)) * hermite(n - 1, x);
}

namespace {

// Values hermite(0..max_deg, x).
void hermite_table(int max_deg, double x, double* out) {
  out[0] = 1.0;
  if (max_deg >= 1) out[1] = x;
  for (int k = 1; k < max_deg; ++k)
    out[k + 1] = (x * out[k] - std::sqrt(static_cast<double>(k)) * out[k - 1]) / std::sqrt(static_cast<double>(k + 1));
}

void enumerate_indices(std::size_t d, int max_total, HermiteIndex& cur, std::size_t pos, int used,
                       std::vector<HermiteIndex>& out) {
  if (pos == d) {
    if (used >= 1) out.push_back(cur);
    return;
  }
  for (int k = 0; k + used <= max_total; ++k) {
    cur[pos] = k;
    enumerate_indices(d, max_total, cur, pos + 1, used + k, out);
  }
  cur[pos] = 0;
}

void check_index(const HermiteIndex& n, std::size_t d) {
  if (n.size() != d) throw ConfigError("Hermite index length does not match the dimension");
  int total = 0;
  for (int v : n) {
    if (v < 0) throw ConfigError("Hermite index entries must be nonnegative");
    total += v;
  }
  if (total < 1) throw ConfigError("Hermite index must have total degree at least 1");
}

} // namespace

Eigenpair gaussian_eigenpair(const DensitySpec& spec, const HermiteIndex& n) {
  if (!spec.is_gaussian()) throw ConfigError("gaussian_eigenpair: density is not Gaussian");
  const Gaussian g = spec.gaussian();
  const std::size_t d = g.dimension();
  check_index(n, d);
  double lambda = 0.0;
  for (std::size_t j = 0; j < d; ++j) lambda += n[j] / g.eigenvalues()[static_cast<Eigen::Index>(j)];
  auto fn = [g, n](std::span<const double> x) {
    const auto dim = static_cast<Eigen::Index>(g.dimension());
    const Vector diff = Eigen::Map<const Vector>(x.data(), dim) - g.mean();
    double v = 1.0;
    for (Eigen::Index j = 0; j < dim; ++j) {
      const double y = g.eigenvectors().col(j).dot(diff) / std::sqrt(g.eigenvalues()[j]);
      v *= hermite(n[static_cast<std::size_t>(j)], y);
    }
    return v;
  };
  return {lambda, std::move(fn)};
}

// ---------------------------------------------------------------------------

SpectralSolution SpectralSolution::solve(const DensitySpec& spec, const ObservationFn& h, int truncation) {
  if (!spec.is_gaussian()) throw ConfigError("spectral solution requires a Gaussian density");
  if (truncation < 1) throw ConfigError("spectral truncation must be at least 1");
  const std::size_t d = spec.dimension();
  h.check_dimension(d);
  const auto degree = h.polynomial_degree();
  if (degree && truncation < *degree)
    throw ConfigError("spectral truncation " + std::to_string(truncation) +
                      " is below the polynomial degree " + std::to_string(*degree) + " of h");

  SpectralSolution sol(spec.gaussian());
  sol.truncation_ = truncation;
  const Gaussian& g = sol.gauss_;
  sol.inv_sigma_ = g.eigenvalues().cwiseSqrt().cwiseInverse();

  const std::size_t q = degree ? static_cast<std::size_t>((truncation + *degree) / 2 + 1)
                               : static_cast<std::size_t>(truncation + 4);
  double total_nodes = std::pow(static_cast<double>(q), static_cast<double>(d));
  if (total_nodes > 4e6) throw ConfigError("spectral solution: quadrature grid too large for this dimension");
  const auto rule = quadrature::gauss_hermite(q);

  std::vector<HermiteIndex> indices;
  HermiteIndex scratch(d, 0);
  enumerate_indices(d, truncation, scratch, 0, 0, indices);

  // Hermite values at the 1-d nodes: table[node * (T+1) + k].
  const int T = truncation;
  std::vector<double> table(q * static_cast<std::size_t>(T + 1));
  for (std::size_t i = 0; i < q; ++i) hermite_table(T, rule.nodes[i], &table[i * static_cast<std::size_t>(T + 1)]);

  const auto nodes = static_cast<std::size_t>(total_nodes);
  std::vector<double> hv(nodes), w(nodes);
  std::vector<std::size_t> digit(d, 0);
  const Eigen::MatrixXd map = g.eigenvectors() * g.eigenvalues().cwiseSqrt().asDiagonal();
  Vector y(static_cast<Eigen::Index>(d));
  std::vector<double> x(d);
  double hmean = 0.0;
  for (std::size_t node = 0; node < nodes; ++node) {
    double wt = 1.0;
    for (std::size_t k = 0; k < d; ++k) {
      y[static_cast<Eigen::Index>(k)] = rule.nodes[digit[k]];
      wt *= rule.weights[digit[k]];
    }
    const Vector xv = g.mean() + map * y;
    for (std::size_t k = 0; k < d; ++k) x[k] = xv[static_cast<Eigen::Index>(k)];
    hv[node] = h.value(x);
    if (!std::isfinite(hv[node])) throw NumericalError("spectral solution: h is not finite at a quadrature node");
    w[node] = wt;
    hmean += wt * hv[node];
    for (std::size_t k = 0; k < d; ++k) {
      if (++digit[k] < q) break;
      digit[k] = 0;
    }
  }
  sol.h_mean_ = hmean;

  double energy = 0.0;
  for (std::size_t node = 0; node < nodes; ++node) energy += w[node] * (hv[node] - hmean) * (hv[node] - hmean);

  double captured = 0.0;
  for (const auto& n : indices) {
    double c = 0.0;
    std::fill(digit.begin(), digit.end(), 0);
    for (std::size_t node = 0; node < nodes; ++node) {
      double basis = 1.0;
      for (std::size_t k = 0; k < d; ++k) basis *= table[digit[k] * static_cast<std::size_t>(T + 1) + static_cast<std::size_t>(n[k])];
      c += w[node] * (hv[node] - hmean) * basis;
      for (std::size_t k = 0; k < d; ++k) {
        if (++digit[k] < q) break;
        digit[k] = 0;
      }
    }
    double lambda = 0.0;
    for (std::size_t k = 0; k < d; ++k) lambda += n[k] / g.eigenvalues()[static_cast<Eigen::Index>(k)];
    captured += c * c;
    sol.terms_.push_back({n, lambda, c});
  }
  sol.residual_ = std::max(0.0, energy - captured);
  if (degree) sol.residual_ = energy > 0.0 && sol.residual_ < 1e-12 * energy ? 0.0 : sol.residual_;
  return sol;
}

double SpectralSolution::phi(std::span<const double> x) const {
  const auto d = static_cast<Eigen::Index>(gauss_.dimension());
  const Vector y = inv_sigma_.asDiagonal() * (gauss_.eigenvectors().transpose() *
                                              (Eigen::Map<const Vector>(x.data(), d) - gauss_.mean()));
  const int T = truncation_;
  std::vector<double> tab(static_cast<std::size_t>(d * (T + 1)));
  for (Eigen::Index k = 0; k < d; ++k) hermite_table(T, y[k], &tab[static_cast<std::size_t>(k * (T + 1))]);
  double v = 0.0;
  for (const auto& t : terms_) {
    double b = 1.0;
    for (Eigen::Index k = 0; k < d; ++k) b *= tab[static_cast<std::size_t>(k * (T + 1) + t.index[static_cast<std::size_t>(k)])];
    v += t.coefficient / t.eigenvalue * b;
  }
  return v;
}

void SpectralSolution::gain(std::span<const double> x, std::span<double> out) const {
  const auto d = static_cast<Eigen::Index>(gauss_.dimension());
  const Vector y = inv_sigma_.asDiagonal() * (gauss_.eigenvectors().transpose() *
                                              (Eigen::Map<const Vector>(x.data(), d) - gauss_.mean()));
  const int T = truncation_;
  const auto stride = static_cast<std::size_t>(T + 1);
  std::vector<double> tab(static_cast<std::size_t>(d) * stride), der(static_cast<std::size_t>(d) * stride);
  for (Eigen::Index k = 0; k < d; ++k) {
    double* row = &tab[static_cast<std::size_t>(k) * stride];
    hermite_table(T, y[k], row);
    der[static_cast<std::size_t>(k) * stride] = 0.0;
    for (int m = 1; m <= T; ++m) der[static_cast<std::size_t>(k) * stride + static_cast<std::size_t>(m)] = std::sqrt(static_cast<double>(m)) * row[m - 1];
  }
  // Gradient in whitened coordinates, then mapped back through V diag(1/sigma).
  Vector gy = Vector::Zero(d);
  for (const auto& t : terms_) {
    const double a = t.coefficient / t.eigenvalue;
    if (a == 0.0) continue;
    for (Eigen::Index j = 0; j < d; ++j) {
      double b = a;
      for (Eigen::Index k = 0; k < d; ++k) {
        const auto idx = static_cast<std::size_t>(k) * stride + static_cast<std::size_t>(t.index[static_cast<std::size_t>(k)]);
        b *= (k == j) ? der[idx] : tab[idx];
      }
      gy[j] += b;
    }
  }
  const Vector gx = gauss_.eigenvectors() * inv_sigma_.asDiagonal() * gy;
  for (Eigen::Index k = 0; k < d; ++k) out[static_cast<std::size_t>(k)] = gx[k];
}

PointMatrix SpectralSolution::gain(const PointMatrix& points) const {
  const auto d = static_cast<std::size_t>(points.cols());
  if (d != gauss_.dimension()) throw ConfigError("spectral gain: point dimension mismatch");
  PointMatrix out(points.rows(), points.cols());
  for (Eigen::Index i = 0; i < points.rows(); ++i)
    gain(std::span<const double>(points.row(i).data(), d), std::span<double>(out.row(i).data(), d));
  return out;
}

OracleGain spectral_exact_solution(const DensitySpec& spec, const ObservationFn& h, int truncation) {
  auto sol = std::make_shared<SpectralSolution>(SpectralSolution::solve(spec, h, truncation));
  return OracleGain([sol](const PointMatrix& pts) { return sol->gain(pts); }, OracleProvenance::GaussianSpectral);
}

// ---------------------------------------------------------------------------

ScalarGainOracle ScalarGainOracle::make(const DensitySpec& spec, const ObservationFn& h) {
  const std::size_t d = spec.dimension();
  h.check_dimension(d);
  ScalarGainOracle o;
  o.dim_ = d;
  if (d == 1) {
    o.axis_ = 0;
  } else {
    const auto axis = h.single_axis();
    if (!axis) throw ConfigError("scalar oracle: h must depend on a single coordinate");
    o.axis_ = *axis;
  }
  const auto a = static_cast<Eigen::Index>(o.axis_);
  const auto comps = spec.components();
  const Gaussian& first = *comps.front().second;
  for (const auto& [w, g] : comps) {
    const auto& S = g->covariance();
    for (Eigen::Index k = 0; k < S.rows(); ++k) {
      if (k == a) continue;
      if (S(a, k) != 0.0) throw ConfigError("scalar oracle: active coordinate is correlated with the others");
      if (g->mean()[k] != first.mean()[k]) throw ConfigError("scalar oracle: density does not factor along the active axis");
      for (Eigen::Index l = 0; l < S.cols(); ++l)
        if (l != a && S(k, l) != first.covariance()(k, l))
          throw ConfigError("scalar oracle: density does not factor along the active axis");
    }
    o.marginal_.push_back({w, g->mean()[a], g->covariance()(a, a)});
  }

  double max_abs_mean = 0.0, max_std = 0.0, min_mean = HUGE_VAL, max_mean = -HUGE_VAL;
  for (const auto& c : o.marginal_) {
    max_abs_mean = std::max(max_abs_mean, std::abs(c.mean));
    max_std = std::max(max_std, std::sqrt(c.variance));
    min_mean = std::min(min_mean, c.mean);
    max_mean = std::max(max_mean, c.mean);
  }
  const double sigma_eff = max_std + max_abs_mean;
  o.lower_ = min_mean - 6.0 * sigma_eff;
  o.upper_ = max_mean + 6.0 * sigma_eff;

  o.h_ = [h, d, axis = o.axis_](std::span<const double> x) {
    std::vector<double> p(d, 0.0);
    p[axis] = x[0];
    return h.value(p);
  };

  const auto mass = quadrature::romberg([&](double z) { return o.marginal_pdf(z); }, o.lower_, o.upper_);
  const auto moment = quadrature::romberg([&](double z) { return o.marginal_pdf(z) * o.h_on_axis(z); }, o.lower_, o.upper_);
  if (!mass.converged || !moment.converged)
    throw NumericalError("scalar oracle: quadrature for hhat did not converge (achieved " +
                         std::to_string(std::max(mass.achieved_error, moment.achieved_error)) + ")");
  o.h_mean_ = moment.value / mass.value;
  return o;
}

double ScalarGainOracle::marginal_pdf(double x) const {
  double p = 0.0;
  for (const auto& c : marginal_) {
    const double z = x - c.mean;
    p += c.weight * std::exp(-0.5 * z * z / c.variance) / std::sqrt(2.0 * std::numbers::pi * c.variance);
  }
  return p;
}

double ScalarGainOracle::h_on_axis(double x) const { return h_(std::span<const double>(&x, 1)); }

double ScalarGainOracle::gain(double x) const {
  double cdf = 0.0, max_std = 0.0;
  for (const auto& c : marginal_) {
    cdf += c.weight * 0.5 * std::erfc(-(x - c.mean) / std::sqrt(2.0 * c.variance));
    max_std = std::max(max_std, std::sqrt(c.variance));
  }
  auto integrand = [&](double z) { return marginal_pdf(z) * (h_on_axis(z) - h_mean_); };
  // Integrate over the lighter tail: the two one-sided forms agree because
  // rho (h - hhat) integrates to zero, and the short side avoids cancellation.
  quadrature::RombergResult r;
  double sign;
  if (cdf <= 0.5) {
    r = quadrature::romberg(integrand, std::min(lower_, x - 6.0 * max_std), x);
    sign = -1.0;
  } else {
    r = quadrature::romberg(integrand, x, std::max(upper_, x + 6.0 * max_std));
    sign = 1.0;
  }
  if (!r.converged)
    throw NumericalError("scalar oracle: quadrature did not converge at x = " + std::to_string(x) +
                         " (achieved " + std::to_string(r.achieved_error) + ")");
  const double p = marginal_pdf(x);
  if (!(p > 0.0)) throw NumericalError("scalar oracle: density underflows at x = " + std::to_string(x));
  return sign * r.value / p;
}

PointMatrix ScalarGainOracle::evaluate(const PointMatrix& points) const {
  if (static_cast<std::size_t>(points.cols()) != dim_) throw ConfigError("scalar oracle: point dimension mismatch");
  PointMatrix out = PointMatrix::Zero(points.rows(), points.cols());
  const auto a = static_cast<Eigen::Index>(axis_);
  for (Eigen::Index i = 0; i < points.rows(); ++i) out(i, a) = gain(points(i, a));
  return out;
}

double scalar_exact_gain(const DensitySpec& spec, const ObservationFn& h, double x) {
  return ScalarGainOracle::make(spec, h).gain(x);
}

OracleGain make_oracle(const DensitySpec& spec, const ObservationFn& h) {
  const std::size_t d = spec.dimension();
  h.check_dimension(d);
  if (spec.is_gaussian()) {
    const auto degree = h.polynomial_degree();
    if (degree && *degree == 1) {
      std::vector<double> zero(d, 0.0), grad(d);
      h.gradient(zero, grad);
      const Vector K = spec.gaussian().covariance() * Eigen::Map<const Vector>(grad.data(), static_cast<Eigen::Index>(d));
      return OracleGain(
          [K](const PointMatrix& pts) -> PointMatrix { return K.transpose().replicate(pts.rows(), 1); },
          OracleProvenance::KalmanClosedForm);
    }
    return spectral_exact_solution(spec, h, degree ? std::max(*degree, 1) : 8);
  }
  auto o = std::make_shared<ScalarGainOracle>(ScalarGainOracle::make(spec, h));
  return OracleGain([o](const PointMatrix& pts) { return o->evaluate(pts); }, OracleProvenance::ScalarQuadrature);
}

} // namespace fpfgain
