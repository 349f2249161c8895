#include "fpfgain/density.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "fpfgain/rng.hpp"

namespace fpfgain {

Gaussian::Gaussian(Vector mean, Eigen::MatrixXd covariance)
    : mean_(std::move(mean)), covariance_(std::move(covariance)) {
  const auto d = mean_.size();
  if (d < 1) throw ConfigError("Gaussian: dimension must be positive");
  if (covariance_.rows() != d || covariance_.cols() != d)
    throw ConfigError("Gaussian: covariance must be " + std::to_string(d) + "x" + std::to_string(d));
  if (!mean_.allFinite() || !covariance_.allFinite())
    throw ConfigError("Gaussian: non-finite parameters");
  const double scale = std::max(1.0, covariance_.cwiseAbs().maxCoeff());
  if ((covariance_ - covariance_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
    throw ConfigError("Gaussian: covariance is not symmetric");

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(covariance_);
  if (eig.info() != Eigen::Success) throw ConfigError("Gaussian: eigendecomposition failed");
  {
    std::vector<Eigen::Index> order(static_cast<std::size_t>(d));
    std::vector<Eigen::Index> axis(static_cast<std::size_t>(d));
    for (Eigen::Index j = 0; j < d; ++j) {
      eig.eigenvectors().col(j).cwiseAbs().maxCoeff(&axis[static_cast<std::size_t>(j)]);
      order[static_cast<std::size_t>(j)] = j;
    }
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
      return axis[static_cast<std::size_t>(a)] < axis[static_cast<std::size_t>(b)];
    });
    eigvals_.resize(d);
    eigvecs_.resize(d, d);
    for (Eigen::Index j = 0; j < d; ++j) {
      const Eigen::Index src = order[static_cast<std::size_t>(j)];
      eigvals_[j] = eig.eigenvalues()[src];
      eigvecs_.col(j) = eig.eigenvectors().col(src);
      if (eigvecs_(axis[static_cast<std::size_t>(src)], j) < 0.0) eigvecs_.col(j) *= -1.0;
    }
  }
  if (eigvals_.minCoeff() <= 0.0)
    throw ConfigError("Gaussian: covariance is not positive definite");

  Eigen::LLT<Eigen::MatrixXd> llt(covariance_);
  if (llt.info() != Eigen::Success)
    throw ConfigError("Gaussian: covariance is not positive definite");
  chol_ = llt.matrixL();
  const double log_det = 2.0 * chol_.diagonal().array().log().sum();
  log_norm_ = -0.5 * (static_cast<double>(d) * std::log(2.0 * std::numbers::pi) + log_det);
}

Gaussian Gaussian::isotropic(Vector mean, double sigma2) {
  const auto d = mean.size();
  return Gaussian(std::move(mean), sigma2 * Eigen::MatrixXd::Identity(d, d));
}

double Gaussian::pdf(std::span<const double> x) const {
  const auto d = mean_.size();
  Vector diff = Eigen::Map<const Vector>(x.data(), d) - mean_;
  Vector y = chol_.triangularView<Eigen::Lower>().solve(diff);
  return std::exp(log_norm_ - 0.5 * y.squaredNorm());
}

DensitySpec::DensitySpec(Gaussian g) : variant_(std::move(g)) {
  dim_ = std::get<Gaussian>(variant_).dimension();
}

namespace {

GaussianMixture checked_mixture(std::vector<double> weights, std::vector<Gaussian> components) {
  if (components.empty()) throw ConfigError("mixture: no components");
  if (weights.size() != components.size())
    throw ConfigError("mixture: weight count does not match component count");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("mixture: weights must be nonnegative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12) throw ConfigError("mixture: weights must sum to 1");
  for (const auto& c : components)
    if (c.dimension() != components.front().dimension())
      throw ConfigError("mixture: components disagree on dimension");
  return GaussianMixture{std::move(weights), std::move(components)};
}

} // namespace

DensitySpec::DensitySpec(std::vector<double> weights, std::vector<Gaussian> components)
    : variant_(checked_mixture(std::move(weights), std::move(components))) {
  dim_ = std::get<GaussianMixture>(variant_).components.front().dimension();
}

DensitySpec DensitySpec::symmetric_bimodal(std::size_t d, double mu, double sigma2) {
  const auto n = static_cast<Eigen::Index>(d);
  Vector shift = Vector::Zero(n);
  shift[0] = mu;
  return DensitySpec({0.5, 0.5},
                     {Gaussian::isotropic(-shift, sigma2), Gaussian::isotropic(shift, sigma2)});
}

const Gaussian& DensitySpec::gaussian() const {
  if (!is_gaussian()) throw ConfigError("density is not a single Gaussian");
  return std::get<Gaussian>(variant_);
}

std::vector<std::pair<double, const Gaussian*>> DensitySpec::components() const {
  std::vector<std::pair<double, const Gaussian*>> out;
  if (const auto* g = std::get_if<Gaussian>(&variant_)) {
    out.emplace_back(1.0, g);
  } else {
    const auto& m = std::get<GaussianMixture>(variant_);
    for (std::size_t c = 0; c < m.components.size(); ++c)
      out.emplace_back(m.weights[c], &m.components[c]);
  }
  return out;
}

double DensitySpec::pdf(std::span<const double> x) const {
  double p = 0.0;
  for (const auto& [w, g] : components()) p += w * g->pdf(x);
  return p;
}

PointMatrix DensitySpec::sample(std::size_t n, std::uint64_t seed) const {
  if (n < 1) throw ConfigError("sample: n must be positive");
  PointMatrix out(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim_));
  Rng rng(stream_seed(seed, 0));
  if (const auto* g = std::get_if<Gaussian>(&variant_)) {
    for (std::size_t i = 0; i < n; ++i)
      g->draw(rng, std::span<double>(out.row(static_cast<Eigen::Index>(i)).data(), dim_));
    return out;
  }
  const auto& m = std::get<GaussianMixture>(variant_);
  std::vector<double> cdf(m.weights.size());
  std::partial_sum(m.weights.begin(), m.weights.end(), cdf.begin());
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = uniform(rng) * cdf.back();
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    const auto c = std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), cdf.size() - 1);
    m.components[c].draw(rng, std::span<double>(out.row(static_cast<Eigen::Index>(i)).data(), dim_));
  }
  return out;
}

// ---------------------------------------------------------------------------

ObservationFn ObservationFn::linear(Vector H) {
  if (H.size() < 1 || !H.allFinite()) throw ConfigError("linear observation: invalid H");
  return ObservationFn(Linear{std::move(H)});
}

ObservationFn ObservationFn::coordinate(std::size_t index) { return ObservationFn(Coordinate{index}); }

ObservationFn ObservationFn::bilinear(std::size_t i, std::size_t j) { return ObservationFn(Bilinear{i, j}); }

ObservationFn ObservationFn::custom(ValueFn value, GradientFn gradient) {
  if (!value) throw ConfigError("custom observation: empty callable");
  return ObservationFn(Custom{std::move(value), std::move(gradient)});
}

double ObservationFn::value(std::span<const double> x) const {
  return std::visit(
      [&](const auto& f) -> double {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, Linear>) {
          double s = 0.0;
          for (Eigen::Index k = 0; k < f.H.size(); ++k) s += f.H[k] * x[static_cast<std::size_t>(k)];
          return s;
        } else if constexpr (std::is_same_v<T, Coordinate>) {
          return x[f.index];
        } else if constexpr (std::is_same_v<T, Bilinear>) {
          return x[f.i] * x[f.j];
        } else {
          return f.value(x);
        }
      },
      v_);
}

bool ObservationFn::has_gradient() const {
  if (const auto* c = std::get_if<Custom>(&v_)) return static_cast<bool>(c->gradient);
  return true;
}

void ObservationFn::gradient(std::span<const double> x, std::span<double> out) const {
  std::fill(out.begin(), out.end(), 0.0);
  std::visit(
      [&](const auto& f) {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, Linear>) {
          for (Eigen::Index k = 0; k < f.H.size(); ++k) out[static_cast<std::size_t>(k)] = f.H[k];
        } else if constexpr (std::is_same_v<T, Coordinate>) {
          out[f.index] = 1.0;
        } else if constexpr (std::is_same_v<T, Bilinear>) {
          out[f.i] += x[f.j];
          out[f.j] += x[f.i];
        } else {
          if (!f.gradient) throw ConfigError("observation function has no gradient");
          f.gradient(x, out);
        }
      },
      v_);
}

std::optional<int> ObservationFn::polynomial_degree() const {
  if (std::holds_alternative<Linear>(v_) || std::holds_alternative<Coordinate>(v_)) return 1;
  if (std::holds_alternative<Bilinear>(v_)) return 2;
  return std::nullopt;
}

std::optional<std::size_t> ObservationFn::single_axis() const {
  if (const auto* c = std::get_if<Coordinate>(&v_)) return c->index;
  if (const auto* l = std::get_if<Linear>(&v_)) {
    std::optional<std::size_t> axis;
    for (Eigen::Index k = 0; k < l->H.size(); ++k) {
      if (l->H[k] == 0.0) continue;
      if (axis) return std::nullopt;
      axis = static_cast<std::size_t>(k);
    }
    return axis;
  }
  if (const auto* b = std::get_if<Bilinear>(&v_); b && b->i == b->j) return b->i;
  return std::nullopt;
}

void ObservationFn::check_dimension(std::size_t d) const {
  std::visit(
      [&](const auto& f) {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, Linear>) {
          if (static_cast<std::size_t>(f.H.size()) != d)
            throw ConfigError("linear observation: H has length " + std::to_string(f.H.size()) +
                              ", points have dimension " + std::to_string(d));
        } else if constexpr (std::is_same_v<T, Coordinate>) {
          if (f.index >= d) throw ConfigError("coordinate observation: index out of range");
        } else if constexpr (std::is_same_v<T, Bilinear>) {
          if (f.i >= d || f.j >= d) throw ConfigError("bilinear observation: index out of range");
        }
      },
      v_);
}

double gradient_check(const ObservationFn& h, std::size_t d, std::uint64_t seed, std::size_t probes) {
  if (!h.has_gradient()) throw ConfigError("observation function has no gradient");
  Rng rng(stream_seed(seed, 0));
  std::normal_distribution<double> normal;
  std::vector<double> x(d), g(d), xp(d);
  double worst = 0.0;
  for (std::size_t p = 0; p < probes; ++p) {
    for (auto& v : x) v = normal(rng);
    h.gradient(x, g);
    for (std::size_t k = 0; k < d; ++k) {
      const double step = 1e-5 * std::max(1.0, std::abs(x[k]));
      xp = x;
      xp[k] = x[k] + step;
      const double up = h.value(xp);
      xp[k] = x[k] - step;
      const double down = h.value(xp);
      const double fd = (up - down) / (2.0 * step);
      const double err = std::abs(fd - g[k]) / std::max(1.0, std::abs(g[k]));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

Vector evaluate_h(const ObservationFn& h, const PointMatrix& points) {
  const auto d = static_cast<std::size_t>(points.cols());
  h.check_dimension(d);
  Vector out(points.rows());
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const double v = h.value(std::span<const double>(points.row(i).data(), d));
    if (!std::isfinite(v))
      throw NumericalError("observation function returned a non-finite value at particle " +
                           std::to_string(i));
    out[i] = v;
  }
  return out;
}

ParticleEnsemble::ParticleEnsemble(PointMatrix pts, Vector h, std::uint64_t s)
    : points(std::move(pts)), h_values(std::move(h)), seed(s) {
  if (points.rows() < 2) throw ConfigError("ensemble: at least two particles are required");
  if (h_values.size() != points.rows()) throw ConfigError("ensemble: h_values length mismatch");
}

ParticleEnsemble make_ensemble(const DensitySpec& spec, const ObservationFn& h, std::size_t n,
                               std::uint64_t seed) {
  PointMatrix pts = spec.sample(n, seed);
  Vector hv = evaluate_h(h, pts);
  return ParticleEnsemble(std::move(pts), std::move(hv), seed);
}

} // namespace fpfgain
