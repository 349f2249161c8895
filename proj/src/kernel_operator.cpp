#include "fpfgain/kernel_operator.hpp"

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#if defined(__linux__)
#include <sys/mman.h>
#endif

#include "fpfgain/simd/kernels.hpp"

namespace fpfgain {
namespace {

std::vector<double> coordinate_major(const PointMatrix& points, bool center) {
  const auto n = static_cast<std::size_t>(points.rows());
  const auto d = static_cast<std::size_t>(points.cols());
  std::vector<double> coords(n * d);
  for (std::size_t k = 0; k < d; ++k) {
    const double shift = center ? points.col(static_cast<Eigen::Index>(k)).mean() : 0.0;
    for (std::size_t j = 0; j < n; ++j)
      coords[k * n + j] = points(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)) - shift;
  }
  return coords;
}

// Operators at or above this size are applied from the upper triangle only;
// below it the matrix sits in cache and the plain row sweep is as fast.
constexpr Eigen::Index kHalfSweepMin = 1024;

// Large operators are written once and then streamed; 2 MiB pages cut the
// first-touch cost. Advisory only.
void advise_huge_pages(double* data, std::size_t count) {
#if defined(__linux__) && defined(MADV_HUGEPAGE)
  constexpr std::uintptr_t page = std::uintptr_t{1} << 21;
  const auto begin = reinterpret_cast<std::uintptr_t>(data);
  const auto end = begin + count * sizeof(double);
  const auto first = (begin + page - 1) & ~(page - 1);
  const auto last = end & ~(page - 1);
  if (last > first) madvise(reinterpret_cast<void*>(first), last - first, MADV_HUGEPAGE);
#else
  (void)data;
  (void)count;
#endif
}

std::span<double> row_span(DenseMatrix& m, Eigen::Index i) {
  return {m.row(i).data(), static_cast<std::size_t>(m.cols())};
}

std::span<const double> row_span(const DenseMatrix& m, Eigen::Index i) {
  return {m.row(i).data(), static_cast<std::size_t>(m.cols())};
}

} // namespace

namespace kernel {

DenseMatrix gaussian_affinity(const PointMatrix& points, double epsilon) {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon))
    throw ConfigError("kernel bandwidth epsilon must be positive and finite");
  if (!points.allFinite()) throw NumericalError("particle positions contain non-finite values");
  const auto n = points.rows();
  const auto d = static_cast<std::size_t>(points.cols());
  const auto& k = simd::active();
  // Uncentered: g depends only on differences, and using the raw positions
  // keeps g_ij and g_ji bitwise equal.
  const auto coords = coordinate_major(points, false);
  DenseMatrix g(n, n);
  advise_huge_pages(g.data(), static_cast<std::size_t>(g.size()));
  const double inv_4eps = 1.0 / (4.0 * epsilon);
  for (Eigen::Index i = 0; i < n; ++i)
    k.gaussian_affinity(coords, d, std::span<const double>(points.row(i).data(), d), inv_4eps, row_span(g, i));
  return g;
}

Vector affinity_degree(const DenseMatrix& g) {
  const auto& k = simd::active();
  Vector deg(g.rows());
  for (Eigen::Index i = 0; i < g.rows(); ++i) deg[i] = std::sqrt(k.sum(row_span(g, i)));
  return deg;
}

void symmetric_normalize(DenseMatrix& g, const Vector& degree) {
  const auto& k = simd::active();
  const Vector inv = degree.cwiseInverse();
  const std::span<const double> w(inv.data(), static_cast<std::size_t>(inv.size()));
  for (Eigen::Index i = 0; i < g.rows(); ++i) k.scale_by(row_span(g, i), w, inv[i]);
}

Vector row_normalize(DenseMatrix& m) {
  const auto& k = simd::active();
  Vector sums(m.rows());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double s = k.sum(row_span(m, i));
    if (!(s > 0.0) || !std::isfinite(s))
      throw NumericalError("Markov matrix row " + std::to_string(i) + " has non-positive mass");
    sums[i] = s;
    k.scale(row_span(m, i), 1.0 / s);
  }
  return sums;
}

} // namespace kernel

MarkovOperator MarkovOperator::build(const PointMatrix& points, double epsilon) {
  if (points.rows() < 2) throw ConfigError("Markov operator needs at least two particles");
  MarkovOperator op;
  op.epsilon_ = epsilon;
  op.T_ = kernel::gaussian_affinity(points, epsilon);
  op.degree_ = kernel::affinity_degree(op.T_);
  kernel::symmetric_normalize(op.T_, op.degree_);
  op.row_mass_ = kernel::row_normalize(op.T_);
  op.points_ = points;
  op.centered_coords_ = coordinate_major(points, true);
  return op;
}

Vector MarkovOperator::stationary() const { return row_mass_ / row_mass_.sum(); }

Vector MarkovOperator::apply(std::span<const double> f) const {
  if (f.size() != size())
    throw ConfigError("apply: vector length " + std::to_string(f.size()) + " does not match N = " +
                      std::to_string(size()));
  const auto& k = simd::active();
  const Eigen::Index n = T_.rows();
  Vector out(n);
  if (n < kHalfSweepMin) {
    for (Eigen::Index i = 0; i < n; ++i) out[i] = k.dot(row_span(T_, i), f);
    return out;
  }
  // T = diag(r)^-1 K with K symmetric, so T_ji = T_ij r_i / r_j and the lower
  // triangle never has to be read. `lower` collects sum_{j<i} T_ji r_j f_j.
  std::vector<double> lower(static_cast<std::size_t>(n), 0.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto iu = static_cast<std::size_t>(i);
    const double* row = T_.row(i).data();
    const auto tail = static_cast<std::size_t>(n - i - 1);
    const double upper = k.dot_axpy({row + i + 1, tail}, f.subspan(iu + 1), row_mass_[i] * f[iu],
                                    {lower.data() + iu + 1, tail});
    out[i] = row[i] * f[iu] + upper + lower[iu] / row_mass_[i];
  }
  return out;
}

PointMatrix MarkovOperator::apply_gradient(std::span<const double> f) const {
  const std::size_t n = size();
  const std::size_t d = dimension();
  if (f.size() != n)
    throw ConfigError("apply_gradient: vector length " + std::to_string(f.size()) +
                      " does not match N = " + std::to_string(n));
  const auto& k = simd::active();

  // The covariance is invariant under shifts of X and f; centering both keeps
  // the two products small before they are subtracted.
  double fmean = 0.0;
  for (double v : f) fmean += v;
  fmean /= static_cast<double>(n);
  std::vector<double> fc(n), xf(n * d);
  for (std::size_t j = 0; j < n; ++j) fc[j] = f[j] - fmean;
  for (std::size_t c = 0; c < d; ++c)
    for (std::size_t j = 0; j < n; ++j) xf[c * n + j] = centered_coords_[c * n + j] * fc[j];

  PointMatrix out(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  const double scale = 1.0 / (2.0 * epsilon_);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = row_span(T_, static_cast<Eigen::Index>(i));
    const double tf = k.dot(row, fc);
    for (std::size_t c = 0; c < d; ++c) {
      const std::span<const double> xc(centered_coords_.data() + c * n, n);
      const std::span<const double> xfc(xf.data() + c * n, n);
      const double tx = k.dot(row, xc);
      const double txf = k.dot(row, xfc);
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = scale * (txf - tx * tf);
    }
  }
  return out;
}

} // namespace fpfgain
