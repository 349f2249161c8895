#include <cfloat>
#include <cmath>

#include "fpfgain/simd/kernels.hpp"

namespace fpfgain::simd {
namespace {

// log(DBL_MIN): below this exp() is subnormal.
constexpr double kMinNormalLog = -708.3964185322641;

double dot_scalar(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) s += a[j] * b[j];
  return s;
}

double sum_scalar(std::span<const double> a) {
  double s = 0.0;
  for (double v : a) s += v;
  return s;
}

void affinity_scalar(std::span<const double> coords, std::size_t d, std::span<const double> x,
                     double inv_4eps, std::span<double> out) {
  const std::size_t n = out.size();
  for (std::size_t j = 0; j < n; ++j) {
    double r2 = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      const double diff = coords[k * n + j] - x[k];
      r2 += diff * diff;
    }
    const double arg = -r2 * inv_4eps;
    out[j] = arg < kMinNormalLog ? 0.0 : std::exp(arg);
  }
}

void scale_by_scalar(std::span<double> row, std::span<const double> w, double s) {
  for (std::size_t j = 0; j < row.size(); ++j) row[j] *= s * w[j];
}

void scale_scalar(std::span<double> row, double s) {
  for (double& v : row) v *= s;
}

double dot_axpy_scalar(std::span<const double> a, std::span<const double> x, double s, std::span<double> acc) {
  double d = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    d += a[j] * x[j];
    acc[j] += s * a[j];
  }
  return d;
}

void exp_scalar(std::span<const double> x, std::span<double> out) {
  for (std::size_t j = 0; j < x.size(); ++j) out[j] = std::exp(x[j]);
}

} // namespace

const KernelTable& scalar_kernels() {
  static const KernelTable table{"scalar",        dot_scalar,   sum_scalar, affinity_scalar,
                                 scale_by_scalar, scale_scalar, dot_axpy_scalar, exp_scalar};
  return table;
}

} // namespace fpfgain::simd
