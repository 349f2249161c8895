#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "fpfgain/density.hpp"
#include "fpfgain/kernel_operator.hpp"
#include "fpfgain/simd/kernels.hpp"

using namespace fpfgain;
using namespace fpfgain::simd;

namespace {

std::vector<double> uniform(std::size_t n, double lo, double hi, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

struct Restore {
  ~Restore() { set_active(nullptr); }
};

} // namespace

TEST_CASE("scalar table is always available") {
  CHECK(scalar_kernels().name == "scalar");
  CHECK(active().dot != nullptr);
}

TEST_CASE("avx2 kernels match the scalar reference") {
  const KernelTable* wide = avx2_kernels();
  if (!wide) {
    MESSAGE("AVX2 not available on this CPU; equivalence not exercised");
    return;
  }
  const KernelTable& ref = scalar_kernels();
  // odd lengths exercise the tails
  for (std::size_t n : {1u, 3u, 4u, 7u, 16u, 33u, 257u, 1000u}) {
    CAPTURE(n);
    const auto a = uniform(n, -2, 2, 1 + n), b = uniform(n, -2, 2, 2 + n);
    double scale = 0;
    for (std::size_t j = 0; j < n; ++j) scale += std::abs(a[j] * b[j]);
    CHECK(std::abs(wide->dot(a, b) - ref.dot(a, b)) <= 1e-14 * scale);
    double asum = 0;
    for (double v : a) asum += std::abs(v);
    CHECK(std::abs(wide->sum(a) - ref.sum(a)) <= 1e-14 * asum);

    auto r1 = a, r2 = a;
    ref.scale_by(r1, b, 0.7);
    wide->scale_by(r2, b, 0.7);
    for (std::size_t j = 0; j < n; ++j) CHECK(r1[j] == doctest::Approx(r2[j]).epsilon(1e-15));
    ref.scale(r1, -1.3);
    wide->scale(r2, -1.3);
    for (std::size_t j = 0; j < n; ++j) CHECK(r1[j] == doctest::Approx(r2[j]).epsilon(1e-15));

    std::vector<double> acc1(n, 0.5), acc2(n, 0.5);
    const double d1 = ref.dot_axpy(a, b, 0.3, acc1), d2 = wide->dot_axpy(a, b, 0.3, acc2);
    CHECK(std::abs(d1 - d2) <= 1e-14 * scale);
    for (std::size_t j = 0; j < n; ++j) CHECK(acc1[j] == doctest::Approx(acc2[j]).epsilon(1e-15));
  }
}

TEST_CASE("vector exp agrees with std::exp") {
  const KernelTable* wide = avx2_kernels();
  if (!wide) return;
  std::vector<double> x = uniform(4099, -740, 705, 17);
  for (double v : {0.0, -0.0, 1e-300, -1e-300, 1.0, -1.0, 700.0, -700.0, 709.7, -708.4, -745.0, -746.0, 710.0, -1e6})
    x.push_back(v);
  std::vector<double> y(x.size()), r(x.size());
  wide->exp(x, y);
  scalar_kernels().exp(x, r);
  for (std::size_t j = 0; j < x.size(); ++j) {
    CAPTURE(x[j]);
    if (r[j] >= 2.2250738585072014e-308 && std::isfinite(r[j]))
      CHECK(std::abs(y[j] - r[j]) <= 4e-16 * r[j]);
    else if (std::isinf(r[j]))
      CHECK(y[j] == r[j]);
    else
      CHECK(std::abs(y[j] - r[j]) <= 1e-300 + 4e-16 * r[j]);
  }
}

TEST_CASE("affinity kernels agree, including the flush to zero") {
  const KernelTable* wide = avx2_kernels();
  if (!wide) return;
  for (std::size_t d : {1u, 2u, 3u, 5u}) {
    const std::size_t n = 203;
    const auto coords = uniform(n * d, -3, 3, 5 + d);
    const auto x = uniform(d, -1, 1, 9 + d);
    for (double inv4 : {0.25, 2.5, 250.0, 2.5e4}) {
      std::vector<double> a(n), b(n);
      scalar_kernels().gaussian_affinity(coords, d, x, inv4, a);
      wide->gaussian_affinity(coords, d, x, inv4, b);
      for (std::size_t j = 0; j < n; ++j) {
        // the exponent argument is formed differently, so its rounding grows with |log a|
        const double arg = a[j] > 0 ? -std::log(a[j]) : 0.0;
        CHECK(std::abs(a[j] - b[j]) <= 1e-15 * (1 + arg) * a[j] + 1e-300);
        CHECK((a[j] == 0.0) == (b[j] == 0.0 || a[j] < 1e-307));
        CHECK((b[j] == 0.0 || b[j] >= 2.2250738585072014e-308));
      }
    }
  }
}

TEST_CASE("operators assembled with either table agree") {
  const KernelTable* wide = avx2_kernels();
  if (!wide) return;
  Restore restore;
  for (std::size_t N : {50u, 1500u}) {
    const auto pts = DensitySpec::symmetric_bimodal(2, 1.0, 0.2).sample(N, 3);
    set_active(&scalar_kernels());
    const auto a = MarkovOperator::build(pts, 0.05);
    Vector f = pts.col(0);
    const Vector ta = a.apply(f);
    const PointMatrix ga = a.apply_gradient(f);
    set_active(wide);
    const auto b = MarkovOperator::build(pts, 0.05);
    const Vector tb = b.apply(f);
    const PointMatrix gb = b.apply_gradient(f);
    CHECK((a.matrix() - b.matrix()).cwiseAbs().maxCoeff() < 1e-14);
    CHECK((ta - tb).cwiseAbs().maxCoeff() < 1e-13);
    CHECK((ga - gb).cwiseAbs().maxCoeff() < 1e-11);
  }
}
