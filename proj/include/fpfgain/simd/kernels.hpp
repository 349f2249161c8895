#pragma once

// Data-parallel inner loops of the kernel method. Every entry has a scalar
// reference implementation; wider variants are selected once at startup from
// the CPU feature set and must agree with the reference to a few ulps.

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>

namespace fpfgain::simd {

struct KernelTable {
  std::string_view name;

  /// sum_j a[j] * b[j]
  double (*dot)(std::span<const double> a, std::span<const double> b);

  /// sum_j a[j]
  double (*sum)(std::span<const double> a);

  /// out[j] = exp(-|x - p_j|^2 * inv_4eps) for the n points stored
  /// coordinate-major in `coords` (d blocks of n values). Values that would
  /// be subnormal are stored as 0.
  void (*gaussian_affinity)(std::span<const double> coords, std::size_t d,
                            std::span<const double> x, double inv_4eps, std::span<double> out);

  /// row[j] *= s * w[j]
  void (*scale_by)(std::span<double> row, std::span<const double> w, double s);

  /// row[j] *= s
  void (*scale)(std::span<double> row, double s);

  /// acc[j] += s * a[j]; returns sum_j a[j] * x[j]. One pass over a.
  double (*dot_axpy)(std::span<const double> a, std::span<const double> x, double s, std::span<double> acc);
  /// out[j] = exp(x[j]); exposed for equivalence testing of the vector exp.
  void (*exp)(std::span<const double> x, std::span<double> out);
};

const KernelTable& scalar_kernels();

/// The AVX2+FMA table when compiled in and supported by the running CPU.
const KernelTable* avx2_kernels();

/// The table used by the library. Chosen on first use: the widest supported
/// variant, unless FPFGAIN_SIMD=scalar is set in the environment.
const KernelTable& active();

/// Overrides the active table (tests, benchmarks). Pass nullptr to restore
/// the automatic choice.
void set_active(const KernelTable* table);

} // namespace fpfgain::simd
