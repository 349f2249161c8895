// AVX2 + FMA variants. This file is compiled with -mavx2 -mfma and must only
// be entered through avx2_kernels(), which checks the CPU first.

#include <immintrin.h>

#include <array>
#include <cmath>

#include "fpfgain/simd/kernels.hpp"

namespace fpfgain::simd {
namespace {

// exp(x) for four lanes: Cephes range reduction and rational approximation,
// scaled by 2^n applied as two factors so the result stays correct down to
// the subnormal range.
inline __m256d exp4(__m256d x) {
  const __m256d hi = _mm256_set1_pd(709.782712893384);
  const __m256d lo = _mm256_set1_pd(-745.1332191019412);
  const __m256d log2e = _mm256_set1_pd(1.4426950408889634);
  const __m256d c1 = _mm256_set1_pd(6.93145751953125e-1);
  const __m256d c2 = _mm256_set1_pd(1.42860682030941723212e-6);

  const __m256d over = _mm256_cmp_pd(x, hi, _CMP_GT_OQ);
  const __m256d under = _mm256_cmp_pd(x, lo, _CMP_LT_OQ);
  x = _mm256_min_pd(_mm256_max_pd(x, lo), hi);

  const __m256d n = _mm256_round_pd(_mm256_mul_pd(x, log2e), _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  __m256d r = _mm256_fnmadd_pd(n, c1, x);
  r = _mm256_fnmadd_pd(n, c2, r);
  const __m256d rr = _mm256_mul_pd(r, r);

  __m256d p = _mm256_set1_pd(1.26177193074810590878e-4);
  p = _mm256_fmadd_pd(p, rr, _mm256_set1_pd(3.02994407707441961300e-2));
  p = _mm256_fmadd_pd(p, rr, _mm256_set1_pd(9.99999999999999999910e-1));
  p = _mm256_mul_pd(p, r);

  __m256d q = _mm256_set1_pd(3.00198505138664455042e-6);
  q = _mm256_fmadd_pd(q, rr, _mm256_set1_pd(2.52448340349684104192e-3));
  q = _mm256_fmadd_pd(q, rr, _mm256_set1_pd(2.27265548208155028766e-1));
  q = _mm256_fmadd_pd(q, rr, _mm256_set1_pd(2.00000000000000000009e0));

  __m256d e = _mm256_div_pd(p, _mm256_sub_pd(q, p));
  e = _mm256_fmadd_pd(e, _mm256_set1_pd(2.0), _mm256_set1_pd(1.0));

  // n = a + b with a = floor(n / 2); both halves are representable exponents.
  const __m256d a = _mm256_floor_pd(_mm256_mul_pd(n, _mm256_set1_pd(0.5)));
  const __m256d b = _mm256_sub_pd(n, a);
  const __m256d magic = _mm256_set1_pd(6755399441055744.0); // 1.5 * 2^52
  const __m256i bias = _mm256_set1_epi64x(1023);
  auto pow2 = [&](__m256d k) {
    __m256i ki = _mm256_sub_epi64(_mm256_castpd_si256(_mm256_add_pd(k, magic)), _mm256_castpd_si256(magic));
    return _mm256_castsi256_pd(_mm256_slli_epi64(_mm256_add_epi64(ki, bias), 52));
  };
  e = _mm256_mul_pd(_mm256_mul_pd(e, pow2(a)), pow2(b));

  e = _mm256_blendv_pd(e, _mm256_set1_pd(HUGE_VAL), over);
  e = _mm256_blendv_pd(e, _mm256_setzero_pd(), under);
  return e;
}

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(lo, _mm_unpackhi_pd(lo, lo)));
}

double dot_avx2(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = a.size();
  const double* pa = a.data();
  const double* pb = b.data();
  __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
  __m256d s2 = _mm256_setzero_pd(), s3 = _mm256_setzero_pd();
  std::size_t j = 0;
  for (; j + 16 <= n; j += 16) {
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(pa + j), _mm256_loadu_pd(pb + j), s0);
    s1 = _mm256_fmadd_pd(_mm256_loadu_pd(pa + j + 4), _mm256_loadu_pd(pb + j + 4), s1);
    s2 = _mm256_fmadd_pd(_mm256_loadu_pd(pa + j + 8), _mm256_loadu_pd(pb + j + 8), s2);
    s3 = _mm256_fmadd_pd(_mm256_loadu_pd(pa + j + 12), _mm256_loadu_pd(pb + j + 12), s3);
  }
  for (; j + 4 <= n; j += 4) s0 = _mm256_fmadd_pd(_mm256_loadu_pd(pa + j), _mm256_loadu_pd(pb + j), s0);
  double s = hsum(_mm256_add_pd(_mm256_add_pd(s0, s1), _mm256_add_pd(s2, s3)));
  for (; j < n; ++j) s += pa[j] * pb[j];
  return s;
}

double sum_avx2(std::span<const double> a) {
  const std::size_t n = a.size();
  const double* p = a.data();
  __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8) {
    s0 = _mm256_add_pd(s0, _mm256_loadu_pd(p + j));
    s1 = _mm256_add_pd(s1, _mm256_loadu_pd(p + j + 4));
  }
  for (; j + 4 <= n; j += 4) s0 = _mm256_add_pd(s0, _mm256_loadu_pd(p + j));
  double s = hsum(_mm256_add_pd(s0, s1));
  for (; j < n; ++j) s += p[j];
  return s;
}

void affinity_avx2(std::span<const double> coords, std::size_t d, std::span<const double> x,
                   double inv_4eps, std::span<double> out) {
  const std::size_t n = out.size();
  const __m256d neg_scale = _mm256_set1_pd(-inv_4eps);
  const __m256d min_normal_log = _mm256_set1_pd(-708.3964185322641);
  // subnormal results are flushed: they are slow to produce and to scale later
  auto kernel = [&](__m256d arg) {
    return _mm256_andnot_pd(_mm256_cmp_pd(arg, min_normal_log, _CMP_LT_OQ), exp4(arg));
  };
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    __m256d r2 = _mm256_setzero_pd();
    for (std::size_t k = 0; k < d; ++k) {
      const __m256d diff = _mm256_sub_pd(_mm256_loadu_pd(coords.data() + k * n + j), _mm256_set1_pd(x[k]));
      r2 = _mm256_fmadd_pd(diff, diff, r2);
    }
    _mm256_storeu_pd(out.data() + j, kernel(_mm256_mul_pd(r2, neg_scale)));
  }
  if (j < n) {
    alignas(32) std::array<double, 4> arg{};
    for (std::size_t t = j; t < n; ++t) {
      double r2 = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = coords[k * n + t] - x[k];
        r2 = std::fma(diff, diff, r2);
      }
      arg[t - j] = r2 * -inv_4eps;
    }
    alignas(32) std::array<double, 4> res{};
    _mm256_store_pd(res.data(), kernel(_mm256_load_pd(arg.data())));
    for (std::size_t t = j; t < n; ++t) out[t] = res[t - j];
  }
}

void scale_by_avx2(std::span<double> row, std::span<const double> w, double s) {
  const std::size_t n = row.size();
  const __m256d vs = _mm256_set1_pd(s);
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    const __m256d f = _mm256_mul_pd(vs, _mm256_loadu_pd(w.data() + j));
    _mm256_storeu_pd(row.data() + j, _mm256_mul_pd(_mm256_loadu_pd(row.data() + j), f));
  }
  for (; j < n; ++j) row[j] *= s * w[j];
}

void scale_avx2(std::span<double> row, double s) {
  const std::size_t n = row.size();
  const __m256d vs = _mm256_set1_pd(s);
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4)
    _mm256_storeu_pd(row.data() + j, _mm256_mul_pd(_mm256_loadu_pd(row.data() + j), vs));
  for (; j < n; ++j) row[j] *= s;
}

double dot_axpy_avx2(std::span<const double> a, std::span<const double> x, double s, std::span<double> acc) {
  const std::size_t n = a.size();
  const double* pa = a.data();
  const double* px = x.data();
  double* pc = acc.data();
  const __m256d vs = _mm256_set1_pd(s);
  __m256d d0 = _mm256_setzero_pd(), d1 = _mm256_setzero_pd();
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8) {
    const __m256d a0 = _mm256_loadu_pd(pa + j), a1 = _mm256_loadu_pd(pa + j + 4);
    d0 = _mm256_fmadd_pd(a0, _mm256_loadu_pd(px + j), d0);
    d1 = _mm256_fmadd_pd(a1, _mm256_loadu_pd(px + j + 4), d1);
    _mm256_storeu_pd(pc + j, _mm256_fmadd_pd(a0, vs, _mm256_loadu_pd(pc + j)));
    _mm256_storeu_pd(pc + j + 4, _mm256_fmadd_pd(a1, vs, _mm256_loadu_pd(pc + j + 4)));
  }
  double d = hsum(_mm256_add_pd(d0, d1));
  for (; j < n; ++j) {
    d += pa[j] * px[j];
    pc[j] += s * pa[j];
  }
  return d;
}

void exp_avx2(std::span<const double> x, std::span<double> out) {
  const std::size_t n = x.size();
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) _mm256_storeu_pd(out.data() + j, exp4(_mm256_loadu_pd(x.data() + j)));
  if (j < n) {
    alignas(32) std::array<double, 4> buf{};
    for (std::size_t t = j; t < n; ++t) buf[t - j] = x[t];
    _mm256_store_pd(buf.data(), exp4(_mm256_load_pd(buf.data())));
    for (std::size_t t = j; t < n; ++t) out[t] = buf[t - j];
  }
}

} // namespace

const KernelTable& avx2_table() {
  static const KernelTable table{"avx2",        dot_avx2,   sum_avx2, affinity_avx2,
                                 scale_by_avx2, scale_avx2, dot_axpy_avx2, exp_avx2};
  return table;
}

} // namespace fpfgain::simd
