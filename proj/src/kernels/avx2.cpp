// AVX2 + FMA variants of the kernels in kernels.hpp. This translation unit is
// compiled with -mavx2 -mfma and only entered after a runtime CPU check.

#include "kernels_internal.hpp"

#if defined(CRLHF_HAVE_AVX2)

#include <immintrin.h>

#include <algorithm>
#include <limits>

namespace crlhf::kernels::detail {
namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  const __m128d swapped = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, swapped));
}

inline double hmax(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_max_pd(lo, hi);
  const __m128d swapped = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_max_sd(lo, swapped));
}

// Cephes-style exp: range reduction by ln 2 split into two constants, then a
// (3,4) Pade approximant on [-ln2/2, ln2/2]; relative error about 2e-16.
inline __m256d exp4(__m256d x) {
  const __m256d underflow = _mm256_set1_pd(kExpUnderflow);
  const __m256d flushed = _mm256_cmp_pd(x, underflow, _CMP_LT_OQ);
  x = _mm256_max_pd(_mm256_min_pd(x, _mm256_set1_pd(709.0)), underflow);

  const __m256d fx = _mm256_round_pd(
      _mm256_mul_pd(x, _mm256_set1_pd(1.4426950408889634073599)),
      _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  x = _mm256_fnmadd_pd(fx, _mm256_set1_pd(6.93145751953125E-1), x);
  x = _mm256_fnmadd_pd(fx, _mm256_set1_pd(1.42860682030941723212E-6), x);

  const __m256d xx = _mm256_mul_pd(x, x);
  __m256d p = _mm256_set1_pd(1.26177193074810590878E-4);
  p = _mm256_fmadd_pd(p, xx, _mm256_set1_pd(3.02994407707441961300E-2));
  p = _mm256_fmadd_pd(p, xx, _mm256_set1_pd(9.99999999999999999910E-1));
  p = _mm256_mul_pd(p, x);
  __m256d q = _mm256_set1_pd(3.00198505138664455042E-6);
  q = _mm256_fmadd_pd(q, xx, _mm256_set1_pd(2.52448340349684104192E-3));
  q = _mm256_fmadd_pd(q, xx, _mm256_set1_pd(2.27265548208155028766E-1));
  q = _mm256_fmadd_pd(q, xx, _mm256_set1_pd(2.00000000000000000009E0));
  __m256d e = _mm256_div_pd(p, _mm256_sub_pd(q, p));
  e = _mm256_fmadd_pd(e, _mm256_set1_pd(2.0), _mm256_set1_pd(1.0));

  __m256i n = _mm256_cvtepi32_epi64(_mm256_cvtpd_epi32(fx));
  n = _mm256_slli_epi64(_mm256_add_epi64(n, _mm256_set1_epi64x(1023)), 52);
  e = _mm256_mul_pd(e, _mm256_castsi256_pd(n));
  return _mm256_andnot_pd(flushed, e);
}

double dot(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  if (i + 4 <= n) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    i += 4;
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void matvec(const double* rows, std::size_t n, std::size_t dim, const double* v,
            double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = dot(rows + i * dim, v, dim);
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d a = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(a, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

double max_value(const double* x, std::size_t n) {
  std::size_t i = 0;
  double peak = -std::numeric_limits<double>::infinity();
  if (n >= 4) {
    __m256d m = _mm256_loadu_pd(x);
    for (i = 4; i + 4 <= n; i += 4) m = _mm256_max_pd(m, _mm256_loadu_pd(x + i));
    peak = hmax(m);
  }
  for (; i < n; ++i) peak = std::max(peak, x[i]);
  return peak;
}

double exp_shifted(const double* x, double shift, double* out, std::size_t n) {
  const __m256d s = _mm256_set1_pd(shift);
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d e = exp4(_mm256_sub_pd(_mm256_loadu_pd(x + i), s));
    _mm256_storeu_pd(out + i, e);
    acc = _mm256_add_pd(acc, e);
  }
  if (i < n) {
    // Pad the tail with -inf so it runs through the same polynomial.
    alignas(32) double buf[4];
    std::fill(buf, buf + 4, -std::numeric_limits<double>::infinity());
    std::copy(x + i, x + n, buf);
    alignas(32) double res[4];
    const __m256d e = exp4(_mm256_sub_pd(_mm256_load_pd(buf), s));
    _mm256_store_pd(res, e);
    acc = _mm256_add_pd(acc, e);
    std::copy(res, res + (n - i), out + i);
  }
  return hsum(acc);
}

void softmax_rows(const double* logits, std::size_t rows, std::size_t cols,
                  double* out) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = logits + r * cols;
    double* dst = out + r * cols;
    const double inv = 1.0 / exp_shifted(in, max_value(in, cols), dst, cols);
    const __m256d scale = _mm256_set1_pd(inv);
    std::size_t c = 0;
    for (; c + 4 <= cols; c += 4) {
      _mm256_storeu_pd(dst + c, _mm256_mul_pd(_mm256_loadu_pd(dst + c), scale));
    }
    for (; c < cols; ++c) dst[c] *= inv;
  }
}

void row_dot(const double* a, const double* b, std::size_t rows,
             std::size_t cols, double* out) {
  for (std::size_t r = 0; r < rows; ++r) out[r] = dot(a + r * cols, b + r * cols, cols);
}

}  // namespace

const KernelSet kAvx2Kernels{
    "avx2", matvec, dot, axpy, exp_shifted, softmax_rows, row_dot,
};

}  // namespace crlhf::kernels::detail

#endif  // CRLHF_HAVE_AVX2
