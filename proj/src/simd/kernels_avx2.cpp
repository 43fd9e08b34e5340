// Compiled with -mavx2 -mfma; only reached through the dispatcher after a
// CPUID check.
#include "dice/simd.hpp"

#include <immintrin.h>

#include <algorithm>

namespace dice::simd {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

// Widens 8 floats into two 4-double registers.
inline void widen(const float* p, __m256d& lo, __m256d& hi) {
  const __m256 v = _mm256_loadu_ps(p);
  lo = _mm256_cvtps_pd(_mm256_castps256_ps128(v));
  hi = _mm256_cvtps_pd(_mm256_extractf128_ps(v, 1));
}

double dot_f32(const float* a, const float* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256d a0, a1, b0, b1;
    widen(a + i, a0, a1);
    widen(b + i, b0, b1);
    acc0 = _mm256_fmadd_pd(a0, b0, acc0);
    acc1 = _mm256_fmadd_pd(a1, b1, acc1);
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) {
    acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  }
  return acc;
}

double dot_f64(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i),
                           acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4),
                           _mm256_loadu_pd(b + i + 4), acc1);
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

// Four reference rows against one query row per pass; the query chunk is
// widened once and reused.
void min_cosine_distance(const float* query, std::size_t nq, const float* ref,
                         std::size_t nr, std::size_t d, double* inout) {
  const std::size_t body = d - d % 8;
  for (std::size_t i = 0; i < nq; ++i) {
    const float* q = query + i * d;
    double best = inout[i];
    std::size_t j = 0;
    for (; j + 4 <= nr; j += 4) {
      const float* r0 = ref + j * d;
      const float* r1 = r0 + d;
      const float* r2 = r1 + d;
      const float* r3 = r2 + d;
      __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
      __m256d s2 = _mm256_setzero_pd(), s3 = _mm256_setzero_pd();
      for (std::size_t k = 0; k < body; k += 8) {
        __m256d q0, q1, x0, x1;
        widen(q + k, q0, q1);
        widen(r0 + k, x0, x1);
        s0 = _mm256_fmadd_pd(q1, x1, _mm256_fmadd_pd(q0, x0, s0));
        widen(r1 + k, x0, x1);
        s1 = _mm256_fmadd_pd(q1, x1, _mm256_fmadd_pd(q0, x0, s1));
        widen(r2 + k, x0, x1);
        s2 = _mm256_fmadd_pd(q1, x1, _mm256_fmadd_pd(q0, x0, s2));
        widen(r3 + k, x0, x1);
        s3 = _mm256_fmadd_pd(q1, x1, _mm256_fmadd_pd(q0, x0, s3));
      }
      double dots[4] = {hsum(s0), hsum(s1), hsum(s2), hsum(s3)};
      for (std::size_t k = body; k < d; ++k) {
        const double qk = q[k];
        dots[0] += qk * r0[k];
        dots[1] += qk * r1[k];
        dots[2] += qk * r2[k];
        dots[3] += qk * r3[k];
      }
      for (double v : dots) best = std::min(best, 1.0 - v);
    }
    for (; j < nr; ++j) best = std::min(best, 1.0 - dot_f32(q, ref + j * d, d));
    inout[i] = best;
  }
}

void dot2_rows_f32(const float* rows, std::size_t n, std::size_t d,
                   const float* a, const float* b, double* out_a,
                   double* out_b) {
  const std::size_t body = d - d % 8;
  for (std::size_t i = 0; i < n; ++i) {
    const float* r = rows + i * d;
    __m256d sa = _mm256_setzero_pd(), sb = _mm256_setzero_pd();
    for (std::size_t k = 0; k < body; k += 8) {
      __m256d r0, r1, x0, x1;
      widen(r + k, r0, r1);
      widen(a + k, x0, x1);
      sa = _mm256_fmadd_pd(r1, x1, _mm256_fmadd_pd(r0, x0, sa));
      widen(b + k, x0, x1);
      sb = _mm256_fmadd_pd(r1, x1, _mm256_fmadd_pd(r0, x0, sb));
    }
    double da = hsum(sa), db = hsum(sb);
    for (std::size_t k = body; k < d; ++k) {
      da += static_cast<double>(r[k]) * a[k];
      db += static_cast<double>(r[k]) * b[k];
    }
    out_a[i] = da;
    out_b[i] = db;
  }
}

void gemv_f64(const double* m, std::size_t rows, std::size_t cols,
              const double* x, double* y) {
  for (std::size_t r = 0; r < rows; ++r) y[r] = dot_f64(m + r * cols, x, cols);
}

}  // namespace

namespace detail {
const KernelTable avx2_table{Isa::avx2,          "avx2",     &dot_f32,
                             &dot_f64,           &min_cosine_distance,
                             &dot2_rows_f32,     &gemv_f64};
}

}  // namespace dice::simd
