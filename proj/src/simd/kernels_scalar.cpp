#include "dice/simd.hpp"

#include <algorithm>

namespace dice::simd {
namespace {

double dot_f32(const float* a, const float* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  }
  return acc;
}

double dot_f64(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void min_cosine_distance(const float* query, std::size_t nq, const float* ref,
                         std::size_t nr, std::size_t d, double* inout) {
  for (std::size_t i = 0; i < nq; ++i) {
    const float* q = query + i * d;
    double best = inout[i];
    for (std::size_t j = 0; j < nr; ++j) {
      best = std::min(best, 1.0 - dot_f32(q, ref + j * d, d));
    }
    inout[i] = best;
  }
}

void dot2_rows_f32(const float* rows, std::size_t n, std::size_t d,
                   const float* a, const float* b, double* out_a,
                   double* out_b) {
  for (std::size_t i = 0; i < n; ++i) {
    out_a[i] = dot_f32(rows + i * d, a, d);
    out_b[i] = dot_f32(rows + i * d, b, d);
  }
}

void gemv_f64(const double* m, std::size_t rows, std::size_t cols,
              const double* x, double* y) {
  for (std::size_t r = 0; r < rows; ++r) y[r] = dot_f64(m + r * cols, x, cols);
}

}  // namespace

namespace detail {
const KernelTable scalar_table{Isa::scalar,         "scalar",      &dot_f32,
                               &dot_f64,            &min_cosine_distance,
                               &dot2_rows_f32,      &gemv_f64};
}

}  // namespace dice::simd
