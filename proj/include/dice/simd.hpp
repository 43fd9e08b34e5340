#pragma once

// Runtime-dispatched numeric kernels.
//
// Every kernel has a portable scalar reference in kernels_scalar.cpp and an
// AVX2+FMA variant in kernels_avx2.cpp. The active table is picked once from
// CPUID and can be pinned with the DICE_SIMD environment variable
// (scalar | avx2 | auto) or force_isa(). All kernels accumulate f32 inputs in
// f64; variants agree to rounding, not bit-for-bit.

#include <cstddef>
#include <string_view>

namespace dice::simd {

enum class Isa { scalar, avx2 };

struct KernelTable {
  Isa isa;
  const char* name;

  // sum_i a[i] * b[i]
  double (*dot_f32)(const float* a, const float* b, std::size_t n);

  // sum_i a[i] * b[i]
  double (*dot_f64)(const double* a, const double* b, std::size_t n);

  // For each of the nq query rows (row-major, stride d) updates
  //   inout[i] = min(inout[i], min_j (1 - <query_i, ref_j>))
  // over the nr reference rows.
  void (*min_cosine_distance)(const float* query, std::size_t nq,
                              const float* ref, std::size_t nr, std::size_t d,
                              double* inout);

  // out[i] = <rows_i, a>, out2[i] = <rows_i, b> for n rows of stride d.
  void (*dot2_rows_f32)(const float* rows, std::size_t n, std::size_t d,
                        const float* a, const float* b, double* out_a,
                        double* out_b);

  // y = M x for a row-major m x n matrix.
  void (*gemv_f64)(const double* m, std::size_t rows, std::size_t cols,
                   const double* x, double* y);
};

bool isa_supported(Isa isa);

// Table for a specific ISA; throws dice::ConfigError when unsupported.
const KernelTable& kernels_for(Isa isa);

// Currently active table.
const KernelTable& kernels();

void force_isa(Isa isa);

Isa parse_isa(std::string_view name);  // "scalar" | "avx2"

namespace detail {
extern const KernelTable scalar_table;
#if defined(DICE_HAVE_AVX2)
extern const KernelTable avx2_table;
#endif
}  // namespace detail

}  // namespace dice::simd
