#include <atomic>
#include <cstdlib>
#include <string>

#include "dice/error.hpp"
#include "dice/simd.hpp"

namespace dice::simd {
namespace {

bool cpu_has_avx2() {
#if defined(DICE_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* initial_table() {
  Isa isa = cpu_has_avx2() ? Isa::avx2 : Isa::scalar;
  if (const char* env = std::getenv("DICE_SIMD")) {
    const std::string_view v(env);
    if (v == "scalar") {
      isa = Isa::scalar;
    } else if (v == "avx2" && cpu_has_avx2()) {
      isa = Isa::avx2;
    }
  }
  return &kernels_for(isa);
}

std::atomic<const KernelTable*>& active() {
  static std::atomic<const KernelTable*> table{initial_table()};
  return table;
}

}  // namespace

bool isa_supported(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2:
      return cpu_has_avx2();
  }
  return false;
}

const KernelTable& kernels_for(Isa isa) {
  if (!isa_supported(isa)) {
    throw ConfigError("SIMD variant not supported on this CPU");
  }
#if defined(DICE_HAVE_AVX2)
  if (isa == Isa::avx2) return detail::avx2_table;
#endif
  return detail::scalar_table;
}

const KernelTable& kernels() { return *active().load(std::memory_order_acquire); }

void force_isa(Isa isa) {
  active().store(&kernels_for(isa), std::memory_order_release);
}

Isa parse_isa(std::string_view name) {
  if (name == "scalar") return Isa::scalar;
  if (name == "avx2") return Isa::avx2;
  throw ConfigError("unknown SIMD variant: " + std::string(name));
}

}  // namespace dice::simd
