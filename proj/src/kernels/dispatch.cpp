#include <atomic>
#include <cstdlib>
#include <string>

#include "mtlface/kernels/kernels.hpp"

namespace mtlface::kernels {

#ifdef MTLFACE_HAVE_AVX2
namespace detail {
const KernelTable<float>* avx2_float_table();
const KernelTable<double>* avx2_double_table();
}  // namespace detail
#endif

namespace {

Isa initial_isa() {
  if (const char* env = std::getenv("MTLFACE_SIMD")) {
    if (std::string(env) == "scalar") return Isa::Scalar;
  }
  return avx2_supported() ? Isa::Avx2 : Isa::Scalar;
}

std::atomic<Isa>& isa_slot() {
  static std::atomic<Isa> slot{initial_isa()};
  return slot;
}

}  // namespace

std::string_view isa_name(Isa isa) {
  return isa == Isa::Avx2 ? "avx2" : "scalar";
}

bool avx2_supported() {
#if defined(MTLFACE_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  static const bool ok =
      __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return ok;
#else
  return false;
#endif
}

Isa active_isa() { return isa_slot().load(std::memory_order_relaxed); }

void set_active_isa(Isa isa) {
  if (isa == Isa::Avx2 && !avx2_supported()) isa = Isa::Scalar;
  isa_slot().store(isa, std::memory_order_relaxed);
}

template <>
const KernelTable<float>* avx2_table<float>() {
#ifdef MTLFACE_HAVE_AVX2
  return avx2_supported() ? detail::avx2_float_table() : nullptr;
#else
  return nullptr;
#endif
}

template <>
const KernelTable<double>* avx2_table<double>() {
#ifdef MTLFACE_HAVE_AVX2
  return avx2_supported() ? detail::avx2_double_table() : nullptr;
#else
  return nullptr;
#endif
}

template <typename T>
const KernelTable<T>& active() {
  if (active_isa() == Isa::Avx2) {
    if (const KernelTable<T>* t = avx2_table<T>()) return *t;
  }
  return scalar_table<T>();
}

template const KernelTable<float>& active<float>();
template const KernelTable<double>& active<double>();

}  // namespace mtlface::kernels
