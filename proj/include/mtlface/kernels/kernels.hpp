#pragma once

// Dense arithmetic kernels with a scalar reference implementation and an
// AVX2/FMA variant chosen at runtime. Every higher layer (tensor ops, conv,
// linear layers) goes through this table, so forcing the scalar ISA makes the
// whole stack run on the reference path.

#include <cstddef>
#include <string_view>

namespace mtlface::kernels {

enum class Isa { Scalar, Avx2 };

std::string_view isa_name(Isa isa);

template <typename T>
struct KernelTable {
  // Row-major C[m,n] = alpha * op(A)[m,k] * op(B)[k,n] + beta * C.
  void (*gemm)(bool trans_a, bool trans_b, int m, int n, int k, T alpha,
               const T* a, int lda, const T* b, int ldb, T beta, T* c,
               int ldc);
  void (*axpy)(std::size_t n, T alpha, const T* x, T* y);
  void (*scale)(std::size_t n, T alpha, T* x);
  void (*add)(std::size_t n, const T* a, const T* b, T* out);
  void (*mul)(std::size_t n, const T* a, const T* b, T* out);
  // y += a * b
  void (*mul_acc)(std::size_t n, const T* a, const T* b, T* y);
  T (*dot)(std::size_t n, const T* x, const T* y);
  T (*sum)(std::size_t n, const T* x);
  void (*leaky_relu)(std::size_t n, T slope, const T* x, T* out);
  // dx += dy * (x > 0 ? 1 : slope)
  void (*leaky_relu_backward)(std::size_t n, T slope, const T* x, const T* dy,
                              T* dx);
};

template <typename T>
const KernelTable<T>& scalar_table();

// nullptr when the AVX2 variant was not compiled in.
template <typename T>
const KernelTable<T>* avx2_table();

bool avx2_supported();

// Initially Avx2 when the CPU supports it, unless MTLFACE_SIMD=scalar.
Isa active_isa();
void set_active_isa(Isa isa);

template <typename T>
const KernelTable<T>& active();

template <typename T>
inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha,
                 const T* a, int lda, const T* b, int ldb, T beta, T* c,
                 int ldc) {
  active<T>().gemm(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c,
                   ldc);
}

template <typename T>
inline void axpy(std::size_t n, T alpha, const T* x, T* y) {
  active<T>().axpy(n, alpha, x, y);
}

template <typename T>
inline void scale(std::size_t n, T alpha, T* x) {
  active<T>().scale(n, alpha, x);
}

template <typename T>
inline void add(std::size_t n, const T* a, const T* b, T* out) {
  active<T>().add(n, a, b, out);
}

template <typename T>
inline void mul(std::size_t n, const T* a, const T* b, T* out) {
  active<T>().mul(n, a, b, out);
}

template <typename T>
inline void mul_acc(std::size_t n, const T* a, const T* b, T* y) {
  active<T>().mul_acc(n, a, b, y);
}

template <typename T>
inline T dot(std::size_t n, const T* x, const T* y) {
  return active<T>().dot(n, x, y);
}

template <typename T>
inline T sum(std::size_t n, const T* x) {
  return active<T>().sum(n, x);
}

template <typename T>
inline void leaky_relu(std::size_t n, T slope, const T* x, T* out) {
  active<T>().leaky_relu(n, slope, x, out);
}

template <typename T>
inline void leaky_relu_backward(std::size_t n, T slope, const T* x,
                                const T* dy, T* dx) {
  active<T>().leaky_relu_backward(n, slope, x, dy, dx);
}

// RAII override of the active ISA, used by equivalence tests.
class ScopedIsa {
 public:
  explicit ScopedIsa(Isa isa) : previous_(active_isa()) { set_active_isa(isa); }
  ~ScopedIsa() { set_active_isa(previous_); }
  ScopedIsa(const ScopedIsa&) = delete;
  ScopedIsa& operator=(const ScopedIsa&) = delete;

 private:
  Isa previous_;
};

}  // namespace mtlface::kernels
