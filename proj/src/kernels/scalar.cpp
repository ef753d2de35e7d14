#include "mtlface/kernels/kernels.hpp"

namespace mtlface::kernels {
namespace {

template <typename T>
void gemm_ref(bool trans_a, bool trans_b, int m, int n, int k, T alpha,
              const T* a, int lda, const T* b, int ldb, T beta, T* c,
              int ldc) {
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<std::ptrdiff_t>(i) * ldc;
    if (beta == T(0)) {
      for (int j = 0; j < n; ++j) crow[j] = T(0);
    } else if (beta != T(1)) {
      for (int j = 0; j < n; ++j) crow[j] *= beta;
    }
  }
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<std::ptrdiff_t>(i) * ldc;
    for (int p = 0; p < k; ++p) {
      const T av = alpha * (trans_a ? a[static_cast<std::ptrdiff_t>(p) * lda + i]
                                    : a[static_cast<std::ptrdiff_t>(i) * lda + p]);
      if (trans_b) {
        for (int j = 0; j < n; ++j)
          crow[j] += av * b[static_cast<std::ptrdiff_t>(j) * ldb + p];
      } else {
        const T* brow = b + static_cast<std::ptrdiff_t>(p) * ldb;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

template <typename T>
void axpy_ref(std::size_t n, T alpha, const T* x, T* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
void scale_ref(std::size_t n, T alpha, T* x) {
  for (std::size_t i = 0; i < n; ++i) x[i] *= alpha;
}

template <typename T>
void add_ref(std::size_t n, const T* a, const T* b, T* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

template <typename T>
void mul_ref(std::size_t n, const T* a, const T* b, T* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

template <typename T>
void mul_acc_ref(std::size_t n, const T* a, const T* b, T* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a[i] * b[i];
}

template <typename T>
T dot_ref(std::size_t n, const T* x, const T* y) {
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

template <typename T>
T sum_ref(std::size_t n, const T* x) {
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

template <typename T>
void leaky_relu_ref(std::size_t n, T slope, const T* x, T* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > T(0) ? x[i] : slope * x[i];
}

template <typename T>
void leaky_relu_backward_ref(std::size_t n, T slope, const T* x, const T* dy,
                             T* dx) {
  for (std::size_t i = 0; i < n; ++i)
    dx[i] += x[i] > T(0) ? dy[i] : slope * dy[i];
}

template <typename T>
constexpr KernelTable<T> make_table() {
  return KernelTable<T>{&gemm_ref<T>,     &axpy_ref<T>,
                        &scale_ref<T>,    &add_ref<T>,
                        &mul_ref<T>,      &mul_acc_ref<T>,
                        &dot_ref<T>,      &sum_ref<T>,
                        &leaky_relu_ref<T>, &leaky_relu_backward_ref<T>};
}

constexpr KernelTable<float> kScalarF = make_table<float>();
constexpr KernelTable<double> kScalarD = make_table<double>();

}  // namespace

template <>
const KernelTable<float>& scalar_table<float>() {
  return kScalarF;
}

template <>
const KernelTable<double>& scalar_table<double>() {
  return kScalarD;
}

}  // namespace mtlface::kernels
