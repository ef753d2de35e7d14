#include "mtlface/core/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "mtlface/kernels/kernels.hpp"

namespace mtlface::ops {
namespace {

template <typename T>
Node<T>* wants(Node<T>& self, std::size_t i) {
  if (i >= self.inputs.size()) return nullptr;
  Node<T>* n = self.inputs[i].get();
  return (n && n->requires_grad) ? n : nullptr;
}

void require_same(const Shape& a, const Shape& b, const char* what) {
  if (a != b)
    throw ShapeError(std::string(what) + ": " + shape_str(a) + " vs " +
                     shape_str(b));
}

int norm_dim(int dim, int ndim) {
  if (dim < 0) dim += ndim;
  if (dim < 0 || dim >= ndim) throw ShapeError("dimension out of range");
  return dim;
}

// [outer, n, inner] decomposition around `dim`.
struct Split {
  std::int64_t outer = 1, n = 1, inner = 1;
};

Split split_at(const Shape& s, int dim) {
  Split r;
  for (int i = 0; i < dim; ++i) r.outer *= s[i];
  r.n = s[dim];
  for (std::size_t i = dim + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

template <typename T, typename F, typename G>
V<T> unary(const V<T>& a, F fwd, G dfdx_from_x_y) {
  const Tensor<T>& x = a.value();
  Tensor<T> y(x.shape());
  const std::size_t n = x.numel();
  const T* xp = x.data();
  T* yp = y.data();
  for (std::size_t i = 0; i < n; ++i) yp[i] = fwd(xp[i]);
  return make_result<T>(y, {a}, [x, y, dfdx_from_x_y](Node<T>& self) {
    if (Node<T>* in = wants(self, 0)) {
      Tensor<T>& g = in->grad_buffer();
      const T* dy = self.grad.data();
      for (std::size_t i = 0; i < g.numel(); ++i)
        g[i] += dy[i] * dfdx_from_x_y(x[i], y[i]);
    }
  });
}

}  // namespace

// ---- elementwise ----------------------------------------------------------

template <typename T>
V<T> add(const V<T>& a, const V<T>& b) {
  require_same(a.shape(), b.shape(), "add");
  Tensor<T> y(a.shape());
  kernels::add<T>(y.numel(), a.value().data(), b.value().data(), y.data());
  return make_result<T>(y, {a, b}, [](Node<T>& self) {
    for (std::size_t i = 0; i < 2; ++i)
      if (Node<T>* in = wants(self, i)) in->accumulate(self.grad);
  });
}

template <typename T>
V<T> sub(const V<T>& a, const V<T>& b) {
  require_same(a.shape(), b.shape(), "sub");
  Tensor<T> y(a.shape());
  const T* ap = a.value().data();
  const T* bp = b.value().data();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = ap[i] - bp[i];
  return make_result<T>(y, {a, b}, [](Node<T>& self) {
    if (Node<T>* in = wants(self, 0)) in->accumulate(self.grad);
    if (Node<T>* in = wants(self, 1)) {
      Tensor<T>& g = in->grad_buffer();
      kernels::axpy<T>(g.numel(), T(-1), self.grad.data(), g.data());
    }
  });
}

template <typename T>
V<T> mul(const V<T>& a, const V<T>& b) {
  require_same(a.shape(), b.shape(), "mul");
  const Tensor<T> av = a.value();
  const Tensor<T> bv = b.value();
  Tensor<T> y(a.shape());
  kernels::mul<T>(y.numel(), av.data(), bv.data(), y.data());
  return make_result<T>(y, {a, b}, [av, bv](Node<T>& self) {
    if (Node<T>* in = wants(self, 0))
      kernels::mul_acc<T>(av.numel(), self.grad.data(), bv.data(),
                          in->grad_buffer().data());
    if (Node<T>* in = wants(self, 1))
      kernels::mul_acc<T>(bv.numel(), self.grad.data(), av.data(),
                          in->grad_buffer().data());
  });
}

template <typename T>
V<T> add_scalar(const V<T>& a, T c) {
  Tensor<T> y(a.shape());
  const T* ap = a.value().data();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = ap[i] + c;
  return make_result<T>(y, {a}, [](Node<T>& self) {
    if (Node<T>* in = wants(self, 0)) in->accumulate(self.grad);
  });
}

template <typename T>
V<T> mul_scalar(const V<T>& a, T c) {
  Tensor<T> y = a.value().clone();
  kernels::scale<T>(y.numel(), c, y.data());
  return make_result<T>(y, {a}, [c](Node<T>& self) {
    if (Node<T>* in = wants(self, 0))
      kernels::axpy<T>(self.grad.numel(), c, self.grad.data(),
                       in->grad_buffer().data());
  });
}

template <typename T>
V<T> neg(const V<T>& a) {
  return mul_scalar<T>(a, T(-1));
}

template <typename T>
V<T> square(const V<T>& a) {
  return unary<T>(a, [](T x) { return x * x; },
                  [](T x, T) { return T(2) * x; });
}

template <typename T>
V<T> exp(const V<T>& a) {
  return unary<T>(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
V<T> log(const V<T>& a) {
  return unary<T>(a, [](T x) { return std::log(x); },
                  [](T x, T) { return T(1) / x; });
}

template <typename T>
V<T> sigmoid(const V<T>& a) {
  return unary<T>(
      a,
      [](T x) {
        if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
        const T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
V<T> tanh(const V<T>& a) {
  return unary<T>(a, [](T x) { return std::tanh(x); },
                  [](T, T y) { return T(1) - y * y; });
}

template <typename T>
V<T> leaky_relu(const V<T>& a, T slope) {
  const Tensor<T> x = a.value();
  Tensor<T> y(x.shape());
  kernels::leaky_relu<T>(x.numel(), slope, x.data(), y.data());
  return make_result<T>(y, {a}, [x, slope](Node<T>& self) {
    if (Node<T>* in = wants(self, 0))
      kernels::leaky_relu_backward<T>(x.numel(), slope, x.data(),
                                      self.grad.data(), in->grad_buffer().data());
  });
}

template <typename T>
V<T> relu(const V<T>& a) {
  return leaky_relu<T>(a, T(0));
}

template <typename T>
V<T> expand(const V<T>& a, const Shape& shape) {
  const Shape& src = a.shape();
  if (src.size() > 4 || src.size() != shape.size())
    throw ShapeError("expand: rank mismatch " + shape_str(src) + " -> " +
                     shape_str(shape));
  std::array<std::int64_t, 4> od{1, 1, 1, 1};
  std::array<std::int64_t, 4> is{0, 0, 0, 0};
  const std::size_t off = 4 - src.size();
  {
    std::int64_t stride = 1;
    for (int i = static_cast<int>(src.size()) - 1; i >= 0; --i) {
      if (src[i] != shape[i] && src[i] != 1)
        throw ShapeError("expand: " + shape_str(src) + " -> " + shape_str(shape));
      od[off + i] = shape[i];
      is[off + i] = src[i] == 1 ? 0 : stride;
      stride *= src[i];
    }
  }
  Tensor<T> y(shape);
  const T* xp = a.value().data();
  T* yp = y.data();
  std::size_t k = 0;
  for (std::int64_t i0 = 0; i0 < od[0]; ++i0)
    for (std::int64_t i1 = 0; i1 < od[1]; ++i1)
      for (std::int64_t i2 = 0; i2 < od[2]; ++i2) {
        const T* base = xp + i0 * is[0] + i1 * is[1] + i2 * is[2];
        if (is[3] == 0) {
          std::fill(yp + k, yp + k + od[3], base[0]);
          k += od[3];
        } else {
          for (std::int64_t i3 = 0; i3 < od[3]; ++i3) yp[k++] = base[i3];
        }
      }
  return make_result<T>(y, {a}, [od, is](Node<T>& self) {
    if (Node<T>* in = wants(self, 0)) {
      T* gp = in->grad_buffer().data();
      const T* dy = self.grad.data();
      std::size_t k = 0;
      for (std::int64_t i0 = 0; i0 < od[0]; ++i0)
        for (std::int64_t i1 = 0; i1 < od[1]; ++i1)
          for (std::int64_t i2 = 0; i2 < od[2]; ++i2) {
            T* base = gp + i0 * is[0] + i1 * is[1] + i2 * is[2];
            if (is[3] == 0) {
              base[0] += kernels::sum<T>(od[3], dy + k);
              k += od[3];
            } else {
              for (std::int64_t i3 = 0; i3 < od[3]; ++i3) base[i3] += dy[k++];
            }
          }
    }
  });
}

// ---- shape ------------------------------------------------------------------

template <typename T>
V<T> reshape(const V<T>& a, const Shape& shape) {
  Tensor<T> y = a.value().reshape(shape);
  return make_result<T>(y, {a}, [](Node<T>& self) {
    if (Node<T>* in = wants(self, 0)) in->accumulate(self.grad);
  });
}

template <typename T>
V<T> narrow(const V<T>& a, std::int64_t start, std::int64_t len) {
  Tensor<T> y = a.value().narrow(start, len);
  const std::int64_t row = a.dim(0) == 0 ? 0 : static_cast<std::int64_t>(a.numel()) / a.dim(0);
  return make_result<T>(y, {a}, [start, row](Node<T>& self) {
    if (Node<T>* in = wants(self, 0)) {
      T* gp = in->grad_buffer().data() + start * row;
      kernels::axpy<T>(self.grad.numel(), T(1), self.grad.data(), gp);
    }
  });
}

template <typename T>
V<T> concat(const std::vector<V<T>>& parts, int dim) {
  if (parts.empty()) throw ShapeError("concat of nothing");
  const int nd = static_cast<int>(parts[0].shape().size());
  dim = norm_dim(dim, nd);
  Shape out_shape = parts[0].shape();
  out_shape[dim] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (static_cast<int>(s.size()) != nd) throw ShapeError("concat rank mismatch");
    for (int i = 0; i < nd; ++i)
      if (i != dim && s[i] != parts[0].shape()[i])
        throw ShapeError("concat shape mismatch " + shape_str(s));
    out_shape[dim] += s[dim];
  }
  Tensor<T> y(out_shape);
  const Split so = split_at(out_shape, dim);
  std::vector<std::int64_t> widths;
  std::int64_t col = 0;
  for (const auto& p : parts) {
    const std::int64_t w = p.shape()[dim] * so.inner;
    widths.push_back(w);
    const T* src = p.value().data();
    for (std::int64_t o = 0; o < so.outer; ++o)
      std::copy(src + o * w, src + (o + 1) * w,
                y.data() + o * so.n * so.inner + col);
    col += w;
  }
  const std::int64_t row = so.n * so.inner;
  return make_result<T>(y, parts, [widths, so, row](Node<T>& self) {
    std::int64_t c = 0;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      const std::int64_t w = widths[i];
      if (Node<T>* in = wants(self, i)) {
        T* gp = in->grad_buffer().data();
        for (std::int64_t o = 0; o < so.outer; ++o)
          kernels::axpy<T>(w, T(1), self.grad.data() + o * row + c, gp + o * w);
      }
      c += w;
    }
  });
}

template <typename T>
V<T> index_select(const V<T>& a, const std::vector<std::int64_t>& index) {
  if (a.shape().empty()) throw ShapeError("index_select on a scalar");
  const std::int64_t rows = a.dim(0);
  const std::int64_t row = rows == 0 ? 0 : static_cast<std::int64_t>(a.numel()) / rows;
  Shape out_shape = a.shape();
  out_shape[0] = static_cast<std::int64_t>(index.size());
  Tensor<T> y(out_shape);
  const T* xp = a.value().data();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= rows) throw std::out_of_range("index_select");
    std::copy(xp + index[i] * row, xp + (index[i] + 1) * row, y.data() + i * row);
  }
  return make_result<T>(y, {a}, [index, row](Node<T>& self) {
    if (Node<T>* in = wants(self, 0)) {
      T* gp = in->grad_buffer().data();
      for (std::size_t i = 0; i < index.size(); ++i)
        kernels::axpy<T>(row, T(1), self.grad.data() + i * row, gp + index[i] * row);
    }
  });
}

// ---- reductions -------------------------------------------------------------

template <typename T>
V<T> sum(const V<T>& a) {
  Tensor<T> y = Tensor<T>::scalar(kernels::sum<T>(a.numel(), a.value().data()));
  return make_result<T>(y, {a}, [](Node<T>& self) {
    if (Node<T>* in = wants(self, 0)) {
      const T g = self.grad[0];
      for (auto& v : in->grad_buffer().span()) v += g;
    }
  });
}

template <typename T>
V<T> mean(const V<T>& a) {
  return mul_scalar<T>(sum<T>(a), T(1) / static_cast<T>(std::max<std::size_t>(1, a.numel())));
}

template <typename T>
V<T> sum_dim(const V<T>& a, int dim) {
  dim = norm_dim(dim, static_cast<int>(a.shape().size()));
  const Split s = split_at(a.shape(), dim);
  Shape out_shape = a.shape();
  out_shape[dim] = 1;
  Tensor<T> y(out_shape);
  const T* xp = a.value().data();
  for (std::int64_t o = 0; o < s.outer; ++o)
    for (std::int64_t j = 0; j < s.n; ++j)
      kernels::axpy<T>(s.inner, T(1), xp + (o * s.n + j) * s.inner,
                       y.data() + o * s.inner);
  return make_result<T>(y, {a}, [s](Node<T>& self) {
    if (Node<T>* in = wants(self, 0)) {
      T* gp = in->grad_buffer().data();
      for (std::int64_t o = 0; o < s.outer; ++o)
        for (std::int64_t j = 0; j < s.n; ++j)
          kernels::axpy<T>(s.inner, T(1), self.grad.data() + o * s.inner,
                           gp + (o * s.n + j) * s.inner);
    }
  });
}

template <typename T>
V<T> mean_dim(const V<T>& a, int dim) {
  dim = norm_dim(dim, static_cast<int>(a.shape().size()));
  return mul_scalar<T>(sum_dim<T>(a, dim), T(1) / static_cast<T>(a.shape()[dim]));
}

template <typename T>
V<T> max_dim(const V<T>& a, int dim) {
  dim = norm_dim(dim, static_cast<int>(a.shape().size()));
  const Split s = split_at(a.shape(), dim);
  Shape out_shape = a.shape();
  out_shape[dim] = 1;
  Tensor<T> y(out_shape);
  std::vector<std::int64_t> arg(static_cast<std::size_t>(s.outer * s.inner));
  const T* xp = a.value().data();
  for (std::int64_t o = 0; o < s.outer; ++o)
    for (std::int64_t k = 0; k < s.inner; ++k) {
      std::int64_t best = 0;
      T bv = xp[o * s.n * s.inner + k];
      for (std::int64_t j = 1; j < s.n; ++j) {
        const T v = xp[(o * s.n + j) * s.inner + k];
        if (v > bv) {
          bv = v;
          best = j;
        }
      }
      y[o * s.inner + k] = bv;
      arg[o * s.inner + k] = best;
    }
  return make_result<T>(y, {a}, [s, arg](Node<T>& self) {
    if (Node<T>* in = wants(self, 0)) {
      T* gp = in->grad_buffer().data();
      for (std::int64_t o = 0; o < s.outer; ++o)
        for (std::int64_t k = 0; k < s.inner; ++k)
          gp[(o * s.n + arg[o * s.inner + k]) * s.inner + k] +=
              self.grad[o * s.inner + k];
    }
  });
}

// ---- linear algebra -----------------------------------------------------------

template <typename T>
V<T> matmul(const V<T>& a, const V<T>& b, bool trans_a, bool trans_b) {
  if (a.shape().size() != 2 || b.shape().size() != 2)
    throw ShapeError("matmul needs 2-d operands");
  const int m = static_cast<int>(trans_a ? a.dim(1) : a.dim(0));
  const int k = static_cast<int>(trans_a ? a.dim(0) : a.dim(1));
  const int kb = static_cast<int>(trans_b ? b.dim(1) : b.dim(0));
  const int n = static_cast<int>(trans_b ? b.dim(0) : b.dim(1));
  if (k != kb)
    throw ShapeError("matmul " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const Tensor<T> av = a.value();
  const Tensor<T> bv = b.value();
  const int lda = static_cast<int>(a.dim(1));
  const int ldb = static_cast<int>(b.dim(1));
  Tensor<T> y({m, n});
  kernels::gemm<T>(trans_a, trans_b, m, n, k, T(1), av.data(), lda, bv.data(),
                   ldb, T(0), y.data(), n);
  return make_result<T>(y, {a, b}, [=](Node<T>& self) {
    const T* dy = self.grad.data();
    if (Node<T>* in = wants(self, 0)) {
      T* ga = in->grad_buffer().data();
      if (!trans_a)  // dA[m,k] = dY[m,n] * op(B)^T
        kernels::gemm<T>(false, !trans_b, m, k, n, T(1), dy, n, bv.data(), ldb,
                         T(1), ga, lda);
      else  // dA[k,m] = op(B)[k,n] * dY^T
        kernels::gemm<T>(trans_b, true, k, m, n, T(1), bv.data(), ldb, dy, n,
                         T(1), ga, lda);
    }
    if (Node<T>* in = wants(self, 1)) {
      T* gb = in->grad_buffer().data();
      if (!trans_b)  // dB[k,n] = op(A)^T * dY
        kernels::gemm<T>(!trans_a, false, k, n, m, T(1), av.data(), lda, dy, n,
                         T(1), gb, ldb);
      else  // dB[n,k] = dY^T * op(A)
        kernels::gemm<T>(true, trans_a, n, k, m, T(1), dy, n, av.data(), lda,
                         T(1), gb, ldb);
    }
  });
}

template <typename T>
V<T> linear(const V<T>& x, const V<T>& w, const V<T>& b) {
  if (x.shape().size() != 2 || w.shape().size() != 2 || x.dim(1) != w.dim(1))
    throw ShapeError("linear " + shape_str(x.shape()) + " with weight " +
                     shape_str(w.shape()));
  const int batch = static_cast<int>(x.dim(0));
  const int in_f = static_cast<int>(x.dim(1));
  const int out_f = static_cast<int>(w.dim(0));
  const Tensor<T> xv = x.value();
  const Tensor<T> wv = w.value();
  Tensor<T> y({batch, out_f});
  kernels::gemm<T>(false, true, batch, out_f, in_f, T(1), xv.data(), in_f,
                   wv.data(), in_f, T(0), y.data(), out_f);
  const bool has_bias = b.defined();
  if (has_bias) {
    if (b.numel() != static_cast<std::size_t>(out_f))
      throw ShapeError("linear bias size");
    for (int i = 0; i < batch; ++i)
      kernels::axpy<T>(out_f, T(1), b.value().data(), y.data() + i * out_f);
  }
  std::vector<V<T>> inputs{x, w};
  if (has_bias) inputs.push_back(b);
  return make_result<T>(y, inputs, [=](Node<T>& self) {
    const T* dy = self.grad.data();
    if (Node<T>* in = wants(self, 0))
      kernels::gemm<T>(false, false, batch, in_f, out_f, T(1), dy, out_f,
                       wv.data(), in_f, T(1), in->grad_buffer().data(), in_f);
    if (Node<T>* in = wants(self, 1))
      kernels::gemm<T>(true, false, out_f, in_f, batch, T(1), dy, out_f,
                       xv.data(), in_f, T(1), in->grad_buffer().data(), in_f);
    if (has_bias) {
      if (Node<T>* in = wants(self, 2)) {
        T* gb = in->grad_buffer().data();
        for (int i = 0; i < batch; ++i)
          kernels::axpy<T>(out_f, T(1), dy + i * out_f, gb);
      }
    }
  });
}

// ---- convolution ----------------------------------------------------------------

namespace {

struct ConvGeom {
  int batch, cin, h, w, cout, kh, kw, stride, pad, ho, wo;
  int k() const { return cin * kh * kw; }
  int hw_out() const { return ho * wo; }
};

// col[K, nb*HoWo] for images [b0, b0+nb).
template <typename T>
void im2col(const ConvGeom& g, const T* x, int b0, int nb, T* col) {
  const int hw = g.hw_out();
  const int ncols = nb * hw;
  for (int c = 0; c < g.cin; ++c)
    for (int i = 0; i < g.kh; ++i)
      for (int j = 0; j < g.kw; ++j) {
        T* row = col + static_cast<std::ptrdiff_t>((c * g.kh + i) * g.kw + j) * ncols;
        for (int bb = 0; bb < nb; ++bb) {
          const T* plane = x + (static_cast<std::ptrdiff_t>(b0 + bb) * g.cin + c) * g.h * g.w;
          T* dst = row + bb * hw;
          for (int oh = 0; oh < g.ho; ++oh) {
            const int ih = oh * g.stride - g.pad + i;
            T* d = dst + oh * g.wo;
            if (ih < 0 || ih >= g.h) {
              std::fill(d, d + g.wo, T(0));
              continue;
            }
            const T* src = plane + ih * g.w;
            if (g.stride == 1) {
              const int lo = std::max(0, g.pad - j);
              const int hi = std::min(g.wo, g.w + g.pad - j);
              for (int ow = 0; ow < lo; ++ow) d[ow] = T(0);
              for (int ow = lo; ow < hi; ++ow) d[ow] = src[ow - g.pad + j];
              for (int ow = std::max(hi, lo); ow < g.wo; ++ow) d[ow] = T(0);
            } else {
              for (int ow = 0; ow < g.wo; ++ow) {
                const int iw = ow * g.stride - g.pad + j;
                d[ow] = (iw >= 0 && iw < g.w) ? src[iw] : T(0);
              }
            }
          }
        }
      }
}

template <typename T>
void col2im(const ConvGeom& g, const T* col, int b0, int nb, T* dx) {
  const int hw = g.hw_out();
  const int ncols = nb * hw;
  for (int c = 0; c < g.cin; ++c)
    for (int i = 0; i < g.kh; ++i)
      for (int j = 0; j < g.kw; ++j) {
        const T* row = col + static_cast<std::ptrdiff_t>((c * g.kh + i) * g.kw + j) * ncols;
        for (int bb = 0; bb < nb; ++bb) {
          T* plane = dx + (static_cast<std::ptrdiff_t>(b0 + bb) * g.cin + c) * g.h * g.w;
          const T* src = row + bb * hw;
          for (int oh = 0; oh < g.ho; ++oh) {
            const int ih = oh * g.stride - g.pad + i;
            if (ih < 0 || ih >= g.h) continue;
            T* d = plane + ih * g.w;
            const T* s = src + oh * g.wo;
            for (int ow = 0; ow < g.wo; ++ow) {
              const int iw = ow * g.stride - g.pad + j;
              if (iw >= 0 && iw < g.w) d[iw] += s[ow];
            }
          }
        }
      }
}

int chunk_images(const ConvGeom& g) {
  const int target = 2048;
  const int per = std::max(1, target / std::max(1, g.hw_out()));
  return std::min(g.batch, per);
}

bool is_pointwise(const ConvGeom& g) {
  return g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0;
}

}  // namespace

template <typename T>
V<T> conv2d(const V<T>& x, const V<T>& w, const V<T>& b, int stride, int pad) {
  if (x.shape().size() != 4 || w.shape().size() != 4 || x.dim(1) != w.dim(1))
    throw ShapeError("conv2d input " + shape_str(x.shape()) + " weight " +
                     shape_str(w.shape()));
  if (stride < 1 || pad < 0) throw std::invalid_argument("conv2d stride/pad");
  ConvGeom g{};
  g.batch = static_cast<int>(x.dim(0));
  g.cin = static_cast<int>(x.dim(1));
  g.h = static_cast<int>(x.dim(2));
  g.w = static_cast<int>(x.dim(3));
  g.cout = static_cast<int>(w.dim(0));
  g.kh = static_cast<int>(w.dim(2));
  g.kw = static_cast<int>(w.dim(3));
  g.stride = stride;
  g.pad = pad;
  g.ho = (g.h + 2 * pad - g.kh) / stride + 1;
  g.wo = (g.w + 2 * pad - g.kw) / stride + 1;
  if (g.ho <= 0 || g.wo <= 0) throw ShapeError("conv2d output is empty");
  const bool has_bias = b.defined();
  if (has_bias && b.numel() != static_cast<std::size_t>(g.cout))
    throw ShapeError("conv2d bias size");

  const Tensor<T> xv = x.value();
  const Tensor<T> wv = w.value();
  Tensor<T> y({g.batch, g.cout, g.ho, g.wo});
  const int hw = g.hw_out();
  const int kdim = g.k();
  const int nb_max = chunk_images(g);
  const bool pointwise = is_pointwise(g);
  std::vector<T> col;
  std::vector<T> tmp;
  for (int b0 = 0; b0 < g.batch; b0 += nb_max) {
    const int nb = std::min(nb_max, g.batch - b0);
    const int ncols = nb * hw;
    const T* colp;
    if (pointwise && nb == 1) {
      colp = xv.data() + static_cast<std::ptrdiff_t>(b0) * g.cin * hw;
    } else {
      col.resize(static_cast<std::size_t>(kdim) * ncols);
      im2col(g, xv.data(), b0, nb, col.data());
      colp = col.data();
    }
    if (nb == 1) {
      kernels::gemm<T>(false, false, g.cout, hw, kdim, T(1), wv.data(), kdim,
                       colp, ncols, T(0),
                       y.data() + static_cast<std::ptrdiff_t>(b0) * g.cout * hw, hw);
    } else {
      tmp.resize(static_cast<std::size_t>(g.cout) * ncols);
      kernels::gemm<T>(false, false, g.cout, ncols, kdim, T(1), wv.data(), kdim,
                       colp, ncols, T(0), tmp.data(), ncols);
      for (int bb = 0; bb < nb; ++bb)
        for (int co = 0; co < g.cout; ++co)
          std::copy(tmp.data() + static_cast<std::ptrdiff_t>(co) * ncols + bb * hw,
                    tmp.data() + static_cast<std::ptrdiff_t>(co) * ncols + (bb + 1) * hw,
                    y.data() + (static_cast<std::ptrdiff_t>(b0 + bb) * g.cout + co) * hw);
    }
  }
  if (has_bias) {
    const T* bp = b.value().data();
    for (int n = 0; n < g.batch; ++n)
      for (int co = 0; co < g.cout; ++co) {
        T* p = y.data() + (static_cast<std::ptrdiff_t>(n) * g.cout + co) * hw;
        const T bv = bp[co];
        for (int i = 0; i < hw; ++i) p[i] += bv;
      }
  }
  std::vector<V<T>> inputs{x, w};
  if (has_bias) inputs.push_back(b);
  return make_result<T>(y, inputs, [=](Node<T>& self) {
    Node<T>* gx = wants(self, 0);
    Node<T>* gw = wants(self, 1);
    Node<T>* gb = has_bias ? wants(self, 2) : nullptr;
    const T* dy = self.grad.data();
    if (gb) {
      T* p = gb->grad_buffer().data();
      for (int n = 0; n < g.batch; ++n)
        for (int co = 0; co < g.cout; ++co)
          p[co] += kernels::sum<T>(hw, dy + (static_cast<std::ptrdiff_t>(n) * g.cout + co) * hw);
    }
    if (!gx && !gw) return;
    T* dxp = gx ? gx->grad_buffer().data() : nullptr;
    T* dwp = gw ? gw->grad_buffer().data() : nullptr;
    std::vector<T> col;
    std::vector<T> dyt;
    std::vector<T> dcol;
    for (int b0 = 0; b0 < g.batch; b0 += nb_max) {
      const int nb = std::min(nb_max, g.batch - b0);
      const int ncols = nb * hw;
      const T* dyp;
      if (nb == 1) {
        dyp = dy + static_cast<std::ptrdiff_t>(b0) * g.cout * hw;
      } else {
        dyt.resize(static_cast<std::size_t>(g.cout) * ncols);
        for (int bb = 0; bb < nb; ++bb)
          for (int co = 0; co < g.cout; ++co) {
            const T* src = dy + (static_cast<std::ptrdiff_t>(b0 + bb) * g.cout + co) * hw;
            std::copy(src, src + hw, dyt.data() + static_cast<std::ptrdiff_t>(co) * ncols + bb * hw);
          }
        dyp = dyt.data();
      }
      if (dwp) {
        const T* colp;
        if (pointwise && nb == 1) {
          colp = xv.data() + static_cast<std::ptrdiff_t>(b0) * g.cin * hw;
        } else {
          col.resize(static_cast<std::size_t>(kdim) * ncols);
          im2col(g, xv.data(), b0, nb, col.data());
          colp = col.data();
        }
        kernels::gemm<T>(false, true, g.cout, kdim, ncols, T(1), dyp, ncols,
                         colp, ncols, T(1), dwp, kdim);
      }
      if (dxp) {
        if (pointwise && nb == 1) {
          kernels::gemm<T>(true, false, kdim, ncols, g.cout, T(1), wv.data(),
                           kdim, dyp, ncols, T(1),
                           dxp + static_cast<std::ptrdiff_t>(b0) * g.cin * hw, ncols);
        } else {
          dcol.resize(static_cast<std::size_t>(kdim) * ncols);
          kernels::gemm<T>(true, false, kdim, ncols, g.cout, T(1), wv.data(),
                           kdim, dyp, ncols, T(0), dcol.data(), ncols);
          col2im(g, dcol.data(), b0, nb, dxp);
        }
      }
    }
  });
}

template <typename T>
V<T> upsample2x(const V<T>& x) {
  if (x.shape().size() != 4) throw ShapeError("upsample2x needs NCHW");
  const int planes = static_cast<int>(x.dim(0) * x.dim(1));
  const int h = static_cast<int>(x.dim(2));
  const int w = static_cast<int>(x.dim(3));
  const int ho = 2 * h;
  const int wo = 2 * w;
  struct Tap {
    int i0, i1;
    T l1;
  };
  auto taps = [](int in, int out) {
    std::vector<Tap> t(out);
    for (int o = 0; o < out; ++o) {
      T src = (static_cast<T>(o) + T(0.5)) / T(2) - T(0.5);
      if (src < T(0)) src = T(0);
      int i0 = static_cast<int>(std::floor(src));
      if (i0 > in - 1) i0 = in - 1;
      const int i1 = std::min(i0 + 1, in - 1);
      t[o] = {i0, i1, src - static_cast<T>(i0)};
    }
    return t;
  };
  const std::vector<Tap> th = taps(h, ho);
  const std::vector<Tap> tw = taps(w, wo);
  Tensor<T> y({x.dim(0), x.dim(1), ho, wo});
  const T* xp = x.value().data();
  for (int p = 0; p < planes; ++p) {
    const T* src = xp + static_cast<std::ptrdiff_t>(p) * h * w;
    T* dst = y.data() + static_cast<std::ptrdiff_t>(p) * ho * wo;
    for (int oh = 0; oh < ho; ++oh) {
      const Tap& a = th[oh];
      const T* r0 = src + a.i0 * w;
      const T* r1 = src + a.i1 * w;
      for (int ow = 0; ow < wo; ++ow) {
        const Tap& b = tw[ow];
        const T top = r0[b.i0] * (T(1) - b.l1) + r0[b.i1] * b.l1;
        const T bot = r1[b.i0] * (T(1) - b.l1) + r1[b.i1] * b.l1;
        dst[oh * wo + ow] = top * (T(1) - a.l1) + bot * a.l1;
      }
    }
  }
  return make_result<T>(y, {x}, [=](Node<T>& self) {
    if (Node<T>* in = wants(self, 0)) {
      T* gp = in->grad_buffer().data();
      const T* dy = self.grad.data();
      for (int p = 0; p < planes; ++p) {
        T* dst = gp + static_cast<std::ptrdiff_t>(p) * h * w;
        const T* src = dy + static_cast<std::ptrdiff_t>(p) * ho * wo;
        for (int oh = 0; oh < ho; ++oh) {
          const Tap& a = th[oh];
          for (int ow = 0; ow < wo; ++ow) {
            const Tap& b = tw[ow];
            const T g = src[oh * wo + ow];
            const T gt = g * (T(1) - a.l1);
            const T gb = g * a.l1;
            dst[a.i0 * w + b.i0] += gt * (T(1) - b.l1);
            dst[a.i0 * w + b.i1] += gt * b.l1;
            dst[a.i1 * w + b.i0] += gb * (T(1) - b.l1);
            dst[a.i1 * w + b.i1] += gb * b.l1;
          }
        }
      }
    }
  });
}

// ---- normalization ---------------------------------------------------------------

template <typename T>
V<T> batch_norm(const V<T>& x, const V<T>& gamma, const V<T>& beta,
                Tensor<T> running_mean, Tensor<T> running_var, bool training,
                T momentum, T eps) {
  if (x.shape().size() != 4) throw ShapeError("batch_norm needs NCHW");
  const int n = static_cast<int>(x.dim(0));
  const int c = static_cast<int>(x.dim(1));
  const int hw = static_cast<int>(x.dim(2) * x.dim(3));
  const T count = static_cast<T>(n) * hw;
  const Tensor<T> xv = x.value();
  std::vector<T> mean(c), invstd(c);
  if (training) {
    if (n * hw < 2) throw ShapeError("batch_norm training needs > 1 value per channel");
    for (int ch = 0; ch < c; ++ch) {
      double s = 0, ss = 0;
      for (int b = 0; b < n; ++b) {
        const T* p = xv.data() + (static_cast<std::ptrdiff_t>(b) * c + ch) * hw;
        for (int i = 0; i < hw; ++i) s += p[i];
      }
      const double m = s / count;
      for (int b = 0; b < n; ++b) {
        const T* p = xv.data() + (static_cast<std::ptrdiff_t>(b) * c + ch) * hw;
        for (int i = 0; i < hw; ++i) ss += (p[i] - m) * (p[i] - m);
      }
      const double var = ss / count;
      mean[ch] = static_cast<T>(m);
      invstd[ch] = static_cast<T>(1.0 / std::sqrt(var + eps));
      if (running_mean.defined()) {
        running_mean[ch] = (T(1) - momentum) * running_mean[ch] + momentum * static_cast<T>(m);
        running_var[ch] = (T(1) - momentum) * running_var[ch] +
                          momentum * static_cast<T>(ss / std::max(1.0, count - 1.0));
      }
    }
  } else {
    for (int ch = 0; ch < c; ++ch) {
      mean[ch] = running_mean[ch];
      invstd[ch] = T(1) / std::sqrt(running_var[ch] + eps);
    }
  }
  Tensor<T> xhat(x.shape());
  Tensor<T> y(x.shape());
  const T* gp = gamma.value().data();
  const T* bp = beta.value().data();
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch) {
      const std::ptrdiff_t off = (static_cast<std::ptrdiff_t>(b) * c + ch) * hw;
      for (int i = 0; i < hw; ++i) {
        const T xh = (xv[off + i] - mean[ch]) * invstd[ch];
        xhat[off + i] = xh;
        y[off + i] = gp[ch] * xh + bp[ch];
      }
    }
  const Tensor<T> gv = gamma.value();
  return make_result<T>(y, {x, gamma, beta}, [=](Node<T>& self) {
    const T* dy = self.grad.data();
    std::vector<T> sum_dy(c, T(0)), sum_dy_xh(c, T(0));
    for (int b = 0; b < n; ++b)
      for (int ch = 0; ch < c; ++ch) {
        const std::ptrdiff_t off = (static_cast<std::ptrdiff_t>(b) * c + ch) * hw;
        sum_dy[ch] += kernels::sum<T>(hw, dy + off);
        sum_dy_xh[ch] += kernels::dot<T>(hw, dy + off, xhat.data() + off);
      }
    if (Node<T>* in = wants(self, 1)) {
      T* g = in->grad_buffer().data();
      for (int ch = 0; ch < c; ++ch) g[ch] += sum_dy_xh[ch];
    }
    if (Node<T>* in = wants(self, 2)) {
      T* g = in->grad_buffer().data();
      for (int ch = 0; ch < c; ++ch) g[ch] += sum_dy[ch];
    }
    if (Node<T>* in = wants(self, 0)) {
      T* g = in->grad_buffer().data();
      for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch) {
          const std::ptrdiff_t off = (static_cast<std::ptrdiff_t>(b) * c + ch) * hw;
          const T k = gv[ch] * invstd[ch];
          if (training) {
            const T m1 = sum_dy[ch] / count;
            const T m2 = sum_dy_xh[ch] / count;
            for (int i = 0; i < hw; ++i)
              g[off + i] += k * (dy[off + i] - m1 - xhat[off + i] * m2);
          } else {
            for (int i = 0; i < hw; ++i) g[off + i] += k * dy[off + i];
          }
        }
    }
  });
}

template <typename T>
V<T> instance_norm(const V<T>& x, T eps) {
  if (x.shape().size() != 4) throw ShapeError("instance_norm needs NCHW");
  const int planes = static_cast<int>(x.dim(0) * x.dim(1));
  const int hw = static_cast<int>(x.dim(2) * x.dim(3));
  const Tensor<T> xv = x.value();
  Tensor<T> y(x.shape());
  std::vector<T> invstd(planes);
  for (int p = 0; p < planes; ++p) {
    const T* src = xv.data() + static_cast<std::ptrdiff_t>(p) * hw;
    T* dst = y.data() + static_cast<std::ptrdiff_t>(p) * hw;
    double s = 0;
    for (int i = 0; i < hw; ++i) s += src[i];
    const double m = s / hw;
    double ss = 0;
    for (int i = 0; i < hw; ++i) ss += (src[i] - m) * (src[i] - m);
    const T is = static_cast<T>(1.0 / std::sqrt(ss / hw + eps));
    invstd[p] = is;
    const T mt = static_cast<T>(m);
    for (int i = 0; i < hw; ++i) dst[i] = (src[i] - mt) * is;
  }
  return make_result<T>(y, {x}, [=](Node<T>& self) {
    if (Node<T>* in = wants(self, 0)) {
      T* g = in->grad_buffer().data();
      const T* dy = self.grad.data();
      for (int p = 0; p < planes; ++p) {
        const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(p) * hw;
        const T m1 = kernels::sum<T>(hw, dy + off) / hw;
        const T m2 = kernels::dot<T>(hw, dy + off, y.data() + off) / hw;
        for (int i = 0; i < hw; ++i)
          g[off + i] += invstd[p] * (dy[off + i] - m1 - y[off + i] * m2);
      }
    }
  });
}

namespace {

// Normalizes `n` vectors of length `len` with element stride `stride`
// (vector v, element e at base(v) + e*stride).
template <typename T, typename Base>
V<T> normalize_strided(const V<T>& x, std::int64_t count, std::int64_t len,
                       std::int64_t stride, Base base, T eps) {
  const Tensor<T> xv = x.value();
  Tensor<T> y(x.shape());
  std::vector<T> inv(static_cast<std::size_t>(count));
  for (std::int64_t v = 0; v < count; ++v) {
    const std::int64_t b = base(v);
    T ss = 0;
    for (std::int64_t e = 0; e < len; ++e) ss += xv[b + e * stride] * xv[b + e * stride];
    const T r = std::max(std::sqrt(ss), eps);
    inv[v] = T(1) / r;
    for (std::int64_t e = 0; e < len; ++e) y[b + e * stride] = xv[b + e * stride] * inv[v];
  }
  return make_result<T>(y, {x}, [=](Node<T>& self) {
    if (Node<T>* in = wants(self, 0)) {
      T* g = in->grad_buffer().data();
      const T* dy = self.grad.data();
      for (std::int64_t v = 0; v < count; ++v) {
        const std::int64_t b = base(v);
        T d = 0;
        for (std::int64_t e = 0; e < len; ++e) d += y[b + e * stride] * dy[b + e * stride];
        for (std::int64_t e = 0; e < len; ++e)
          g[b + e * stride] += inv[v] * (dy[b + e * stride] - y[b + e * stride] * d);
      }
    }
  });
}

}  // namespace

template <typename T>
V<T> normalize_rows(const V<T>& x, T eps) {
  if (x.shape().size() != 2) throw ShapeError("normalize_rows needs 2-d input");
  const std::int64_t len = x.dim(1);
  return normalize_strided<T>(x, x.dim(0), len, 1,
                              [len](std::int64_t v) { return v * len; }, eps);
}

template <typename T>
V<T> normalize_channels(const V<T>& x, T eps) {
  if (x.shape().size() != 4) throw ShapeError("normalize_channels needs NCHW");
  const std::int64_t c = x.dim(1);
  const std::int64_t hw = x.dim(2) * x.dim(3);
  return normalize_strided<T>(
      x, x.dim(0) * hw, c, hw,
      [c, hw](std::int64_t v) { return (v / hw) * c * hw + (v % hw); }, eps);
}

template <typename T>
V<T> spectral_normalize(const V<T>& w, Tensor<T> u, bool training) {
  const int rows = static_cast<int>(w.dim(0));
  const int cols = static_cast<int>(w.numel() / rows);
  if (u.numel() != static_cast<std::size_t>(rows))
    throw ShapeError("spectral_normalize: u has wrong length");
  const Tensor<T> wv = w.value();
  const T* W = wv.data();
  auto unit = [](std::vector<T>& v) {
    T ss = 0;
    for (T x : v) ss += x * x;
    const T n = std::max(std::sqrt(ss), T(1e-12));
    for (T& x : v) x /= n;
  };
  std::vector<T> uu(u.data(), u.data() + rows);
  std::vector<T> v(cols, T(0));
  for (int r = 0; r < rows; ++r) kernels::axpy<T>(cols, uu[r], W + static_cast<std::ptrdiff_t>(r) * cols, v.data());
  unit(v);
  if (training) {
    for (int r = 0; r < rows; ++r)
      uu[r] = kernels::dot<T>(cols, W + static_cast<std::ptrdiff_t>(r) * cols, v.data());
    unit(uu);
    std::copy(uu.begin(), uu.end(), u.data());
  }
  T sigma = 0;
  for (int r = 0; r < rows; ++r)
    sigma += uu[r] * kernels::dot<T>(cols, W + static_cast<std::ptrdiff_t>(r) * cols, v.data());
  if (!(sigma > T(0))) sigma = T(1e-12);
  Tensor<T> y = wv.clone();
  kernels::scale<T>(y.numel(), T(1) / sigma, y.data());
  return make_result<T>(y, {w}, [=](Node<T>& self) {
    if (Node<T>* in = wants(self, 0)) {
      T* g = in->grad_buffer().data();
      const T* dy = self.grad.data();
      const T proj = kernels::dot<T>(y.numel(), dy, y.data());
      for (int r = 0; r < rows; ++r)
        for (int c2 = 0; c2 < cols; ++c2) {
          const std::ptrdiff_t i = static_cast<std::ptrdiff_t>(r) * cols + c2;
          g[i] += (dy[i] - proj * uu[r] * v[c2]) / sigma;
        }
    }
  });
}

// ---- classification -----------------------------------------------------------

template <typename T>
V<T> log_softmax(const V<T>& x) {
  if (x.shape().size() != 2) throw ShapeError("log_softmax needs 2-d input");
  const int rows = static_cast<int>(x.dim(0));
  const int cols = static_cast<int>(x.dim(1));
  Tensor<T> y(x.shape());
  const T* xp = x.value().data();
  for (int r = 0; r < rows; ++r) {
    const T* src = xp + static_cast<std::ptrdiff_t>(r) * cols;
    T* dst = y.data() + static_cast<std::ptrdiff_t>(r) * cols;
    const T m = *std::max_element(src, src + cols);
    T s = 0;
    for (int j = 0; j < cols; ++j) s += std::exp(src[j] - m);
    const T lse = m + std::log(s);
    for (int j = 0; j < cols; ++j) dst[j] = src[j] - lse;
  }
  return make_result<T>(y, {x}, [=](Node<T>& self) {
    if (Node<T>* in = wants(self, 0)) {
      T* g = in->grad_buffer().data();
      const T* dy = self.grad.data();
      for (int r = 0; r < rows; ++r) {
        const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(r) * cols;
        const T s = kernels::sum<T>(cols, dy + off);
        for (int j = 0; j < cols; ++j) g[off + j] += dy[off + j] - std::exp(y[off + j]) * s;
      }
    }
  });
}

template <typename T>
V<T> softmax(const V<T>& x) {
  if (x.shape().size() != 2) throw ShapeError("softmax needs 2-d input");
  const int rows = static_cast<int>(x.dim(0));
  const int cols = static_cast<int>(x.dim(1));
  Tensor<T> y(x.shape());
  const T* xp = x.value().data();
  for (int r = 0; r < rows; ++r) {
    const T* src = xp + static_cast<std::ptrdiff_t>(r) * cols;
    T* dst = y.data() + static_cast<std::ptrdiff_t>(r) * cols;
    const T m = *std::max_element(src, src + cols);
    T s = 0;
    for (int j = 0; j < cols; ++j) s += (dst[j] = std::exp(src[j] - m));
    for (int j = 0; j < cols; ++j) dst[j] /= s;
  }
  return make_result<T>(y, {x}, [=](Node<T>& self) {
    if (Node<T>* in = wants(self, 0)) {
      T* g = in->grad_buffer().data();
      const T* dy = self.grad.data();
      for (int r = 0; r < rows; ++r) {
        const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(r) * cols;
        const T d = kernels::dot<T>(cols, dy + off, y.data() + off);
        for (int j = 0; j < cols; ++j) g[off + j] += y[off + j] * (dy[off + j] - d);
      }
    }
  });
}

template <typename T>
V<T> pick(const V<T>& x, const std::vector<int>& index) {
  if (x.shape().size() != 2 || static_cast<std::int64_t>(index.size()) != x.dim(0))
    throw ShapeError("pick: index count must equal rows");
  const int cols = static_cast<int>(x.dim(1));
  Tensor<T> y({x.dim(0)});
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] < 0 || index[r] >= cols)
      throw std::out_of_range("pick: index " + std::to_string(index[r]) +
                              " outside [0, " + std::to_string(cols) + ")");
    y[r] = x.value()[r * cols + index[r]];
  }
  return make_result<T>(y, {x}, [index, cols](Node<T>& self) {
    if (Node<T>* in = wants(self, 0)) {
      T* g = in->grad_buffer().data();
      for (std::size_t r = 0; r < index.size(); ++r) g[r * cols + index[r]] += self.grad[r];
    }
  });
}

template <typename T>
V<T> grad_reverse(const V<T>& x, T scale) {
  if (!(scale > T(0)))
    throw std::invalid_argument("grad_reverse: scale must be positive");
  Tensor<T> y = x.value().clone();
  return make_result<T>(y, {x}, [scale](Node<T>& self) {
    if (Node<T>* in = wants(self, 0))
      kernels::axpy<T>(self.grad.numel(), -scale, self.grad.data(),
                       in->grad_buffer().data());
  });
}

#define MTLFACE_INSTANTIATE(T)                                                  \
  template V<T> add(const V<T>&, const V<T>&);                                  \
  template V<T> sub(const V<T>&, const V<T>&);                                  \
  template V<T> mul(const V<T>&, const V<T>&);                                  \
  template V<T> add_scalar(const V<T>&, T);                                     \
  template V<T> mul_scalar(const V<T>&, T);                                     \
  template V<T> neg(const V<T>&);                                               \
  template V<T> square(const V<T>&);                                            \
  template V<T> exp(const V<T>&);                                               \
  template V<T> log(const V<T>&);                                               \
  template V<T> sigmoid(const V<T>&);                                           \
  template V<T> tanh(const V<T>&);                                              \
  template V<T> leaky_relu(const V<T>&, T);                                     \
  template V<T> relu(const V<T>&);                                              \
  template V<T> expand(const V<T>&, const Shape&);                              \
  template V<T> reshape(const V<T>&, const Shape&);                             \
  template V<T> narrow(const V<T>&, std::int64_t, std::int64_t);                \
  template V<T> concat(const std::vector<V<T>>&, int);                          \
  template V<T> index_select(const V<T>&, const std::vector<std::int64_t>&);    \
  template V<T> sum(const V<T>&);                                               \
  template V<T> mean(const V<T>&);                                              \
  template V<T> sum_dim(const V<T>&, int);                                      \
  template V<T> mean_dim(const V<T>&, int);                                     \
  template V<T> max_dim(const V<T>&, int);                                      \
  template V<T> matmul(const V<T>&, const V<T>&, bool, bool);                   \
  template V<T> linear(const V<T>&, const V<T>&, const V<T>&);                  \
  template V<T> conv2d(const V<T>&, const V<T>&, const V<T>&, int, int);        \
  template V<T> upsample2x(const V<T>&);                                        \
  template V<T> batch_norm(const V<T>&, const V<T>&, const V<T>&, Tensor<T>,    \
                           Tensor<T>, bool, T, T);                              \
  template V<T> instance_norm(const V<T>&, T);                                  \
  template V<T> normalize_rows(const V<T>&, T);                                 \
  template V<T> normalize_channels(const V<T>&, T);                             \
  template V<T> spectral_normalize(const V<T>&, Tensor<T>, bool);               \
  template V<T> log_softmax(const V<T>&);                                       \
  template V<T> softmax(const V<T>&);                                           \
  template V<T> pick(const V<T>&, const std::vector<int>&);                     \
  template V<T> grad_reverse(const V<T>&, T);

MTLFACE_INSTANTIATE(float)
MTLFACE_INSTANTIATE(double)

#undef MTLFACE_INSTANTIATE

}  // namespace mtlface::ops
