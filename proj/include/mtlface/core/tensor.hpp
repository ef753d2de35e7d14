#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mtlface {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense row-major array with shared storage. Copies are shallow; use clone()
/// for a deep copy. Views produced by reshape()/narrow() alias the parent.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0))
      : storage_(std::make_shared<std::vector<T>>(shape_numel(shape), fill)),
        shape_(std::move(shape)) {}

  static Tensor from(Shape shape, std::vector<T> values) {
    if (static_cast<std::int64_t>(values.size()) != shape_numel(shape))
      throw ShapeError("Tensor::from: " + std::to_string(values.size()) +
                       " values for shape " + shape_str(shape));
    Tensor t;
    t.storage_ = std::make_shared<std::vector<T>>(std::move(values));
    t.shape_ = std::move(shape);
    return t;
  }

  static Tensor scalar(T v) { return from({}, {v}); }

  bool defined() const { return storage_ != nullptr; }
  const Shape& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  std::int64_t dim(int i) const {
    return shape_.at(i < 0 ? shape_.size() + i : static_cast<std::size_t>(i));
  }
  std::size_t numel() const {
    return defined() ? static_cast<std::size_t>(shape_numel(shape_)) : 0;
  }

  T* data() { return storage_->data() + offset_; }
  const T* data() const { return storage_->data() + offset_; }
  std::span<T> span() { return {data(), numel()}; }
  std::span<const T> span() const { return {data(), numel()}; }

  T& operator[](std::size_t i) { return data()[i]; }
  const T& operator[](std::size_t i) const { return data()[i]; }

  T item() const {
    if (numel() != 1) throw ShapeError("item() on " + shape_str(shape_));
    return data()[0];
  }

  // 4-d accessor (N, C, H, W).
  T& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return data()[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& at(std::int64_t n, std::int64_t c, std::int64_t h,
              std::int64_t w) const {
    return data()[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  T& at(std::int64_t r, std::int64_t c) { return data()[r * shape_[1] + c]; }
  const T& at(std::int64_t r, std::int64_t c) const {
    return data()[r * shape_[1] + c];
  }

  Tensor clone() const {
    if (!defined()) return {};
    return from(shape_, std::vector<T>(data(), data() + numel()));
  }

  Tensor reshape(Shape s) const {
    if (shape_numel(s) != static_cast<std::int64_t>(numel()))
      throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(s));
    Tensor t = *this;
    t.shape_ = std::move(s);
    return t;
  }

  /// View of rows [start, start+len) along dim 0; shares storage.
  Tensor narrow(std::int64_t start, std::int64_t len) const {
    if (ndim() < 1 || start < 0 || len < 0 || start + len > shape_[0])
      throw ShapeError("narrow out of range on " + shape_str(shape_));
    const std::int64_t row = shape_[0] == 0 ? 0 : shape_numel(shape_) / shape_[0];
    Tensor t = *this;
    t.offset_ += static_cast<std::size_t>(start * row);
    t.shape_[0] = len;
    return t;
  }

  void fill(T v) {
    for (auto& x : span()) x = v;
  }
  void copy_from(const Tensor& o) {
    if (o.numel() != numel()) throw ShapeError("copy_from size mismatch");
    std::copy(o.data(), o.data() + numel(), data());
  }

  bool same_storage(const Tensor& o) const { return storage_ == o.storage_; }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(numel());
    for (std::size_t i = 0; i < numel(); ++i) out[i] = static_cast<U>(data()[i]);
    return Tensor<U>::from(shape_, std::move(out));
  }

 private:
  std::shared_ptr<std::vector<T>> storage_;
  std::size_t offset_ = 0;
  Shape shape_;
};

}  // namespace mtlface
