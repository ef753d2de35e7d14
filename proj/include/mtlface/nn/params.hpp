#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "mtlface/core/autograd.hpp"

namespace mtlface::nn {

using Rng = std::mt19937_64;

/// A named array owned by the registry. Buffers (running statistics, power
/// iteration vectors) are entries with trainable == false.
struct Param {
  std::string name;
  std::string group;
  Var<float> var;
  bool trainable = true;
};

/// Flat, ordered store of every parameter and buffer of a model. Parameter
/// groups are the unit of optimizer assignment and isolation checksums.
class ParamRegistry {
 public:
  Var<float> add(const std::string& name, const std::string& group,
                 Tensor<float> init, bool trainable = true);

  const std::vector<Param>& entries() const { return entries_; }
  std::vector<Param>& entries() { return entries_; }
  const Param& get(const std::string& name) const;
  Param& get(const std::string& name);
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  /// Trainable parameters in the listed groups, in registration order.
  std::vector<Var<float>> trainable(const std::vector<std::string>& groups) const;
  std::vector<std::string> groups() const;

  /// FNV-1a over names, shapes and raw bytes of every entry in `group`.
  std::uint64_t checksum(const std::string& group) const;
  std::map<std::string, std::uint64_t> checksums() const;

  void zero_grad();
  /// Deep copies every value into `other`; names and shapes must match.
  void copy_values_to(ParamRegistry& other) const;

 private:
  std::vector<Param> entries_;
  std::map<std::string, std::size_t> index_;
};

std::uint64_t fnv1a(const void* data, std::size_t n,
                    std::uint64_t h = 1469598103934665603ULL);

/// He-style normal init scaled by fan-in.
Tensor<float> kaiming_normal(const Shape& shape, std::int64_t fan_in, Rng& rng,
                             float gain = 1.41421356f);

}  // namespace mtlface::nn
