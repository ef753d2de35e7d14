#include "mtlface/nn/params.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace mtlface::nn {

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

Var<float> ParamRegistry::add(const std::string& name, const std::string& group,
                              Tensor<float> init, bool trainable) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter " + name);
  index_[name] = entries_.size();
  entries_.push_back({name, group, Var<float>(std::move(init), trainable), trainable});
  return entries_.back().var;
}

const Param& ParamRegistry::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter " + name);
  return entries_[it->second];
}

Param& ParamRegistry::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter " + name);
  return entries_[it->second];
}

std::vector<Var<float>> ParamRegistry::trainable(
    const std::vector<std::string>& groups) const {
  std::set<std::string> want(groups.begin(), groups.end());
  std::vector<Var<float>> out;
  for (const auto& p : entries_)
    if (p.trainable && want.count(p.group)) out.push_back(p.var);
  return out;
}

std::vector<std::string> ParamRegistry::groups() const {
  std::vector<std::string> out;
  for (const auto& p : entries_)
    if (std::find(out.begin(), out.end(), p.group) == out.end()) out.push_back(p.group);
  return out;
}

std::uint64_t ParamRegistry::checksum(const std::string& group) const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& p : entries_) {
    if (p.group != group) continue;
    h = fnv1a(p.name.data(), p.name.size(), h);
    const Shape& s = p.var.shape();
    h = fnv1a(s.data(), s.size() * sizeof(s[0]), h);
    h = fnv1a(p.var.value().data(), p.var.numel() * sizeof(float), h);
  }
  return h;
}

std::map<std::string, std::uint64_t> ParamRegistry::checksums() const {
  std::map<std::string, std::uint64_t> out;
  for (const auto& g : groups()) out[g] = checksum(g);
  return out;
}

void ParamRegistry::zero_grad() {
  for (auto& p : entries_) p.var.zero_grad();
}

void ParamRegistry::copy_values_to(ParamRegistry& other) const {
  for (const auto& p : entries_) {
    Param& q = other.get(p.name);
    if (q.var.shape() != p.var.shape())
      throw ShapeError("shape mismatch copying " + p.name);
    q.var.mutable_value().copy_from(p.var.value());
  }
}

Tensor<float> kaiming_normal(const Shape& shape, std::int64_t fan_in, Rng& rng,
                             float gain) {
  std::normal_distribution<float> nd(0.0f, gain / std::sqrt(static_cast<float>(fan_in)));
  Tensor<float> t(shape);
  for (auto& v : t.span()) v = nd(rng);
  return t;
}

}  // namespace mtlface::nn
