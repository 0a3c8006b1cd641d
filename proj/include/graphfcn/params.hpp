#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "graphfcn/autodiff.hpp"
#include "graphfcn/errors.hpp"
#include "graphfcn/tensor.hpp"

namespace gfcn {

/// Per-parameter Adam moments and step counter.
struct AdamState {
  Tensor m;
  Tensor v;
  std::uint64_t steps = 0;
};

/// Named trainable tensors in insertion order.
class ModelParams {
 public:
  struct Entry {
    std::string name;
    Var var;
    AdamState adam;
  };

  Var& add(std::string name, Tensor init) {
    if (index_.count(name)) throw ValidationError("duplicate parameter name '" + name + "'");
    index_.emplace(name, entries_.size());
    AdamState st{Tensor(init.shape()), Tensor(init.shape()), 0};
    entries_.push_back({std::move(name), Var::leaf(std::move(init)), std::move(st)});
    return entries_.back().var;
  }

  bool contains(std::string_view name) const { return index_.count(std::string(name)) > 0; }

  const Var& at(std::string_view name) const { return entries_[lookup(name)].var; }
  Var& at(std::string_view name) { return entries_[lookup(name)].var; }

  std::size_t size() const noexcept { return entries_.size(); }
  std::vector<Entry>& entries() noexcept { return entries_; }
  const std::vector<Entry>& entries() const noexcept { return entries_; }

  std::size_t num_scalars() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.var.size();
    return n;
  }

  void zero_grads() {
    for (auto& e : entries_) e.var.zero_grad();
  }

  /// Deep copy with fresh leaves; optimizer state is copied too.
  ModelParams clone() const {
    ModelParams out;
    for (const auto& e : entries_) {
      out.add(e.name, e.var.value());
      out.entries_.back().adam = e.adam;
    }
    return out;
  }

  /// Names and values bit-identical (optimizer state ignored).
  bool same_values(const ModelParams& o) const {
    if (o.entries_.size() != entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (entries_[i].name != o.entries_[i].name) return false;
      if (!(entries_[i].var.value() == o.entries_[i].var.value())) return false;
    }
    return true;
  }

 private:
  std::size_t lookup(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw ValidationError("unknown parameter '" + std::string(name) + "'");
    return it->second;
  }

  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

/// uniform(−a, a) with a = sqrt(6 / (fan_in + fan_out)).
inline Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out,
                             std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

}  // namespace gfcn
