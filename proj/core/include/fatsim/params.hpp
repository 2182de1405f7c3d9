#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "fatsim/tensor.hpp"

namespace fatsim {

// Ordered, named collection of tensors. Used for model weights and for
// anything shaped like them (gradients, velocities, control variates).
// Iteration order is insertion order and is the canonical order for
// serialization and aggregation.
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    friend bool operator==(const Entry&, const Entry&) = default;
  };

  void add(std::string name, Tensor value);

  bool contains(const std::string& name) const { return index_.contains(name); }
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  const Entry& entry(std::size_t i) const { return entries_.at(i); }
  Tensor& tensor(std::size_t i) { return entries_.at(i).value; }
  const Tensor& tensor(std::size_t i) const { return entries_.at(i).value; }
  std::span<const Entry> entries() const noexcept { return entries_; }
  std::vector<std::string> names() const;

  // Names of the tensors forming the final classification layer.
  void set_last_layer(std::vector<std::string> names);
  const std::vector<std::string>& last_layer() const noexcept { return last_layer_; }

  // Last-layer tensors flattened and concatenated in designation order.
  // With include_bias=false, entries whose name ends in "bias" are skipped.
  std::vector<double> last_layer_vector(bool include_bias = true) const;

  ParameterSet zeros_like() const;
  // Same names, order and shapes.
  bool same_layout(const ParameterSet& other) const;
  std::size_t num_values() const;
  bool all_finite() const;

  friend bool operator==(const ParameterSet& a, const ParameterSet& b) {
    return a.entries_ == b.entries_ && a.last_layer_ == b.last_layer_;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::string> last_layer_;
};

// Throws DimensionError naming the first mismatch.
void require_same_layout(const ParameterSet& a, const ParameterSet& b, const char* context);

// y += alpha * x, elementwise over matching layouts.
void axpy(double alpha, const ParameterSet& x, ParameterSet& y);

// a - b
ParameterSet difference(const ParameterSet& a, const ParameterSet& b);

double squared_distance(const ParameterSet& a, const ParameterSet& b);

}  // namespace fatsim
