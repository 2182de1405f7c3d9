#include "fatsim/params.hpp"

#include "fatsim/errors.hpp"

namespace fatsim {

void ParameterSet::add(std::string name, Tensor value) {
  if (index_.contains(name)) throw InvalidArgument("duplicate parameter name '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.push_back(Entry{std::move(name), std::move(value)});
}

const Tensor& ParameterSet::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw InvalidArgument("no parameter named '" + name + "'");
  return entries_[it->second].value;
}

Tensor& ParameterSet::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw InvalidArgument("no parameter named '" + name + "'");
  return entries_[it->second].value;
}

std::vector<std::string> ParameterSet::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.name);
  return out;
}

void ParameterSet::set_last_layer(std::vector<std::string> names) {
  if (names.empty()) throw InvalidArgument("last-layer designation must be non-empty");
  for (const auto& n : names) {
    if (!contains(n)) throw InvalidArgument("last-layer name '" + n + "' is not a parameter");
  }
  last_layer_ = std::move(names);
}

std::vector<double> ParameterSet::last_layer_vector(bool include_bias) const {
  if (last_layer_.empty()) throw InvalidArgument("parameter set has no last-layer designation");
  std::vector<double> out;
  for (const auto& n : last_layer_) {
    if (!include_bias && n.ends_with("bias")) continue;
    const auto values = at(n).data();
    out.insert(out.end(), values.begin(), values.end());
  }
  return out;
}

ParameterSet ParameterSet::zeros_like() const {
  ParameterSet out;
  for (const auto& e : entries_) out.add(e.name, Tensor(e.value.shape()));
  out.last_layer_ = last_layer_;
  return out;
}

bool ParameterSet::same_layout(const ParameterSet& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name != other.entries_[i].name) return false;
    if (entries_[i].value.shape() != other.entries_[i].value.shape()) return false;
  }
  return true;
}

std::size_t ParameterSet::num_values() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

bool ParameterSet::all_finite() const {
  for (const auto& e : entries_) {
    if (!e.value.all_finite()) return false;
  }
  return true;
}

void require_same_layout(const ParameterSet& a, const ParameterSet& b, const char* context) {
  if (a.size() != b.size()) {
    throw DimensionError(std::string(context) + ": parameter counts differ (" +
                         std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& x = a.entry(i);
    const auto& y = b.entry(i);
    if (x.name != y.name || x.value.shape() != y.value.shape()) {
      throw DimensionError(std::string(context) + ": '" + x.name + "' " + shape_str(x.value.shape()) +
                           " vs '" + y.name + "' " + shape_str(y.value.shape()));
    }
  }
}

void axpy(double alpha, const ParameterSet& x, ParameterSet& y) {
  require_same_layout(x, y, "axpy");
  for (std::size_t i = 0; i < x.size(); ++i) {
    auto src = x.tensor(i).data();
    auto dst = y.tensor(i).data();
    for (std::size_t j = 0; j < src.size(); ++j) dst[j] += alpha * src[j];
  }
}

ParameterSet difference(const ParameterSet& a, const ParameterSet& b) {
  require_same_layout(a, b, "difference");
  ParameterSet out = a;
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto dst = out.tensor(i).data();
    auto src = b.tensor(i).data();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] -= src[j];
  }
  return out;
}

double squared_distance(const ParameterSet& a, const ParameterSet& b) {
  require_same_layout(a, b, "squared_distance");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto x = a.tensor(i).data();
    auto y = b.tensor(i).data();
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double d = x[j] - y[j];
      acc += d * d;
    }
  }
  return acc;
}

}  // namespace fatsim
