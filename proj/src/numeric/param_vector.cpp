#include "ple/numeric/param_vector.hpp"

#include <algorithm>

#include "ple/error.hpp"

namespace ple {

std::size_t ParamVector::add(std::string name, Tensor value) {
  if (find(name)) throw ArgumentError("duplicate parameter segment '" + name + "'");
  segments_.push_back({std::move(name), std::move(value)});
  return segments_.size() - 1;
}

std::size_t ParamVector::total_size() const {
  std::size_t n = 0;
  for (const auto& s : segments_) n += s.value.size();
  return n;
}

std::optional<std::size_t> ParamVector::find(std::string_view name) const {
  for (std::size_t i = 0; i < segments_.size(); ++i) {
    if (segments_[i].name == name) return i;
  }
  return std::nullopt;
}

std::size_t ParamVector::index_of(std::string_view name) const {
  auto i = find(name);
  if (!i) throw ArgumentError("unknown parameter segment '" + std::string(name) + "'");
  return *i;
}

std::vector<double> ParamVector::flatten() const {
  std::vector<double> flat;
  flat.reserve(total_size());
  for (const auto& s : segments_) {
    auto d = s.value.data();
    flat.insert(flat.end(), d.begin(), d.end());
  }
  return flat;
}

void ParamVector::unflatten(std::span<const double> flat) {
  if (flat.size() != total_size()) {
    throw DimensionError("unflatten: got " + std::to_string(flat.size()) + " values, expected " +
                         std::to_string(total_size()));
  }
  std::size_t pos = 0;
  for (auto& s : segments_) {
    auto d = s.value.data();
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), d.size(), d.begin());
    pos += d.size();
  }
}

ParamVector ParamVector::zeros_like() const {
  ParamVector out;
  for (const auto& s : segments_) out.add(s.name, Tensor(s.value.shape()));
  return out;
}

bool ParamVector::same_layout(const ParamVector& other) const {
  if (other.segments_.size() != segments_.size()) return false;
  for (std::size_t i = 0; i < segments_.size(); ++i) {
    if (segments_[i].name != other.segments_[i].name) return false;
    if (segments_[i].value.shape() != other.segments_[i].value.shape()) return false;
  }
  return true;
}

}  // namespace ple
