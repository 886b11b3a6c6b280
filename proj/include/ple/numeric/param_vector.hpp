#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ple/numeric/tensor.hpp"

namespace ple {

/// Ordered collection of named parameter tensors.
///
/// Segment order is insertion order and is the order used by flatten(),
/// checkpoints, and finite-difference sweeps. Names are unique.
class ParamVector {
 public:
  struct Segment {
    std::string name;
    Tensor value;
    bool operator==(const Segment&) const = default;
  };

  std::size_t add(std::string name, Tensor value);

  std::size_t num_segments() const { return segments_.size(); }
  std::size_t total_size() const;

  std::optional<std::size_t> find(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;

  const std::string& name(std::size_t i) const { return segments_[i].name; }
  Tensor& operator[](std::size_t i) { return segments_[i].value; }
  const Tensor& operator[](std::size_t i) const { return segments_[i].value; }
  Tensor& at(std::string_view name) { return segments_[index_of(name)].value; }
  const Tensor& at(std::string_view name) const { return segments_[index_of(name)].value; }

  std::vector<double> flatten() const;
  void unflatten(std::span<const double> flat);

  // Same names and shapes, all values zero.
  ParamVector zeros_like() const;
  bool same_layout(const ParamVector& other) const;

  auto begin() const { return segments_.begin(); }
  auto end() const { return segments_.end(); }

  bool operator==(const ParamVector& other) const = default;

 private:
  std::vector<Segment> segments_;
};

// Flat-index helpers used by the finite-difference oracles.
struct FlatIndex {
  std::size_t segment;
  std::size_t offset;
};

}  // namespace ple
