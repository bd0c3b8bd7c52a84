#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fpflow/core.hpp"

namespace fpflow {

/// Half-open range of slots inside a ParamVector.
struct ParamSegment {
  int offset = 0;
  int length = 0;
};

/// Flat array of trainable scalars with named, non-overlapping segments.
/// All model families (map components, potential, diffusion, variational
/// parameters) index into one shared instance.
class ParamVector {
 public:
  int add_segment(const std::string& name, int length, double init = 0.0) {
    if (length < 0) throw std::invalid_argument("ParamVector: negative segment length");
    if (has_segment(name)) throw std::invalid_argument("ParamVector: duplicate segment " + name);
    const int offset = static_cast<int>(values_.size());
    segments_.emplace_back(name, ParamSegment{offset, length});
    values_.resize(values_.size() + static_cast<size_t>(length), init);
    return offset;
  }

  bool has_segment(const std::string& name) const {
    for (const auto& [n, s] : segments_)
      if (n == name) return true;
    return false;
  }

  ParamSegment segment(const std::string& name) const {
    for (const auto& [n, s] : segments_)
      if (n == name) return s;
    throw std::invalid_argument("ParamVector: unknown segment " + name);
  }

  /// Insertion-ordered (name, segment) pairs; order is part of the layout.
  const std::vector<std::pair<std::string, ParamSegment>>& segments() const { return segments_; }

  int size() const { return static_cast<int>(values_.size()); }

  double& operator[](int slot) { return values_[static_cast<size_t>(slot)]; }
  double operator[](int slot) const { return values_[static_cast<size_t>(slot)]; }

  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }

  std::span<double> segment_values(const std::string& name) {
    const auto s = segment(name);
    return {values_.data() + s.offset, static_cast<size_t>(s.length)};
  }
  std::span<const double> segment_values(const std::string& name) const {
    const auto s = segment(name);
    return {values_.data() + s.offset, static_cast<size_t>(s.length)};
  }

  void check_finite() const {
    for (size_t i = 0; i < values_.size(); ++i)
      if (!std::isfinite(values_[i]))
        throw NonFiniteValue("ParamVector: non-finite value at slot " + std::to_string(i));
  }

 private:
  std::vector<double> values_;
  std::vector<std::pair<std::string, ParamSegment>> segments_;
};

}  // namespace fpflow
