#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "epical/errors.hpp"

namespace epical {

// A named positive model parameter. Piecewise-constant entries carry k values
// and k-1 strictly increasing interior breakpoints (days from series start).
struct ParameterEntry {
  std::string name;
  std::vector<double> values;
  std::vector<double> breakpoints;

  bool piecewise() const noexcept { return values.size() > 1; }

  std::size_t segment(double t) const {
    return static_cast<std::size_t>(
        std::upper_bound(breakpoints.begin(), breakpoints.end(), t) -
        breakpoints.begin());
  }

  double at(double t) const { return values[segment(t)]; }
};

inline std::size_t segment_index(std::span<const double> breakpoints, double t) {
  return static_cast<std::size_t>(
      std::upper_bound(breakpoints.begin(), breakpoints.end(), t) -
      breakpoints.begin());
}

class ParameterVector {
 public:
  ParameterVector() = default;

  explicit ParameterVector(std::vector<ParameterEntry> entries)
      : entries_(std::move(entries)) {
    for (const auto& e : entries_) validate(e);
  }

  const std::vector<ParameterEntry>& entries() const noexcept { return entries_; }

  std::size_t size() const noexcept {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.values.size();
    return n;
  }

  std::vector<double> flat() const {
    std::vector<double> out;
    out.reserve(size());
    for (const auto& e : entries_) out.insert(out.end(), e.values.begin(), e.values.end());
    return out;
  }

  std::vector<std::string> flat_names() const {
    std::vector<std::string> out;
    for (const auto& e : entries_) {
      if (!e.piecewise()) {
        out.push_back(e.name);
      } else {
        for (std::size_t j = 0; j < e.values.size(); ++j) {
          out.push_back(e.name + "_" + std::to_string(j));
        }
      }
    }
    return out;
  }

  const ParameterEntry& entry(const std::string& name) const {
    for (const auto& e : entries_) {
      if (e.name == name) return e;
    }
    throw SchemaError("no parameter named '" + name + "'");
  }

  // Same structure as `layout`, values replaced in flat order.
  static ParameterVector from_flat(const ParameterVector& layout,
                                   std::span<const double> flat) {
    if (flat.size() != layout.size()) {
      throw ShapeError("flat parameter vector has " + std::to_string(flat.size()) +
                       " entries, expected " + std::to_string(layout.size()));
    }
    auto entries = layout.entries_;
    std::size_t k = 0;
    for (auto& e : entries) {
      for (auto& v : e.values) v = flat[k++];
    }
    return ParameterVector(std::move(entries));
  }

 private:
  static void validate(const ParameterEntry& e) {
    if (e.values.empty()) throw SchemaError("parameter '" + e.name + "' has no value");
    if (e.breakpoints.size() + 1 != e.values.size()) {
      throw SchemaError("parameter '" + e.name + "' needs " +
                        std::to_string(e.values.size() - 1) + " breakpoints");
    }
    for (std::size_t i = 1; i < e.breakpoints.size(); ++i) {
      if (!(e.breakpoints[i] > e.breakpoints[i - 1])) {
        throw SchemaError("breakpoints of '" + e.name + "' must increase");
      }
    }
    for (double v : e.values) {
      if (!std::isfinite(v) || !(v > 0.0)) {
        throw OutOfSupport("parameter '" + e.name + "' must be positive and finite");
      }
    }
  }

  std::vector<ParameterEntry> entries_;
};

}  // namespace epical
