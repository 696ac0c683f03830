#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "epical/autodiff.hpp"
#include "epical/errors.hpp"

namespace epical {

// Uniformly sampled multivariate series, stored row-major (time x compartment).
// Instantiated for double (data, predictions) and ad::Var (differentiable
// predictions).
template <class T>
class BasicTimeSeries {
 public:
  BasicTimeSeries() = default;

  BasicTimeSeries(std::vector<double> times, std::vector<std::string> labels,
                  std::vector<T> values)
      : times_(std::move(times)),
        labels_(std::move(labels)),
        values_(std::move(values)) {
    validate_structure();
  }

  std::size_t rows() const noexcept { return times_.size(); }
  std::size_t cols() const noexcept { return labels_.size(); }
  bool empty() const noexcept { return times_.empty(); }

  const std::vector<double>& times() const noexcept { return times_; }
  const std::vector<std::string>& labels() const noexcept { return labels_; }
  const std::vector<T>& values() const noexcept { return values_; }

  const T& at(std::size_t row, std::size_t col) const {
    return values_[row * cols() + col];
  }
  T& at(std::size_t row, std::size_t col) { return values_[row * cols() + col]; }

  std::span<const T> row(std::size_t r) const {
    return std::span<const T>(values_).subspan(r * cols(), cols());
  }

  std::vector<T> column(std::size_t c) const {
    std::vector<T> out;
    out.reserve(rows());
    for (std::size_t r = 0; r < rows(); ++r) out.push_back(at(r, c));
    return out;
  }

  std::optional<std::size_t> find(std::string_view label) const {
    for (std::size_t i = 0; i < labels_.size(); ++i) {
      if (labels_[i] == label) return i;
    }
    return std::nullopt;
  }

  std::size_t index_of(std::string_view label) const {
    if (auto i = find(label)) return *i;
    throw SchemaError("no compartment labelled '" + std::string(label) + "'");
  }

  double dt() const {
    if (rows() < 2) throw SchemaError("time step undefined for fewer than two rows");
    return times_[1] - times_[0];
  }

  // Rows [begin, end).
  BasicTimeSeries slice(std::size_t begin, std::size_t end) const {
    if (begin > end || end > rows()) throw EmptyWindow("row slice out of range");
    std::vector<double> t(times_.begin() + static_cast<std::ptrdiff_t>(begin),
                          times_.begin() + static_cast<std::ptrdiff_t>(end));
    std::vector<T> v(values_.begin() + static_cast<std::ptrdiff_t>(begin * cols()),
                     values_.begin() + static_cast<std::ptrdiff_t>(end * cols()));
    return BasicTimeSeries(std::move(t), labels_, std::move(v));
  }

 private:
  void validate_structure() const {
    if (values_.size() != times_.size() * labels_.size()) {
      throw ShapeError("time series values do not match rows x labels");
    }
    std::unordered_set<std::string> seen;
    for (const auto& l : labels_) {
      if (!seen.insert(l).second) throw SchemaError("duplicate label '" + l + "'");
    }
    if (times_.size() >= 2) {
      const double step = times_[1] - times_[0];
      if (!(step > 0.0)) throw SchemaError("times must be strictly increasing");
      for (std::size_t i = 1; i < times_.size(); ++i) {
        const double d = times_[i] - times_[i - 1];
        if (!(d > 0.0) || std::fabs(d - step) > 1e-9 * std::fabs(step)) {
          throw SchemaError("times must be uniformly spaced");
        }
      }
    }
    for (const auto& v : values_) {
      if (!std::isfinite(value_of(v))) throw ValueError("non-finite value in series");
    }
  }

  std::vector<double> times_;
  std::vector<std::string> labels_;
  std::vector<T> values_;
};

using TimeSeries = BasicTimeSeries<double>;
using VarTimeSeries = BasicTimeSeries<ad::Var>;

// Observed densities must be nonnegative; model output is checked by the
// integrator's diagnostics instead.
inline void require_nonnegative(const TimeSeries& ts) {
  for (std::size_t r = 0; r < ts.rows(); ++r) {
    for (std::size_t c = 0; c < ts.cols(); ++c) {
      if (ts.at(r, c) < 0.0) {
        throw ValueError("negative density in '" + ts.labels()[c] + "' at row " +
                         std::to_string(r));
      }
    }
  }
}

inline TimeSeries values_of(const VarTimeSeries& ts) {
  std::vector<double> v;
  v.reserve(ts.values().size());
  for (const auto& x : ts.values()) v.push_back(x.value());
  return TimeSeries(ts.times(), ts.labels(), std::move(v));
}

}  // namespace epical
