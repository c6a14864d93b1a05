#pragma once

#include <optional>
#include <vector>

#include "dr/common.hpp"

namespace dr {

/// Lower-triangular record a[t][i]: accuracy on experience i's test set
/// after training through experience t (both 1-based, i <= t).
class AccuracyMatrix {
 public:
  AccuracyMatrix() = default;
  explicit AccuracyMatrix(std::size_t T) : T_(T) {
    entries_.resize(T);
    for (std::size_t t = 0; t < T; ++t) entries_[t].resize(t + 1);
  }

  std::size_t T() const { return T_; }

  void set(std::size_t t, std::size_t i, double acc) {
    check_cell(t, i);
    if (!(acc >= 0.0 && acc <= 1.0))
      throw ContractError("accuracy " + std::to_string(acc) +
                          " outside [0,1]");
    entries_[t - 1][i - 1] = acc;
  }

  double at(std::size_t t, std::size_t i) const {
    check_cell(t, i);
    const auto& cell = entries_[t - 1][i - 1];
    if (!cell.has_value())
      throw ContractError("accuracy matrix cell (" + std::to_string(t) + "," +
                          std::to_string(i) + ") not populated");
    return *cell;
  }

  bool row_complete(std::size_t t) const {
    check_cell(t, 1);
    for (const auto& cell : entries_[t - 1])
      if (!cell.has_value()) return false;
    return true;
  }

  std::size_t row_filled(std::size_t t) const {
    check_cell(t, 1);
    std::size_t n = 0;
    for (const auto& cell : entries_[t - 1])
      if (cell.has_value()) ++n;
    return n;
  }

 private:
  void check_cell(std::size_t t, std::size_t i) const {
    if (t < 1 || t > T_ || i < 1 || i > t)
      throw ContractError("accuracy matrix index (" + std::to_string(t) +
                          "," + std::to_string(i) + ") outside T=" +
                          std::to_string(T_));
  }

  std::size_t T_ = 0;
  std::vector<std::vector<std::optional<double>>> entries_;
};

/// Average Accuracy A_t: mean of row t over the experiences seen so far.
inline double average_accuracy(const AccuracyMatrix& m, std::size_t t) {
  if (!m.row_complete(t))
    throw ContractError("average_accuracy: row " + std::to_string(t) +
                        " not fully populated");
  double acc = 0.0;
  for (std::size_t i = 1; i <= t; ++i) acc += m.at(t, i);
  return acc / static_cast<double>(t);
}

/// The A_1..A_T series (final value is back()).
inline std::vector<double> summarize(const AccuracyMatrix& m) {
  std::vector<double> series;
  series.reserve(m.T());
  for (std::size_t t = 1; t <= m.T(); ++t)
    series.push_back(average_accuracy(m, t));
  return series;
}

}  // namespace dr
