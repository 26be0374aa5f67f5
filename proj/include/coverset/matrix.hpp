#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "coverset/errors.hpp"

namespace coverset {

/// Tolerance on the sum of a probability row at ingest.
inline constexpr double kRowSumTolerance = 1e-6;

/// Dense row-major matrix of per-instance class probabilities.
class ProbabilityMatrix {
 public:
  ProbabilityMatrix() = default;
  ProbabilityMatrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return rows_ == 0; }

  std::span<const double> row(std::size_t i) const {
    return {data_.data() + i * cols_, cols_};
  }
  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }

  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }

  void append_row(std::span<const double> values) {
    if (cols_ == 0) cols_ = values.size();
    if (values.size() != cols_) {
      throw input_error("row has " + std::to_string(values.size()) +
                        " entries, expected " + std::to_string(cols_));
    }
    data_.insert(data_.end(), values.begin(), values.end());
    ++rows_;
  }

  friend bool operator==(const ProbabilityMatrix& a, const ProbabilityMatrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Checks the probability-vector invariants: K >= 2, entries in [0,1],
/// sum within kRowSumTolerance of 1.
inline void validate_probability_vector(std::span<const double> probs) {
  if (probs.size() < 2) {
    throw input_error("probability vector needs at least 2 classes, got " +
                      std::to_string(probs.size()));
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = probs[i];
    if (!(p >= 0.0 && p <= 1.0)) {
      throw input_error("probability entry " + std::to_string(i) + " (" +
                        std::to_string(p) + ") outside [0,1]");
    }
    sum += p;
  }
  if (std::fabs(sum - 1.0) > kRowSumTolerance) {
    throw input_error("probabilities sum to " + std::to_string(sum) +
                      ", expected 1 within " + std::to_string(kRowSumTolerance));
  }
}

inline void validate_probability_matrix(const ProbabilityMatrix& m) {
  if (m.rows() == 0) throw input_error("probability matrix has no rows");
  for (std::size_t i = 0; i < m.rows(); ++i) {
    try {
      validate_probability_vector(m.row(i));
    } catch (const input_error& e) {
      throw input_error("row " + std::to_string(i) + ": " + e.what());
    }
  }
}

}  // namespace coverset
