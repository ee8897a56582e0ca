#pragma once

#include <vector>

#include "dsclab/matrix.hpp"

namespace dsclab {

// Labeled feature rows: n x d coordinates plus one class id per row.
// The same container carries raw generator inputs, student features, and
// teacher embeddings; d and the coordinate meaning differ per use.
struct FeatureMatrix {
  Matrix data;              // n x d
  std::vector<int> labels;  // length n, each in [0, num_classes)
  int num_classes = 0;

  std::size_t n() const { return data.rows(); }
  std::size_t d() const { return data.cols(); }

  // Throws std::invalid_argument when an invariant is broken: label out of
  // range, label count mismatch, non-finite entry, or empty matrix.
  void validate() const;
};

}  // namespace dsclab
