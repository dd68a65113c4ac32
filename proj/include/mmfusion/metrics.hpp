#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "mmfusion/matrix.hpp"

namespace mmfusion {

struct ScoredPrediction {
  double confidence = 0.0;
  bool is_correct = false;
  std::size_t video = 0;
  std::size_t label = 0;
};

// Top-k (confidence, correctness) pairs of one video, highest first; ties
// resolved by class index.
std::vector<ScoredPrediction> top_k_predictions(std::span<const double> confidences,
                                                const std::vector<std::uint32_t>& labels,
                                                std::size_t k, std::size_t video = 0);

// Global average precision over each video's top-k predictions. Recall is
// normalized by the total number of ground-truth positives. predictions is
// videos x classes; labels[v] lists the positive classes of video v.
double gap_at_k(const Matrix& predictions, const std::vector<std::vector<std::uint32_t>>& labels,
                std::size_t k = 20);

}  // namespace mmfusion
