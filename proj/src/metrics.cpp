#include "mmfusion/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "mmfusion/error.hpp"

namespace mmfusion {

namespace {

bool ranks_before(const ScoredPrediction& x, const ScoredPrediction& y) {
  if (x.confidence != y.confidence) return x.confidence > y.confidence;
  if (x.video != y.video) return x.video < y.video;
  return x.label < y.label;
}

}  // namespace

std::vector<ScoredPrediction> top_k_predictions(std::span<const double> confidences,
                                                const std::vector<std::uint32_t>& labels,
                                                std::size_t k, std::size_t video) {
  std::vector<ScoredPrediction> all(confidences.size());
  for (std::size_t c = 0; c < confidences.size(); ++c) {
    all[c].confidence = confidences[c];
    all[c].video = video;
    all[c].label = c;
    all[c].is_correct = std::binary_search(labels.begin(), labels.end(), c);
  }
  const std::size_t keep = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(),
                    ranks_before);
  all.resize(keep);
  return all;
}

double gap_at_k(const Matrix& predictions, const std::vector<std::vector<std::uint32_t>>& labels,
                std::size_t k) {
  if (k == 0) throw ConfigError("gap_at_k: k must be positive");
  if (labels.size() != predictions.rows()) {
    throw ShapeError("gap_at_k: " + std::to_string(predictions.rows()) + " prediction rows but " +
                     std::to_string(labels.size()) + " label sets");
  }
  std::size_t positives = 0;
  for (const auto& l : labels) positives += l.size();
  if (positives == 0) throw NumericError("gap_at_k: no ground-truth positives");

  std::vector<ScoredPrediction> pool;
  pool.reserve(predictions.rows() * std::min(k, predictions.cols()));
  for (std::size_t v = 0; v < predictions.rows(); ++v) {
    std::vector<std::uint32_t> sorted = labels[v];
    std::sort(sorted.begin(), sorted.end());
    auto top = top_k_predictions(predictions.row(v), sorted, k, v);
    pool.insert(pool.end(), top.begin(), top.end());
  }
  std::sort(pool.begin(), pool.end(), ranks_before);

  double ap = 0.0;
  std::size_t hits = 0;
  for (std::size_t j = 0; j < pool.size(); ++j) {
    if (!pool[j].is_correct) continue;
    ++hits;
    ap += static_cast<double>(hits) / static_cast<double>(j + 1);
  }
  return ap / static_cast<double>(positives);
}

}  // namespace mmfusion
