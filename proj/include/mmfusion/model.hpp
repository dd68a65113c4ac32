#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mmfusion/aggregation.hpp"
#include "mmfusion/classifier.hpp"
#include "mmfusion/config.hpp"
#include "mmfusion/fusion.hpp"
#include "mmfusion/matrix.hpp"
#include "mmfusion/rng.hpp"

namespace mmfusion {

// The two single-modality kinds feed one aggregated modality straight to
// the classifier.
enum class FusionKind { kMfb, kConcat, kFcConcat, kVideoOnly, kAudioOnly };
enum class AggregatorKind { kAvg, kDbof, kNetVlad };

std::string to_string(FusionKind kind);
std::string to_string(AggregatorKind kind);
FusionKind parse_fusion_kind(const std::string& s);
AggregatorKind parse_aggregator_kind(const std::string& s);

struct ModelSpec {
  FusionKind fusion = FusionKind::kMfb;
  AggregatorKind aggregator = AggregatorKind::kAvg;
  std::size_t visual_dim = 0;
  std::size_t audio_dim = 0;
  std::size_t classes = 0;
  std::size_t k = 4;
  std::size_t o = 1024;
  double dropout = 0.1;
  std::size_t clusters = 8;
  std::size_t dbof_dim = 2000;
  std::size_t frames = 300;
  std::size_t mixtures = 2;
  double l2 = 1e-6;

  // Audio DBoF width scales with the modality ratio, kept above M.
  std::size_t dbof_audio_dim() const;
  bool uses_visual() const { return fusion != FusionKind::kAudioOnly; }
  bool uses_audio() const { return fusion != FusionKind::kVideoOnly; }
  void validate() const;

  // Reads fusion.*, agg.* and moe.* keys; dimensions come from the data.
  static ModelSpec from_config(const KeyValueConfig& cfg, std::size_t visual_dim,
                               std::size_t audio_dim, std::size_t classes);
  KeyValueConfig to_config() const;
  static ModelSpec from_serialized(const KeyValueConfig& cfg);

  bool operator==(const ModelSpec&) const = default;
};

struct NamedMatrix {
  std::string name;
  Matrix* value;
};

struct AggregatorParams {
  AggregatorKind kind = AggregatorKind::kAvg;
  DbofParams dbof;
  NetVladParams netvlad;
};

struct AggregatorCache {
  std::size_t frame_count = 0;
  DbofCache dbof;
  NetVladCache netvlad;
};

struct ModelCache {
  std::vector<AggregatorCache> visual;
  std::vector<AggregatorCache> audio;
  Matrix visual_features;  // B x Dv
  Matrix audio_features;   // B x Da
  MfbCache mfb;
  FcConcatCache fc;
  MoeCache moe;
  bool train_mode = false;
};

// Aggregators -> fusion -> mixture-of-experts classifier.
class VideoModel {
 public:
  VideoModel() = default;
  VideoModel(const ModelSpec& spec, std::uint64_t seed);

  const ModelSpec& spec() const { return spec_; }

  // Trainable parameters in a fixed order; gradients use the same order.
  std::vector<NamedMatrix> parameters();
  // Non-trainable state saved with checkpoints (BN running statistics).
  std::vector<NamedMatrix> buffers();

  std::size_t aggregated_dim(bool visual) const;
  std::size_t fused_dim() const;

  Matrix forward(const std::vector<Matrix>& visual, const std::vector<Matrix>& audio,
                 bool train_mode, Rng& rng, ModelCache* cache = nullptr) const;
  // Parameter gradients of the loss whose gradient w.r.t. the predictions
  // is grad_d, plus the classifier L2 penalty when include_penalty is set.
  std::vector<Matrix> backward(const Matrix& grad_d, const ModelCache& cache,
                               bool include_penalty = true) const;
  double l2_penalty() const { return moe_l2_penalty(moe_); }

  // Moves BN running statistics toward the batch statistics of a train-mode
  // forward pass.
  void update_running_stats(const ModelCache& cache);

  AggregatorParams& visual_aggregator() { return visual_agg_; }
  AggregatorParams& audio_aggregator() { return audio_agg_; }
  MfbParams& mfb() { return mfb_; }
  FcConcatParams& fc_concat() { return fc_; }
  MoeParams& moe() { return moe_; }

 private:
  Matrix aggregate(const AggregatorParams& p, const Matrix& frames, bool train_mode,
                   AggregatorCache* cache) const;
  void aggregate_backward(const AggregatorParams& p, const Matrix& grad,
                          const AggregatorCache& cache, std::vector<Matrix>& grads,
                          std::size_t offset) const;

  ModelSpec spec_;
  AggregatorParams visual_agg_;
  AggregatorParams audio_agg_;
  MfbParams mfb_;
  FcConcatParams fc_;
  MoeParams moe_;
};

}  // namespace mmfusion
